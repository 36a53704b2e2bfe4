# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled closed-loop sweep: one fused pass over all agents per time step.

Same signature and arithmetic as ``_sweep_py.sweep``; paths are processed
one at a time with the GIL released.
"""
import numpy as np
from libc.stdlib cimport malloc, free


cdef inline void _fields(const double* x, Py_ssize_t K, Py_ssize_t N, const long long* offsets,
                         const double[:, ::1] mN, double* xbar, double* zo) noexcept nogil:
    cdef Py_ssize_t l, j, q
    cdef double s
    for l in range(N):
        s = 0.0
        for j in range(offsets[l], offsets[l + 1]):
            s += x[j]
        xbar[l] = s / (offsets[l + 1] - offsets[l])
    for q in range(N):
        s = 0.0
        for l in range(N):
            s += mN[q, l] * xbar[l]
        zo[q] = s / N


cdef inline void _controls(const double* x, Py_ssize_t K, Py_ssize_t N, const long long* offsets,
                           const double[:, :, ::1] gbar, const double[:, :, ::1] zbar, Py_ssize_t p, Py_ssize_t k,
                           double c, double fk, long long dev, long long dev_q, double alpha,
                           double k0, double k1, double kg, double kz, double* u) noexcept nogil:
    cdef Py_ssize_t l, j
    cdef double g
    for l in range(N):
        g = gbar[p, k, l]
        for j in range(offsets[l], offsets[l + 1]):
            u[j] = -c * (fk * x[j] + g)
    if dev >= 0:
        u[dev] = alpha * u[dev] + k0 + k1 * x[dev] + kg * gbar[p, k, dev_q] + kz * zbar[p, k, dev_q]


def sweep(const double[:, ::1] x0, const double[:, :, ::1] dw, const double[:, ::1] dW0,
          const double[:, :, ::1] gbar, const double[:, :, ::1] zbar, const double[::1] f,
          const double[:, ::1] mN, const long long[::1] offsets, const double[::1] prm, double dt, int heun,
          long long dev_agent, double alpha, const double[::1] k0, const double[::1] k1,
          const double[::1] kg, const double[::1] kz, const long long[::1] track,
          double[:, ::1] cost_out, double[:, :, ::1] zo_out, double[:, :, ::1] traj_out):
    cdef Py_ssize_t P = dw.shape[0], M = dw.shape[1], K = dw.shape[2], N = mN.shape[0]
    cdef Py_ssize_t nt = track.shape[0]
    cdef double A = prm[0], B = prm[1], D = prm[2], Sigma = prm[3], Sigma0 = prm[4]
    cdef double eta = prm[5], H = prm[6], Q = prm[7], QT = prm[8], R = prm[9]
    cdef double c = B / (2.0 * R)
    cdef Py_ssize_t p, k, l, j, t
    cdef long long dev_q = -1
    cdef double w, dev_, zi, nz, e
    cdef double* x
    cdef double* xp
    cdef double* F
    cdef double* u
    cdef double* acc
    cdef double* xbar
    cdef double* zo
    cdef double* zop
    if dev_agent >= 0:
        for l in range(N):
            if offsets[l] <= dev_agent < offsets[l + 1]:
                dev_q = l
    with nogil:
        x = <double*> malloc(K * sizeof(double))
        xp = <double*> malloc(K * sizeof(double))
        F = <double*> malloc(K * sizeof(double))
        u = <double*> malloc(K * sizeof(double))
        acc = <double*> malloc(K * sizeof(double))
        xbar = <double*> malloc(N * sizeof(double))
        zo = <double*> malloc(N * sizeof(double))
        zop = <double*> malloc(N * sizeof(double))
        for p in range(P):
            for j in range(K):
                x[j] = x0[p, j]
                acc[j] = 0.0
            for k in range(M + 1):
                _fields(x, K, N, &offsets[0], mN, xbar, zo)
                _controls(x, K, N, &offsets[0], gbar, zbar, p, k, c, f[k], dev_agent, dev_q, alpha,
                          k0[k], k1[k], kg[k], kz[k], u)
                for l in range(N):
                    zo_out[p, k, l] = zo[l]
                for t in range(nt):
                    traj_out[p, k, t] = x[track[t]]
                w = 0.5 * dt if (k == 0 or k == M) else dt
                for l in range(N):
                    zi = zo[l]
                    for j in range(offsets[l], offsets[l + 1]):
                        dev_ = x[j] - H * (zi + eta)
                        acc[j] += w * (Q * dev_ * dev_ + R * u[j] * u[j])
                        if k == M:
                            acc[j] += QT * dev_ * dev_
                if k == M:
                    break
                nz = Sigma0 * dW0[p, k]
                for l in range(N):
                    zi = zo[l]
                    for j in range(offsets[l], offsets[l + 1]):
                        F[j] = A * x[j] + B * u[j] + D * zi
                        xp[j] = x[j] + F[j] * dt + (Sigma * dw[p, k, j] + nz)
                if heun:
                    _fields(xp, K, N, &offsets[0], mN, xbar, zop)
                    _controls(xp, K, N, &offsets[0], gbar, zbar, p, k + 1, c, f[k + 1], dev_agent, dev_q, alpha,
                              k0[k + 1], k1[k + 1], kg[k + 1], kz[k + 1], u)
                    for l in range(N):
                        zi = zop[l]
                        for j in range(offsets[l], offsets[l + 1]):
                            e = A * xp[j] + B * u[j] + D * zi
                            x[j] = x[j] + 0.5 * (F[j] + e) * dt + (Sigma * dw[p, k, j] + nz)
                else:
                    for j in range(K):
                        x[j] = xp[j]
            for j in range(K):
                cost_out[p, j] = acc[j]
        free(x); free(xp); free(F); free(u); free(acc); free(xbar); free(zo); free(zop)
