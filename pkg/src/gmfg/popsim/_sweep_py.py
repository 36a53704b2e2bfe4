"""Pure-numpy closed-loop sweep; reference implementation and fallback.

Vectorised over a block of paths.  See ``_sweep.pyx`` for the compiled
kernel with the same signature.
"""
import numpy as np


def sweep(x0, dw, dW0, gbar, zbar, f, mN, offsets, prm, dt, heun, dev_agent, alpha, k0, k1, kg, kz,
          track, cost_out, zo_out, traj_out):
    A, B, D, Sigma, Sigma0, eta, H, Q, QT, R = prm
    c = B / (2.0 * R)
    P, M, K = dw.shape
    N = mN.shape[0]
    sizes = np.diff(offsets).astype(float)
    cl = np.repeat(np.arange(N), np.diff(offsets))
    dev_q = cl[dev_agent] if dev_agent >= 0 else -1
    x = np.array(x0, dtype=float)

    def state_terms(x, k):
        xbar = np.add.reduceat(x, offsets[:-1], axis=1) / sizes
        zo = xbar @ mN.T / N
        zi = zo[:, cl]
        u = -c * (f[k] * x + gbar[:, k, cl])
        if dev_agent >= 0:
            xi = x[:, dev_agent]
            u[:, dev_agent] = (alpha * u[:, dev_agent] + k0[k] + k1[k] * xi
                               + kg[k] * gbar[:, k, dev_q] + kz[k] * zbar[:, k, dev_q])
        return zo, zi, u

    acc = np.zeros((P, K))
    for k in range(M + 1):
        zo, zi, u = state_terms(x, k)
        zo_out[:, k] = zo
        traj_out[:, k] = x[:, track]
        run = Q * (x - H * (zi + eta)) ** 2 + R * u * u
        if k == 0 or k == M:
            acc += 0.5 * dt * run
        else:
            acc += dt * run
        if k == M:
            acc += QT * (x - H * (zi + eta)) ** 2
            break
        F = A * x + B * u + D * zi
        noise = Sigma * dw[:, k] + Sigma0 * dW0[:, k, None]
        if heun:
            xp = x + F * dt + noise
            _, zip_, up = state_terms(xp, k + 1)
            Fp = A * xp + B * up + D * zip_
            x = x + 0.5 * (F + Fp) * dt + noise
        else:
            x = x + F * dt + noise
    cost_out[...] = acc
