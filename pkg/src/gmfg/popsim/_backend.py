"""Pick the compiled sweep when available; ``GMFG_BACKEND=python`` forces the numpy fallback."""
import os

from . import _sweep_py

BACKEND = "python"
sweep = _sweep_py.sweep

if os.environ.get("GMFG_BACKEND", "").lower() not in ("python", "numpy"):
    try:
        from . import _sweep as _compiled
    except ImportError:  # extension not built
        pass
    else:
        BACKEND = "cython"
        sweep = _compiled.sweep


def get_sweep(name: str | None = None):
    """Return (name, sweep function); ``name`` may force 'python' or 'cython'."""
    if name is None:
        return BACKEND, sweep
    if name == "python":
        return "python", _sweep_py.sweep
    if name == "cython":
        from . import _sweep as compiled  # raises ImportError when not built

        return "cython", compiled.sweep
    raise ValueError(f"unknown backend {name!r}")
