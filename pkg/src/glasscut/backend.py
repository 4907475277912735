"""Kernel backend selection.

The hot inner loops (pair-swap Monte Carlo sweeps, exhaustive
enumeration, cut local search, the Gauss-Hermite propagation pass and
PCHIP slope construction) exist twice: compiled Cython in
``glasscut._ckernels`` and a pure numpy mirror in
``glasscut._pykernels``.  Both expose the same functions with identical
results (including tie-breaking), so the choice only affects speed.

Set ``GLASSCUT_BACKEND=python`` to force the fallback; anything else
prefers the compiled module when it imported cleanly.
"""

import os

from . import _pykernels

try:
    from . import _ckernels

    _HAVE_C = True
except ImportError:
    _ckernels = None
    _HAVE_C = False


def _select():
    if os.environ.get("GLASSCUT_BACKEND", "").lower() in ("python", "py", "numpy"):
        return _pykernels, "python"
    if _HAVE_C:
        return _ckernels, "cython"
    return _pykernels, "python"


kernels, BACKEND_NAME = _select()


def get_backend(name=None):
    """Return a kernel module by name ('cython' or 'python')."""
    if name is None:
        return kernels
    if name == "python":
        return _pykernels
    if name == "cython":
        if not _HAVE_C:
            raise RuntimeError("compiled kernels are not available")
        return _ckernels
    raise ValueError("unknown backend %r" % name)
