"""Kernel backend selection.

Two interchangeable implementations of the sampler inner-loop kernels exist:
a compiled Cython module (_ckern) and a pure-numpy module (_pykern).  The
active one is chosen once at import time from the EDICT_BACKEND environment
variable:

    auto      use the compiled backend when importable, else numpy (default)
    compiled  require the compiled backend, fail loudly if unavailable
    python    force the numpy backend

The selected module is re-exported here; everything above this package calls
``from edict import _kernels as K`` and stays backend-agnostic.
``load_backend`` gives explicit access to a specific implementation for
parity tests and benchmarks.
"""

import importlib
import os

_VALID = ("auto", "compiled", "python")


def load_backend(name):
    """Import and return one specific backend module ("compiled"/"python")."""
    if name == "python":
        return importlib.import_module("edict._kernels._pykern")
    if name == "compiled":
        return importlib.import_module("edict._kernels._ckern")
    raise ValueError(f"unknown kernel backend {name!r}, expected one of {_VALID}")


def available_backends():
    """Names of the backends that import cleanly on this install."""
    names = ["python"]
    try:
        load_backend("compiled")
    except ImportError:
        pass
    else:
        names.insert(0, "compiled")
    return tuple(names)


def _select():
    requested = os.environ.get("EDICT_BACKEND", "auto").strip().lower()
    if requested not in _VALID:
        raise ValueError(
            f"EDICT_BACKEND={requested!r} is not valid, expected one of {_VALID}"
        )
    if requested == "python":
        return load_backend("python")
    try:
        return load_backend("compiled")
    except ImportError:
        if requested == "compiled":
            raise
        return load_backend("python")


_impl = _select()

NAME = _impl.NAME
axpby = _impl.axpby
inv_axpby = _impl.inv_axpby
mix = _impl.mix
unmix = _impl.unmix
gauss_mixture_eps = _impl.gauss_mixture_eps
