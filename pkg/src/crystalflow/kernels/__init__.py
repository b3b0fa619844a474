"""Hot numeric kernels.

Two interchangeable implementations live side by side: ``_jit`` (numba
``@njit`` loops) and ``_numpy`` (vectorised numpy/scipy). The numba path is
used unless ``CRYSTALFLOW_DISABLE_NUMBA`` is set to a truthy value or numba
cannot be imported. Both expose the same functions with the same signatures.

Charges are stored as boolean/int arrays over the window ``[-Q, Q]``, index
``c + Q``.
"""
import os

from . import _numpy

_DISABLED = os.environ.get("CRYSTALFLOW_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("disabled by CRYSTALFLOW_DISABLE_NUMBA")
    from . import _jit
except ImportError:
    _jit = None

USE_NUMBA = _jit is not None
backend = _jit if USE_NUMBA else _numpy
BACKEND_NAME = "numba" if USE_NUMBA else "numpy"

INF_ATOMS = _numpy.INF_ATOMS

coin_table = backend.coin_table
element_charge_sums = backend.element_charge_sums
reach_of_counts = backend.reach_of_counts
completion_table = backend.completion_table
feasible_counts = backend.feasible_counts
beta_mixture_logpdf = backend.beta_mixture_logpdf
adam_update = backend.adam_update


def implementations():
    """Return ``{name: module}`` for every importable backend."""
    impls = {"numpy": _numpy}
    if _jit is not None:
        impls["numba"] = _jit
    else:
        try:
            from . import _jit as jit_mod
            impls["numba"] = jit_mod
        except ImportError:
            pass
    return impls
