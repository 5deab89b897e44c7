"""Hot numerical kernels with a compiled core and a numpy fallback.

The compiled module ``_ckernels`` is used when it can be imported. Setting
the environment variable ``CCPD_PURE_PYTHON=1`` before import forces the
numpy implementations in ``_pykernels``. ``BACKEND`` records which one is
active.

``mttkrp`` and ``cp_full`` reduce to one matrix product each, which BLAS does
faster than the compiled loops at every size we benchmarked, so they always
dispatch to the numpy versions. The compiled variants stay available through
:func:`implementations` for testing and benchmarking.

Kernels
-------
khatri_rao
    Column-wise Kronecker product.
mttkrp
    Unfolded tensor times Khatri-Rao product of the other two factors.
cp_full
    Dense reconstruction of a rank-R CP model.
coupled_penalized_fg
    Objective and gradient of the coherence-penalized voxel subproblem.
lbfgs_direction
    Two-loop recursion of limited-memory BFGS.
linear_assignment
    Exact minimum-cost square assignment.
"""
import os

import numpy as np

from . import _pykernels

_impl = _pykernels
BACKEND = "python"
if not os.environ.get("CCPD_PURE_PYTHON"):
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:  # extension not built
        pass


def _f64(a):
    return np.asarray(a, dtype=np.float64)


def khatri_rao(A, B):
    return _impl.khatri_rao(_f64(A), _f64(B))


def mttkrp(X, A, B, C, mode):
    return _pykernels.mttkrp(_f64(X), _f64(A), _f64(B), _f64(C), int(mode))


def cp_full(A, B, C):
    return _pykernels.cp_full(_f64(A), _f64(B), _f64(C))


def coupled_penalized_fg(X, M, G, cols, widths, lam, grad):
    return _impl.coupled_penalized_fg(
        _f64(X), _f64(M), _f64(G), np.asarray(cols, dtype=np.intp),
        np.asarray(widths, dtype=np.intp), float(lam), grad,
    )


def lbfgs_direction(g, S, Y, rho, head, count, out):
    return _impl.lbfgs_direction(g, S, Y, rho, int(head), int(count), out)


def linear_assignment(cost):
    return _impl.linear_assignment(_f64(cost))


def implementations():
    """Return the available kernel modules keyed by backend name."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels
        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
