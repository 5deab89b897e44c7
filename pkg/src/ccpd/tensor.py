"""Dense order-3 tensors and the multilinear algebra used by the solver.

Tensors are plain ``float64`` numpy arrays of shape ``(I, J, K)``. The
canonical linearization is first-index-fastest (Fortran order): element
``(i, j, k)`` lives at offset ``i + I*j + I*J*k``. Unfoldings follow the
convention in which a CP model ``[[A, B, C]]`` satisfies

    unfold(X, 1) == A @ khatri_rao(C, B).T
    unfold(X, 2) == B @ khatri_rao(C, A).T
    unfold(X, 3) == C @ khatri_rao(B, A).T

Modes are numbered 1, 2, 3.
"""
from typing import NamedTuple

import numpy as np

from . import kernels

__all__ = [
    "CpModel",
    "as_tensor3",
    "as_factor",
    "unfold",
    "fold",
    "khatri_rao",
    "cp_reconstruct",
    "frobenius_norm_sq",
    "cp_norm_sq",
]


class CpModel(NamedTuple):
    """Factor matrices of a rank-R CP model; components are columns."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    @property
    def rank(self):
        return self.A.shape[1]


def as_tensor3(data):
    """Validate ``data`` as a finite, real, order-3 array and return it as float64."""
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 3:
        raise ValueError(f"expected an order-3 array, got ndim={X.ndim}")
    if min(X.shape) < 1:
        raise ValueError(f"tensor dimensions must be positive, got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("tensor contains non-finite entries")
    return X


def as_factor(data, rows=None):
    """Validate a factor matrix (finite 2-D float64 array).

    Zero columns are allowed so that empty shared or distinct blocks can be
    represented.
    """
    F = np.asarray(data, dtype=np.float64)
    if F.ndim != 2:
        raise ValueError(f"expected a 2-D factor matrix, got ndim={F.ndim}")
    if rows is not None and F.shape[0] != rows:
        raise ValueError(f"factor has {F.shape[0]} rows, expected {rows}")
    if not np.all(np.isfinite(F)):
        raise ValueError("factor matrix contains non-finite entries")
    return F


def _check_mode(mode):
    if mode not in (1, 2, 3):
        raise ValueError(f"mode must be 1, 2 or 3, got {mode!r}")


def unfold(X, mode):
    """Mode-``mode`` unfolding of an order-3 tensor.

    The mode-1 unfolding has shape ``(I, J*K)`` with column index ``j + J*k``;
    modes 2 and 3 are analogous with the remaining indices in increasing
    mode order, first one fastest.
    """
    _check_mode(mode)
    X = np.asarray(X)
    if X.ndim != 3:
        raise ValueError(f"expected an order-3 array, got ndim={X.ndim}")
    return np.moveaxis(X, mode - 1, 0).reshape(X.shape[mode - 1], -1, order="F")


def fold(M, mode, shape):
    """Inverse of :func:`unfold`."""
    _check_mode(mode)
    shape = tuple(shape)
    n = mode - 1
    moved = (shape[n],) + tuple(s for i, s in enumerate(shape) if i != n)
    return np.moveaxis(np.reshape(M, moved, order="F"), 0, n)


def khatri_rao(A, B):
    """Column-wise Kronecker product.

    Row ``j + B.shape[0]*i`` of the result is ``A[i] * B[j]``.
    """
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or B.ndim != 2:
        raise ValueError("khatri_rao expects two matrices")
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"column mismatch: {A.shape[1]} != {B.shape[1]}")
    return kernels.khatri_rao(A, B)


def cp_reconstruct(A, B=None, C=None):
    """Dense tensor ``sum_r a_r o b_r o c_r``.

    Accepts either a :class:`CpModel` or the three factor matrices.
    """
    if B is None and C is None:
        A, B, C = A
    A, B, C = (np.asarray(F, dtype=np.float64) for F in (A, B, C))
    if not A.shape[1] == B.shape[1] == C.shape[1]:
        raise ValueError("CP factors must have the same number of columns")
    if A.shape[1] == 0:
        return np.zeros((A.shape[0], B.shape[0], C.shape[0]), order="F")
    return kernels.cp_full(A, B, C)


def frobenius_norm_sq(X):
    """Sum of squared entries."""
    X = np.asarray(X, dtype=np.float64)
    return float(np.dot(X.ravel(order="K"), X.ravel(order="K")))


def cp_norm_sq(A, B, C):
    """Squared Frobenius norm of ``[[A, B, C]]`` through the Gram matrices."""
    return float(np.sum((A.T @ A) * (B.T @ B) * (C.T @ C)))
