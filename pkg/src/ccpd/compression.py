"""SVD compression of the subject and voxel modes.

A single orthonormal basis per mode is fitted on all datasets at once (the
shared factors must live in one common space). Data are projected before
solving and the recovered subject/voxel factors are mapped back afterwards;
the time mode is left alone.
"""
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .io import dump_json, read_cm2, sha256_file, write_cm2
from .model import PartitionedFactors, check_dataset

__all__ = [
    "RankDeficiencyWarning",
    "CompressionBasis",
    "fit_basis",
    "compress",
    "expand_factors",
    "save_basis",
    "load_basis",
]


class RankDeficiencyWarning(UserWarning):
    """The requested dimension exceeds the numerical rank of the data."""


@dataclass
class CompressionBasis:
    U_subject: np.ndarray
    U_voxel: np.ndarray

    @property
    def d1(self):
        return self.U_subject.shape[1]

    @property
    def d2(self):
        return self.U_voxel.shape[1]


def _fix_signs(U):
    # largest-magnitude entry of every column made positive
    idx = np.argmax(np.abs(U), axis=0)
    signs = np.sign(U[idx, np.arange(U.shape[1])])
    signs[signs == 0] = 1.0
    return U * signs


# rows of the concatenated unfolding processed per chunk in the tall case
_CHUNK_ELEMENTS = 1 << 24


def _unfolded_rows(Y, mode, start, stop):
    """Rows ``start:stop`` of the mode-1 or mode-2 unfolding of ``Y``."""
    if mode == 1:
        part = Y[start:stop]
    else:
        part = np.transpose(Y[:, start:stop, :], (1, 0, 2))
    return part.reshape(stop - start, -1, order="F")


def _left_singular(data, mode, d):
    """Leading singular pairs of ``[Y_1 (mode), Y_2 (mode), ...]`` without forming it.

    Returns the first ``min(d, rank)`` left singular vectors (``rank`` judged
    with the usual ``max(n, m) * eps * s_max`` threshold) and all singular
    values.

    Notes
    -----
    Only a triangular factor of the concatenation is ever held in memory. In
    the wide case (more columns than rows) each transposed unfolding is
    reduced by QR and the stacked ``n x n`` factors are reduced once more; the
    SVD of that factor yields the left vectors directly. In the tall case the
    rows are streamed in chunks through a running QR, the SVD of the ``m x m``
    factor gives the right vectors ``W`` and the left vectors follow as
    ``M W / s``, again row chunk by row chunk.
    """
    n = data[0].shape[mode - 1]
    m = sum(Y.size // n for Y in data)
    if m >= n:
        Rs = [np.linalg.qr(_unfolded_rows(Y, mode, 0, n).T, mode="r") for Y in data]
        R = np.linalg.qr(np.vstack(Rs), mode="r") if len(Rs) > 1 else Rs[0]
        U, s, _ = np.linalg.svd(R.T)
        r = _numerical_rank(s, n, m, d)
        return U[:, :r], s
    step = max(2 * m, _CHUNK_ELEMENTS // m)
    bounds = [(a, min(a + step, n)) for a in range(0, n, step)]

    def rows(a, b):
        return np.hstack([_unfolded_rows(Y, mode, a, b) for Y in data])

    R = np.zeros((0, m))
    for a, b in bounds:
        R = np.linalg.qr(np.vstack([R, rows(a, b)]), mode="r")
    _, s, Wt = np.linalg.svd(R)
    r = _numerical_rank(s, n, m, d)
    W = Wt[:r].T / s[:r]
    U = np.vstack([rows(a, b) @ W for a, b in bounds])
    Q, Rq = np.linalg.qr(U)  # removes the rounding left by the division
    return Q * np.sign(np.diag(Rq)), s


def _numerical_rank(s, n, m, d):
    tol = (s[0] if s.size else 0.0) * max(n, m) * np.finfo(float).eps
    return min(int(np.sum(s > tol)), d)


def _leading_basis(data, mode, d, label):
    n = data[0].shape[mode - 1]
    U, _ = _left_singular(data, mode, d)
    r = U.shape[1]
    U = _fix_signs(U)
    if r < d:
        warnings.warn(
            f"{label} mode has numerical rank {r} < {d}; padding with an orthonormal complement",
            RankDeficiencyWarning,
            stacklevel=3,
        )
        Q, _ = np.linalg.qr(np.hstack([U, np.eye(n)[:, :d]]))
        U = np.hstack([U, _fix_signs(Q[:, r:d])])
    return U


def fit_basis(data, d1, d2):
    """Leading left singular vectors of the concatenated mode-1 and mode-2 unfoldings."""
    data = check_dataset(data)
    S, V = data[0].shape[:2]
    if not (1 <= d1 <= S and 1 <= d2 <= V):
        raise ValueError(f"compression dims ({d1}, {d2}) must lie in [1, ({S}, {V})]")
    U_s = _leading_basis(data, 1, d1, "subject")
    U_v = _leading_basis(data, 2, d2, "voxel")
    return CompressionBasis(U_s, U_v)


def _check_basis(basis, S, V):
    if basis.U_subject.shape[0] != S or basis.U_voxel.shape[0] != V:
        raise ValueError(
            f"basis rows ({basis.U_subject.shape[0]}, {basis.U_voxel.shape[0]}) do not match "
            f"data dims ({S}, {V})"
        )


def compress(data, basis):
    """Project every ``Y_k`` onto the bases: ``Y_k x1 U_s' x2 U_v'``."""
    data = check_dataset(data)
    _check_basis(basis, *data[0].shape[:2])
    out = []
    for Y in data:
        Z = np.tensordot(basis.U_subject, Y, axes=(0, 0))
        Z = np.tensordot(Z, basis.U_voxel, axes=(1, 0))
        out.append(np.asfortranarray(np.transpose(Z, (0, 2, 1))))
    return out


def expand_factors(theta, basis):
    """Map subject and voxel factors of a compressed solution back to full space."""
    S, V, _ = theta.dims
    if (S, V) != (basis.d1, basis.d2):
        raise ValueError(f"factors live in ({S}, {V}), basis targets ({basis.d1}, {basis.d2})")
    Us, Uv = basis.U_subject, basis.U_voxel
    return PartitionedFactors(
        Us @ theta.S_shared,
        Uv @ theta.V_shared,
        [Us @ F for F in theta.S_distinct],
        [Uv @ F for F in theta.V_distinct],
        [F.copy() for F in theta.T_shared],
        [F.copy() for F in theta.T_distinct],
    )


def save_basis(directory, basis, input_checksums=None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_cm2(directory / "U_subject.cm2", basis.U_subject)
    write_cm2(directory / "U_voxel.cm2", basis.U_voxel)
    dump_json(
        directory / "manifest.json",
        {
            "d1": basis.d1,
            "d2": basis.d2,
            "files": {
                name: sha256_file(directory / name) for name in ("U_subject.cm2", "U_voxel.cm2")
            },
            "inputs": input_checksums or {},
        },
    )


def load_basis(directory):
    directory = Path(directory)
    return CompressionBasis(
        read_cm2(directory / "U_subject.cm2"), read_cm2(directory / "U_voxel.cm2")
    )
