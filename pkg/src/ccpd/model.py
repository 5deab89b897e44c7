"""The partially coupled CP model: parameters, cost and identifiability.

Each dataset ``Y_k`` (subjects x voxels x T_k) is modelled as

    Y_k = [[S_k, V_k, T_k]],  S_k = [S_shared, S_distinct[k]],
                              V_k = [V_shared, V_distinct[k]],
                              T_k = [T_shared[k], T_distinct[k]]

so the first R subject and voxel columns are common to every dataset and the
trailing L_k columns belong to dataset k alone.
"""
from dataclasses import dataclass

import numpy as np

from .tensor import as_tensor3, cp_reconstruct, frobenius_norm_sq

__all__ = [
    "Ranks",
    "PartitionedFactors",
    "SolverConfig",
    "check_dataset",
    "assemble",
    "cost",
    "fit_terms",
    "coherence_penalty",
    "residual_tensors",
    "shared_and_distinct",
    "identifiability_check",
]


@dataclass(frozen=True)
class Ranks:
    """Shared rank ``R`` and per-dataset distinct ranks ``L``."""

    R: int
    L: tuple

    def __post_init__(self):
        object.__setattr__(self, "L", tuple(int(l) for l in self.L))
        object.__setattr__(self, "R", int(self.R))
        if self.R < 0 or any(l < 0 for l in self.L):
            raise ValueError("ranks must be non-negative")
        if not self.L:
            raise ValueError("at least one dataset rank is required")
        if any(self.R + l < 1 for l in self.L):
            raise ValueError("R + L_k must be at least 1 for every dataset")

    @property
    def K(self):
        return len(self.L)

    def total(self, k):
        return self.R + self.L[k]

    def to_dict(self):
        return {"R": self.R, "L": list(self.L)}


@dataclass
class PartitionedFactors:
    """Shared and distinct factor blocks of the coupled model."""

    S_shared: np.ndarray
    V_shared: np.ndarray
    S_distinct: list
    V_distinct: list
    T_shared: list
    T_distinct: list

    @property
    def K(self):
        return len(self.S_distinct)

    @property
    def ranks(self):
        return Ranks(self.S_shared.shape[1], [S.shape[1] for S in self.S_distinct])

    @property
    def dims(self):
        """``(S, V, [T_1, ..., T_K])``."""
        return (
            self.S_shared.shape[0],
            self.V_shared.shape[0],
            [T.shape[0] for T in self.T_shared],
        )

    def assemble(self, k):
        return assemble(self, k)

    def copy(self):
        return PartitionedFactors(
            self.S_shared.copy(),
            self.V_shared.copy(),
            [F.copy() for F in self.S_distinct],
            [F.copy() for F in self.V_distinct],
            [F.copy() for F in self.T_shared],
            [F.copy() for F in self.T_distinct],
        )

    def validate(self):
        S, V, T = self.dims
        R, L = self.ranks.R, self.ranks.L
        if self.V_shared.shape != (V, R):
            raise ValueError("V_shared shape inconsistent with S_shared")
        for k in range(self.K):
            expected = {
                "S_distinct": ((S, L[k]), self.S_distinct[k]),
                "V_distinct": ((V, L[k]), self.V_distinct[k]),
                "T_shared": ((T[k], R), self.T_shared[k]),
                "T_distinct": ((T[k], L[k]), self.T_distinct[k]),
            }
            for name, (shape, F) in expected.items():
                if F.shape != shape:
                    raise ValueError(f"{name}[{k}] has shape {F.shape}, expected {shape}")
        return self

    @classmethod
    def from_assembled(cls, S_list, V_list, T_list, R):
        """Split assembled per-dataset factors into blocks.

        The shared blocks are taken from dataset 0; callers are responsible for
        the first ``R`` columns actually agreeing across datasets.
        """
        return cls(
            np.array(S_list[0][:, :R]),
            np.array(V_list[0][:, :R]),
            [np.array(S[:, R:]) for S in S_list],
            [np.array(V[:, R:]) for V in V_list],
            [np.array(T[:, :R]) for T in T_list],
            [np.array(T[:, R:]) for T in T_list],
        ).validate()


@dataclass
class SolverConfig:
    """Settings of one block-coordinate-descent solve."""

    ranks: Ranks
    lam: float = 0.0
    max_iters: int = 500
    rel_tol: float = 1e-8
    qn_memory: int = 10
    qn_max_inner: int = 30
    seed: int = 0
    # stop once the cost is this small relative to the data energy
    cost_floor: float = 1e-24

    def __post_init__(self):
        if not isinstance(self.ranks, Ranks):
            self.ranks = Ranks(**self.ranks) if isinstance(self.ranks, dict) else Ranks(*self.ranks)
        if self.lam < 0:
            raise ValueError("lambda must be non-negative")
        if self.rel_tol <= 0:
            raise ValueError("rel_tol must be positive")
        if self.cost_floor < 0:
            raise ValueError("cost_floor must be non-negative")
        if self.max_iters < 1 or self.qn_memory < 1 or self.qn_max_inner < 1:
            raise ValueError("iteration counts and quasi-Newton memory must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def to_dict(self):
        return {
            "ranks": self.ranks.to_dict(),
            "lambda": float(self.lam),
            "max_iters": int(self.max_iters),
            "rel_tol": float(self.rel_tol),
            "qn_memory": int(self.qn_memory),
            "qn_max_inner": int(self.qn_max_inner),
            "seed": int(self.seed),
            "cost_floor": float(self.cost_floor),
        }


def check_dataset(data):
    """Validate a list of coupled tensors sharing their first two dimensions."""
    tensors = [as_tensor3(Y) for Y in data]
    if not tensors:
        raise ValueError("at least one dataset is required")
    S, V = tensors[0].shape[:2]
    for k, Y in enumerate(tensors):
        if Y.shape[:2] != (S, V):
            raise ValueError(
                f"dataset {k} has leading dims {Y.shape[:2]}, expected {(S, V)}"
            )
    return tensors


def assemble(theta, k):
    """Return ``(S_k, V_k, T_k)``: shared block followed by the distinct block."""
    if not 0 <= k < theta.K:
        raise IndexError(f"dataset index {k} out of range for K={theta.K}")
    return (
        np.hstack([theta.S_shared, theta.S_distinct[k]]),
        np.hstack([theta.V_shared, theta.V_distinct[k]]),
        np.hstack([theta.T_shared[k], theta.T_distinct[k]]),
    )


def _check_compatible(theta, data):
    if len(data) != theta.K:
        raise ValueError(f"model has K={theta.K} datasets, data has {len(data)}")
    S, V, T = theta.dims
    for k, Y in enumerate(data):
        if Y.shape != (S, V, T[k]):
            raise ValueError(f"dataset {k} has shape {Y.shape}, model expects {(S, V, T[k])}")


def coherence_penalty(V):
    """``||V'V - I||_F^2``."""
    E = V.T @ V - np.eye(V.shape[1])
    return float(np.sum(E * E))


def fit_terms(theta, data):
    """Squared residual norm for each dataset."""
    _check_compatible(theta, data)
    return [frobenius_norm_sq(Y - cp_reconstruct(*assemble(theta, k))) for k, Y in enumerate(data)]


def cost(theta, data, lam):
    """Penalized least-squares cost summed over datasets.

    The coherence penalty is evaluated on the assembled ``V_k``, so the shared
    voxel block contributes once per dataset.
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    fits = fit_terms(theta, data)
    total = 0.0
    for k, fit in enumerate(fits):
        total += fit
        if lam:
            total += lam * coherence_penalty(assemble(theta, k)[1])
    return total


def shared_and_distinct(theta, k):
    """Dense reconstructions ``(P_k, D_k)`` of the shared and distinct parts."""
    P = cp_reconstruct(theta.S_shared, theta.V_shared, theta.T_shared[k])
    D = cp_reconstruct(theta.S_distinct[k], theta.V_distinct[k], theta.T_distinct[k])
    return P, D


def residual_tensors(theta, data):
    """``Y_k - [[S_k, V_k, T_k]]`` for every dataset."""
    _check_compatible(theta, data)
    return [np.asarray(Y) - cp_reconstruct(*assemble(theta, k)) for k, Y in enumerate(data)]


def identifiability_check(S, V, T, ranks):
    """Generic-uniqueness test ``R + L_k <= (T_k + 1)(S + 1) / 16`` per dataset.

    The bound is only stated for ``T_k <= S <= V``; outside that regime the
    entry is ``"not applicable"``.

    Returns
    -------
    list of dict
        One entry per dataset with keys ``k``, ``rank``, ``bound`` and
        ``status`` (``"pass"``, ``"fail"`` or ``"not applicable"``).
    """
    report = []
    for k, Tk in enumerate(T):
        rank = ranks.R + ranks.L[k]
        bound = (Tk + 1) * (S + 1) / 16
        if not (1 <= Tk <= S <= V):
            status = "not applicable"
        else:
            status = "pass" if rank <= bound else "fail"
        report.append({"k": k, "rank": rank, "bound": bound, "status": status})
    return report
