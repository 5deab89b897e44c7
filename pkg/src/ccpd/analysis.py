"""Post-decomposition statistics and synthetic ground truth.

Group differences in subject factors are tested with a two-sample t-test
(Welch by default), spatial maps are z-scored and thresholded, and recovery
of known factors is measured with the factor match score.
"""
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy import stats

from .model import PartitionedFactors, Ranks, assemble
from .reproducibility import similarity_matrix, solve_assignment
from .tensor import cp_reconstruct, frobenius_norm_sq

__all__ = [
    "ConstantMapWarning",
    "TTestResult",
    "two_sample_ttest",
    "zscore",
    "zscore_threshold",
    "FactorMatchScore",
    "factor_match_score",
    "SyntheticSpec",
    "generate_synthetic",
    "congruent_columns",
    "snr_db",
]

ALPHA = 0.05


class ConstantMapWarning(RuntimeWarning):
    """A spatial map had zero variance and was thresholded to all zeros."""


class TTestResult(NamedTuple):
    t: float
    p: float
    df: float
    significant: bool


def _split_groups(column, labels):
    x = np.asarray(column, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    if x.shape != labels.shape:
        raise ValueError(f"{x.size} values but {labels.size} labels")
    groups = np.unique(labels)
    if groups.size != 2:
        raise ValueError(f"expected exactly two groups, found {groups.size}")
    a, b = x[labels == groups[0]], x[labels == groups[1]]
    if a.size < 2 or b.size < 2:
        raise ValueError("each group needs at least two members")
    return a, b


def two_sample_ttest(column, labels, equal_var=False, alpha=ALPHA):
    """Two-sided two-sample t-test of one subject-factor column.

    The statistic is ``mean(second group) - mean(first group)`` over its
    standard error, the groups being the two distinct label values in sorted
    order. Welch's unequal-variance test with Welch-Satterthwaite degrees of
    freedom is used unless ``equal_var`` is set.
    """
    a, b = _split_groups(column, labels)
    na, nb = a.size, b.size
    ma, mb = a.mean(), b.mean()
    va, vb = a.var(ddof=1), b.var(ddof=1)
    if equal_var:
        df = na + nb - 2
        sp = ((na - 1) * va + (nb - 1) * vb) / df
        se2 = sp * (1.0 / na + 1.0 / nb)
    else:
        qa, qb = va / na, vb / nb
        se2 = qa + qb
        df = se2**2 / (qa**2 / (na - 1) + qb**2 / (nb - 1)) if se2 > 0 else float(na + nb - 2)
    diff = mb - ma
    if se2 == 0:
        if diff == 0:
            return TTestResult(0.0, 1.0, float(df), False)
        t = math.copysign(math.inf, diff)
        return TTestResult(t, 0.0, float(df), True)
    t = diff / math.sqrt(se2)
    p = float(min(1.0, 2.0 * stats.t.sf(abs(t), df)))
    return TTestResult(float(t), p, float(df), p < alpha)


def zscore(values):
    x = np.asarray(values, dtype=np.float64).ravel()
    sd = x.std()
    if sd == 0:
        return None
    return (x - x.mean()) / sd


def zscore_threshold(values, z_thresh=2.7):
    """Z-score a map (unit variance) and zero every entry with ``|z| < z_thresh``.

    Returns
    -------
    z : ndarray
        Thresholded z-scores; surviving entries keep their sign.
    signs : ndarray of int8
        -1, 0 or +1 per entry.
    """
    z = zscore(values)
    if z is None:
        warnings.warn("constant map, nothing survives thresholding", ConstantMapWarning, stacklevel=2)
        n = np.asarray(values).size
        return np.zeros(n), np.zeros(n, dtype=np.int8)
    out = np.where(np.abs(z) >= z_thresh, z, 0.0)
    return out, np.sign(out).astype(np.int8)


@dataclass
class FactorMatchScore:
    """Per-component scores in ground-truth column order, one array per dataset."""

    per_dataset: list
    permutations: list
    R: int
    shared: float = field(init=False)
    distinct: list = field(init=False)
    mean: float = field(init=False)

    def __post_init__(self):
        R = self.R
        shared = [s[:R] for s in self.per_dataset]
        self.shared = float(np.mean(np.concatenate(shared))) if R else float("nan")
        self.distinct = [float(np.mean(s[R:])) if s.size > R else float("nan") for s in self.per_dataset]
        self.mean = float(np.mean(np.concatenate(self.per_dataset)))

    @property
    def minimum(self):
        return float(min(s.min() for s in self.per_dataset))


def factor_match_score(theta_est, theta_true):
    """Factor match score of an estimate against ground truth.

    Components are matched per dataset by an exact assignment on the product
    of the absolute subject, voxel and time cosines; a component's score is
    that product for its match (1 for perfect recovery up to scaling, sign
    and permutation).
    """
    if theta_est.ranks != theta_true.ranks:
        raise ValueError(f"rank mismatch: {theta_est.ranks} vs {theta_true.ranks}")
    scores, perms = [], []
    for k in range(theta_true.K):
        true_f = assemble(theta_true, k)
        est_f = assemble(theta_est, k)
        prod = None
        for A, B in zip(true_f, est_f):
            c = similarity_matrix([A], [B])
            prod = c if prod is None else prod * c
        p = solve_assignment(prod)
        scores.append(prod[np.arange(prod.shape[0]), p])
        perms.append(p)
    return FactorMatchScore(scores, perms, theta_true.ranks.R)


@dataclass
class SyntheticSpec:
    """Recipe for a synthetic coupled dataset with known factors.

    ``noise_snr_db=math.inf`` gives noiseless data. ``collinearity`` is the
    pairwise cosine between all subject columns and between all voxel
    columns (shared and distinct together). When ``group_sizes`` is given,
    subjects are split at random into two groups and every column listed in
    ``effect_columns`` (indices into ``[S_shared, S_distinct_1, ...]``) is
    shifted by ``effect_size`` standard deviations in the second group.
    """

    S: int
    V: int
    T: list
    R: int
    L: list
    noise_snr_db: float = math.inf
    collinearity: float = 0.0
    seed: int = 0
    group_sizes: Optional[tuple] = None
    effect_columns: tuple = ()
    effect_size: float = 0.0

    def __post_init__(self):
        self.T = [int(t) for t in self.T]
        self.L = [int(l) for l in self.L]
        if len(self.T) != len(self.L):
            raise ValueError("T and L must have one entry per dataset")
        if not 0 <= self.collinearity < 1:
            raise ValueError("collinearity must lie in [0, 1)")
        if math.isnan(self.noise_snr_db) or self.noise_snr_db == -math.inf:
            raise ValueError("noise_snr_db must be a number or +inf")
        if self.group_sizes is not None:
            if sum(self.group_sizes) != self.S or min(self.group_sizes) < 2:
                raise ValueError("group sizes must be >= 2 and sum to S")

    @property
    def ranks(self):
        return Ranks(self.R, self.L)


def congruent_columns(rng, rows, cols, congruence):
    """``rows x cols`` matrix of unit columns with pairwise cosine ``congruence``."""
    if cols > rows:
        raise ValueError(f"cannot build {cols} congruent columns in dimension {rows}")
    Q, _ = np.linalg.qr(rng.standard_normal((rows, cols)))
    C = np.full((cols, cols), congruence) + (1.0 - congruence) * np.eye(cols)
    return Q @ np.linalg.cholesky(C).T


def snr_db(clean, noisy):
    noise = frobenius_norm_sq(np.asarray(noisy) - np.asarray(clean))
    signal = frobenius_norm_sq(clean)
    return math.inf if noise == 0 else 10.0 * math.log10(signal / noise)


def generate_synthetic(spec):
    """Draw ground-truth factors and the corresponding (noisy) datasets.

    Returns
    -------
    data : list of ndarray
    truth : PartitionedFactors
    labels : ndarray or None
        Group label (0 or 1) per subject when ``spec.group_sizes`` is set.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.R + sum(spec.L)
    if n > spec.S or n > spec.V:
        raise ValueError(
            f"{n} congruent columns do not fit in S={spec.S} / V={spec.V}; "
            "reduce the ranks or enlarge the dimensions"
        )
    S_all = congruent_columns(rng, spec.S, n, spec.collinearity)
    V_all = congruent_columns(rng, spec.V, n, spec.collinearity)
    T_list = [rng.standard_normal((Tk, spec.R + Lk)) for Tk, Lk in zip(spec.T, spec.L)]

    labels = None
    if spec.group_sizes is not None:
        labels = np.zeros(spec.S, dtype=int)
        labels[rng.permutation(spec.S)[: spec.group_sizes[1]]] = 1
        for c in spec.effect_columns:
            S_all[:, c] += spec.effect_size * S_all[:, c].std() * labels

    R = spec.R
    S_d, V_d, offset = [], [], R
    for Lk in spec.L:
        S_d.append(S_all[:, offset:offset + Lk].copy())
        V_d.append(V_all[:, offset:offset + Lk].copy())
        offset += Lk
    truth = PartitionedFactors(
        S_all[:, :R].copy(),
        V_all[:, :R].copy(),
        S_d,
        V_d,
        [T[:, :R].copy() for T in T_list],
        [T[:, R:].copy() for T in T_list],
    ).validate()

    data = []
    for k in range(truth.K):
        X = cp_reconstruct(*assemble(truth, k))
        if math.isfinite(spec.noise_snr_db):
            N = rng.standard_normal(X.shape)
            scale = math.sqrt(frobenius_norm_sq(X) / (frobenius_norm_sq(N) * 10 ** (spec.noise_snr_db / 10)))
            X = X + scale * N
        data.append(np.asfortranarray(X))
    return data, truth, labels
