"""Multi-start runs, run-to-run similarity and most-reproducible-run selection.

Two solutions are compared dataset by dataset: components are matched by an
exact linear assignment that maximizes the summed absolute cosines of their
subject, voxel and time columns, and the pseudo-distance is minus the total
matched similarity. Identical solutions therefore score
``-sum_k 3 (R + L_k)`` and solutions with mutually orthogonal columns score 0.
"""
import hashlib
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .model import Ranks, SolverConfig, assemble, check_dataset
from .solver import NonFiniteCostError, SolveResult, bcd_solve

__all__ = [
    "ZeroColumnWarning",
    "MatchReport",
    "RunSet",
    "Selection",
    "solve_assignment",
    "similarity_matrix",
    "pdistance",
    "pairwise_pdistance",
    "multi_start",
    "select_most_reproducible",
    "rank_sweep",
]

log = logging.getLogger(__name__)


class ZeroColumnWarning(RuntimeWarning):
    """A factor column had zero norm; its cosine terms were set to 0."""


@dataclass
class MatchReport:
    """Result of matching two solutions.

    ``permutations[k][r]`` is the component of the second solution matched to
    component ``r`` of the first in dataset ``k``; ``contributions[k][r]`` is
    that pair's similarity (between 0 and 3).
    """

    permutations: list
    contributions: list
    pdistance: float


@dataclass
class RunSet:
    runs: list
    failed: list = field(default_factory=list)

    def __len__(self):
        return len(self.runs)

    @property
    def seeds(self):
        return [r.seed for r in self.runs]


@dataclass
class Selection:
    index: int
    run: SolveResult
    scores: np.ndarray
    pairwise: np.ndarray
    aggregate: str


def solve_assignment(sim):
    """Permutation ``p`` maximizing ``sum_i sim[i, p[i]]`` (exact)."""
    sim = np.asarray(sim, dtype=np.float64)
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise ValueError(f"assignment needs a square matrix, got shape {sim.shape}")
    if not np.all(np.isfinite(sim)):
        raise ValueError("assignment matrix has non-finite entries")
    if sim.shape[0] == 0:
        return np.zeros(0, dtype=np.intp)
    return kernels.linear_assignment(-sim)


def _abs_cosines(A, B, normalization):
    A = np.ascontiguousarray(A)
    B = np.ascontiguousarray(B)
    num = np.abs(A.T @ B)
    if normalization == "column":
        # same GEMM path as the cross product (a copy avoids the A'A special case),
        # so cos(a, a) == 1 exactly
        na = np.diag(A.T @ A.copy())
        nb = np.diag(B.T @ B.copy())
        den = np.sqrt(np.multiply.outer(na, nb))
    elif normalization == "matrix":
        den = np.full(num.shape, np.linalg.norm(A) * np.linalg.norm(B))
    else:
        raise ValueError(f"unknown normalization {normalization!r}")
    zero = den == 0
    if zero.any():
        warnings.warn("zero-norm factor column in similarity", ZeroColumnWarning, stacklevel=4)
        den = np.where(zero, 1.0, den)
        num = np.where(zero, 0.0, num)
    return num / den


def similarity_matrix(factors_a, factors_b, normalization="column"):
    """Summed absolute cosines between the components of two CP models.

    ``factors_a`` and ``factors_b`` are ``(S, V, T)`` triples with the same
    number of columns; entry ``(r, c)`` compares component ``r`` of the first
    with component ``c`` of the second.
    """
    out = None
    for A, B in zip(factors_a, factors_b):
        if A.shape != B.shape:
            raise ValueError(f"factor shapes differ: {A.shape} vs {B.shape}")
        c = _abs_cosines(A, B, normalization)
        out = c if out is None else out + c
    return out


def _theta(run):
    return run.theta if isinstance(run, SolveResult) else run


def _digest(theta):
    h = hashlib.sha1()
    for k in range(theta.K):
        for F in assemble(theta, k):
            h.update(np.ascontiguousarray(F).tobytes())
    return h.digest()


def _check_same_shape(a, b):
    if a.ranks != b.ranks or a.dims != b.dims:
        raise ValueError("runs differ in ranks or dimensions")


def _match(a, b, normalization):
    perms, contribs, totals = [], [], []
    for k in range(a.K):
        sim = similarity_matrix(assemble(a, k), assemble(b, k), normalization)
        p = solve_assignment(sim)
        vals = sim[np.arange(sim.shape[0]), p]
        perms.append(p)
        contribs.append(vals)
        totals.extend(vals.tolist())
    return perms, contribs, -math.fsum(totals)


def pdistance(run_a, run_b, normalization="column"):
    """Assignment-matched pseudo-distance between two solutions.

    Parameters
    ----------
    run_a, run_b : SolveResult or PartitionedFactors
    normalization : {"column", "matrix"}
        ``"column"`` divides each inner product by the two column norms
        (cosine similarity); ``"matrix"`` divides by the Frobenius norms of
        the whole factor matrices.

    Returns
    -------
    MatchReport
    """
    a, b = _theta(run_a), _theta(run_b)
    _check_same_shape(a, b)
    # evaluate in a canonical order so that the result is exactly symmetric
    if _digest(a) <= _digest(b):
        perms, contribs, total = _match(a, b, normalization)
    else:
        perms_ba, contribs_ba, total = _match(b, a, normalization)
        perms, contribs = [], []
        for p, v in zip(perms_ba, contribs_ba):
            inv = np.empty_like(p)
            inv[p] = np.arange(p.size)
            perms.append(inv)
            contribs.append(v[inv])
    return MatchReport(perms, contribs, total)


def pairwise_pdistance(runs, normalization="column"):
    """Symmetric matrix of pseudo-distances; the diagonal is left at 0."""
    thetas = [_theta(r) for r in runs]
    n = len(thetas)
    D = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            D[i, j] = D[j, i] = pdistance(thetas[i], thetas[j], normalization).pdistance
    return D


def _solve_one(args):
    data, config = args
    try:
        return bcd_solve(data, config)
    except NonFiniteCostError as exc:
        return exc


def multi_start(data, config, n_starts, jobs=1):
    """Solve from ``n_starts`` random initializations.

    Run ``i`` uses seed ``config.seed + i``. Runs that end with a non-finite
    cost are recorded in ``RunSet.failed`` and left out of ``RunSet.runs``.
    """
    if n_starts < 1:
        raise ValueError("n_starts must be at least 1")
    data = check_dataset(data)
    configs = [replace(config, seed=(int(config.seed) + i) % 2**64) for i in range(n_starts)]
    tasks = [(data, c) for c in configs]
    if jobs > 1 and n_starts > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_solve_one, tasks, chunksize=max(1, n_starts // (4 * jobs))))
    else:
        results = [_solve_one(t) for t in tasks]
    runs, failed = [], []
    for c, res in zip(configs, results):
        if isinstance(res, Exception):
            log.warning("run with seed %d failed: %s", c.seed, res)
            failed.append((c.seed, str(res)))
        else:
            runs.append(res)
    if not runs:
        raise RuntimeError(f"all {n_starts} runs failed")
    return RunSet(runs, failed)


def select_most_reproducible(runs, normalization="column", aggregate="sum"):
    """Pick the run most similar to all the others.

    The score of run ``i`` is the sum (or median) of its pseudo-distances to
    every other run; the lowest score wins, ties going to the lower final
    cost and then the lower seed.
    """
    items = runs.runs if isinstance(runs, RunSet) else list(runs)
    if not items:
        raise ValueError("no successful runs to select from")
    D = pairwise_pdistance(items, normalization)
    n = len(items)
    if aggregate == "sum":
        scores = np.array([math.fsum(np.delete(D[i], i)) for i in range(n)])
    elif aggregate == "median":
        scores = np.array([np.median(np.delete(D[i], i)) if n > 1 else 0.0 for i in range(n)])
    else:
        raise ValueError(f"unknown aggregate {aggregate!r}")
    index = min(range(n), key=lambda i: (scores[i], items[i].final_cost, items[i].seed))
    return Selection(index, items[index], scores, D, aggregate)


def _normalizer(ranks):
    return 3.0 * sum(ranks.R + l for l in ranks.L)


def rank_sweep(data, grid, n_sweep, base_config=None, jobs=1, normalization="column"):
    """Reproducibility score for every ``(R, L, lam)`` in ``grid``.

    The score is the mean pairwise pseudo-distance over ``n_sweep`` runs
    divided by ``sum_k 3 (R + L_k)``, so it lies in ``[-1, 0]`` whatever the
    ranks; lower is more reproducible. A configuration that fails is reported
    with ``score=nan`` and its error message.

    Returns
    -------
    list of dict
        Rows sorted by score (failed rows last).
    """
    grid = list(grid)
    if not grid:
        raise ValueError("empty sweep grid")
    data = check_dataset(data)
    base = base_config or SolverConfig(Ranks(1, [0] * len(data)))
    rows = []
    for entry in grid:
        R, L, lam = entry
        row = {"R": int(R), "L": [int(l) for l in L], "lambda": float(lam)}
        try:
            config = replace(base, ranks=Ranks(R, L), lam=float(lam))
            runs = multi_start(data, config, n_sweep, jobs=jobs)
            D = pairwise_pdistance(runs.runs, normalization)
            n = len(runs)
            pairs = [D[i, j] for i in range(n) for j in range(i + 1, n)]
            mean = math.fsum(pairs) / len(pairs) if pairs else -_normalizer(config.ranks)
            row.update(
                score=mean / _normalizer(config.ranks),
                n_runs=n,
                n_failed=len(runs.failed),
                best_cost=min(r.final_cost for r in runs.runs),
                error="",
            )
        except Exception as exc:  # reported per configuration, sweep continues
            log.warning("sweep configuration %s failed: %s", row, exc)
            row.update(score=float("nan"), n_runs=0, n_failed=n_sweep, best_cost=float("nan"),
                       error=str(exc))
        rows.append(row)
    rows.sort(key=lambda r: (math.isnan(r["score"]), r["score"]))
    return rows
