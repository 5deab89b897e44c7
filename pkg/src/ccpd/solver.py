"""Block coordinate descent for the partially coupled CP model.

One outer iteration updates the subject factors, then the voxel factors,
then the per-dataset time factors. The subject and time updates are exact
least-squares solves. The voxel update minimizes the fit plus the coherence
penalty ``lam * ||V_k'V_k - I||^2`` with a limited-memory BFGS iteration and
a backtracking line search, so every block update is non-increasing in the
cost.
"""
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from . import kernels
from .model import (
    PartitionedFactors,
    Ranks,
    assemble,
    check_dataset,
    coherence_penalty,
    identifiability_check,
)
from .tensor import frobenius_norm_sq

__all__ = [
    "ConditioningWarning",
    "IdentifiabilityWarning",
    "NonFiniteCostError",
    "SolveResult",
    "VoxelUpdateInfo",
    "init_random",
    "update_subjects",
    "update_times",
    "update_voxels",
    "voxel_gradient",
    "coupled_least_squares",
    "bcd_solve",
]

log = logging.getLogger(__name__)

RIDGE = 1e-10
RCOND_MIN = 1e-13
BACKTRACK = 0.5
ARMIJO_C1 = 1e-4
MAX_HALVINGS = 50
STOP_EPS = 1e-300


class ConditioningWarning(RuntimeWarning):
    """A normal-equation matrix was (near) singular and had to be regularized."""


class IdentifiabilityWarning(UserWarning):
    """The requested ranks exceed the generic uniqueness bound."""


class NonFiniteCostError(FloatingPointError):
    """The cost became NaN or infinite during a solve."""


@dataclass
class SolveResult:
    theta: PartitionedFactors
    cost_trace: list
    iterations: int
    converged: bool
    seed: int
    n_stalls: int = 0

    @property
    def final_cost(self):
        return self.cost_trace[-1]


@dataclass
class VoxelUpdateInfo:
    inner_iterations: int = 0
    stalled: bool = False
    objective: list = field(default_factory=list)


def init_random(dims, ranks, seed):
    """Random starting point: i.i.d. standard normal entries, unit-norm columns.

    Parameters
    ----------
    dims : tuple
        ``(S, V, [T_1, ..., T_K])``.
    ranks : Ranks
    seed : int
        Seed for a PCG64 generator; the same seed gives bitwise-identical
        factors.
    """
    S, V, T = dims
    T = list(T)
    if len(T) != ranks.K:
        raise ValueError("dims and ranks disagree on the number of datasets")
    rng = np.random.default_rng(int(seed))

    def draw(rows, cols):
        F = rng.standard_normal((rows, cols))
        if cols:
            F /= np.linalg.norm(F, axis=0)
        return F

    R, L = ranks.R, ranks.L
    S_shared = draw(S, R)
    V_shared = draw(V, R)
    S_d, V_d, T_p, T_d = [], [], [], []
    for k in range(ranks.K):
        S_d.append(draw(S, L[k]))
        V_d.append(draw(V, L[k]))
        T_p.append(draw(T[k], R))
        T_d.append(draw(T[k], L[k]))
    return PartitionedFactors(S_shared, V_shared, S_d, V_d, T_p, T_d)


def _solve_normal(G, B):
    """Return ``X`` with ``X @ G = B`` for symmetric positive semidefinite ``G``."""
    n = G.shape[0]
    if n == 0:
        return np.zeros_like(B)
    try:
        c = np.linalg.cholesky(G)
        d = np.diag(c)
        ok = d.min() > 0 and (d.min() / d.max()) ** 2 > RCOND_MIN
    except np.linalg.LinAlgError:
        ok = False
    if not ok:
        ridge = max(RIDGE * np.trace(G) / n, np.finfo(float).tiny)
        warnings.warn(
            f"singular normal matrix, adding ridge {ridge:.3g}", ConditioningWarning, stacklevel=3
        )
        G = G + ridge * np.eye(n)
        c = np.linalg.cholesky(G)
    return sla.cho_solve((c, True), B.T, check_finite=False).T


def _layout(ranks):
    """Column indices of each assembled factor inside the stacked unknowns.

    The stacked unknown is ``[shared, distinct_1, ..., distinct_K]``.
    """
    R = ranks.R
    idx, offset = [], R
    for Lk in ranks.L:
        idx.append(np.concatenate([np.arange(R), offset + np.arange(Lk)]).astype(np.intp))
        offset += Lk
    return idx, offset


def _stack(shared, distinct):
    return np.hstack([shared] + list(distinct))


def _split(X, ranks):
    R = ranks.R
    shared = np.array(X[:, :R])
    distinct, offset = [], R
    for Lk in ranks.L:
        distinct.append(np.array(X[:, offset:offset + Lk]))
        offset += Lk
    return shared, distinct


def coupled_least_squares(M_list, G_list, ranks):
    """Exact minimizer of ``sum_k ||Y_k - X_k W_k'||^2`` over the coupled blocks.

    ``X_k = [X_shared, X_distinct_k]`` and the problem is given through
    ``M_k = Y_k W_k`` and ``G_k = W_k' W_k``. Returns ``(shared, [distinct_k])``.
    """
    idx, n = _layout(ranks)
    rows = M_list[0].shape[0]
    G = np.zeros((n, n))
    B = np.zeros((rows, n))
    for k, (M, Gk) in enumerate(zip(M_list, G_list)):
        G[np.ix_(idx[k], idx[k])] += Gk
        B[:, idx[k]] += M
    return _split(_solve_normal(G, B), ranks)


def update_subjects(theta, data):
    """Exact joint least-squares update of the shared and distinct subject blocks."""
    M_list, G_list = [], []
    for k, Y in enumerate(data):
        Sk, Vk, Tk = assemble(theta, k)
        M_list.append(kernels.mttkrp(Y, Sk, Vk, Tk, 0))
        G_list.append((Vk.T @ Vk) * (Tk.T @ Tk))
    S_shared, S_distinct = coupled_least_squares(M_list, G_list, theta.ranks)
    out = PartitionedFactors(
        S_shared, theta.V_shared, S_distinct, theta.V_distinct, theta.T_shared, theta.T_distinct
    )
    return out


def update_times(theta, data):
    """Independent least-squares update of each dataset's time factors."""
    R = theta.ranks.R
    T_p, T_d = [], []
    for k, Y in enumerate(data):
        Sk, Vk, Tk = assemble(theta, k)
        M = kernels.mttkrp(Y, Sk, Vk, Tk, 2)
        Tk = _solve_normal((Sk.T @ Sk) * (Vk.T @ Vk), M)
        T_p.append(np.array(Tk[:, :R]))
        T_d.append(np.array(Tk[:, R:]))
    return PartitionedFactors(
        theta.S_shared, theta.V_shared, theta.S_distinct, theta.V_distinct, T_p, T_d
    )


def _voxel_problem(theta, data):
    M_list, G_list = [], []
    for k, Y in enumerate(data):
        Sk, Vk, Tk = assemble(theta, k)
        M_list.append(kernels.mttkrp(Y, Sk, Vk, Tk, 1))
        G_list.append((Tk.T @ Tk) * (Sk.T @ Sk))
    return M_list, G_list


class _VoxelObjective:
    """``sum_k [-2<V_k, M_k> + <V_k'V_k, G_k> + lam ||V_k'V_k - I||^2]`` on stacked V.

    Equals the voxel-dependent part of the cost; the constant ``sum ||Y_k||^2``
    is omitted.
    """

    def __init__(self, M_list, G_list, ranks, lam):
        idx, _ = _layout(ranks)
        K = len(idx)
        wmax = max(len(c) for c in idx)
        self.widths = np.array([len(c) for c in idx], dtype=np.intp)
        self.cols = np.zeros((K, wmax), dtype=np.intp)
        self.G = np.zeros((K, wmax, wmax))
        for k, c in enumerate(idx):
            self.cols[k, :len(c)] = c
            self.G[k, :len(c), :len(c)] = G_list[k]
        self.M = np.ascontiguousarray(np.hstack(M_list))
        self.lam = float(lam)
        self.nfev = 0

    def __call__(self, X):
        self.nfev += 1
        g = np.empty_like(X)
        f = kernels._impl.coupled_penalized_fg(X, self.M, self.G, self.cols, self.widths, self.lam, g)
        return f, g


def voxel_gradient(theta, data, lam):
    """Gradient of the cost with respect to ``(V_shared, [V_distinct_k])``.

    For each dataset ``G_k = -2 (Y_k(2) - V_k W_k') W_k + 4 lam V_k (V_k'V_k - I)``
    with ``W_k = T_k (Khatri-Rao) S_k``; the shared block collects the first
    ``R`` columns of every ``G_k``.
    """
    data = check_dataset(data)
    M_list, G_list = _voxel_problem(theta, data)
    obj = _VoxelObjective(M_list, G_list, theta.ranks, lam)
    _, g = obj(_stack(theta.V_shared, theta.V_distinct))
    return _split(g, theta.ranks)


def lbfgs_minimize(fg, x0, memory=10, max_iter=30, ftol=1e-15, gtol=0.0):
    """Minimize ``fg`` (returning objective and gradient) from ``x0``.

    Limited-memory BFGS with Armijo backtracking (factor 0.5, constant 1e-4,
    at most 50 halvings). Every accepted step satisfies the sufficient
    decrease condition, so the objective never increases. When the line search fails along the quasi-Newton direction the
    memory is dropped and steepest descent is tried; if that fails too the
    iteration stops with ``stalled=True`` and the last accepted iterate.

    Returns
    -------
    x, f, info : ndarray, float, VoxelUpdateInfo
    """
    x = np.array(x0, dtype=np.float64)
    shape = x.shape
    f, g = fg(x)
    g = g.ravel()
    n = g.size
    info = VoxelUpdateInfo(objective=[f])
    S_hist = np.empty((memory, n))
    Y_hist = np.empty((memory, n))
    rho = np.empty(memory)
    head, count = -1, 0
    d = np.empty(n)
    for _ in range(max_iter):
        gg = np.dot(g, g)
        if gg <= gtol * gtol or gg == 0.0:
            break
        accepted = False
        for attempt in ("qn", "sd"):
            if attempt == "qn":
                if not count:
                    continue
                kernels.lbfgs_direction(g, S_hist, Y_hist, rho, head, count, d)
                t = 1.0
            else:
                count = 0
                np.negative(g, out=d)
                t = 1.0 / np.sqrt(gg)
            gd = np.dot(g, d)
            if not gd < 0:
                continue
            for _ in range(MAX_HALVINGS):
                x_new = x + t * d.reshape(shape)
                f_new, g_new = fg(x_new)
                if f_new <= f + ARMIJO_C1 * t * gd:
                    accepted = True
                    break
                t *= BACKTRACK
            if accepted:
                break
        if not accepted:
            info.stalled = True
            break
        g_new = g_new.ravel()
        s = (x_new - x).ravel()
        y = g_new - g
        sy = np.dot(s, y)
        if sy > 1e-12 * np.sqrt(np.dot(s, s) * np.dot(y, y)):
            head = (head + 1) % memory
            S_hist[head] = s
            Y_hist[head] = y
            rho[head] = 1.0 / sy
            count = min(count + 1, memory)
        decrease = f - f_new
        x, f, g = x_new, f_new, g_new
        info.inner_iterations += 1
        info.objective.append(f)
        if decrease <= ftol * max(abs(f), 1.0):
            break
    return x, f, info


def update_voxels(theta, data, lam, qn_memory=10, qn_max_inner=30, method="auto"):
    """Update ``(V_shared, [V_distinct_k])`` with S and T fixed.

    Parameters
    ----------
    method : {"auto", "qn", "exact"}
        ``"qn"`` runs limited-memory BFGS on the penalized problem. ``"exact"``
        solves the coupled least-squares problem directly and is only valid
        for ``lam == 0``. ``"auto"`` picks ``"exact"`` when ``lam == 0``, where
        the subproblem is quadratic, and ``"qn"`` otherwise.

    Returns
    -------
    theta : PartitionedFactors
    info : VoxelUpdateInfo
    """
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    if method == "auto":
        method = "exact" if lam == 0 else "qn"
    M_list, G_list = _voxel_problem(theta, data)
    ranks = theta.ranks
    if method == "exact":
        if lam != 0:
            raise ValueError("exact voxel update requires lam == 0")
        V_shared, V_distinct = coupled_least_squares(M_list, G_list, ranks)
        info = VoxelUpdateInfo()
    elif method == "qn":
        obj = _VoxelObjective(M_list, G_list, ranks, lam)
        X, _, info = lbfgs_minimize(
            obj, _stack(theta.V_shared, theta.V_distinct), memory=qn_memory, max_iter=qn_max_inner
        )
        V_shared, V_distinct = _split(X, ranks)
    else:
        raise ValueError(f"unknown voxel update method {method!r}")
    out = PartitionedFactors(
        theta.S_shared, V_shared, theta.S_distinct, V_distinct, theta.T_shared, theta.T_distinct
    )
    return out, info


def _cost(theta, data, lam):
    total = 0.0
    for k, Y in enumerate(data):
        Sk, Vk, Tk = assemble(theta, k)
        total += frobenius_norm_sq(Y - kernels.cp_full(Sk, Vk, Tk))
        if lam:
            total += lam * coherence_penalty(Vk)
    return total


def bcd_solve(data, config, init=None, callback=None, voxel_method="auto"):
    """Run block coordinate descent from a random (or given) start.

    Iterates subject, voxel and time updates until the relative cost change
    drops below ``config.rel_tol``, the cost falls under
    ``config.cost_floor`` times the total data energy, or
    ``config.max_iters`` outer iterations have run. ``cost_trace[0]`` is the cost of the starting point.

    Parameters
    ----------
    data : sequence of ndarray
        Tensors ``Y_k`` of shape ``(S, V, T_k)``.
    config : SolverConfig
    init : PartitionedFactors, optional
        Starting point; drawn with :func:`init_random` from ``config.seed``
        when omitted.
    callback : callable, optional
        Called as ``callback(stage, theta)`` after every block update with
        ``stage`` in ``{"subjects", "voxels", "times"}``.
    """
    data = check_dataset(data)
    ranks = config.ranks
    if ranks.K != len(data):
        raise ValueError(f"config has {ranks.K} distinct ranks for {len(data)} datasets")
    S, V = data[0].shape[:2]
    T = [Y.shape[2] for Y in data]
    failing = [r for r in identifiability_check(S, V, T, ranks) if r["status"] == "fail"]
    if failing:
        warnings.warn(
            "ranks exceed the generic uniqueness bound for datasets "
            + ", ".join(str(r["k"]) for r in failing),
            IdentifiabilityWarning,
            stacklevel=2,
        )
    theta = init if init is not None else init_random((S, V, T), ranks, config.seed)
    theta = theta.copy().validate()
    lam = float(config.lam)

    def check(J, stage, it):
        if not np.isfinite(J):
            raise NonFiniteCostError(
                f"non-finite cost after {stage} update at iteration {it} (seed {config.seed})"
            )
        return J

    floor = config.cost_floor * sum(frobenius_norm_sq(Y) for Y in data)
    trace = [check(_cost(theta, data, lam), "initial", 0)]
    converged = False
    n_stalls = 0
    it = 0
    while it < config.max_iters:
        it += 1
        theta = update_subjects(theta, data)
        if callback:
            callback("subjects", theta)
        theta, info = update_voxels(
            theta, data, lam, config.qn_memory, config.qn_max_inner, method=voxel_method
        )
        n_stalls += info.stalled
        if callback:
            callback("voxels", theta)
        theta = update_times(theta, data)
        if callback:
            callback("times", theta)
        J = check(_cost(theta, data, lam), "times", it)
        prev = trace[-1]
        trace.append(J)
        if abs(J - prev) / max(prev, STOP_EPS) < config.rel_tol or J <= floor:
            converged = True
            break
    log.debug("seed %d: %d iterations, cost %.6g", config.seed, it, trace[-1])
    return SolveResult(theta, trace, it, converged, int(config.seed), n_stalls)
