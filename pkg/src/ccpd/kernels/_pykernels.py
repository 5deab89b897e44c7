"""Reference numpy implementations of the numerical kernels.

These are used when the compiled extension is unavailable (or disabled with
``CCPD_PURE_PYTHON=1``) and serve as the baseline in the kernel benchmark.
All functions take float64 arrays and never modify their inputs unless an
output buffer is passed explicitly.
"""
import numpy as np


def khatri_rao(A, B):
    return (A[:, None, :] * B[None, :, :]).reshape(A.shape[0] * B.shape[0], A.shape[1])


def _unfold(X, mode):
    return np.moveaxis(X, mode, 0).reshape(X.shape[mode], -1, order="F")


def mttkrp(X, A, B, C, mode):
    # mode-n unfolding times the Khatri-Rao product of the two remaining factors
    if mode == 0:
        kr = khatri_rao(C, B)
    elif mode == 1:
        kr = khatri_rao(C, A)
    else:
        kr = khatri_rao(B, A)
    return _unfold(X, mode) @ kr


def cp_full(A, B, C):
    I, J, K = A.shape[0], B.shape[0], C.shape[0]
    return (A @ khatri_rao(C, B).T).reshape(I, J, K, order="F")


def coupled_penalized_fg(X, M, G, cols, widths, lam, grad):
    """Objective and gradient of the coupled coherence-penalized voxel problem.

    Dataset ``k`` uses the columns ``cols[k, :widths[k]]`` of the stacked
    unknown ``X``; its data terms are the matching columns of ``M`` (offset by
    the widths of the previous datasets) and ``G[k, :w, :w]``. The objective
    is ``sum_k -2<V_k, M_k> + <V_k'V_k, G_k> + lam ||V_k'V_k - I||^2``; the
    gradient is written into ``grad``.
    """
    grad[...] = 0.0
    f = 0.0
    off = 0
    for k in range(cols.shape[0]):
        w = widths[k]
        c = cols[k, :w]
        V = X[:, c]
        Mk = M[:, off:off + w]
        Gk = G[k, :w, :w]
        P = V.T @ V
        E = P - np.eye(w)
        f += -2.0 * np.sum(V * Mk) + np.sum(P * Gk) + lam * np.sum(E * E)
        grad[:, c] += -2.0 * Mk + V @ (2.0 * Gk + (4.0 * lam) * E)
        off += w
    return float(f)


def lbfgs_direction(g, S, Y, rho, head, count, out):
    """Two-loop recursion: write ``-H g`` into ``out``.

    ``S``, ``Y`` (shape ``(m, n)``) and ``rho`` form a circular history whose
    newest pair sits in row ``head``; ``count`` rows are valid. The initial
    inverse Hessian is ``(s'y / y'y) I`` from the newest pair.
    """
    m = S.shape[0]
    order = [(head - i) % m for i in range(count)]
    q = g.copy()
    alpha = np.empty(count)
    for i, j in enumerate(order):
        alpha[i] = rho[j] * np.dot(S[j], q)
        q -= alpha[i] * Y[j]
    q *= np.dot(S[head], Y[head]) / np.dot(Y[head], Y[head])
    for i in range(count - 1, -1, -1):
        j = order[i]
        b = rho[j] * np.dot(Y[j], q)
        q += (alpha[i] - b) * S[j]
    out[...] = -q


def linear_assignment(cost):
    """Minimum-cost perfect matching of a square matrix.

    Shortest augmenting path with dual potentials (Hungarian method, O(n^3)).
    Returns ``col`` such that row ``i`` is assigned to column ``col[i]``.
    """
    n = cost.shape[0]
    a = np.zeros((n + 1, n + 1))
    a[1:, 1:] = cost
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.intp)
    way = np.zeros(n + 1, dtype=np.intp)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            free = ~used
            free[0] = False
            cur = a[i0] - u[i0] - v
            better = free & (cur < minv)
            minv[better] = cur[better]
            way[better] = j0
            cand = np.where(free, minv, np.inf)
            j1 = int(np.argmin(cand))
            delta = cand[j1]
            u[p[used]] += delta
            v[used] -= delta
            minv[free] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col = np.empty(n, dtype=np.intp)
    col[p[1:] - 1] = np.arange(n)
    return col
