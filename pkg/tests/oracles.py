"""Brute-force reference implementations used only by the tests.

Everything here is written directly from the definitions (mostly explicit
loops) and shares no code path with the package.
"""
import itertools
import math

import numpy as np


def unfold_loop(X, mode):
    """Mode-``mode`` (1-based) unfolding written element by element.

    The column of ``X[i, j, k]`` is ``j + J*k`` for mode 1, ``i + I*k`` for
    mode 2 and ``i + I*j`` for mode 3.
    """
    I, J, K = X.shape
    rows = (I, J, K)[mode - 1]
    out = np.zeros((rows, X.size // rows))
    for i in range(I):
        for j in range(J):
            for k in range(K):
                if mode == 1:
                    out[i, j + J * k] = X[i, j, k]
                elif mode == 2:
                    out[j, i + I * k] = X[i, j, k]
                else:
                    out[k, i + I * j] = X[i, j, k]
    return out


def khatri_rao_loop(A, B):
    I, R = A.shape
    J = B.shape[0]
    out = np.zeros((I * J, R))
    for i in range(I):
        for j in range(J):
            for r in range(R):
                out[j + J * i, r] = A[i, r] * B[j, r]
    return out


def cp_loop(A, B, C):
    I, J, K = A.shape[0], B.shape[0], C.shape[0]
    out = np.zeros((I, J, K))
    for i in range(I):
        for j in range(J):
            for k in range(K):
                s = 0.0
                for r in range(A.shape[1]):
                    s += A[i, r] * B[j, r] * C[k, r]
                out[i, j, k] = s
    return out


def sumsq_loop(X):
    s = 0.0
    for v in np.asarray(X).ravel():
        s += float(v) * float(v)
    return s


def cost_loop(theta, data, lam):
    """Coupled cost by direct summation over every tensor and Gram entry."""
    total = 0.0
    for k, Y in enumerate(data):
        S = np.hstack([theta.S_shared, theta.S_distinct[k]])
        V = np.hstack([theta.V_shared, theta.V_distinct[k]])
        T = np.hstack([theta.T_shared[k], theta.T_distinct[k]])
        total += sumsq_loop(Y - cp_loop(S, V, T))
        n = V.shape[1]
        for a in range(n):
            for b in range(n):
                g = 0.0
                for v in range(V.shape[0]):
                    g += V[v, a] * V[v, b]
                total += lam * (g - (1.0 if a == b else 0.0)) ** 2
    return total


def mode_product_loop(X, U, mode):
    """``X x_mode U'`` with explicit loops; ``U`` has shape ``(n_mode, d)``."""
    I, J, K = X.shape
    d = U.shape[1]
    shape = [I, J, K]
    shape[mode - 1] = d
    out = np.zeros(shape)
    for i in range(I):
        for j in range(J):
            for k in range(K):
                for q in range(d):
                    if mode == 1:
                        out[q, j, k] += U[i, q] * X[i, j, k]
                    elif mode == 2:
                        out[i, q, k] += U[j, q] * X[i, j, k]
                    else:
                        out[i, j, q] += U[k, q] * X[i, j, k]
    return out


def best_permutation(sim):
    """Exhaustive maximum of ``sum_i sim[i, p[i]]`` over all permutations."""
    n = sim.shape[0]
    best, best_p = -math.inf, None
    for p in itertools.permutations(range(n)):
        v = math.fsum(sim[i, p[i]] for i in range(n))
        if v > best:
            best, best_p = v, p
    return best, best_p


def abs_cos_loop(a, b):
    num = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    return abs(num) / (na * nb)


def pdistance_bruteforce(theta_a, theta_b):
    """Pseudo-distance via exhaustive matching and loop cosines."""
    total = 0.0
    for k in range(theta_a.K):
        fa = [np.hstack(p) for p in _blocks(theta_a, k)]
        fb = [np.hstack(p) for p in _blocks(theta_b, k)]
        n = fa[0].shape[1]
        sim = np.zeros((n, n))
        for r in range(n):
            for c in range(n):
                sim[r, c] = sum(abs_cos_loop(A[:, r], B[:, c]) for A, B in zip(fa, fb))
        total += best_permutation(sim)[0]
    return -total


def _blocks(theta, k):
    return (
        (theta.S_shared, theta.S_distinct[k]),
        (theta.V_shared, theta.V_distinct[k]),
        (theta.T_shared[k], theta.T_distinct[k]),
    )


def permutation_pvalue(x, labels, n_perm, rng, batch=5000):
    """Two-sided permutation p-value of the Welch statistic.

    Group memberships are reshuffled ``n_perm`` times; the statistic is
    recomputed from scratch for every shuffle (vectorized over a batch).
    """
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels)
    g = np.unique(labels)
    n = x.size
    n1 = int(np.sum(labels == g[1]))

    def welch(masks):
        n_b = masks.sum(axis=1)
        n_a = n - n_b
        sb = masks @ x
        sa = x.sum() - sb
        qb = masks @ (x * x)
        qa = (x * x).sum() - qb
        mb, ma = sb / n_b, sa / n_a
        vb = (qb - n_b * mb * mb) / (n_b - 1)
        va = (qa - n_a * ma * ma) / (n_a - 1)
        return (mb - ma) / np.sqrt(va / n_a + vb / n_b)

    observed = abs(welch((labels == g[1])[None, :].astype(float))[0])
    hits = 0
    done = 0
    while done < n_perm:
        m = min(batch, n_perm - done)
        order = np.argsort(rng.random((m, n)), axis=1)
        masks = np.zeros((m, n))
        np.put_along_axis(masks, order[:, :n1], 1.0, axis=1)
        hits += int(np.sum(np.abs(welch(masks)) >= observed * (1 - 1e-12)))
        done += m
    return (hits + 1) / (n_perm + 1)


def cp_als_reference(X, A, B, C, n_iter):
    """Textbook CP-ALS (A, then B, then C) returning the cost after every sweep.

    Uses full Khatri-Rao products and the pseudo-inverse, not the
    package's Gram-based normal equations.
    """
    I, J, K = X.shape
    X1 = unfold_loop(X, 1)
    X2 = unfold_loop(X, 2)
    X3 = unfold_loop(X, 3)
    costs = [sumsq_loop(X - cp_loop(A, B, C))]
    for _ in range(n_iter):
        A = X1 @ np.linalg.pinv(khatri_rao_loop(C, B)).T
        B = X2 @ np.linalg.pinv(khatri_rao_loop(C, A)).T
        C = X3 @ np.linalg.pinv(khatri_rao_loop(B, A)).T
        costs.append(sumsq_loop(X - cp_loop(A, B, C)))
    return costs, (A, B, C)


def identifiable(S, T, rank):
    return rank <= (T + 1) * (S + 1) / 16.0
