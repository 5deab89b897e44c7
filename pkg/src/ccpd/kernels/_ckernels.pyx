# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Same signatures and semantics as ``_pykernels``."""
import numpy as np
from libc.math cimport INFINITY


def khatri_rao(const double[:, :] A, const double[:, :] B):
    cdef Py_ssize_t I = A.shape[0], J = B.shape[0], R = A.shape[1]
    cdef Py_ssize_t i, j, r
    out = np.empty((I * J, R))
    cdef double[:, :] o = out
    for i in range(I):
        for j in range(J):
            for r in range(R):
                o[j + J * i, r] = A[i, r] * B[j, r]
    return out


def mttkrp(const double[:, :, :] X, const double[:, :] A, const double[:, :] B,
           const double[:, :] C, int mode):
    cdef Py_ssize_t I = X.shape[0], J = X.shape[1], K = X.shape[2]
    cdef Py_ssize_t R = A.shape[1]
    cdef Py_ssize_t i, j, k, r
    cdef double x
    cdef double[:] w = np.empty(R)
    if mode == 0:
        out = np.zeros((I, R))
    elif mode == 1:
        out = np.zeros((J, R))
    else:
        out = np.zeros((K, R))
    cdef double[:, :] o = out
    if mode == 0:
        for k in range(K):
            for j in range(J):
                for r in range(R):
                    w[r] = B[j, r] * C[k, r]
                for i in range(I):
                    x = X[i, j, k]
                    for r in range(R):
                        o[i, r] += x * w[r]
    elif mode == 1:
        for k in range(K):
            for j in range(J):
                for i in range(I):
                    x = X[i, j, k]
                    for r in range(R):
                        o[j, r] += x * A[i, r] * C[k, r]
    else:
        for k in range(K):
            for j in range(J):
                for r in range(R):
                    w[r] = B[j, r]
                for i in range(I):
                    x = X[i, j, k]
                    for r in range(R):
                        o[k, r] += x * A[i, r] * w[r]
    return out


def cp_full(const double[:, :] A, const double[:, :] B, const double[:, :] C):
    cdef Py_ssize_t I = A.shape[0], J = B.shape[0], K = C.shape[0], R = A.shape[1]
    cdef Py_ssize_t i, j, k, r
    cdef double s
    cdef double[:] w = np.empty(R)
    out = np.empty((I, J, K), order="F")
    cdef double[::1, :, :] o = out
    for k in range(K):
        for j in range(J):
            for r in range(R):
                w[r] = B[j, r] * C[k, r]
            for i in range(I):
                s = 0.0
                for r in range(R):
                    s += A[i, r] * w[r]
                o[i, j, k] = s
    return out


def coupled_penalized_fg(const double[:, :] X, const double[:, :] M, const double[:, :, :] G,
                         const Py_ssize_t[:, :] cols, const Py_ssize_t[:] widths,
                         double lam, double[:, :] grad):
    cdef Py_ssize_t n = X.shape[0], K = cols.shape[0], wmax = G.shape[1]
    cdef Py_ssize_t i, a, b, k, w, off = 0, ca
    cdef double f = 0.0, e, s
    cdef double[:, :] P = np.empty((wmax, wmax))
    grad[:, :] = 0.0
    for k in range(K):
        w = widths[k]
        for a in range(w):
            for b in range(a, w):
                s = 0.0
                for i in range(n):
                    s += X[i, cols[k, a]] * X[i, cols[k, b]]
                P[a, b] = s
                P[b, a] = s
        for a in range(w):
            for b in range(w):
                e = P[a, b] - (1.0 if a == b else 0.0)
                f += P[a, b] * G[k, a, b] + lam * e * e
                # reuse P for the coefficient matrix 2G + 4 lam (V'V - I)
                P[a, b] = 2.0 * G[k, a, b] + 4.0 * lam * e
        for i in range(n):
            for a in range(w):
                ca = cols[k, a]
                f -= 2.0 * X[i, ca] * M[i, off + a]
                s = -2.0 * M[i, off + a]
                for b in range(w):
                    s += X[i, cols[k, b]] * P[b, a]
                grad[i, ca] += s
        off += w
    return f


def lbfgs_direction(const double[:] g, const double[:, :] S, const double[:, :] Y,
                    const double[:] rho, Py_ssize_t head, Py_ssize_t count, double[:] out):
    cdef Py_ssize_t m = S.shape[0], n = g.shape[0]
    cdef Py_ssize_t i, j, t
    cdef double a, b, sy = 0.0, yy = 0.0, gamma
    cdef double[:] alpha = np.empty(max(count, 1))
    for t in range(n):
        out[t] = g[t]
    for i in range(count):
        j = (head - i + m) % m
        a = 0.0
        for t in range(n):
            a += S[j, t] * out[t]
        a *= rho[j]
        alpha[i] = a
        for t in range(n):
            out[t] -= a * Y[j, t]
    for t in range(n):
        sy += S[head, t] * Y[head, t]
        yy += Y[head, t] * Y[head, t]
    gamma = sy / yy
    for t in range(n):
        out[t] *= gamma
    for i in range(count - 1, -1, -1):
        j = (head - i + m) % m
        b = 0.0
        for t in range(n):
            b += Y[j, t] * out[t]
        b = alpha[i] - rho[j] * b
        for t in range(n):
            out[t] += b * S[j, t]
    for t in range(n):
        out[t] = -out[t]


def linear_assignment(const double[:, :] cost):
    cdef Py_ssize_t n = cost.shape[0]
    cdef Py_ssize_t i, j, i0, j0, j1
    cdef double delta, cur
    cdef double[:] u = np.zeros(n + 1)
    cdef double[:] v = np.zeros(n + 1)
    cdef double[:] minv = np.empty(n + 1)
    cdef Py_ssize_t[:] p = np.zeros(n + 1, dtype=np.intp)
    cdef Py_ssize_t[:] way = np.zeros(n + 1, dtype=np.intp)
    cdef unsigned char[:] used = np.zeros(n + 1, dtype=np.uint8)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        for j in range(n + 1):
            minv[j] = INFINITY
            used[j] = 0
        while True:
            used[j0] = 1
            i0 = p[j0]
            delta = INFINITY
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    col = np.empty(n, dtype=np.intp)
    cdef Py_ssize_t[:] c = col
    for j in range(1, n + 1):
        c[p[j] - 1] = j - 1
    return col
