"""Independent reference implementations used only by the tests."""

import math

import numpy as np


def naive_matvec(M, v):
    rows, cols = len(M), len(M[0])
    out = [0.0] * rows
    for i in range(rows):
        for j in range(cols):
            out[i] += M[i][j] * v[j]
    return out


def naive_matmul(A, B):
    n, m, p = len(A), len(B), len(B[0])
    return [[sum(A[i][k] * B[k][j] for k in range(m)) for j in range(p)] for i in range(n)]


def jacobi_singular_values(A, sweeps=60):
    """One-sided Jacobi SVD (Hestenes); returns singular values in descending order."""
    U = [list(map(float, row)) for row in A]
    m, n = len(U), len(U[0])
    for _ in range(sweeps):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                alpha = sum(U[i][p] ** 2 for i in range(m))
                beta = sum(U[i][q] ** 2 for i in range(m))
                gamma = sum(U[i][p] * U[i][q] for i in range(m))
                if gamma == 0.0 or alpha * beta == 0.0:
                    continue
                off = max(off, abs(gamma) / math.sqrt(alpha * beta))
                zeta = (beta - alpha) / (2.0 * gamma)
                t = math.copysign(1.0, zeta) / (abs(zeta) + math.sqrt(1.0 + zeta * zeta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = c * t
                for i in range(m):
                    up, uq = U[i][p], U[i][q]
                    U[i][p] = c * up - s * uq
                    U[i][q] = s * up + c * uq
        if off < 1e-15:
            break
    return sorted((math.sqrt(sum(U[i][j] ** 2 for i in range(m))) for j in range(n)), reverse=True)


def grid_argmin(fn, lo, hi, n=200001):
    """Brute-force minimiser of a scalar function, refined once around the best grid point."""
    xs = np.linspace(lo, hi, n)
    vals = np.array([fn(x) for x in xs])
    i = int(np.argmin(vals))
    step = xs[1] - xs[0]
    xs = np.linspace(xs[i] - step, xs[i] + step, 2001)
    vals = np.array([fn(x) for x in xs])
    return float(xs[int(np.argmin(vals))])


def layered_forward(weights, acts, x):
    """Per-layer composition written out with explicit loops."""
    s = list(map(float, x))
    out = []
    for W, f in zip(weights, acts):
        a = naive_matvec(W.tolist(), s)
        s = [f(v) for v in a]
        out.append(s)
    return out
