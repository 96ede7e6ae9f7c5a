"""Dense linear algebra helpers.

Vectors and matrices are plain float64 numpy arrays. The helpers here add the
shape checks the rest of the package relies on, plus a seeded power iteration
for spectral norms.
"""

import numpy as np


def as_vector(v):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {v.shape}")
    return v


def as_matrix(m):
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {m.shape}")
    return m


def matvec(M, v):
    """Return ``M @ v`` after checking that the inner dimensions agree."""
    M = as_matrix(M)
    v = as_vector(v)
    if M.shape[1] != v.shape[0]:
        raise ValueError(f"dimension mismatch: matrix {M.shape} times vector of length {v.shape[0]}")
    return M @ v


def outer(u, v):
    return np.outer(as_vector(u), as_vector(v))


def start_vector(n, seed):
    """Deterministic pseudo-random unit vector of length ``n``."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    return x / np.linalg.norm(x)


def spectral_norm(M, iters=100, seed=0):
    """Largest singular value of ``M`` by power iteration on ``M.T @ M``.

    Parameters
    ----------
    M : array_like, shape (m, n)
    iters : int
        Number of power iterations (at least one).
    seed : int
        Seed for the start vector, so repeated calls agree bit for bit.

    Returns
    -------
    float
        Square root of the Rayleigh quotient of ``M.T @ M`` after ``iters``
        steps. This never overestimates the true norm.
    """
    M = as_matrix(M)
    if M.size == 0:
        raise ValueError("spectral norm of an empty matrix is undefined")
    if iters < 1:
        raise ValueError("iters must be >= 1")
    x = start_vector(M.shape[1], seed)
    for _ in range(iters):
        y = M.T @ (M @ x)
        norm = np.linalg.norm(y)
        if norm == 0.0:
            return 0.0
        x = y / norm
    return float(np.linalg.norm(M @ x))


def gram_norm(M, iters=5, seed=0):
    """Estimate of ``||M.T @ M||_2`` (the squared spectral norm of ``M``)."""
    return spectral_norm(M, iters=iters, seed=seed) ** 2


def is_finite(*arrays):
    return all(np.all(np.isfinite(a)) for a in arrays)
