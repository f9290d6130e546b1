"""Gaussian Gram matrices and their convex combinations."""

import numpy as np


def gaussian_gram(X1, X2, sigma):
    """Gaussian Gram matrix between the columns of ``X1`` (d x n1) and ``X2`` (d x n2).

    ``K[i, j] = exp(-||x1_i - x2_j||^2 / (2 sigma^2))``.
    """
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    X1 = np.asarray(X1, dtype=np.float64)
    X2 = np.asarray(X2, dtype=np.float64)
    if X1.shape[0] != X2.shape[0]:
        raise ValueError(f"feature dimensions differ: {X1.shape[0]} vs {X2.shape[0]}")
    sq1 = np.einsum("ij,ij->j", X1, X1)
    sq2 = np.einsum("ij,ij->j", X2, X2)
    dist = sq1[:, None] + sq2[None, :] - 2.0 * (X1.T @ X2)
    np.maximum(dist, 0.0, out=dist)
    if X1 is X2:
        # exact zeros on the diagonal and exact symmetry
        np.fill_diagonal(dist, 0.0)
        dist = 0.5 * (dist + dist.T)
    return np.exp(-dist / (2.0 * sigma * sigma))


def composite_gram(Kw, Ks, mu):
    """``mu * Kw + (1 - mu) * Ks``."""
    Kw = np.asarray(Kw)
    Ks = np.asarray(Ks)
    if Kw.shape != Ks.shape:
        raise ValueError(f"Gram shapes differ: {Kw.shape} vs {Ks.shape}")
    if not 0.0 <= mu <= 1.0:
        raise ValueError("mu must lie in [0, 1]")
    if mu == 1.0:
        return Kw.copy()
    if mu == 0.0:
        return Ks.copy()
    return mu * Kw + (1.0 - mu) * Ks
