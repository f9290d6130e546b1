"""Weighted composite features: spatially weighted means and their fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import composite_gram, gaussian_gram

COMBINE_RULES = ("linear", "sqrt")


@dataclass(frozen=True)
class WcfConfig:
    window: int = 13
    z: float = 0.2
    mu: float = 0.1
    combine_rule: str = "linear"

    def __post_init__(self):
        if self.window < 1 or self.window % 2 == 0:
            raise ValueError(f"window must be a positive odd integer, got {self.window}")
        if not self.z > 0:
            raise ValueError("z must be positive")
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError("mu must lie in [0, 1]")
        if self.combine_rule not in COMBINE_RULES:
            raise ValueError(f"combine_rule must be one of {COMBINE_RULES}")


def spatial_mean(cube, coords, cfg: WcfConfig, chunk: int = 4096) -> np.ndarray:
    """Weighted neighborhood mean spectrum for each ``(row, col)`` in ``coords``.

    Each neighbor ``x_k`` in the ``window x window`` square around pixel ``x_i``
    gets weight ``exp(-z ||x_i - x_k||^2)``; the center pixel is included with
    weight 1. Window cells falling outside the image take the value of the
    nearest border pixel. Returns a ``bands x n`` matrix.
    """
    values = cube.values if hasattr(cube, "values") else np.asarray(cube)
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 2)
    rows, cols, bands = values.shape
    if coords.size and (coords.min() < 0 or coords[:, 0].max() >= rows
                        or coords[:, 1].max() >= cols):
        raise ValueError("coordinates fall outside the cube")
    a = (cfg.window - 1) // 2
    padded = np.pad(values, ((a, a), (a, a), (0, 0)), mode="edge")

    out = np.empty((bands, coords.shape[0]))
    for start in range(0, coords.shape[0], chunk):
        rr = coords[start:start + chunk, 0] + a
        cc = coords[start:start + chunk, 1] + a
        center = padded[rr, cc, :]
        num = np.zeros_like(center)
        den = np.zeros(center.shape[0])
        for dr in range(-a, a + 1):
            for dc in range(-a, a + 1):
                nb = padded[rr + dr, cc + dc, :]
                diff = nb - center
                v = np.exp(-cfg.z * np.einsum("ij,ij->i", diff, diff))
                num += v[:, None] * nb
                den += v
        out[:, start:start + chunk] = (num / den[:, None]).T
    return out


def combine_hidden(Hw, Hs, cfg: WcfConfig) -> np.ndarray:
    """Fuse spectral and spatial hidden outputs.

    ``linear``: ``mu Hw + (1 - mu) Hs``; ``sqrt``: ``sqrt(mu) Hw + sqrt(1 - mu) Hs``.
    """
    Hw = np.asarray(Hw)
    Hs = np.asarray(Hs)
    if Hw.shape != Hs.shape:
        raise ValueError(f"hidden matrices differ in shape: {Hw.shape} vs {Hs.shape}")
    mu = cfg.mu
    if cfg.combine_rule == "sqrt":
        return np.sqrt(mu) * Hw + np.sqrt(1.0 - mu) * Hs
    return mu * Hw + (1.0 - mu) * Hs


def wcf_kernel(Xw, Xs, mu, sigma_w, sigma_s, Xw2=None, Xs2=None) -> np.ndarray:
    """Composite Gaussian Gram of spectral and spatial features.

    With ``Xw2``/``Xs2`` omitted the training Gram is returned; otherwise the
    rectangular Gram between the first and second sample sets.
    """
    Xw2 = Xw if Xw2 is None else Xw2
    Xs2 = Xs if Xs2 is None else Xs2
    Kw = gaussian_gram(Xw, Xw2, sigma_w)
    Ks = gaussian_gram(Xs, Xs2, sigma_s)
    return composite_gram(Kw, Ks, mu)
