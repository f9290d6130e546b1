"""Random hidden layers and closed-form ELM output weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.special import expit

PINV_RTOL = 1e-10
SYMMETRY_TOL = 1e-8


class FactorizationError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class HiddenLayer:
    """Frozen random input weights ``W`` (L x d) and biases ``b`` (L,)."""

    W: np.ndarray
    b: np.ndarray
    activation: str = "sigmoid"

    def __post_init__(self):
        W = np.array(self.W, dtype=np.float64, ndmin=2)
        b = np.array(self.b, dtype=np.float64).ravel()
        if W.shape[0] != b.size:
            raise ValueError(f"W has {W.shape[0]} rows but b has {b.size} entries")
        if self.activation != "sigmoid":
            raise ValueError(f"unsupported activation {self.activation!r}")
        W.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)

    @property
    def L(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[1]


def init_hidden(seed: int, L: int, d: int) -> HiddenLayer:
    """Draw ``W ~ U[-1, 1]`` and ``b ~ U[0, 1]`` from a seeded generator."""
    if L < 1 or d < 1:
        raise ValueError("L and d must be positive")
    rng = np.random.default_rng(seed)
    W = rng.uniform(-1.0, 1.0, size=(L, d))
    b = rng.uniform(0.0, 1.0, size=L)
    return HiddenLayer(W, b)


def hidden_map(layer: HiddenLayer, X: np.ndarray) -> np.ndarray:
    """Sigmoid hidden outputs ``H = sigmoid(W X + b)``, shape L x N."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] != layer.d:
        raise ValueError(f"inputs have {X.shape[0]} features, layer expects {layer.d}")
    return expit(layer.W @ X + layer.b[:, None])


def solve_belm(H: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Minimum-norm least-squares weights ``beta = pinv(H^T) Y^T``.

    Singular values below ``1e-10`` times the largest are discarded.
    """
    U, s, Vt = np.linalg.svd(H.T, full_matrices=False)
    keep = s > PINV_RTOL * s[0] if s.size and s[0] > 0 else np.zeros_like(s, dtype=bool)
    s_inv = np.zeros_like(s)
    s_inv[keep] = 1.0 / s[keep]
    # pinv(H^T) = V diag(1/s) U^T
    return Vt.T @ (s_inv[:, None] * (U.T @ Y.T))


def _spd_solve(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    try:
        factor = linalg.cho_factor(A, lower=True, check_finite=True)
    except (linalg.LinAlgError, ValueError) as exc:
        raise FactorizationError(f"Cholesky factorization failed: {exc}") from exc
    return linalg.cho_solve(factor, B)


def solve_nlelm(H: np.ndarray, Y: np.ndarray, C: float) -> np.ndarray:
    """Ridge ELM weights ``beta = H (I/C + H^T H)^-1 Y^T``.

    Solved in whichever of the L x L or N x N forms is smaller.
    """
    if not C > 0:
        raise ValueError("C must be positive")
    L, N = H.shape
    if L < N:
        return _spd_solve(np.eye(L) / C + H @ H.T, H @ Y.T)
    return H @ _spd_solve(np.eye(N) / C + H.T @ H, Y.T)


def solve_nlelm_dual(H: np.ndarray, Y: np.ndarray, C: float) -> np.ndarray:
    """The N x N route of :func:`solve_nlelm`, kept for cross-checking."""
    N = H.shape[1]
    return H @ _spd_solve(np.eye(N) / C + H.T @ H, Y.T)


def solve_kelm(K: np.ndarray, Y: np.ndarray, C: float) -> np.ndarray:
    """Kernel ELM coefficients ``pi = (I/C + K)^-1 Y^T`` (N x M)."""
    if not C > 0:
        raise ValueError("C must be positive")
    K = np.asarray(K, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError("kernel matrix must be square")
    asym = np.max(np.abs(K - K.T), initial=0.0)
    if asym > SYMMETRY_TOL:
        raise ValueError(f"kernel matrix is not symmetric (max asymmetry {asym:.3g})")
    return _spd_solve(np.eye(K.shape[0]) / C + K, Y.T)
