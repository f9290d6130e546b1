"""Sparse multinomial-logistic MAP estimation over ELM features.

Coefficients are held as ``R x M`` matrices (one column per class). The
stacked-vector view used by the bound matrix is class-major, i.e. the
column-major flattening ``[beta_1; ...; beta_M]``. In that view the bound
matrix is ``B = A kron (Phi Phi^T)`` with ``A = -1/2 (I - 11^T / M)``, which
acts on a coefficient matrix ``X`` as ``Phi Phi^T X A``. ``B`` is never formed;
every product and solve goes through the eigendecompositions of its two
factors.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg
from scipy.sparse.linalg import LinearOperator, cg
from scipy.special import logsumexp, softmax

NNZ_TOL = 1e-10
DEFAULT_R_CAP = 4096


class SolverError(RuntimeError):
    pass


def stack(beta: np.ndarray) -> np.ndarray:
    """Class-major stacked vector of an ``R x M`` coefficient matrix."""
    return np.asarray(beta).ravel(order="F")


def unstack(vec: np.ndarray, R: int, M: int) -> np.ndarray:
    return np.asarray(vec).reshape((R, M), order="F")


# ---------------------------------------------------------------------------
# likelihood


def _scores(beta, Phi):
    return beta.T @ Phi


def log_likelihood(beta, Phi, Y) -> float:
    """Multinomial-logistic log-likelihood ``sum_i (y_i^T s_i - logsumexp(s_i))``."""
    S = _scores(beta, Phi)
    return float(np.sum(Y * S) - np.sum(logsumexp(S, axis=0)))


def softmax_probs(beta, Phi) -> np.ndarray:
    """Class probabilities, ``M x N``; every column sums to one."""
    return softmax(_scores(beta, Phi), axis=0)


def grad_loglik(beta, Phi, Y) -> np.ndarray:
    """Gradient of :func:`log_likelihood` as an ``R x M`` matrix.

    Column ``j`` is ``sum_i phi_i (y_ij - p_ij)``; use :func:`stack` for the
    vector form.
    """
    return Phi @ (Y - softmax_probs(beta, Phi)).T


# ---------------------------------------------------------------------------
# bound matrix


@dataclass(frozen=True)
class BoundFactorization:
    """Eigen-factors of ``B = A kron (Phi Phi^T)``."""

    eigvals_R: np.ndarray
    eigvecs_R: np.ndarray
    eigvals_A: np.ndarray
    eigvecs_A: np.ndarray

    @property
    def R(self) -> int:
        return self.eigvals_R.size

    @property
    def M(self) -> int:
        return self.eigvals_A.size

    def to_eigbasis(self, X):
        return self.eigvecs_R.T @ X @ self.eigvecs_A

    def from_eigbasis(self, T):
        return self.eigvecs_R @ T @ self.eigvecs_A.T

    @property
    def spectrum(self) -> np.ndarray:
        """``R x M`` grid of eigenvalues ``s_R[i] * s_A[j]`` of ``B``."""
        return np.outer(self.eigvals_R, self.eigvals_A)

    def matvec(self, X):
        """``B`` applied to an ``R x M`` coefficient matrix."""
        return self.from_eigbasis(self.spectrum * self.to_eigbasis(X))

    def diagonal(self) -> np.ndarray:
        """Diagonal of ``B`` arranged as ``R x M``."""
        g = (self.eigvecs_R ** 2) @ self.eigvals_R
        a = (self.eigvecs_A ** 2) @ self.eigvals_A
        return np.outer(g, a)

    def A(self) -> np.ndarray:
        return (self.eigvecs_A * self.eigvals_A) @ self.eigvecs_A.T

    def gram(self) -> np.ndarray:
        return (self.eigvecs_R * self.eigvals_R) @ self.eigvecs_R.T


def class_bound_factor(M: int) -> tuple[np.ndarray, np.ndarray]:
    """Analytic spectrum of ``A = -1/2 (I - 11^T/M)``.

    Returns eigenvalues ``(0, -1/2, ..., -1/2)`` and an orthogonal basis whose
    first column is ``1/sqrt(M)``.
    """
    if M < 1:
        raise ValueError("M must be positive")
    if M == 1:
        return np.zeros(1), np.ones((1, 1))
    vals = np.full(M, -0.5)
    vals[0] = 0.0
    return vals, linalg.helmert(M, full=True).T


def build_bound(Phi, M: int, r_cap: int = DEFAULT_R_CAP) -> BoundFactorization:
    Phi = np.asarray(Phi, dtype=np.float64)
    R = Phi.shape[0]
    if R > r_cap:
        raise SolverError(f"design has {R} rows, above the cap of {r_cap}")
    G = Phi @ Phi.T
    try:
        s, U = linalg.eigh(G)
    except linalg.LinAlgError as exc:
        raise SolverError(f"eigendecomposition failed: {exc}") from exc
    np.maximum(s, 0.0, out=s)
    sa, Ua = class_bound_factor(M)
    return BoundFactorization(s, U, sa, Ua)


def bound_quadratic(delta, bf: BoundFactorization) -> float:
    """``delta^T B delta`` for a stacked vector or ``R x M`` matrix ``delta``."""
    D = unstack(delta, bf.R, bf.M) if np.ndim(delta) == 1 else delta
    T = bf.to_eigbasis(D)
    return float(np.sum(bf.spectrum * T * T))


def solve_shifted(bf: BoundFactorization, gamma: float, rhs) -> np.ndarray:
    """Solve ``(B - gamma I) x = rhs`` for ``gamma > 0``.

    Accepts and returns the same layout as ``rhs`` (stacked vector or matrix).
    Every eigenvalue of ``B - gamma I`` is at most ``-gamma``.
    """
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    vector = np.ndim(rhs) == 1
    Rm = unstack(rhs, bf.R, bf.M) if vector else rhs
    X = bf.from_eigbasis(bf.to_eigbasis(Rm) / (bf.spectrum - gamma))
    return stack(X) if vector else X


def solve_bound_pinv(bf: BoundFactorization, rhs, rtol: float = 1e-12) -> np.ndarray:
    """Minimum-norm solution of ``B x = rhs`` (matrix layout)."""
    spec = bf.spectrum
    cutoff = rtol * np.max(np.abs(spec), initial=0.0)
    inv = np.zeros_like(spec)
    keep = np.abs(spec) > cutoff
    inv[keep] = 1.0 / spec[keep]
    return bf.from_eigbasis(bf.to_eigbasis(rhs) * inv)


# ---------------------------------------------------------------------------
# majorization-minimization with the Laplacian prior


@dataclass
class MMStepResult:
    beta: np.ndarray
    q1: float
    cg_iters: int


def _mm_update(beta, Phi, Y, bf, lam, eps_floor, grad=None):
    g = grad_loglik(beta, Phi, Y) if grad is None else grad
    R, M = beta.shape
    if lam == 0:
        h = -solve_bound_pinv(bf, g)
        q1 = 0.5 * float(np.sum(g * h))
        return MMStepResult(beta + h, q1, 0)

    weights = lam / np.maximum(np.abs(beta), eps_floor)
    g_tilde = g - weights * beta
    diag = weights - bf.diagonal()

    def matvec(x):
        X = unstack(x, R, M)
        return stack(weights * X - bf.matvec(X))

    op = LinearOperator((R * M, R * M), matvec=matvec, dtype=np.float64)
    precond = LinearOperator((R * M, R * M), matvec=lambda x: x / stack(diag),
                             dtype=np.float64)
    rhs = stack(g_tilde)
    n_iter = 0

    def count(_):
        nonlocal n_iter
        n_iter += 1

    # solve (lam Lambda - B) h = g_tilde, the step from beta
    h, info = cg(op, rhs, rtol=1e-10, atol=0.0, maxiter=10 * R * M, M=precond,
                 callback=count)
    if info != 0:
        resid = np.linalg.norm(op.matvec(h) - rhs)
        raise SolverError(f"CG did not converge in {n_iter} iterations, residual {resid:.3e}")
    q1 = 0.5 * float(rhs @ h)
    return MMStepResult(beta + unstack(h, R, M), q1, n_iter)


def mm_step(beta, Phi, Y, bf, lam, eps_floor=1e-8) -> np.ndarray:
    """One bound-majorized update ``(B - lam Lambda)^-1 (B beta - grad L(beta))``.

    ``Lambda = diag(1 / max(|beta_l|, eps_floor))``. With ``lam = 0`` the
    update reduces to ``beta - pinv(B) grad L(beta)``.
    """
    return _mm_update(np.asarray(beta, dtype=np.float64), Phi, Y, bf, lam, eps_floor).beta


def soft_threshold(e, t):
    """``sign(e) * max(0, |e| - t)``."""
    if t < 0:
        raise ValueError("threshold must be non-negative")
    e = np.asarray(e, dtype=np.float64)
    return np.sign(e) * np.maximum(np.abs(e) - t, 0.0)


# ---------------------------------------------------------------------------
# fitting loops


@dataclass(frozen=True)
class SolverConfig:
    lam: float = 2.0 ** -10
    gamma: float | None = None
    max_iters: int = 200
    tol_beta: float = 1e-6
    tol_grad: float = 1e-5
    lambda_floor_eps: float = 1e-8
    mode: str = "admm"

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError("lambda must be non-negative")
        if self.gamma is None:
            object.__setattr__(self, "gamma", 10.0 * self.lam)
        if self.mode not in ("admm", "mm"):
            raise ValueError(f"unknown solver mode {self.mode!r}")
        if self.mode == "admm" and not self.gamma > 0:
            raise ValueError("ADMM needs a positive lambda or gamma")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        for name in ("tol_beta", "tol_grad", "lambda_floor_eps"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def from_exponent(cls, a: float, **kw) -> "SolverConfig":
        return cls(lam=2.0 ** a, **kw)


@dataclass
class TraceRow:
    iter: int
    loglik: float
    objective: float
    grad_norm: float
    split_gap: float
    nnz: int
    q1: float = float("nan")


@dataclass
class SolverTrace:
    mode: str
    initial: TraceRow
    rows: list = field(default_factory=list)
    v: np.ndarray | None = None
    converged: bool = False

    def __len__(self):
        return len(self.rows)

    @property
    def final(self) -> TraceRow:
        return self.rows[-1] if self.rows else self.initial

    def column(self, name) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "loglik", "objective", "grad_norm", "split_gap", "nnz"])
        for r in [self.initial] + self.rows:
            w.writerow([r.iter, repr(r.loglik), repr(r.objective), repr(r.grad_norm),
                        repr(r.split_gap), r.nnz])
        return buf.getvalue()


def _row(it, beta, Phi, Y, lam, grad, gap, q1=float("nan")):
    ll = log_likelihood(beta, Phi, Y)
    obj = ll - lam * float(np.abs(beta).sum())
    if not (np.isfinite(ll) and np.isfinite(obj)):
        raise SolverError(f"non-finite objective at iteration {it}")
    return TraceRow(it, ll, obj, float(np.linalg.norm(grad)), gap,
                    int(np.count_nonzero(np.abs(beta) > NNZ_TOL)), q1)


def _check_shapes(beta0, Phi, Y):
    beta0 = np.array(beta0, dtype=np.float64)
    if beta0.shape != (Phi.shape[0], Y.shape[0]):
        raise ValueError(f"beta0 has shape {beta0.shape}, expected {(Phi.shape[0], Y.shape[0])}")
    if Phi.shape[1] != Y.shape[1]:
        raise ValueError("design and label matrices disagree on sample count")
    return beta0


def _rel_change(new, old):
    return np.linalg.norm(new - old) / max(np.linalg.norm(old), 1e-300)


def admm_fit(beta0, Phi, Y, cfg: SolverConfig, bf: BoundFactorization | None = None):
    """Variable-splitting / augmented-Lagrangian MAP fit.

    Each outer iteration takes one bound-majorized step on
    ``-L(beta) + gamma/2 ||beta - v - b||^2``, soft-thresholds
    ``beta - b`` at ``lam / gamma`` to get ``v``, and updates the scaled dual
    ``b <- b - beta + v``. Stops on relative coefficient change below
    ``cfg.tol_beta`` or after ``cfg.max_iters`` iterations.

    Returns ``(beta, trace)``; the final split variable is ``trace.v``.
    """
    Phi = np.asarray(Phi, dtype=np.float64)
    beta = _check_shapes(beta0, Phi, Y)
    bf = build_bound(Phi, Y.shape[0]) if bf is None else bf
    lam, gamma = cfg.lam, cfg.gamma
    v = beta.copy()
    b = np.zeros_like(beta)

    g = grad_loglik(beta, Phi, Y)
    trace = SolverTrace("admm", _row(0, beta, Phi, Y, lam, g, 0.0))
    for it in range(1, cfg.max_iters + 1):
        c = v + b
        beta_new = solve_shifted(bf, gamma, bf.matvec(beta) - g - gamma * c)
        g_aug = g - gamma * (beta - c)
        q1 = 0.5 * float(np.sum(g_aug * (beta_new - beta)))
        v = soft_threshold(beta_new - b, lam / gamma)
        b = b - beta_new + v
        change = _rel_change(beta_new, beta)
        beta = beta_new
        g = grad_loglik(beta, Phi, Y)
        trace.rows.append(_row(it, beta, Phi, Y, lam, g,
                               float(np.linalg.norm(beta - v)), q1))
        if change < cfg.tol_beta:
            trace.converged = True
            break
    trace.v = v
    return beta, trace


def mm_fit(beta0, Phi, Y, cfg: SolverConfig, bf: BoundFactorization | None = None):
    """Iterate :func:`mm_step`; the trace records the surrogate gain ``Q1``."""
    Phi = np.asarray(Phi, dtype=np.float64)
    beta = _check_shapes(beta0, Phi, Y)
    bf = build_bound(Phi, Y.shape[0]) if bf is None else bf
    g = grad_loglik(beta, Phi, Y)
    trace = SolverTrace("mm", _row(0, beta, Phi, Y, cfg.lam, g, 0.0))
    for it in range(1, cfg.max_iters + 1):
        step = _mm_update(beta, Phi, Y, bf, cfg.lam, cfg.lambda_floor_eps, grad=g)
        change = _rel_change(step.beta, beta)
        beta = step.beta
        g = grad_loglik(beta, Phi, Y)
        trace.rows.append(_row(it, beta, Phi, Y, cfg.lam, g, 0.0, step.q1))
        if change < cfg.tol_beta or trace.rows[-1].grad_norm < cfg.tol_grad:
            trace.converged = True
            break
    trace.v = beta.copy()
    return beta, trace


def fit(beta0, Phi, Y, cfg: SolverConfig, bf=None):
    if cfg.mode == "mm":
        return mm_fit(beta0, Phi, Y, cfg, bf)
    return admm_fit(beta0, Phi, Y, cfg, bf)


# ---------------------------------------------------------------------------
# diagnostics


@dataclass
class LemmaReport:
    monotone_violations: list
    grad_trend_ok: bool
    min_q1: float
    flags: list

    @property
    def ok(self) -> bool:
        return not self.flags


def lemma_diagnostics(trace: SolverTrace, drop_tol: float = 1e-9,
                      q1_tol: float = 1e-12) -> LemmaReport:
    """Check a trace for objective drops, gradient decay and surrogate gains.

    Objective drops are only flagged for MM traces, where the penalized
    objective must be non-decreasing.
    """
    if not trace.rows:
        raise ValueError("empty trace")
    flags = []
    violations = []
    if trace.mode == "mm":
        obj = np.array([trace.initial.objective] + list(trace.column("objective")))
        violations = [int(i) + 1 for i in np.flatnonzero(np.diff(obj) < -drop_tol)]
        if violations:
            flags.append(f"objective decreased at iterations {violations}")
    grad_ok = trace.final.grad_norm <= 0.1 * trace.initial.grad_norm
    if not grad_ok:
        flags.append("gradient norm did not fall below 0.1x its initial value")
    q1 = trace.column("q1")
    q1 = q1[np.isfinite(q1)]
    min_q1 = float(q1.min()) if q1.size else float("nan")
    if q1.size and min_q1 < -q1_tol:
        flags.append(f"negative surrogate gain {min_q1:.3e}")
    return LemmaReport(violations, bool(grad_ok), min_q1, flags)
