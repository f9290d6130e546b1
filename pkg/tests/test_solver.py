import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asmlelm import solver
from asmlelm.data_model import one_hot
from _fixtures import separable_toy


def dense_bound(Phi, M):
    A = -0.5 * (np.eye(M) - np.ones((M, M)) / M)
    return np.kron(A, Phi @ Phi.T)


def loglik_loop(beta, Phi, Y):
    total = 0.0
    for i in range(Phi.shape[1]):
        s = beta.T @ Phi[:, i]
        total += float(Y[:, i] @ s) - float(np.log(np.sum(np.exp(s))))
    return total


class TestLikelihood:
    def test_zero_coefficients(self, standard):
        H, Y, _, _ = standard
        beta = np.zeros((H.shape[0], 3))
        assert solver.log_likelihood(beta, H, Y) == pytest.approx(-60 * np.log(3), abs=1e-12)

    def test_matches_loop(self, standard, rng):
        H, Y, _, _ = standard
        beta = rng.normal(size=(H.shape[0], 3))
        assert solver.log_likelihood(beta, H, Y) == pytest.approx(loglik_loop(beta, H, Y),
                                                                   rel=1e-12)

    def test_large_scores_stay_finite(self):
        Phi = np.array([[1.0, -1.0]])
        beta = np.array([[1000.0, -1000.0]])
        Y = one_hot([1, 2], 2)
        assert np.isfinite(solver.log_likelihood(beta, Phi, Y))
        assert solver.log_likelihood(beta, Phi, Y) == pytest.approx(0.0, abs=1e-12)

    def test_probs_sum_to_one(self, standard, rng):
        H, _, _, _ = standard
        P = solver.softmax_probs(rng.normal(size=(H.shape[0], 3)) * 20, H)
        np.testing.assert_allclose(P.sum(axis=0), 1.0, atol=1e-12)

    def test_gradient_finite_differences(self, standard, rng):
        H, Y, _, _ = standard
        beta = rng.normal(size=(H.shape[0], 3))
        g = solver.grad_loglik(beta, H, Y)
        fd = np.zeros_like(beta)
        for idx in np.ndindex(beta.shape):
            e = np.zeros_like(beta)
            e[idx] = 1e-5
            fd[idx] = (solver.log_likelihood(beta + e, H, Y)
                       - solver.log_likelihood(beta - e, H, Y)) / 2e-5
        assert np.max(np.abs(g - fd)) <= 1e-5 * max(np.max(np.abs(g)), 1.0)

    def test_gradient_columns_sum_to_zero(self, standard, rng):
        # the one-hot targets and the probabilities both sum to one per sample
        H, Y, _, _ = standard
        g = solver.grad_loglik(rng.normal(size=(H.shape[0], 3)), H, Y)
        np.testing.assert_allclose(g.sum(axis=1), 0.0, atol=1e-10)

    def test_stack_round_trip(self, rng):
        beta = rng.normal(size=(4, 3))
        v = solver.stack(beta)
        np.testing.assert_array_equal(v[:4], beta[:, 0])
        np.testing.assert_array_equal(solver.unstack(v, 4, 3), beta)


class TestBound:
    def test_class_factor_two(self):
        vals, vecs = solver.class_bound_factor(2)
        A = (vecs * vals) @ vecs.T
        np.testing.assert_allclose(A, [[-0.25, 0.25], [0.25, -0.25]], atol=1e-15)

    @pytest.mark.parametrize("M", [1, 3, 5, 16])
    def test_class_factor_matches_dense(self, M):
        vals, vecs = solver.class_bound_factor(M)
        A = -0.5 * (np.eye(M) - np.ones((M, M)) / M)
        np.testing.assert_allclose((vecs * vals) @ vecs.T, A, atol=1e-14)
        np.testing.assert_allclose(vecs.T @ vecs, np.eye(M), atol=1e-14)

    def test_dense_agreement(self, rng):
        Phi = rng.normal(size=(4, 9))
        bf = solver.build_bound(Phi, 3)
        B = dense_bound(Phi, 3)
        X = rng.normal(size=(4, 3))
        np.testing.assert_allclose(solver.stack(bf.matvec(X)), B @ solver.stack(X), atol=1e-12)
        np.testing.assert_allclose(solver.stack(bf.diagonal()), np.diag(B), atol=1e-12)

    def test_negative_semidefinite(self, rng):
        Phi = rng.normal(size=(4, 9))
        assert np.linalg.eigvalsh(dense_bound(Phi, 3)).max() <= 1e-12
        bf = solver.build_bound(Phi, 3)
        for _ in range(10):
            assert solver.bound_quadratic(rng.normal(size=12), bf) <= 1e-12

    def test_quadratic_matches_dense(self, rng):
        Phi = rng.normal(size=(4, 9))
        bf, B = solver.build_bound(Phi, 3), dense_bound(Phi, 3)
        delta = rng.normal(size=12)
        assert solver.bound_quadratic(delta, bf) == pytest.approx(delta @ B @ delta, abs=1e-10)

    def test_r_cap(self):
        with pytest.raises(solver.SolverError, match="cap"):
            solver.build_bound(np.ones((5, 2)), 2, r_cap=4)

    @pytest.mark.parametrize("gamma", [1e-6, 0.1, 1.0, 50.0])
    def test_solve_shifted_residual(self, rng, gamma):
        Phi = rng.normal(size=(4, 9))
        bf, B = solver.build_bound(Phi, 3), dense_bound(Phi, 3)
        rhs = rng.normal(size=12)
        x = solver.solve_shifted(bf, gamma, rhs)
        resid = (B - gamma * np.eye(12)) @ x - rhs
        assert np.linalg.norm(resid) <= 1e-8 * np.linalg.norm(rhs)

    def test_solve_shifted_matrix_layout(self, rng):
        bf = solver.build_bound(rng.normal(size=(4, 9)), 3)
        rhs = rng.normal(size=(4, 3))
        np.testing.assert_allclose(solver.solve_shifted(bf, 0.5, rhs),
                                   solver.unstack(solver.solve_shifted(bf, 0.5, solver.stack(rhs)), 4, 3))

    def test_solve_shifted_rejects_nonpositive(self, rng):
        bf = solver.build_bound(rng.normal(size=(2, 3)), 2)
        with pytest.raises(ValueError):
            solver.solve_shifted(bf, 0.0, np.ones(4))

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.floats(0.1, 5.0))
    def test_lower_bound_inequality(self, seed, scale):
        r = np.random.default_rng(seed)
        Phi = r.uniform(size=(4, 15))
        Y = one_hot(r.integers(1, 4, size=15), 3)
        bf = solver.build_bound(Phi, 3)
        b1, b2 = scale * r.normal(size=(4, 3)), scale * r.normal(size=(4, 3))
        d = b1 - b2
        lhs = (solver.log_likelihood(b1, Phi, Y) - solver.log_likelihood(b2, Phi, Y)
               - float(np.sum(d * solver.grad_loglik(b2, Phi, Y)))
               - 0.5 * solver.bound_quadratic(d, bf))
        assert lhs >= -1e-8


class TestSoftThreshold:
    def test_examples(self):
        np.testing.assert_array_equal(solver.soft_threshold([-3.0, 0.5, 2.0], 1.0),
                                      [-2.0, 0.0, 1.0])

    def test_zero_threshold(self, rng):
        e = rng.normal(size=10)
        np.testing.assert_array_equal(solver.soft_threshold(e, 0.0), e)

    def test_negative_threshold(self):
        with pytest.raises(ValueError):
            solver.soft_threshold([1.0], -0.1)

    @given(st.floats(-10, 10), st.floats(0, 5))
    def test_prox_optimality(self, e, t):
        v = float(solver.soft_threshold(np.array([e]), t)[0])
        if v != 0:
            assert abs(v - e + t * np.sign(v)) <= 1e-12
            assert np.sign(v) == np.sign(e)
        else:
            assert abs(e) <= t + 1e-12


class TestMMStep:
    def test_lambda_zero_is_bound_newton(self, standard, rng):
        H, Y, _, _ = standard
        bf = solver.build_bound(H, 3)
        beta = rng.normal(size=(H.shape[0], 3))
        B = dense_bound(H, 3)
        g = solver.stack(solver.grad_loglik(beta, H, Y))
        expected = solver.stack(beta) - np.linalg.pinv(B, rcond=1e-12) @ g
        np.testing.assert_allclose(solver.stack(solver.mm_step(beta, H, Y, bf, 0.0)), expected,
                                   atol=1e-8)

    def test_matches_dense_formula(self, standard, rng):
        H, Y, _, _ = standard
        bf, B = solver.build_bound(H, 3), dense_bound(H, 3)
        beta = rng.normal(size=(H.shape[0], 3))
        lam = 0.05
        Lam = np.diag(1.0 / np.maximum(np.abs(solver.stack(beta)), 1e-8))
        g = solver.stack(solver.grad_loglik(beta, H, Y))
        expected = np.linalg.solve(B - lam * Lam, B @ solver.stack(beta) - g)
        np.testing.assert_allclose(solver.stack(solver.mm_step(beta, H, Y, bf, lam)), expected,
                                   rtol=1e-7, atol=1e-9)

    def test_separable_unpenalized_norm_grows(self):
        Phi, Y, _ = separable_toy()
        bf = solver.build_bound(Phi, 2)
        beta = np.zeros((2, 2))
        norms = []
        for _ in range(60):
            beta = solver.mm_step(beta, Phi, Y, bf, 0.0)
            norms.append(np.linalg.norm(beta))
        assert np.all(np.diff(norms) > 0)


class TestSolverConfig:
    def test_defaults(self):
        cfg = solver.SolverConfig()
        assert cfg.lam == 2.0 ** -10 and cfg.gamma == pytest.approx(10 * cfg.lam)
        assert cfg.max_iters == 200

    def test_from_exponent(self):
        assert solver.SolverConfig.from_exponent(-20).lam == 2.0 ** -20

    @pytest.mark.parametrize("kw", [{"lam": -1.0}, {"mode": "sgd"}, {"max_iters": 0},
                                    {"lam": 0.0}, {"tol_beta": 0.0}])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            solver.SolverConfig(**kw)

    def test_mm_allows_zero_lambda(self):
        assert solver.SolverConfig(lam=0.0, mode="mm").gamma == 0.0


class TestFitting:
    def test_admm_converges(self, standard):
        H, Y, _, _ = standard
        beta, trace = solver.admm_fit(np.zeros((H.shape[0], 3)), H, Y,
                                      solver.SolverConfig.from_exponent(-20))
        assert trace.final.split_gap < 1e-4
        assert trace.final.grad_norm <= 0.1 * trace.initial.grad_norm
        np.testing.assert_array_equal(trace.v.shape, beta.shape)

    def test_admm_one_iteration(self, standard):
        H, Y, _, _ = standard
        _, trace = solver.admm_fit(np.zeros((H.shape[0], 3)), H, Y,
                                   solver.SolverConfig(max_iters=1))
        assert len(trace) == 1

    def test_admm_stops_immediately_at_fixed_point(self):
        # beta0 = 0 with zero gradient and v = 0 is stationary
        Phi = np.ones((1, 2))
        Y = one_hot([1, 2], 2)
        beta, trace = solver.admm_fit(np.zeros((1, 2)), Phi, Y, solver.SolverConfig())
        assert len(trace) == 1 and trace.converged
        np.testing.assert_array_equal(beta, 0.0)

    def test_shape_check(self, standard):
        H, Y, _, _ = standard
        with pytest.raises(ValueError, match="shape"):
            solver.admm_fit(np.zeros((3, 3)), H, Y, solver.SolverConfig())

    def test_non_finite_design(self, standard):
        H, Y, _, _ = standard
        bad = H.copy()
        bad[0, 0] = np.inf
        with pytest.raises((solver.SolverError, ValueError)):
            solver.admm_fit(np.ones((H.shape[0], 3)), bad, Y, solver.SolverConfig(max_iters=2))

    def test_mm_monotone_and_q1(self, standard):
        H, Y, _, _ = standard
        cfg = solver.SolverConfig(lam=2.0 ** -10, mode="mm", max_iters=50, tol_beta=1e-14,
                                  tol_grad=1e-14)
        _, trace = solver.fit(np.full((H.shape[0], 3), 0.1), H, Y, cfg)
        report = solver.lemma_diagnostics(trace)
        assert not report.monotone_violations
        assert report.min_q1 >= -1e-12

    def test_trace_csv(self, standard):
        H, Y, _, _ = standard
        _, trace = solver.admm_fit(np.zeros((H.shape[0], 3)), H, Y,
                                   solver.SolverConfig(max_iters=3))
        lines = trace.to_csv().splitlines()
        assert lines[0] == "iter,loglik,objective,grad_norm,split_gap,nnz"
        assert len(lines) == 1 + 1 + len(trace)
        assert [int(l.split(",")[0]) for l in lines[1:]] == list(range(len(trace) + 1))

    def test_objective_column(self, standard):
        H, Y, _, _ = standard
        cfg = solver.SolverConfig(max_iters=5)
        beta, trace = solver.admm_fit(np.zeros((H.shape[0], 3)), H, Y, cfg)
        expected = solver.log_likelihood(beta, H, Y) - cfg.lam * np.abs(beta).sum()
        assert trace.final.objective == pytest.approx(expected, rel=1e-12)


class TestLemmaDiagnostics:
    def _trace(self, objectives, grads, q1s, mode="mm"):
        rows = [solver.TraceRow(i + 1, o, o, g, 0.0, 1, q)
                for i, (o, g, q) in enumerate(zip(objectives[1:], grads[1:], q1s))]
        initial = solver.TraceRow(0, objectives[0], objectives[0], grads[0], 0.0, 1)
        return solver.SolverTrace(mode, initial, rows)

    def test_clean(self):
        report = solver.lemma_diagnostics(self._trace([-3, -2, -1], [1.0, 0.5, 0.05], [0.1, 0.2]))
        assert report.ok

    def test_drop_flagged(self):
        report = solver.lemma_diagnostics(self._trace([-3, -1, -2], [1.0, 0.5, 0.05], [0.1, 0.2]))
        assert report.monotone_violations == [2] and not report.ok

    def test_drop_ignored_for_admm(self):
        report = solver.lemma_diagnostics(
            self._trace([-3, -1, -2], [1.0, 0.5, 0.05], [0.1, 0.2], mode="admm"))
        assert report.ok

    def test_gradient_trend(self):
        report = solver.lemma_diagnostics(self._trace([-3, -2, -1], [1.0, 0.5, 0.2], [0.1, 0.2]))
        assert not report.grad_trend_ok

    def test_negative_q1(self):
        report = solver.lemma_diagnostics(self._trace([-3, -2, -1], [1.0, 0.5, 0.05], [0.1, -1e-6]))
        assert report.min_q1 == pytest.approx(-1e-6) and not report.ok
