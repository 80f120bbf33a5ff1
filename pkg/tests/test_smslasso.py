import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import (
    group_lasso_cvxpy,
    group_lasso_objective,
    lasso_objective,
    lasso_sklearn,
    prox_by_slsqp,
)
from poolcheck import smslasso
from poolcheck.exceptions import DataError
from poolcheck.regress import SiteDataset
from poolcheck.smslasso import (
    PenaltySpec,
    SparseMultiSiteLasso,
    SparseMultiSiteLassoCV,
    composite_prox,
    corrected_alpha,
    corrected_lambda,
    lambda_max,
    lambda_grid,
    objective,
    penalty,
    solution_path,
    support_stats,
    uncorrected,
)


def make_sites(seed, k=3, n=30, p=12, s=3, noise=1.0):
    rng = np.random.default_rng(seed)
    B = np.zeros((k, p))
    B[:, :s] = rng.normal(0, 2, (k, s))
    ds = []
    for i in range(k):
        X = rng.standard_normal((n, p))
        ds.append(SiteDataset(X=X, y=X @ B[i] + noise * rng.standard_normal(n), site_id=f"s{i}"))
    return ds, B


class TestProx:
    def test_worked_example(self):
        np.testing.assert_allclose(composite_prox(np.array([3.0, -1.0]), 1.0, 1.0), [1.0, 0.0])
        np.testing.assert_allclose(prox_by_slsqp(np.array([3.0, -1.0]), 1.0, 1.0), [1.0, 0.0], atol=1e-6)

    def test_identity(self):
        v = np.array([0.3, -2.0, 5.0])
        np.testing.assert_array_equal(composite_prox(v, 0.0, 0.0), v)

    def test_group_kill(self):
        v = np.array([1.5, -1.2, 0.4])
        assert np.linalg.norm(np.maximum(np.abs(v) - 1.0, 0)) <= 0.6
        np.testing.assert_array_equal(composite_prox(v, 1.0, 0.6), np.zeros(3))

    def test_columnwise(self):
        rng = np.random.default_rng(0)
        V = rng.standard_normal((4, 6))
        out = composite_prox(V, 0.3, 0.5)
        for j in range(6):
            np.testing.assert_allclose(out[:, j], composite_prox(V[:, j], 0.3, 0.5))

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 6), st.integers(0, 2**31), st.floats(0, 2), st.floats(0, 2))
    def test_matches_numerical_minimization(self, k, seed, t1, t2):
        v = np.random.default_rng(seed).normal(0, 2, k)
        np.testing.assert_allclose(composite_prox(v, t1, t2), prox_by_slsqp(v, t1, t2), atol=1e-6)


class TestPenalty:
    def test_value(self):
        B = np.array([[1.0, 0.0], [-2.0, 0.0]])
        np.testing.assert_allclose(penalty(B, 1.0), 3.0)
        np.testing.assert_allclose(penalty(B, 0.0), np.sqrt(2) * np.sqrt(5))

    def test_spec_validation(self):
        with pytest.raises(DataError):
            PenaltySpec(lam=1.0, alpha=1.5, k=2)
        with pytest.raises(DataError):
            PenaltySpec(lam=-1.0, alpha=0.5, k=2)

    @settings(max_examples=30, deadline=None)
    @given(st.floats(0, 1), st.integers(1, 8))
    def test_correction_round_trip(self, a, k):
        ac, lc = corrected_alpha(a, k), corrected_lambda(2.0, a, k)
        a2, l2 = uncorrected(ac, lc, k)
        np.testing.assert_allclose([a2, l2], [a, 2.0], atol=1e-12)

    def test_correction_endpoints(self):
        assert corrected_alpha(0.0, 4) == 0.0
        assert corrected_alpha(1.0, 4) == 1.0
        assert corrected_lambda(1.0, 0.0, 4) == 2.0


class TestFit:
    def test_unpenalized_square_design(self):
        rng = np.random.default_rng(0)
        ds = [SiteDataset(X=rng.standard_normal((4, 4)) + 3 * np.eye(4), y=rng.standard_normal(4))
              for _ in range(2)]
        f = smslasso.fit(ds, 0.0, 0.5)
        for i, d in enumerate(ds):
            np.testing.assert_allclose(f.B[i], np.linalg.solve(d.X, d.y), atol=1e-6)

    @pytest.mark.parametrize("alpha", [0.0, 0.3, 1.0])
    def test_zero_at_lambda_max(self, alpha):
        ds, _ = make_sites(1)
        lmax = lambda_max(ds, alpha)
        assert np.all(smslasso.fit(ds, lmax, alpha).B == 0)
        assert np.any(smslasso.fit(ds, 0.95 * lmax, alpha).B != 0)

    @pytest.mark.parametrize("seed", range(3))
    def test_alpha_one_is_per_site_lasso(self, seed):
        ds, _ = make_sites(seed)
        lam = 5.0
        f = smslasso.fit(ds, lam, 1.0)
        for i, d in enumerate(ds):
            ref = lasso_sklearn(d.X, d.y, lam)
            np.testing.assert_allclose(f.B[i], ref, atol=1e-5)
            assert lasso_objective(d.X, d.y, f.B[i], lam) <= lasso_objective(d.X, d.y, ref, lam) + 1e-5

    @pytest.mark.parametrize("seed", range(3))
    def test_alpha_zero_is_group_lasso(self, seed):
        ds, _ = make_sites(seed)
        lam = 5.0
        f = smslasso.fit(ds, lam, 0.0)
        Xs, ys = [d.X for d in ds], [d.y for d in ds]
        B_ref, _ = group_lasso_cvxpy(Xs, ys, lam)
        gap = group_lasso_objective(Xs, ys, f.B, lam) - group_lasso_objective(Xs, ys, B_ref, lam)
        assert gap <= 1e-5
        np.testing.assert_allclose(f.B, B_ref, atol=1e-4)

    def test_fixed_point(self):
        ds, _ = make_sites(4)
        lam, alpha = 4.0, 0.6
        f = smslasso.fit(ds, lam, alpha)
        k = len(ds)
        L = smslasso.lipschitz_constant([d.X for d in ds])
        np.testing.assert_allclose(L, 2 * max(np.linalg.eigvalsh(d.X.T @ d.X)[-1] for d in ds), rtol=1e-7)
        grad = np.vstack([-2 * d.X.T @ (d.y - d.X @ b) for d, b in zip(ds, f.B)])
        step = composite_prox(f.B - grad / L, lam * alpha / L, lam * (1 - alpha) * np.sqrt(k) / L)
        # relative Frobenius residual of one proximal-gradient step
        assert np.linalg.norm(step - f.B) / max(1.0, np.linalg.norm(f.B)) <= 1e-7
        assert f.converged

    def test_objective_recomputed(self):
        ds, _ = make_sites(5)
        f = smslasso.fit(ds, 3.0, 0.4)
        loss = sum(float(np.sum((d.y - d.X @ b) ** 2)) for d, b in zip(ds, f.B))
        np.testing.assert_allclose(f.objective, loss + 3.0 * penalty(f.B, 0.4), rtol=1e-10)
        np.testing.assert_allclose(objective(ds, f.B, 3.0, 0.4), f.objective, rtol=1e-10)

    def test_intercepts(self):
        ds, _ = make_sites(6)
        shifted = [SiteDataset(X=d.X, y=d.y + 10 * (i + 1), site_id=d.site_id) for i, d in enumerate(ds)]
        f = smslasso.fit(shifted, 2.0, 0.5, fit_intercept=True)
        np.testing.assert_allclose(f.intercepts, [10, 20, 30], atol=1.0)

    def test_warm_start_same_answer(self):
        ds, _ = make_sites(7)
        cold = smslasso.fit(ds, 3.0, 0.5)
        warm = smslasso.fit(ds, 3.0, 0.5, B0=cold.B + 0.1)
        np.testing.assert_allclose(warm.B, cold.B, atol=1e-5)

    def test_mismatched_p(self):
        rng = np.random.default_rng(0)
        ds = [SiteDataset(X=rng.standard_normal((5, 2)), y=np.ones(5)),
              SiteDataset(X=rng.standard_normal((5, 3)), y=np.ones(5))]
        with pytest.raises(DataError):
            smslasso.fit(ds, 1.0, 0.5)


class TestPath:
    def test_grid_decreasing(self):
        g = lambda_grid(10.0, 20, 1e-3)
        assert np.all(np.diff(g) < 0)
        np.testing.assert_allclose([g[0], g[-1]], [10.0, 1e-2])

    def test_first_point_zero(self):
        ds, _ = make_sites(0)
        path = solution_path(ds, 0.5, n_lambdas=15)
        assert np.all(path.fits[0].B == 0)
        assert len(path.fits) == 15

    def test_cv(self):
        ds, _ = make_sites(1, n=40)
        path = solution_path(ds, 0.5, n_lambdas=20, cv_folds=5, seed=3)
        assert path.cv_errors.shape == (20,)
        assert path.cv_fold_errors.shape == (5, 20)
        assert path.cv_errors[path.best_index] == path.cv_errors.min()
        again = solution_path(ds, 0.5, n_lambdas=20, cv_folds=5, seed=3)
        np.testing.assert_array_equal(again.cv_errors, path.cv_errors)

    def test_site_folds_stratified(self):
        ds, _ = make_sites(0, n=20)
        labels = smslasso.site_folds(ds, 4, seed=0)
        for lab in labels:
            np.testing.assert_array_equal(np.bincount(lab), [5, 5, 5, 5])


class TestSupport:
    def test_identical_supports(self):
        B = np.zeros((4, 6))
        B[:, [1, 3]] = 1.0
        st_ = support_stats(B)
        assert st_.r == 4 and st_.always_active == {1, 3}

    def test_disjoint(self):
        B = np.eye(3)
        st_ = support_stats(B)
        assert st_.r == 1 and st_.always_active == set()

    def test_zero(self):
        st_ = support_stats(np.zeros((2, 5)))
        assert (st_.s_h, st_.s_p, st_.r) == (0, 0, 0.0)
        assert st_.always_active == set()


class TestEstimators:
    def _stacked(self, seed):
        ds, B = make_sites(seed, n=40)
        X = np.vstack([d.X for d in ds])
        y = np.concatenate([d.y for d in ds])
        sites = np.repeat([d.site_id for d in ds], 40)
        return ds, X, y, sites

    def test_matches_function(self):
        ds, X, y, sites = self._stacked(0)
        m = SparseMultiSiteLasso(lam=4.0, alpha=0.5).fit(X, y, sites)
        np.testing.assert_allclose(m.coef_, smslasso.fit(ds, 4.0, 0.5).B, atol=1e-10)
        assert m.predict(X, sites).shape == y.shape
        assert m.score(X, y, sites) > 0.5
        assert m.get_params()["alpha"] == 0.5

    def test_unknown_site(self):
        _, X, y, sites = self._stacked(0)
        m = SparseMultiSiteLasso(lam=4.0).fit(X, y, sites)
        with pytest.raises(DataError):
            m.predict(X[:2], ["zz", "zz"])

    def test_cv_estimator(self):
        _, X, y, sites = self._stacked(1)
        m = SparseMultiSiteLassoCV(alpha=0.5, n_lambdas=15, cv=4).fit(X, y, sites)
        assert m.lam_ == m.path_.best_lambda
        assert m.coef_.shape == (3, 12)
