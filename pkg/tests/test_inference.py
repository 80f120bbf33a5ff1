import numpy as np
import pytest

from poolcheck import inference, pooltest
from poolcheck.exceptions import DataError, EmptyActiveSets
from poolcheck.inference import (
    Verdict,
    aggregate_pvalues,
    choose_alpha,
    jaccard_similarity,
    multi_sample_splitting,
    select_alpha,
    selected_pooling_test,
)
from poolcheck.regress import SiteDataset, summarize


def noise_site(seed, n=40, p=20):
    rng = np.random.default_rng(seed)
    return SiteDataset(X=rng.standard_normal((n, p)), y=rng.standard_normal(n))


def embedded_sites(seed, n=300, p=400, shift=0.0):
    """Three-feature model padded with p - 3 irrelevant columns, two sites."""
    rng = np.random.default_rng(seed)
    ds = []
    for i, sd in enumerate((1.0, 0.7)):
        b = np.zeros(p)
        b[:3] = np.array([1.0, 2.0, 3.0]) + i * shift
        X = rng.standard_normal((n, p))
        ds.append(SiteDataset(X=X, y=X @ b + sd * rng.standard_normal(n), site_id=f"s{i}"))
    return ds


class TestAggregation:
    def test_single_split_is_identity(self):
        P = np.array([[0.2, 0.01, 1.0]])
        np.testing.assert_array_equal(aggregate_pvalues(P), P[0])

    def test_median_rule(self):
        P = np.array([[0.01, 0.5], [0.02, 0.6], [0.03, 0.9]])
        np.testing.assert_allclose(aggregate_pvalues(P), [0.04, 1.0])

    def test_order_invariant(self):
        rng = np.random.default_rng(0)
        P = rng.uniform(size=(21, 6))
        np.testing.assert_array_equal(aggregate_pvalues(P), aggregate_pvalues(P[rng.permutation(21)]))

    def test_single_split_is_bonferroni(self):
        d = noise_site(3, n=60, p=10)
        r = multi_sample_splitting(d, n_splits=1, seed=5, cv=3, n_alphas=20)
        np.testing.assert_array_equal(r.p_values, r.split_p_values[0])
        assert np.all((r.p_values >= 0) & (r.p_values <= 1))


class TestMultiSampleSplitting:
    def test_fwer_under_global_null(self):
        runs = 200
        hits = sum(bool(multi_sample_splitting(noise_site(s), 50, 0.05, seed=s, cv=3, n_alphas=20).selected)
                   for s in range(runs))
        se = np.sqrt(0.05 * 0.95 / runs)
        assert hits / runs <= 0.05 + 2 * se

    def test_dominant_feature_found(self):
        found = 0
        runs = 20
        for s in range(runs):
            rng = np.random.default_rng(100 + s)
            X = rng.standard_normal((200, 50))
            y = 10 * X[:, 7] + rng.standard_normal(200)
            r = multi_sample_splitting(SiteDataset(X=X, y=y), 50, 0.05, seed=s, cv=3, n_alphas=20)
            found += 7 in r.selected
        assert found / runs >= 0.95

    def test_selected_matches_threshold(self):
        rng = np.random.default_rng(1)
        X = rng.standard_normal((80, 15))
        y = 2 * X[:, 0] - 2 * X[:, 1] + rng.standard_normal(80)
        r = multi_sample_splitting(SiteDataset(X=X, y=y), 10, 0.1, seed=0, cv=3, n_alphas=20)
        assert r.selected == set(np.flatnonzero(r.p_values <= 0.1).tolist())
        assert {0, 1} <= r.selected

    def test_deterministic(self):
        d = noise_site(0)
        a = multi_sample_splitting(d, 5, seed=9, cv=3, n_alphas=10)
        b = multi_sample_splitting(d, 5, seed=9, cv=3, n_alphas=10)
        np.testing.assert_array_equal(a.p_values, b.p_values)

    def test_small_n(self):
        with pytest.raises(DataError):
            multi_sample_splitting(noise_site(0, n=10), 5)


class TestAlphaRule:
    def test_jaccard(self):
        assert jaccard_similarity([{1, 2}, {1, 2}]) == 1.0
        assert jaccard_similarity([{1}, {2}]) == 0.0
        np.testing.assert_allclose(jaccard_similarity([{1, 2}, {2, 3}, {1, 2}]), (1 / 3 + 1 + 1 / 3) / 3)
        assert jaccard_similarity([set(), set()]) == 1.0

    def test_choose_different(self):
        counts = {0.0: 5, 0.5: 2, 0.9: 2, 1.0: 3}
        assert choose_alpha(counts, Verdict.DIFFERENT) == 0.5

    def test_choose_similar(self):
        counts = {0.0: 5, 0.5: 5, 0.9: 2, 1.0: 5}
        assert choose_alpha(counts, Verdict.SIMILAR) == 1.0


class TestSelectAlpha:
    def _identical(self, k=3):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((60, 10))
        y = X[:, :3] @ [2.0, -2.0, 1.5] + rng.standard_normal(60)
        return [SiteDataset(X=X, y=y, site_id=f"s{i}") for i in range(k)]

    def test_identical_sites(self):
        ds = self._identical()
        rep = select_alpha(ds, alpha_grid=(0.0, 0.25, 0.5, 0.75, 1.0), n_splits=10, msplit_cv=3, cv=5)
        assert rep.similarity_verdict is Verdict.SIMILAR
        counts = set(rep.always_active_count_by_alpha.values())
        assert len(counts) == 1
        assert rep.chosen_alpha == 1.0
        assert rep.lambda_multisite == min(rep.site_lambdas)
        assert rep.chosen_alpha in rep.always_active_count_by_alpha

    def test_deterministic(self):
        ds = self._identical(2)
        kw = dict(alpha_grid=(0.0, 0.5, 1.0), n_splits=5, msplit_cv=3, cv=5, seed=4)
        a, b = select_alpha(ds, **kw), select_alpha(ds, **kw)
        assert a.chosen_alpha == b.chosen_alpha
        assert a.always_active_count_by_alpha == b.always_active_count_by_alpha

    def test_empty_active_sets(self):
        ds = [noise_site(i, n=40, p=10) for i in range(2)]
        with pytest.raises(EmptyActiveSets):
            select_alpha(ds, site_active_sets=[set(), set()])

    def test_needs_two_sites(self):
        with pytest.raises(DataError):
            select_alpha([noise_site(0)])


class TestSelectedPoolingTest:
    def test_all_zero_signal(self):
        ds = [noise_site(i, n=40, p=10) for i in range(2)]
        with pytest.raises(EmptyActiveSets):
            selected_pooling_test(ds, n_splits=5, msplit_cv=3, cv=5)

    def test_identical_sites_accept(self):
        rng = np.random.default_rng(0)
        X = rng.standard_normal((80, 20))
        y = X[:, :3] @ [2.0, -2.0, 1.5] + rng.standard_normal(80)
        ds = [SiteDataset(X=X, y=y, site_id=f"s{i}") for i in range(2)]
        r = selected_pooling_test(ds, site_active_sets=[{0, 1, 2}] * 2, alpha_grid=(0.0, 0.5, 1.0), cv=5)
        assert r.accepted
        assert r.statistic < 1e-20
        assert {0, 1, 2} <= set(r.support)

    @pytest.mark.xfail(strict=True, reason="the CV-optimal lambda over-selects irrelevant features; "
                                            "see the decisions ledger")
    def test_low_dimensional_embedding(self):
        # step 1 is given the true site-active sets to keep the run time bounded
        runs, exact, agree = 50, 0, 0
        for s in range(runs):
            ds = embedded_sites(s)
            rep = select_alpha(ds, site_active_sets=[{0, 1, 2}] * 2, seed=s)
            r = selected_pooling_test(ds, report=rep)
            oracle = pooltest.pooling_test([summarize(SiteDataset(X=d.X[:, :3], y=d.y)) for d in ds])
            if r.support == [0, 1, 2]:
                exact += 1
                agree += r.decision is oracle.decision
        assert exact >= 0.9 * runs
        assert agree >= 0.95 * exact
