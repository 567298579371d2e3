import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from cohortaudit import statkit as sk
from cohortaudit.statkit import StatError


# Upper-tail critical values from standard printed tables (6 decimals).
CRITICAL_VALUES = [
    ("norm", (), 1.644854, 0.05),
    ("norm", (), 2.326348, 0.01),
    ("t", (10,), 2.228139, 0.025),
    ("t", (10,), 3.169273, 0.005),
    ("t", (30,), 2.042272, 0.025),
    ("chi2", (1,), 3.841459, 0.05),
    ("chi2", (1,), 6.634897, 0.01),
    ("chi2", (2,), 5.991465, 0.05),
    ("chi2", (10,), 18.307038, 0.05),
    ("chi2", (10,), 23.209251, 0.01),
    ("f", (1, 10), 4.964603, 0.05),
    ("f", (1, 10), 10.044289, 0.01),
    ("f", (5, 10), 3.325835, 0.05),
    ("f", (5, 10), 5.636326, 0.01),
]


def upper_tail(dist, args, x):
    return {"norm": sk.norm_sf, "t": sk.t_sf, "chi2": sk.chi2_sf, "f": sk.f_sf}[dist](x, *args)


@pytest.mark.parametrize("dist,args,crit,alpha", CRITICAL_VALUES)
def test_tails_match_printed_tables(dist, args, crit, alpha):
    assert upper_tail(dist, args, crit) == pytest.approx(alpha, abs=1e-4)


class TestDescriptive:
    def test_constant(self):
        d = sk.descriptive([1, 1, 1])
        assert (d.mean, d.sd) == (1.0, 0.0)

    def test_hand_computed(self):
        d = sk.descriptive([1, 2, 3, 4])
        assert d.mean == 2.5
        assert d.sd == pytest.approx(math.sqrt(5 / 3), abs=1e-12)
        assert d.sd == pytest.approx(1.2910, abs=1e-4)
        assert d.median == 2.5

    def test_single_value(self):
        d = sk.descriptive([0])
        assert d.mean == 0 and d.sd is None
        with pytest.raises(StatError):
            sk.descriptive([0], need_sd=True)
        with pytest.raises(StatError):
            sk.descriptive([])


class TestLevene:
    def test_identical_groups(self):
        g = [1.0, 2.0, 4.0, 7.0]
        res = sk.levene_test([g, g])
        assert res.statistic == pytest.approx(0.0, abs=1e-12)
        assert res.p_value == pytest.approx(1.0)

    def test_five_fold_scale_rejects(self):
        rng = np.random.default_rng(11)
        a = rng.standard_normal(50)
        b = 5 * rng.standard_normal(50)
        assert sk.levene_test([a, b]).p_value < 0.001

    def test_null_calibration_three_groups(self):
        hits = 0
        for seed in range(100):
            rng = np.random.default_rng(seed)
            groups = [rng.standard_normal(200) for _ in range(3)]
            hits += sk.levene_test(groups).p_value > 0.05
        assert hits >= 90

    @pytest.mark.parametrize("center,scipy_center", [("Mean", "mean"), ("Median", "median")])
    def test_agrees_with_scipy(self, center, scipy_center):
        rng = np.random.default_rng(3)
        groups = [rng.gamma(2, size=n) * s for n, s in ((30, 1), (45, 1.5), (22, 0.7))]
        ours = sk.levene_test(groups, center=center)
        ref = stats.levene(*groups, center=scipy_center)
        assert ours.statistic == pytest.approx(ref.statistic, rel=1e-10)
        assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-8)
        assert ours.df == (2, 94)

    def test_degenerate_group(self):
        with pytest.raises(StatError):
            sk.levene_test([[1.0], [1.0, 2.0]])


class TestChisqVariance:
    def test_statistic_equals_df_when_s_is_sigma0(self):
        v = np.arange(11.0)
        res = sk.chisq_variance_test(v, float(np.std(v, ddof=1)))
        assert res.statistic == pytest.approx(10.0, abs=1e-12)

    def test_planted_compression(self):
        rng = np.random.default_rng(5)
        v = rng.normal(0, 0.5, 500)
        assert sk.chisq_variance_test(v, 1.0).p_value < 0.001

    def test_zero_variance(self):
        res = sk.chisq_variance_test([3.0, 3.0], 1.0)
        assert res.statistic == 0.0
        assert res.p_value == pytest.approx(2 * stats.chi2.cdf(0, 1))

    def test_bad_sigma(self):
        with pytest.raises(StatError):
            sk.chisq_variance_test([1.0, 2.0], 0.0)


class TestFRatio:
    def test_equal(self):
        v = [1.0, 4.0, 2.0, 8.0]
        res = sk.f_ratio_test(v, v[::-1])
        assert res.statistic == pytest.approx(1.0)
        assert res.p_value == pytest.approx(1.0)

    def test_sd_ratio_two(self):
        rng = np.random.default_rng(8)
        a = rng.standard_normal(100)
        b = 2 * rng.permutation(a)
        res = sk.f_ratio_test(a, b)
        assert res.statistic == pytest.approx(4.0)
        assert res.p_value < 0.001

    def test_minimal_df(self):
        res = sk.f_ratio_test([0.0, 1.0], [0.0, 3.0])
        assert res.df == (1, 1)
        assert res.statistic == pytest.approx(9.0)

    def test_zero_variance(self):
        with pytest.raises(StatError):
            sk.f_ratio_test([1.0, 1.0], [0.0, 2.0])


class TestPearsonPaired:
    def test_identity_and_negation(self):
        x = [1.0, 5.0, 2.0, 9.0]
        assert sk.pearson_r(x, x).value == pytest.approx(1.0)
        assert sk.pearson_r(x, [-v for v in x]).value == pytest.approx(-1.0)

    def test_hand_computed_r(self):
        # cov 1.5, sds 1 and sqrt(7/3)
        assert sk.pearson_r([1, 2, 3], [1, 2, 4]).value == pytest.approx(1.5 / math.sqrt(7 / 3), abs=1e-12)
        assert sk.pearson_r([1, 2, 3], [1, 2, 4]).value == pytest.approx(0.9820, abs=1e-4)

    def test_constant_input(self):
        with pytest.raises(StatError):
            sk.pearson_r([1, 1, 1], [1, 2, 3])

    def test_paired_identical(self):
        res = sk.paired_t([1, 2, 3], [1, 2, 3])
        assert res.statistic == 0 and res.p_value == 1
        assert res.extra["mean_diff"] == 0

    def test_paired_hand_computed(self):
        y = np.zeros(4)
        res = sk.paired_t(np.array([1, 0, -1, 2.0]), y)
        assert res.extra["mean_diff"] == 0.5
        assert res.extra["mean_abs_diff"] == 1.0
        assert res.statistic == pytest.approx(0.5 / (math.sqrt(5 / 3) / 2), abs=1e-12)
        assert res.statistic == pytest.approx(0.7746, abs=1e-4)
        assert res.p_value == pytest.approx(0.495, abs=1e-3)

    def test_constant_nonzero_difference(self):
        with pytest.raises(StatError):
            sk.paired_t([2, 3, 4], [1, 2, 3])


class TestKruskalDunn:
    def test_rank_formula(self):
        assert sk.kruskal_wallis([[1, 2, 3], [4, 5, 6], [7, 8, 9]]).statistic == pytest.approx(7.2, abs=1e-9)

    def test_identical_groups(self):
        g = [1, 2, 2, 5]
        assert sk.kruskal_wallis([g, g, g]).statistic == pytest.approx(0.0, abs=1e-12)

    def test_all_tied(self):
        res = sk.kruskal_wallis([[2, 2], [2, 2, 2]])
        assert (res.statistic, res.p_value) == (0.0, 1.0)
        assert "degenerate" in res.flags

    def test_agrees_with_scipy_with_ties(self):
        rng = np.random.default_rng(2)
        groups = [rng.integers(0, 6, n) for n in (40, 55, 31, 60)]
        ours = sk.kruskal_wallis(groups)
        ref = stats.kruskal(*groups)
        assert ours.statistic == pytest.approx(ref.statistic, rel=1e-10)
        assert ours.p_value == pytest.approx(ref.pvalue, rel=1e-8)

    @given(st.lists(st.lists(st.integers(-50, 50), min_size=2, max_size=12), min_size=2, max_size=4))
    @settings(max_examples=60, deadline=None)
    def test_monotone_invariance(self, groups):
        if len({v for g in groups for v in g}) < 2:
            return
        h1 = sk.kruskal_wallis(groups).statistic
        h2 = sk.kruskal_wallis([[math.exp(v / 10) * 3 + 1 for v in g] for g in groups]).statistic
        assert h1 == pytest.approx(h2, rel=1e-9, abs=1e-12)

    def test_dunn_two_groups(self):
        (res,) = sk.dunn_posthoc([[1, 2, 3], [7, 8, 9]])
        expected_z = (2 - 5) / math.sqrt(6 * 7 / 12 * (1 / 3 + 1 / 3))
        assert res.result.statistic == pytest.approx(expected_z, abs=1e-12)
        assert abs(res.result.statistic) == pytest.approx(1.9640, abs=1e-4)
        assert res.result.p_value == pytest.approx(0.0495, abs=1e-4)

    def test_dunn_identical(self):
        (res,) = sk.dunn_posthoc([[1, 2, 3], [1, 2, 3]])
        assert res.result.statistic == 0 and res.result.p_value == 1

    @pytest.mark.parametrize("k", [2, 3, 5])
    def test_dunn_count(self, k):
        rng = np.random.default_rng(k)
        out = sk.dunn_posthoc([sk.Sample(rng.standard_normal(10), f"g{i}") for i in range(k)])
        assert len(out) == k * (k - 1) // 2
        assert out[0].group_a == "g0"

    def test_dunn_tie_correction_matches_manual(self):
        groups = [[1, 1, 2, 3], [2, 2, 4, 5, 5]]
        pooled = np.concatenate(groups).astype(float)
        ranks = stats.rankdata(pooled)
        n = pooled.size
        _, t = np.unique(pooled, return_counts=True)
        var = (n * (n + 1) / 12 - np.sum(t ** 3 - t) / (12 * (n - 1))) * (1 / 4 + 1 / 5)
        z = (ranks[:4].mean() - ranks[4:].mean()) / math.sqrt(var)
        (res,) = sk.dunn_posthoc(groups)
        assert res.result.statistic == pytest.approx(z, abs=1e-12)


def brute_cliffs(x, y):
    s = sum((a > b) - (a < b) for a, b in itertools.product(x, y))
    return s / (len(x) * len(y))


class TestCliffs:
    def test_examples(self):
        assert sk.cliffs_delta([1, 2], [3, 4]).value == -1
        assert sk.cliffs_delta([1, 2, 2], [2, 1, 2]).value == 0
        assert sk.cliffs_delta([1, 3], [2]).value == 0

    def test_brute_force_random(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            x = rng.integers(0, 8, rng.integers(1, 15)).tolist()
            y = rng.integers(0, 8, rng.integers(1, 15)).tolist()
            assert sk.cliffs_delta(x, y).value == pytest.approx(brute_cliffs(x, y), abs=1e-12)

    @given(st.lists(st.integers(0, 9), min_size=1, max_size=20), st.lists(st.integers(0, 9), min_size=1, max_size=20))
    def test_antisymmetry(self, x, y):
        d = sk.cliffs_delta(x, y).value
        assert d == pytest.approx(-sk.cliffs_delta(y, x).value)
        assert abs(d) <= 1


class TestCohensD:
    def test_examples(self):
        assert sk.cohens_d_one_sample(10.14, 3.51, 15.56).value == pytest.approx(-1.544, abs=5e-4)
        assert sk.cohens_d_one_sample(7.41, 3.14, 3.70).value == pytest.approx(1.182, abs=5e-4)
        assert sk.cohens_d_one_sample(4.2, 1.0, 4.2).value == 0

    def test_bad_sd(self):
        with pytest.raises(StatError):
            sk.cohens_d_one_sample(1, 0, 1)


def brute_bh(p, alpha):
    m = len(p)
    sp = sorted(p)
    kmax = 0
    for k in range(1, m + 1):
        if sp[k - 1] <= k * alpha / m:
            kmax = k
    if kmax == 0:
        return [False] * m
    cut = sp[kmax - 1]
    return [v <= cut for v in p]


class TestCorrections:
    def test_bh_examples(self):
        reject, _ = sk.bh_fdr([0.01, 0.02, 0.03, 0.04], 0.05)
        assert reject.tolist() == [True] * 4
        reject, adj = sk.bh_fdr([], 0.05)
        assert reject.size == 0 and adj.size == 0
        reject, _ = sk.bh_fdr([0.001, 0.2, 0.9], 0.05)
        assert reject.tolist() == [True, False, False]

    def test_bh_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(1000):
            m = int(rng.integers(1, 12))
            p = np.round(rng.beta(0.4, 2.0, m), 3)
            reject, adj = sk.bh_fdr(p, 0.05)
            assert reject.tolist() == brute_bh(p.tolist(), 0.05)
            clear = np.abs(adj - 0.05) > 1e-12
            assert np.all(((adj <= 0.05) == reject)[clear])

    @given(st.lists(st.floats(0, 1), max_size=15))
    def test_bh_contains_bonferroni(self, p):
        reject, adj = sk.bh_fdr(p, 0.05)
        bonf = sk.bonferroni(p) <= 0.05
        assert np.all(reject[bonf])
        order = np.argsort(p, kind="mergesort")
        assert np.all(np.diff(adj[order]) >= -1e-15)

    def test_bonferroni(self):
        assert sk.bonferroni([0.01]).tolist() == [0.01]
        assert sk.bonferroni([0.01, 0.02]).tolist() == [0.02, 0.04]
        assert sk.bonferroni([0.6, 0.6, 0.6]).tolist() == [1, 1, 1]

    def test_out_of_range(self):
        with pytest.raises(StatError):
            sk.bh_fdr([1.2])
        with pytest.raises(StatError):
            sk.bonferroni([-0.1])


class TestNormalTail:
    def test_values(self):
        assert sk.p_from_z(0) == 0.5
        assert sk.p_from_z(2.14) == pytest.approx(0.0162, abs=5e-5)
        assert sk.p_from_z(6.38) == pytest.approx(8.8e-11, rel=0.01)

    @given(st.floats(-30, 30))
    def test_symmetry(self, z):
        assert sk.p_from_z(z) + sk.p_from_z(-z) == pytest.approx(1.0, abs=1e-12)

    def test_strictly_decreasing(self):
        zs = np.linspace(-8, 8, 801)
        ps = [sk.p_from_z(z) for z in zs]
        assert all(a > b for a, b in zip(ps, ps[1:]))


class TestMatrices:
    def test_unit_diagonal_and_symmetry(self):
        rng = np.random.default_rng(4)
        r = sk.correlation_matrix(rng.integers(0, 4, (50, 8)))
        assert np.allclose(np.diag(r), 1)
        assert np.array_equal(r, r.T)
        assert np.all(np.abs(r) <= 1)

    def test_independent_columns(self):
        rng = np.random.default_rng(6)
        r = sk.correlation_matrix([rng.standard_normal(5000) for _ in range(6)])
        off = r[~np.eye(6, dtype=bool)]
        assert np.mean(np.abs(off)) < 0.05

    def test_duplicated_column(self):
        rng = np.random.default_rng(7)
        a, b = rng.standard_normal(30), rng.standard_normal(30)
        r = sk.correlation_matrix([a, b, a])
        assert r[0, 2] == pytest.approx(1.0)

    def test_zero_variance_names_index(self):
        with pytest.raises(StatError, match="index 1"):
            sk.correlation_matrix([[1, 2, 3], [5, 5, 5]])

    def test_matches_numpy(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((40, 5))
        assert np.allclose(sk.correlation_matrix(x), np.corrcoef(x, rowvar=False), atol=1e-12)

    def test_frobenius_examples(self):
        a = np.eye(2)
        assert sk.frobenius_distance(a, a) == 0
        assert sk.frobenius_distance(a, a + 0.5) == pytest.approx(1.0)
        with pytest.raises(StatError):
            sk.frobenius_distance(np.eye(2), np.eye(3))

    def test_metric_axioms(self):
        rng = np.random.default_rng(10)
        for _ in range(200):
            a, b, c = (rng.standard_normal((4, 4)) for _ in range(3))
            dab = sk.frobenius_distance(a, b)
            assert dab == pytest.approx(sk.frobenius_distance(b, a), abs=1e-12)
            assert dab <= sk.frobenius_distance(a, c) + sk.frobenius_distance(c, b) + 1e-12
            assert dab > 0
            assert sk.frobenius_distance(a, a.copy()) == 0


NULL_TESTS = {
    "levene": lambda rng: sk.levene_test([rng.standard_normal(20), rng.standard_normal(25)]).p_value,
    "chisq": lambda rng: sk.chisq_variance_test(rng.standard_normal(20), 1.0).p_value,
    "f_ratio": lambda rng: sk.f_ratio_test(rng.standard_normal(20), rng.standard_normal(15)).p_value,
    "paired_t": lambda rng: sk.paired_t(rng.standard_normal(20), rng.standard_normal(20)).p_value,
    "one_sample_t": lambda rng: sk.one_sample_t(rng.standard_normal(20), 0.0).p_value,
    "kruskal": lambda rng: sk.kruskal_wallis([rng.standard_normal(15) for _ in range(3)]).p_value,
    "dunn": lambda rng: sk.dunn_posthoc([rng.standard_normal(30), rng.standard_normal(30)])[0].result.p_value,
}


@pytest.mark.parametrize("name", sorted(NULL_TESTS))
def test_null_calibration(name):
    rng = np.random.default_rng(2024)
    hits = sum(NULL_TESTS[name](rng) < 0.05 for _ in range(1000))
    assert 30 <= hits <= 70
