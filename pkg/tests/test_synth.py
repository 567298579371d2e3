import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from cohortaudit.domain import PHQ8_BANDS, ValidationError, all_profiles, classify_phq8
from cohortaudit.ingest import match_cross_run, serialize_records
from cohortaudit.logic import gateway_violations
from cohortaudit.synth import (
    CohortParams,
    SynthSpec,
    base_params,
    bivariate_normal_cdf,
    dataset_from_transition_counts,
    equicorrelation,
    generate,
    generate_arrays,
    parse_synth_spec,
    planted_truth,
    population_moments,
    reference_baselines,
)

ONE = (all_profiles()[0],)


def single_cell(n, seed=1, **params):
    return SynthSpec(profiles=ONE, iterations=n, conditions=("clinical",), rng_seed=seed,
                     defaults={"PHQ8": params})


def totals(spec):
    (items,) = generate_arrays(spec).values()
    return items.sum(axis=1)


class TestDeterminism:
    def test_same_seed_identical_stream(self):
        spec = SynthSpec(profiles=all_profiles()[:6], iterations=5, defaults={"PHQ8": {"variance_factor": 0.6}})
        a = "".join(serialize_records(generate(spec).records))
        b = "".join(serialize_records(generate(spec).records))
        assert a == b

    def test_seed_changes_stream(self):
        a = generate(single_cell(50, seed=1))
        b = generate(single_cell(50, seed=2))
        assert [r.items for r in a] != [r.items for r in b]

    def test_subset_reproduces_superset(self):
        full = SynthSpec(profiles=all_profiles()[:10], iterations=4)
        part = SynthSpec(profiles=all_profiles()[3:5], iterations=4)
        by_id = {r.record_id: r for r in generate(full)}
        for r in generate(part):
            assert by_id[r.record_id] == r


class TestPopulationLaw:
    @pytest.mark.parametrize("h,k,r", [(0.3, -0.8, 0.45), (1.2, 1.1, 0.9), (-2.0, 0.5, -0.6), (0.0, 0.0, 0.5)])
    def test_bivariate_cdf_matches_scipy(self, h, k, r):
        ref = stats.multivariate_normal([0, 0], [[1, r], [r, 1]]).cdf([h, k])
        assert bivariate_normal_cdf(h, k, r) == pytest.approx(ref, abs=1e-6)

    def test_bivariate_cdf_closed_form_origin(self):
        for r in (-0.9, -0.3, 0.2, 0.7, 0.95):
            assert bivariate_normal_cdf(0.0, 0.0, r) == pytest.approx(0.25 + math.asin(r) / (2 * math.pi), abs=1e-10)

    @pytest.mark.parametrize("target", [3.5, 10.0, 18.0])
    def test_exact_moments_agree_with_monte_carlo(self, target):
        params = CohortParams(target_mean=target, copula=base_params("PHQ8").copula)
        mean, sd = population_moments("PHQ8", params)
        assert mean == pytest.approx(target, abs=1e-9)
        t = totals(single_cell(40_000, seed=11, target_mean=target))
        assert t.mean() == pytest.approx(target, abs=0.08)
        assert t.std(ddof=1) == pytest.approx(sd, rel=0.02)


class TestGenerate:
    def test_identity_copula_independence(self):
        spec = single_cell(5000, copula="identity", target_mean=10)
        (items,) = generate_arrays(spec).values()
        r = np.corrcoef(items.T)
        assert np.abs(r[~np.eye(8, dtype=bool)]).mean() < 0.05

    def test_halved_variance_factor(self):
        full = totals(single_cell(2000, seed=3, variance_factor=1.0)).std(ddof=1)
        half = totals(single_cell(2000, seed=3, variance_factor=0.5)).std(ddof=1)
        assert 0.45 <= half / full <= 0.55

    @pytest.mark.parametrize("vf", [0.4, 0.7, 1.3])
    def test_sd_scales_with_variance_factor(self, vf):
        planted = planted_truth(single_cell(2000, variance_factor=vf)).cells[0].model_sd
        for seed in range(10):
            sd = totals(single_cell(2000, seed=seed, variance_factor=vf)).std(ddof=1)
            assert abs(sd / planted - 1) <= 0.10

    def test_mean_monotone_in_target(self):
        means = [totals(single_cell(5000, seed=5, target_mean=t)).mean() for t in (4, 4.5, 6, 9, 9.2, 15)]
        assert means == sorted(means)

    def test_bias_offset_shifts_mean(self):
        t = totals(single_cell(5000, seed=2, target_mean=8, bias_offset=2.5))
        assert t.mean() == pytest.approx(10.5, abs=0.15)

    @given(st.integers(0, 2**63 - 1))
    @settings(max_examples=15, deadline=None)
    def test_gateway_compliant_any_seed(self, seed):
        spec = SynthSpec(profiles=all_profiles()[:4], iterations=50, rng_seed=seed,
                         defaults={"PHQ8": {"target_mean": 13, "gateway_compliant": True, "copula": 0.1}})
        assert gateway_violations(generate(spec)).count == 0

    def test_noncompliant_has_violations(self):
        spec = single_cell(3000, target_mean=13, copula=0.1)
        truth = planted_truth(spec)
        found = gateway_violations(generate(spec)).count
        assert truth.expected_gateway_violations > 50
        assert abs(found - truth.expected_gateway_violations) < 5 * math.sqrt(truth.expected_gateway_violations)

    def test_planted_violation_count(self):
        spec = SynthSpec(profiles=all_profiles()[:8], iterations=20, gateway_violations=1,
                         defaults={"PHQ8": {"target_mean": 11, "gateway_compliant": True}})
        assert gateway_violations(generate(spec)).count == 1
        assert planted_truth(spec).expected_gateway_violations == 1

    def test_retest_correlation_controls_pairing(self):
        def corr(rho):
            spec = SynthSpec(profiles=ONE, iterations=3000, defaults={"PHQ8": {"retest_correlation": rho}})
            pairs = match_cross_run(generate(spec)).pairs
            return np.corrcoef([a.total for a, _ in pairs], [b.total for _, b in pairs])[0, 1]
        assert corr(0.0) < 0.1
        assert corr(0.9) > 0.8


class TestValidation:
    @pytest.mark.parametrize("params", [{"target_mean": 0}, {"target_mean": 24}, {"target_mean": 30},
                                        {"variance_factor": 0}, {"target_mean": 20, "bias_offset": 10}])
    def test_infeasible(self, params):
        with pytest.raises(ValidationError):
            single_cell(10, **params)

    def test_non_psd_copula(self):
        bad = equicorrelation(8, 0.5)
        bad[0, 1] = bad[1, 0] = -0.9
        bad[0, 2] = bad[2, 0] = 0.9
        bad[1, 2] = bad[2, 1] = 0.9
        with pytest.raises(ValidationError, match="non-PSD"):
            single_cell(10, copula=bad.tolist())

    def test_unknown_parameter(self):
        with pytest.raises(ValidationError, match="unknown cohort parameter"):
            single_cell(10, varaince_factor=0.3)


class TestPlantedTruth:
    def test_identical_copulas_distance_zero(self):
        truth = planted_truth(SynthSpec(iterations=2))
        assert all(c.copula_distance == 0 for c in truth.cells)

    def test_perturbed_distance(self):
        spec = parse_synth_spec("""
            iterations = 2
            [[cohort]]
            match = "race=Black"
            perturb = [[1, 2, 0.4], [3, 4, 0.4], [5, 6, 0.4]]
        """)
        truth = planted_truth(spec)
        assert truth.group("Race", "Black").copula_distance == pytest.approx(math.sqrt(6 * 0.16))
        assert truth.group("Race", "White").copula_distance == 0

    def test_compliant_expected_zero(self):
        spec = SynthSpec(iterations=2, defaults={"PHQ8": {"gateway_compliant": True}})
        assert planted_truth(spec).expected_gateway_violations == 0

    def test_group_si_and_offsets(self):
        spec = parse_synth_spec("""
            iterations = 2
            [defaults.PHQ8]
            variance_factor = 0.5
            bias_offset = 1.5
        """)
        g = planted_truth(spec).group("Gender", "Cis Man")
        assert g.si == pytest.approx(0.5)
        assert g.mean_offset == pytest.approx(1.5)
        assert g.n == 30 * 2 * 2

    def test_mixture_si(self):
        spec = parse_synth_spec("""
            iterations = 1
            [[cohort]]
            match = "ses=Low"
            target_mean = 12
        """)
        g = planted_truth(spec).group("Race", "White")
        assert g.si == pytest.approx(1.0)
        assert g.gt_mean == pytest.approx((12 + 7 + 7) / 3)

    def test_reference_baselines(self):
        rows = reference_baselines(SynthSpec(iterations=1))
        labels = {(r.dimension.label, r.group) for r in rows}
        assert ("Race", "Asian") in labels and ("SES", "Low") in labels
        assert all(r.gt_sd > 0 for r in rows)


class TestSpecFile:
    def test_parse(self):
        spec = parse_synth_spec("""
            rng_seed = 99
            models = ["a", "b"]
            conditions = ["clinical"]
            instruments = ["PHQ8", "GAD7"]
            iterations = 3
            profiles = "race=Black,White"
            [defaults]
            variance_factor = 0.7
            [defaults.GAD7]
            target_mean = 5
            [[cohort]]
            match = "gender=Trans Woman;model=b"
            instrument = "PHQ8"
            target_mean = 13
        """)
        assert spec.rng_seed == 99 and len(spec.profiles) == 48
        assert spec.record_count == 48 * 2 * 3 * 2
        tw = next(p for p in spec.profiles if p.gender.label == "Trans Woman")
        assert spec.params_for(tw, "b", "clinical", "PHQ8").target_mean == 13
        assert spec.params_for(tw, "a", "clinical", "PHQ8").target_mean == 7
        assert spec.params_for(tw, "b", "clinical", "GAD7").target_mean == 5
        assert spec.params_for(tw, "b", "clinical", "GAD7").variance_factor == 0.7

    def test_unknown_key(self):
        with pytest.raises(ValidationError):
            parse_synth_spec("colour = 1")


TRANSITION_COUNTS = [[1453, 484, 49, 2, 0], [963, 5102, 1222, 49, 0], [66, 1724, 1898, 279, 3],
                     [4, 89, 332, 668, 3], [0, 1, 1, 8, 0]]


def test_transition_fixture_bands():
    ds = dataset_from_transition_counts(TRANSITION_COUNTS)
    pairs = match_cross_run(ds).pairs
    assert len(pairs) == 14_400
    grid = np.zeros((5, 5), int)
    for a, b in pairs:
        grid[classify_phq8(a.total), classify_phq8(b.total)] += 1
    assert grid.tolist() == TRANSITION_COUNTS
    assert {a.total for a, _ in pairs} >= {lo for lo, _ in PHQ8_BANDS}
