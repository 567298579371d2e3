import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from cohortaudit.calibration import (
    FLAG_NO_BASELINE,
    bias_from_summary,
    bias_residuals,
    bias_row,
    intersection_cells,
    intersectional_bias,
    paradox_calibration,
    paradox_error,
    suppression_captured,
    suppression_table,
    symptom_rates,
)
from cohortaudit.domain import DemographicProfile, GroupSelector, PatientRecord, ValidationError, all_profiles
from cohortaudit.ingest import BaselineRow, Dataset
from cohortaudit.synth import CohortOverride, SynthSpec, generate

WHITE_MAN = DemographicProfile("White", "CisMan", "High", "Partnered")
BLACK_MAN = DemographicProfile("Black", "CisMan", "High", "Partnered")


def phq(rid, profile, items, model="m", it=1):
    return PatientRecord(rid, model, "clinical", it, profile, "PHQ8", items)


class TestBiasExamples:
    @pytest.mark.parametrize("mm, sd, gt, d", [
        (11.60, 3.19, 5.50, 1.91), (8.69, 3.68, 3.19, 1.49), (10.14, 3.51, 15.56, -1.55),
        (6.57, 2.96, 3.00, 1.21), (7.71, 3.38, 2.23, 1.62)])
    def test_published_d(self, mm, sd, gt, d):
        residual, got = bias_from_summary(mm, sd, gt)
        assert residual == pytest.approx(mm - gt)
        assert got == pytest.approx(d, abs=0.02)

    def test_low_ses_exact(self):
        residual, d = bias_from_summary(11.60, 3.19, 5.50)
        assert residual == pytest.approx(6.10)
        assert d == pytest.approx(1.912, abs=5e-4)

    def test_intersection_example(self):
        assert round(bias_from_summary(13.33, 4.488, 3.50)[1], 2) == 2.19
        assert round(bias_from_summary(4.57, 1.0, 3.50)[1], 2) == 1.07


class TestBiasRow:
    def test_p_matches_scipy(self):
        v = np.random.default_rng(0).normal(6, 3, 80)
        row = bias_row(v, "Race", "White", "PHQ8", 5.0)
        assert row.p == pytest.approx(stats.ttest_1samp(v, 5.0).pvalue, rel=1e-9)
        assert row.d * row.model_sd == pytest.approx(row.residual)

    def test_missing_baseline_flagged(self):
        row = bias_row([1, 2, 3], "Race", "White", "PHQ8", None)
        assert FLAG_NO_BASELINE in row.flags and row.residual is None and row.n == 3

    def test_single_record(self):
        row = bias_row([4], "SES", "Low", "PHQ8", 3.0)
        assert row.d is None and row.flags

    @given(st.lists(st.floats(0, 24), min_size=3, max_size=50), st.floats(-5, 5), st.floats(0, 15))
    @settings(max_examples=80)
    def test_shift_equivariance(self, v, c, gt):
        v = np.array(v)
        if v.std() < 1e-3:
            return
        a = bias_row(v, "Race", "White", "PHQ8", gt)
        b = bias_row(v + c, "Race", "White", "PHQ8", gt + c)
        assert b.residual == pytest.approx(a.residual, abs=1e-9)
        assert b.d == pytest.approx(a.d, rel=1e-6, abs=1e-9)

    @given(st.lists(st.floats(0, 24), min_size=3, max_size=50), st.floats(0.1, 10), st.floats(0, 15))
    @settings(max_examples=80)
    def test_scale_invariance_of_d(self, v, k, gt):
        v = np.array(v)
        if v.std() < 1e-3:
            return
        a = bias_row(v, "Race", "White", "PHQ8", gt)
        b = bias_row(v * k, "Race", "White", "PHQ8", gt * k)
        assert b.d == pytest.approx(a.d, rel=1e-6, abs=1e-9)


class TestBiasResiduals:
    def test_groups_and_models(self):
        ds = generate(SynthSpec(models=("a", "b"), iterations=2))
        base = [BaselineRow("Race", "White", "PHQ8", 3.19, 4.19, "test"),
                BaselineRow("SES", "Low", "PHQ8", 5.5, 5.9, "test")]
        rows = bias_residuals(ds, base, dimensions=("Race", "SES"), by_model=True)
        keyed = {(r.group, r.model): r for r in rows}
        assert keyed[("White", "a")].gt_mean == 3.19
        assert FLAG_NO_BASELINE in keyed[("Black", "b")].flags
        assert {r.model for r in rows} == {"a", "b"}

    def test_relabeled_baseline_zero_residual(self):
        ds = generate(SynthSpec(iterations=3))
        frame = ds.frame("PHQ8")
        mean = float(frame.totals[frame.mask(GroupSelector.of(race="Asian"))].mean())
        rows = bias_residuals(ds, [BaselineRow("Race", "Asian", "PHQ8", mean, 3.0, "self")], dimensions=("Race",))
        assert [r.residual for r in rows if r.group == "Asian"] == [pytest.approx(0, abs=1e-12)]


class TestIntersectional:
    def test_cells(self):
        cells = intersection_cells(("Gender", "SES"))
        assert len(cells) == 12 and "Trans Woman + Low" in cells
        with pytest.raises(ValidationError):
            intersection_cells(("Gender",))

    def test_thin_cells_flagged(self):
        profiles = [p for p in all_profiles() if p.race.label == "White" and p.relationship.label == "Single"]
        ds = generate(SynthSpec(profiles=tuple(profiles), iterations=4, conditions=("clinical",)))
        rows = intersectional_bias(ds, 3.5, min_n=10)
        assert len(rows) == 12
        assert all(r.n == 4 and any("thin" in f for f in r.flags) for r in rows)
        assert not any("thin" in f for f in intersectional_bias(ds, 3.5, min_n=4)[0].flags)

    def test_residual_against_scalar(self):
        ds = generate(SynthSpec(iterations=2))
        for r in intersectional_bias(ds, 3.5):
            assert r.residual == pytest.approx(r.model_mean - 3.5)


class TestSuppressionAndParadox:
    def test_published_suppression(self):
        assert round(suppression_captured(10.08, 3.50, 15.56), 1) == 54.6

    def test_zero_gap(self):
        with pytest.raises(ValidationError):
            suppression_captured(5, 3.5, 3.5)

    @given(st.floats(0, 20), st.floats(0, 20), st.floats(0, 20))
    def test_full_capture(self, base, gt, extra):
        if abs(gt - base) < 1e-6:
            return
        assert suppression_captured(gt, base, gt) == pytest.approx(100)
        assert suppression_captured(base, base, gt) == pytest.approx(0, abs=1e-9)

    @given(st.floats(0, 20), st.floats(0, 20), st.floats(0, 20), st.floats(0.1, 10))
    def test_affine_invariance(self, model, base, gt, k):
        if abs(gt - base) < 1e-3:
            return
        scaled = suppression_captured(base + k * (model - base), base, base + k * (gt - base))
        assert scaled == pytest.approx(suppression_captured(model, base, gt), rel=1e-9, abs=1e-9)

    def test_table(self):
        ds = generate(SynthSpec(iterations=2, models=("a", "b")))
        base = [BaselineRow("Gender", "Trans Woman", "PHQ8", 15.56, 5.7, "t")]
        rows = suppression_table(ds, base, 3.5)
        assert [(r.model, r.group) for r in rows] == [("a", "Trans Woman"), ("b", "Trans Woman")]

    @pytest.mark.parametrize("obs, err", [(-0.90, 0.06), (-0.98, 0.02), (-0.35, 0.61), (-1.54, 0.58)])
    def test_published_paradox(self, obs, err):
        assert round(paradox_error(obs, -0.96), 2) == err

    def test_paradox_per_model(self):
        ds = generate(SynthSpec(iterations=3, models=("a", "b")))
        rows = paradox_calibration(ds, -0.96)
        assert [r.model for r in rows] == ["a", "b"]
        for r in rows:
            assert r.error == pytest.approx(abs(r.asian_mean - r.white_mean + 0.96))

    def test_paradox_needs_both(self):
        ds = Dataset([phq("x", WHITE_MAN, (1,) * 8)])
        with pytest.raises(ValidationError):
            paradox_calibration(ds, -0.96)


def endorse_fixture(rate_a, rate_b, n=100):
    recs = []
    for prof, rate, tag in ((BLACK_MAN, rate_a, "a"), (WHITE_MAN, rate_b, "b")):
        k = round(rate * n)
        for i in range(n):
            items = [1] * 8
            items[3] = 2 if i < k else 1
            items[0] = 1 if i < k else 2  # same total either way
            recs.append(phq(f"{tag}{i}", prof, items))
    return Dataset(recs)


class TestSymptomRates:
    def test_fixture_gap(self):
        row = symptom_rates(endorse_fixture(0.37, 0.22), "fatigue", "Black", "White")
        assert round(row.diff * 100) == 15
        assert (row.rate_a, row.rate_b) == (pytest.approx(0.37), pytest.approx(0.22))

    def test_unmatched_is_two_proportion(self):
        row = symptom_rates(endorse_fixture(0.37, 0.22), "fatigue", "Black", "White", matching="None")
        z, p = stats.contingency.chi2_contingency([[37, 63], [22, 78]], correction=False)[:2]
        assert row.p == pytest.approx(p, rel=1e-9)

    def test_relabeled_copy_zero(self):
        ds = generate(SynthSpec(profiles=(WHITE_MAN,), iterations=300, conditions=("clinical",)))
        copy = [dataclasses.replace(r, record_id=r.record_id + "x", profile=BLACK_MAN) for r in ds.records]
        row = symptom_rates(Dataset(list(ds.records) + copy), "fatigue", "Black", "White")
        assert row.diff == 0 and row.p == 1

    def test_no_shared_strata(self):
        recs = [phq("a", BLACK_MAN, (0,) * 8), phq("b", WHITE_MAN, (3,) * 8)]
        with pytest.raises(ValidationError, match="stratum"):
            symptom_rates(Dataset(recs), "fatigue", "Black", "White")

    def test_unknown_item(self):
        with pytest.raises(ValidationError):
            symptom_rates(endorse_fixture(0.3, 0.3), ("PHQ8", 9), "Black", "White")

    def test_band_widens_strata(self):
        ds = generate(SynthSpec(profiles=(WHITE_MAN, BLACK_MAN), iterations=200, conditions=("clinical",)))
        exact = symptom_rates(ds, "fatigue", "Black", "White")
        banded = symptom_rates(ds, "fatigue", "Black", "White", band=1)
        assert banded.strata < exact.strata

    def test_planted_gap_recovered(self):
        spec = SynthSpec(profiles=(WHITE_MAN, BLACK_MAN), iterations=2000, conditions=("clinical",), rng_seed=4,
                         defaults={"PHQ8": {"target_mean": 9}},
                         cohorts=(CohortOverride(GroupSelector.parse("race=Black"), {"endorsement_gap": [4, 0.10]}),))
        row = symptom_rates(generate(spec), "fatigue", "Black", "White")
        assert (row.n_a, row.n_b) == (2000, 2000)
        assert 7 <= row.diff * 100 <= 13
        assert row.p < 0.01

    def test_planted_gap_preserves_totals(self):
        base = SynthSpec(profiles=(BLACK_MAN,), iterations=500, conditions=("clinical",), rng_seed=4)
        gap = base.replace(defaults={"PHQ8": {"endorsement_gap": [4, 0.1]}})
        t0 = generate(base).frame("PHQ8").totals
        t1 = generate(gap).frame("PHQ8").totals
        assert np.array_equal(t0, t1)
