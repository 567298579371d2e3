"""Mean calibration: bias residuals, intersectional cells, suppression, paradox
error and severity-matched symptom endorsement."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .domain import MARGINAL_DIMENSIONS, Dimension, GroupSelector, ValidationError, get_instrument, selector_for_label
from .ingest import BaselineRow, Dataset, lookup_baseline
from .statkit import StatError, TestResult, cohens_d_one_sample, norm_sf, one_sample_t, two_proportion_z
from .rigidity import group_levels

FLAG_NO_BASELINE = "baseline unavailable"
FLAG_THIN = "thin cell"
FLAG_TOO_FEW = "fewer than 2 records"
FLAG_ZERO_SD = "zero model variance"

# Symptom names mapped to (instrument, 1-based item index).
SYMPTOM_ITEMS = {"irritability": ("GAD7", 6), "fatigue": ("PHQ8", 4)}


@dataclass(frozen=True)
class BiasRow:
    dimension: Dimension
    group: str
    instrument: str
    model: str | None
    n: int
    model_mean: float | None
    model_sd: float | None
    gt_mean: float | None
    residual: float | None
    d: float | None
    p: float | None
    flags: tuple[str, ...] = ()

    def to_row(self) -> dict:
        return {"dimension": self.dimension.label, "group": self.group, "instrument": self.instrument,
                "model": self.model or "", "n": self.n, "model_mean": self.model_mean,
                "model_sd": self.model_sd, "gt_mean": self.gt_mean, "residual": self.residual,
                "d": self.d, "p": self.p, "flags": "; ".join(self.flags)}


def bias_from_summary(model_mean: float, model_sd: float, gt_mean: float) -> tuple[float, float]:
    """Residual and one-sample Cohen's d from group summaries."""
    return model_mean - gt_mean, cohens_d_one_sample(model_mean, model_sd, gt_mean).value


def bias_row(values, dimension, group: str, instrument: str, gt_mean: float | None,
             model: str | None = None, flags: Iterable[str] = ()) -> BiasRow:
    v = np.asarray(values, dtype=float)
    dimension = Dimension.parse(dimension)
    flags = list(flags)
    n = int(v.size)
    mean = float(v.mean()) if n else None
    sd = float(v.std(ddof=1)) if n >= 2 else None
    residual = d = p = None
    if n < 2:
        flags.append(FLAG_TOO_FEW)
    elif gt_mean is None:
        flags.append(FLAG_NO_BASELINE)
    else:
        residual = mean - gt_mean
        if sd > 0:
            d = cohens_d_one_sample(mean, sd, gt_mean).value
        else:
            flags.append(FLAG_ZERO_SD)
        try:
            p = one_sample_t(v, gt_mean).p_value
        except StatError:
            p = 0.0
    return BiasRow(dimension, group, instrument, model, n, mean, sd, gt_mean, residual, d, p, tuple(flags))


def bias_residuals(dataset: Dataset, baselines: Sequence[BaselineRow], instrument: str = "PHQ8",
                   dimensions: Iterable[Dimension | str] = MARGINAL_DIMENSIONS,
                   by_model: bool = False) -> list[BiasRow]:
    """Model mean minus baseline mean per group, with d and a one-sample t p-value."""
    inst = get_instrument(instrument).id
    frame = dataset.frame(inst)
    models = frame.models if by_model else [None]
    rows = []
    for dim in (Dimension.parse(d) for d in dimensions):
        for group in group_levels(dim, baselines, inst):
            gmask = frame.mask(GroupSelector.for_group(dim, group))
            if not gmask.any():
                continue
            base, _ = lookup_baseline(baselines, dim, group, inst)
            for model in models:
                mask = gmask if model is None else gmask & (frame.model == model)
                if mask.any():
                    rows.append(bias_row(frame.totals[mask], dim, group, inst,
                                         base.gt_mean if base else None, model))
    return rows


def intersection_cells(dims: Sequence[Dimension | str]) -> list[str]:
    dims = [Dimension.parse(d) for d in dims]
    if len(dims) < 2 or Dimension.INTERSECTION in dims or len(set(dims)) != len(dims):
        raise ValidationError("intersections need two or more distinct marginal dimensions")
    return [" + ".join(l.label for l in combo) for combo in itertools.product(*(d.factor for d in dims))]


def intersectional_bias(dataset: Dataset, baseline_scalar: float, dims: Sequence[Dimension | str] = ("Gender", "SES"),
                        instrument: str = "PHQ8", min_n: int = 10, by_model: bool = False) -> list[BiasRow]:
    """Residuals of every intersection cell against one population mean."""
    if baseline_scalar is None:
        raise ValidationError("intersectional bias needs a scalar baseline")
    inst = get_instrument(instrument).id
    frame = dataset.frame(inst)
    models = frame.models if by_model else [None]
    rows = []
    for cell in intersection_cells(dims):
        cmask = frame.mask(GroupSelector.for_group(Dimension.INTERSECTION, cell))
        for model in models:
            mask = cmask if model is None else cmask & (frame.model == model)
            if not mask.any():
                continue
            flags = [f"{FLAG_THIN} (n < {min_n})"] if mask.sum() < min_n else []
            rows.append(bias_row(frame.totals[mask], Dimension.INTERSECTION, cell, inst,
                                 float(baseline_scalar), model, flags))
    return rows


def suppression_captured(model_group_mean: float, population_baseline: float, gt_group_mean: float) -> float:
    """Share (percent) of the group's documented elevation that the model reproduces."""
    gap = gt_group_mean - population_baseline
    if gap == 0:
        raise ValidationError("expected elevation is zero; captured share undefined")
    return 100.0 * (model_group_mean - population_baseline) / gap


@dataclass(frozen=True)
class SuppressionRow:
    model: str
    group: str
    model_mean: float
    gt_mean: float
    population_baseline: float
    captured_pct: float


def suppression_table(dataset: Dataset, baselines: Sequence[BaselineRow], population_baseline: float,
                      groups: Sequence[str] = ("Trans Woman", "Trans Man"), instrument: str = "PHQ8") -> list[SuppressionRow]:
    inst = get_instrument(instrument).id
    frame = dataset.frame(inst)
    rows = []
    for group in groups:
        base, _ = lookup_baseline(baselines, Dimension.GENDER, group, inst)
        if base is None or base.gt_mean == population_baseline:
            continue
        gmask = frame.mask(GroupSelector.for_group(Dimension.GENDER, group))
        for model in frame.models:
            mask = gmask & (frame.model == model)
            if mask.any():
                mean = float(frame.totals[mask].mean())
                rows.append(SuppressionRow(model, group, mean, base.gt_mean, population_baseline,
                                           suppression_captured(mean, population_baseline, base.gt_mean)))
    return rows


def paradox_error(observed_delta: float, gt_delta: float) -> float:
    return abs(observed_delta - gt_delta)


@dataclass(frozen=True)
class ParadoxRow:
    model: str
    asian_mean: float
    white_mean: float
    observed_delta: float
    gt_delta: float
    error: float


def paradox_calibration(dataset: Dataset, gt_delta: float, instrument: str = "PHQ8") -> list[ParadoxRow]:
    """Asian-minus-White mean difference per model against the expected differential."""
    inst = get_instrument(instrument).id
    frame = dataset.frame(inst)
    asian = frame.mask(GroupSelector.of(race="Asian"))
    white = frame.mask(GroupSelector.of(race="White"))
    rows = []
    for model in frame.models:
        a = asian & (frame.model == model)
        w = white & (frame.model == model)
        if not a.any() or not w.any():
            raise ValidationError(f"model {model} lacks Asian or White {inst} records")
        am, wm = float(frame.totals[a].mean()), float(frame.totals[w].mean())
        rows.append(ParadoxRow(model, am, wm, am - wm, gt_delta, paradox_error(am - wm, gt_delta)))
    if not rows:
        raise ValidationError(f"no {inst} records for the paradox audit")
    return rows


@dataclass(frozen=True)
class SymptomRateRow:
    item_label: str
    instrument: str
    item_index: int
    group_a: str
    group_b: str
    n_a: int
    n_b: int
    rate_a: float
    rate_b: float
    diff: float
    matched: bool
    z: float
    p: float
    strata: int = 0

    def to_row(self) -> dict:
        return dict(self.__dict__)


def _stratified(end_a, tot_a, end_b, tot_b, width: int):
    sa, sb = tot_a // width, tot_b // width
    shared = np.intersect1d(sa, sb)
    if shared.size == 0:
        raise ValidationError("no total-score stratum is shared by both groups")
    w = ra = rb = var = 0.0
    for s in shared:
        ia, ib = sa == s, sb == s
        na, nb = int(ia.sum()), int(ib.sum())
        ka, kb = float(end_a[ia].sum()), float(end_b[ib].sum())
        weight = na + nb
        pooled = (ka + kb) / weight
        w += weight
        ra += weight * ka / na
        rb += weight * kb / nb
        var += weight ** 2 * pooled * (1 - pooled) * (1 / na + 1 / nb)
    rate_a, rate_b = ra / w, rb / w
    sd = math.sqrt(var) / w
    if sd == 0:
        return rate_a, rate_b, 0.0, 1.0, int(shared.size)
    z = (rate_a - rate_b) / sd
    return rate_a, rate_b, z, min(1.0, 2.0 * norm_sf(abs(z))), int(shared.size)


def symptom_rates(dataset: Dataset, item, group_a, group_b, matching: str = "TotalScoreStratified",
                  band: int = 0, model: str | None = None) -> SymptomRateRow:
    """Endorsement (item score 2 or more) in two groups, optionally severity matched.

    ``item`` is a symptom name from :data:`SYMPTOM_ITEMS` or an
    ``(instrument, 1-based index)`` pair. Stratified matching compares groups
    within shared total-score strata (exact totals, or bins ``2 * band + 1``
    wide) and pools with weights equal to the stratum's combined size.
    """
    label, (inst, index) = (item, SYMPTOM_ITEMS[item]) if isinstance(item, str) else (f"{item[0]} item {item[1]}", item)
    spec = get_instrument(inst)
    if not 1 <= index <= spec.item_count:
        raise ValidationError(f"{spec.id} has no item {index}")
    if matching not in ("None", "TotalScoreStratified"):
        raise ValidationError(f"unknown matching {matching!r}")
    if band < 0:
        raise ValidationError("band must be non-negative")
    frame = dataset.frame(spec.id)
    sel_a = group_a if isinstance(group_a, GroupSelector) else selector_for_label(group_a)
    sel_b = group_b if isinstance(group_b, GroupSelector) else selector_for_label(group_b)
    base = np.ones(len(frame), dtype=bool) if model is None else frame.model == model
    ma, mb = frame.mask(sel_a) & base, frame.mask(sel_b) & base
    if not ma.any() or not mb.any():
        raise ValidationError("both groups need records")
    end_a = (frame.items[ma, index - 1] >= 2).astype(float)
    end_b = (frame.items[mb, index - 1] >= 2).astype(float)
    if matching == "None":
        res: TestResult = two_proportion_z(int(end_a.sum()), end_a.size, int(end_b.sum()), end_b.size)
        ra, rb, z, p, strata = end_a.mean(), end_b.mean(), res.statistic, res.p_value, 0
    else:
        ra, rb, z, p, strata = _stratified(end_a, frame.totals[ma], end_b, frame.totals[mb], 2 * band + 1)
    return SymptomRateRow(label, spec.id, index, sel_a.describe(), sel_b.describe(), int(ma.sum()), int(mb.sum()),
                          float(ra), float(rb), float(ra - rb), matching != "None", float(z), float(p), strata)
