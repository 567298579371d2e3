"""Variance compression: Stereotype Index per demographic group."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .domain import MARGINAL_DIMENSIONS, Condition, Dimension, GroupSelector, ValidationError, get_instrument
from .ingest import BaselineRow, Dataset, lookup_baseline
from .statkit import chisq_variance_test

LOW_N = 30
FLAG_NO_BASELINE = "baseline unavailable"
FLAG_LOW_N = f"low n (< {LOW_N})"
FLAG_TOO_FEW = "fewer than 2 records"
FLAG_ZERO_SD = "zero model variance"


def stereotype_index(model_sd: float, gt_sd: float) -> float:
    """Ratio of model SD to population SD; 1.0 means faithful variance."""
    if not (model_sd > 0 and gt_sd > 0):
        raise ValidationError(f"stereotype index needs positive SDs, got {model_sd!r} and {gt_sd!r}")
    return model_sd / gt_sd


def compression_pct(si: float) -> float:
    return (1.0 - si) * 100.0


@dataclass(frozen=True)
class RigidityRow:
    dimension: Dimension
    group: str
    instrument: str
    model: str | None
    condition: Condition | None
    n: int
    model_mean: float | None
    model_sd: float | None
    gt_sd: float | None
    si: float | None
    compression_pct: float | None
    p_value: float | None
    flags: tuple[str, ...] = ()

    def to_row(self) -> dict:
        return {
            "dimension": self.dimension.label, "group": self.group, "instrument": self.instrument,
            "model": self.model or "", "condition": self.condition.value if self.condition else "",
            "n": self.n, "model_mean": self.model_mean, "model_sd": self.model_sd, "gt_sd": self.gt_sd,
            "si": self.si, "compression_pct": self.compression_pct, "p_value": self.p_value,
            "flags": "; ".join(self.flags),
        }


def group_levels(dimension: Dimension, baselines: Sequence[BaselineRow], instrument: str) -> list[str]:
    """Groups audited for a dimension: every level, or the baseline's intersection cells."""
    if dimension is Dimension.INTERSECTION:
        return sorted({b.group for b in baselines
                       if b.dimension is Dimension.INTERSECTION and b.instrument == instrument})
    return [level.label for level in dimension.factor]


def rigidity_row(values, dimension: Dimension | str, group: str, instrument: str,
                 baselines: Sequence[BaselineRow], model: str | None = None,
                 condition: Condition | None = None) -> RigidityRow:
    """Row for one group's total scores."""
    values = np.asarray(values, dtype=float)
    dimension = Dimension.parse(dimension)
    n = int(values.size)
    flags = []
    if n < LOW_N:
        flags.append(FLAG_LOW_N)
    mean = float(values.mean()) if n else None
    sd = float(values.std(ddof=1)) if n >= 2 else None
    base, _ = lookup_baseline(baselines, dimension, group, instrument)
    gt_sd = base.gt_sd if base is not None else None
    si = comp = p = None
    if n < 2:
        flags.append(FLAG_TOO_FEW)
    elif gt_sd is None:
        flags.append(FLAG_NO_BASELINE)
    elif sd == 0:
        flags.append(FLAG_ZERO_SD)
        p = chisq_variance_test(values, gt_sd).p_value
    else:
        si = stereotype_index(sd, gt_sd)
        comp = compression_pct(si)
        p = chisq_variance_test(values, gt_sd).p_value
    return RigidityRow(dimension, group, instrument, model, condition, n, mean, sd, gt_sd, si, comp, p, tuple(flags))


def rigidity_table(dataset: Dataset, baselines: Sequence[BaselineRow], instrument: str = "PHQ8",
                   dimensions: Iterable[Dimension | str] = MARGINAL_DIMENSIONS,
                   by_model: bool = False, by_condition: bool = False) -> list[RigidityRow]:
    """One row per group (optionally split by model and condition), pooled otherwise.

    Rows come out in canonical order: dimension, level, model, condition.
    Groups without records are omitted.
    """
    inst = get_instrument(instrument).id
    frame = dataset.frame(inst)
    models = frame.models if by_model else [None]
    conditions = sorted({Condition.parse(c) for c in dataset.conditions}) if by_condition else [None]
    rows = []
    for dim in (Dimension.parse(d) for d in dimensions):
        for group in group_levels(dim, baselines, inst):
            gmask = frame.mask(GroupSelector.for_group(dim, group))
            if not gmask.any():
                continue
            for model in models:
                mmask = gmask if model is None else gmask & (frame.model == model)
                for cond in conditions:
                    mask = mmask if cond is None else mmask & (frame.condition == cond.ordinal)
                    if not mask.any():
                        continue
                    rows.append(rigidity_row(frame.totals[mask], dim, group, inst, baselines, model, cond))
    return rows


@dataclass(frozen=True)
class ModelSI:
    model: str
    mean_si: float | None
    compression_pct: float | None
    rows: int


def per_model_si(dataset: Dataset, baselines: Sequence[BaselineRow], instrument: str = "PHQ8",
                 dimensions: Iterable[Dimension | str] = MARGINAL_DIMENSIONS) -> list[ModelSI]:
    """Unweighted mean SI over every demographic-category row of each model."""
    table = rigidity_table(dataset, baselines, instrument, dimensions, by_model=True)
    out = []
    for model in dataset.frame(instrument).models:
        sis = [r.si for r in table if r.model == model and r.si is not None]
        mean = float(np.mean(sis)) if sis else None
        out.append(ModelSI(model, mean, compression_pct(mean) if mean is not None else None, len(sis)))
    return out


def si_pct_change(si_clinical: float, si_personal: float) -> float:
    if not si_clinical > 0:
        raise ValidationError("clinical SI must be positive")
    return (si_personal - si_clinical) / si_clinical * 100.0


@dataclass(frozen=True)
class ContextRow:
    dimension: Dimension
    group: str
    model: str | None
    si_clinical: float
    si_personal: float
    pct_change: float


def context_si_delta(dataset: Dataset, baselines: Sequence[BaselineRow], instrument: str = "PHQ8",
                     dimensions: Iterable[Dimension | str] = MARGINAL_DIMENSIONS,
                     by_model: bool = False) -> list[ContextRow]:
    """Change in SI from the clinical to the personal framing, per group."""
    present = set(dataset.conditions)
    missing = {Condition.CLINICAL, Condition.PERSONAL} - present
    if missing:
        raise ValidationError(f"context comparison needs both conditions; missing {', '.join(c.value for c in missing)}")
    table = rigidity_table(dataset, baselines, instrument, dimensions, by_model=by_model, by_condition=True)
    cells: dict[tuple, dict[Condition, float]] = {}
    order = []
    for r in table:
        key = (r.dimension, r.group, r.model)
        if key not in cells:
            cells[key] = {}
            order.append(key)
        if r.si is not None:
            cells[key][r.condition] = r.si
    out = []
    for key in order:
        got = cells[key]
        if Condition.CLINICAL in got and Condition.PERSONAL in got:
            c, p = got[Condition.CLINICAL], got[Condition.PERSONAL]
            out.append(ContextRow(*key, c, p, si_pct_change(c, p)))
    return out
