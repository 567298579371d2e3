"""Run-to-run stability: transition matrices, flip rates, drift and fracture."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence
import math
import warnings

import numpy as np

from .domain import (
    INSTRUMENTS,
    MARGINAL_DIMENSIONS,
    PCL5_DEFAULT_CUT,
    PHQ8_BANDS,
    Condition,
    Dimension,
    PatientRecord,
    Severity,
    ValidationError,
    get_instrument,
)
from .ingest import Dataset, match_cross_run
from .statkit import (
    Sample,
    StatError,
    TestResult,
    bh_fdr,
    cliffs_delta,
    dunn_posthoc,
    kruskal_wallis,
    paired_t,
    pearson_r,
)

Pair = tuple[PatientRecord, PatientRecord]
_BAND_STARTS = np.array([lo for lo, _ in PHQ8_BANDS])


def severity_index(totals) -> np.ndarray:
    t = np.asarray(totals)
    if t.size and (t.min() < 0 or t.max() > 24):
        raise ValidationError("PHQ-8 totals must lie in 0..24")
    return np.searchsorted(_BAND_STARTS, t, side="right") - 1


@dataclass(frozen=True)
class TransitionMatrix:
    counts: np.ndarray
    total_pairs: int

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.shape != (5, 5) or (c < 0).any() or int(c.sum()) != self.total_pairs:
            raise ValidationError("transition counts must be a non-negative 5x5 grid summing to total_pairs")
        object.__setattr__(self, "counts", c)

    @classmethod
    def from_counts(cls, counts) -> "TransitionMatrix":
        c = np.asarray(counts, dtype=np.int64)
        return cls(c, int(c.sum()))

    @property
    def trace(self) -> int:
        return int(np.trace(self.counts))

    def to_json(self) -> dict:
        return {"categories": [s.name.rstrip("_") for s in Severity], "counts": self.counts.tolist(),
                "total_pairs": self.total_pairs}


def _pair_totals(pairs: Sequence[Pair]) -> tuple[np.ndarray, np.ndarray]:
    a = np.fromiter((p[0].total for p in pairs), dtype=np.int64, count=len(pairs))
    b = np.fromiter((p[1].total for p in pairs), dtype=np.int64, count=len(pairs))
    return a, b


def transition_counts(run1, run2) -> TransitionMatrix:
    i, j = severity_index(run1), severity_index(run2)
    counts = np.zeros((5, 5), dtype=np.int64)
    np.add.at(counts, (i, j), 1)
    return TransitionMatrix(counts, int(i.size))


def transition_matrix(pairs: Sequence[Pair]) -> TransitionMatrix:
    """Counts of (run-1 severity, run-2 severity) over PHQ-8 pairs."""
    for a, b in pairs:
        if a.instrument != "PHQ8" or b.instrument != "PHQ8":
            raise ValidationError("five-category transitions apply to PHQ-8 pairs only")
    return transition_counts(*_pair_totals(pairs))


@dataclass(frozen=True)
class FlipRate:
    rate: float
    crossings: int
    total_pairs: int

    def to_json(self) -> dict:
        return {"rate": self.rate, "crossings": self.crossings, "total_pairs": self.total_pairs}


def flip_rate(matrix: TransitionMatrix) -> FlipRate:
    if matrix.total_pairs == 0:
        raise ValidationError("flip rate of an empty transition matrix")
    crossings = matrix.total_pairs - matrix.trace
    return FlipRate(crossings / matrix.total_pairs, crossings, matrix.total_pairs)


def positive_mask(records: Iterable[PatientRecord], pcl5_cut: int = PCL5_DEFAULT_CUT) -> np.ndarray:
    out = []
    for r in records:
        spec = r.spec
        if spec.id == "PCL5":
            cut = pcl5_cut
        elif spec.threshold_women is not None and r.profile.gender.is_woman:
            cut = spec.threshold_women
        else:
            cut = spec.threshold
        out.append(r.total >= cut)
    return np.array(out, dtype=bool)


def binary_flip_rate(pairs: Sequence[Pair], pcl5_cut: int = PCL5_DEFAULT_CUT) -> FlipRate:
    """Share of pairs whose screening decision differs between runs."""
    if not pairs:
        raise ValidationError("binary flip rate needs at least one pair")
    a = positive_mask((p[0] for p in pairs), pcl5_cut)
    b = positive_mask((p[1] for p in pairs), pcl5_cut)
    crossings = int((a != b).sum())
    return FlipRate(crossings / len(pairs), crossings, len(pairs))


@dataclass(frozen=True)
class Drift:
    n: int
    mean_diff: float
    t: float
    p: float
    mean_abs_dev: float
    r: float | None
    flags: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {"n": self.n, "mean_diff": self.mean_diff, "t": self.t, "p": self.p,
                "mean_abs_dev": self.mean_abs_dev, "r": self.r, "flags": list(self.flags)}


def drift_from_totals(run1, run2) -> Drift:
    a, b = np.asarray(run1, dtype=float), np.asarray(run2, dtype=float)
    d = a - b
    if a.size >= 2 and d.min() == d.max() != 0:
        # every pair shifted by the same amount: the shift is certain, t unbounded
        r = pearson_r(a, b).value if a.std() > 0 else None
        return Drift(int(a.size), float(d[0]), math.copysign(math.inf, d[0]), 0.0, abs(float(d[0])), r,
                     ("constant nonzero shift; t unbounded",) + (() if r is not None else ("constant run; r undefined",)))
    test = paired_t(a, b)
    flags = list(test.flags)
    if np.array_equal(a, b):
        r = 1.0
    else:
        try:
            r = pearson_r(a, b).value
        except StatError:
            r = None
            flags.append("constant run; r undefined")
    return Drift(int(a.size), test.extra["mean_diff"], test.statistic, test.p_value,
                 test.extra["mean_abs_diff"], r, tuple(flags))


def drift(pairs: Sequence[Pair]) -> Drift:
    """Systematic run-1 minus run-2 shift, its paired t, MAD and Pearson r."""
    if len(pairs) < 2:
        raise ValidationError("drift needs at least two pairs")
    return drift_from_totals(*_pair_totals(pairs))


@dataclass(frozen=True)
class WithinRun:
    condition: Condition
    instrument: str
    rate: float
    crossing_count: int
    pair_count: int
    warnings: tuple[str, ...] = ()

    def to_json(self) -> dict:
        return {"condition": self.condition.value, "instrument": self.instrument, "rate": self.rate,
                "crossing_count": self.crossing_count, "pair_count": self.pair_count,
                "warnings": list(self.warnings)}


def within_run_flip_rate(dataset: Dataset, condition: Condition | str, instrument: str = "PHQ8",
                         pcl5_cut: int = PCL5_DEFAULT_CUT) -> WithinRun:
    """Binary flips between disjoint consecutive iterations of each cohort-model cell.

    Iterations are sorted and paired (1, 2), (3, 4), ...; an odd final
    iteration is left out with a warning.
    """
    condition = Condition.parse(condition)
    inst = get_instrument(instrument).id
    crossings = pairs = 0
    notes = []
    for key, by_inst in dataset.index.items():
        if key.condition is not condition or inst not in by_inst:
            continue
        recs = sorted(by_inst[inst], key=lambda r: r.iteration)
        if len(recs) % 2:
            notes.append(f"odd iteration count ({len(recs)}) for {key.model} / "
                         f"{', '.join(str(l) for l in (key.profile.race, key.profile.gender, key.profile.ses, key.profile.relationship))}; "
                         f"iteration {recs[-1].iteration} unpaired")
            recs = recs[:-1]
        if not recs:
            continue
        pos = positive_mask(recs, pcl5_cut)
        crossings += int((pos[0::2] != pos[1::2]).sum())
        pairs += len(recs) // 2
    if pairs == 0:
        raise ValidationError(f"no cell in condition {condition.value} has two {inst} iterations")
    for note in notes:
        warnings.warn(note, stacklevel=2)
    return WithinRun(condition, inst, crossings / pairs, crossings, pairs, tuple(notes))


@dataclass(frozen=True)
class Contrast:
    group_a: str
    group_b: str
    z: float
    p: float
    p_adjusted: float
    reject: bool
    cliffs_delta: float


@dataclass(frozen=True)
class FractureResult:
    dimension: Dimension
    instrument: str
    kw: TestResult
    contrasts: tuple[Contrast, ...]
    level_sizes: dict
    flags: tuple[str, ...] = ()


def fracture_test(pairs: Sequence[Pair], dimension: Dimension | str, alpha: float = 0.05) -> FractureResult:
    """Kruskal-Wallis on |run1 - run2| across the levels of one dimension.

    Dunn contrasts are BH-adjusted over the dimension's pairwise family and
    each carries Cliff's delta between the two levels' deltas.
    """
    dimension = Dimension.parse(dimension)
    if dimension is Dimension.INTERSECTION:
        raise ValidationError("fracture test runs over a marginal dimension")
    if not pairs:
        raise ValidationError("fracture test needs pairs")
    insts = {p[0].instrument for p in pairs}
    by_level: dict = defaultdict(list)
    for a, b in pairs:
        by_level[a.profile.level(dimension)].append(abs(a.total - b.total))
    flags = []
    samples = []
    for level in dimension.factor:
        vals = by_level.get(level, [])
        if len(vals) < 2:
            if vals or level in by_level:
                flags.append(f"level {level.label} has fewer than 2 pairs; excluded")
            continue
        samples.append(Sample(np.array(vals, dtype=float), level.label))
    if len(samples) < 2:
        raise ValidationError(f"fracture test on {dimension.label} needs at least two levels with 2+ pairs")
    kw = kruskal_wallis(samples)
    if "degenerate" in kw.flags:
        flags.append("all deltas tied")
    dunn = dunn_posthoc(samples)
    reject, adjusted = bh_fdr([d.result.p_value for d in dunn], alpha)
    lookup = {s.label: s for s in samples}
    contrasts = tuple(
        Contrast(d.group_a, d.group_b, d.result.statistic, d.result.p_value, float(adj), bool(rej),
                 cliffs_delta(lookup[d.group_a], lookup[d.group_b]).value)
        for d, adj, rej in zip(dunn, adjusted, reject))
    return FractureResult(dimension, "/".join(sorted(insts)), kw, contrasts,
                          {s.label: len(s) for s in samples}, tuple(flags))


@dataclass(frozen=True)
class InstrumentStability:
    instrument: str
    binary: FlipRate
    drift: Drift | None


@dataclass(frozen=True)
class ModelStability:
    model: str
    binary: FlipRate
    five_category: FlipRate | None
    drift: Drift | None


@dataclass(frozen=True)
class StabilityReport:
    pairs: int
    unmatched: int
    pooled_binary: FlipRate | None
    transitions: TransitionMatrix | None
    five_category: FlipRate | None
    phq8_binary: FlipRate | None
    phq8_drift: Drift | None
    per_instrument: tuple[InstrumentStability, ...]
    per_model: tuple[ModelStability, ...]
    within_run: tuple[WithinRun, ...]
    warnings: tuple[str, ...] = field(default=())

    @property
    def continuous_r(self):
        return self.phq8_drift.r if self.phq8_drift else None

    @property
    def mean_abs_dev(self):
        return self.phq8_drift.mean_abs_dev if self.phq8_drift else None

    @property
    def crossings(self):
        return self.five_category.crossings if self.five_category else None


def _safe_drift(pairs) -> Drift | None:
    if len(pairs) < 2:
        return None
    try:
        return drift(pairs)
    except StatError:
        return None


def stability_report(dataset: Dataset, pcl5_cut: int = PCL5_DEFAULT_CUT) -> StabilityReport:
    """Cross-run stability over clinical/personal pairs plus within-run flips."""
    match = match_cross_run(dataset)
    notes = []
    if match.unmatched:
        notes.append(f"{len(match.unmatched)} record(s) without a cross-run partner")
    per_inst = []
    for inst in sorted(INSTRUMENTS):
        pairs = match.for_instrument(inst)
        if pairs:
            per_inst.append(InstrumentStability(inst, binary_flip_rate(pairs, pcl5_cut), _safe_drift(pairs)))
    phq = match.for_instrument("PHQ8")
    transitions = transition_matrix(phq) if phq else None
    per_model = []
    for model in sorted({a.model for a, _ in phq}):
        mp = [p for p in phq if p[0].model == model]
        per_model.append(ModelStability(model, binary_flip_rate(mp, pcl5_cut), flip_rate(transition_matrix(mp)),
                                        _safe_drift(mp)))
    within = []
    for cond in dataset.conditions:
        for inst in dataset.instruments:
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    w = within_run_flip_rate(dataset, cond, inst, pcl5_cut)
            except ValidationError:
                continue
            within.append(w)
            if w.warnings:
                notes.append(f"within-run {cond.value}/{inst}: {len(w.warnings)} cell(s) with an odd iteration count")
    return StabilityReport(
        pairs=len(match.pairs),
        unmatched=len(match.unmatched),
        pooled_binary=binary_flip_rate(match.pairs, pcl5_cut) if match.pairs else None,
        transitions=transitions,
        five_category=flip_rate(transitions) if transitions else None,
        phq8_binary=binary_flip_rate(phq, pcl5_cut) if phq else None,
        phq8_drift=_safe_drift(phq),
        per_instrument=tuple(per_inst),
        per_model=tuple(per_model),
        within_run=tuple(within),
        warnings=tuple(notes),
    )


def fracture_battery(dataset: Dataset, instrument: str = "PHQ8", alpha: float = 0.05,
                     dimensions: Iterable[Dimension] = MARGINAL_DIMENSIONS) -> tuple[list[FractureResult], list[str]]:
    pairs = match_cross_run(dataset).for_instrument(instrument)
    out, notes = [], []
    if not pairs:
        return out, [f"no {instrument} cross-run pairs for the fracture test"]
    for dim in dimensions:
        try:
            out.append(fracture_test(pairs, dim, alpha))
        except (ValidationError, StatError) as exc:
            notes.append(f"fracture {dim.label}: {exc}")
    return out, notes
