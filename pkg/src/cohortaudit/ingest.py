"""Parsing and indexing of record files, baseline tables and audit configuration."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import tomli

from .domain import (
    CohortKey,
    Condition,
    DemographicProfile,
    Dimension,
    GroupSelector,
    PatientRecord,
    ValidationError,
    cohort_key,
    get_instrument,
)

RECORD_FIELDS = (
    "record_id", "model", "condition", "iteration",
    "race", "gender", "ses", "relationship", "instrument", "items",
)
OPTIONAL_RECORD_FIELDS = ("total",)
BASELINE_HEADER = ("dimension", "group", "instrument", "gt_mean", "gt_sd", "source")


class IngestError(ValidationError):
    """Input could not be parsed; ``diagnostics`` lists every problem found."""

    def __init__(self, diagnostics: Sequence[str]):
        self.diagnostics = list(diagnostics)
        head = self.diagnostics[0] if self.diagnostics else "invalid input"
        more = f" (+{len(self.diagnostics) - 1} more)" if len(self.diagnostics) > 1 else ""
        super().__init__(head + more)


# -- records ---------------------------------------------------------------

@dataclass(frozen=True)
class Provenance:
    digest: str
    record_count: int
    dropped: int = 0


@dataclass(frozen=True)
class InstrumentFrame:
    """Columnar view of one instrument's records for vectorised audits."""

    instrument: str
    records: tuple[PatientRecord, ...]
    race: np.ndarray
    gender: np.ndarray
    ses: np.ndarray
    relationship: np.ndarray
    model: np.ndarray
    condition: np.ndarray
    iteration: np.ndarray
    items: np.ndarray
    totals: np.ndarray

    def __len__(self) -> int:
        return len(self.records)

    def mask(self, selector: GroupSelector) -> np.ndarray:
        m = np.ones(len(self.records), dtype=bool)
        for name in ("race", "gender", "ses", "relationship", "condition"):
            allowed = getattr(selector, name)
            if allowed:
                m &= np.isin(getattr(self, name), [v.ordinal for v in allowed])
        if selector.model:
            m &= np.isin(self.model, sorted(selector.model))
        return m

    @property
    def models(self) -> list[str]:
        return sorted(set(self.model.tolist()))


def _build_frame(instrument: str, records: Sequence[PatientRecord]) -> InstrumentFrame:
    spec = get_instrument(instrument)
    n = len(records)
    items = np.array([r.items for r in records], dtype=np.int64).reshape(n, spec.item_count)
    return InstrumentFrame(
        instrument=spec.id,
        records=tuple(records),
        race=np.array([r.profile.race.ordinal for r in records], dtype=np.int8),
        gender=np.array([r.profile.gender.ordinal for r in records], dtype=np.int8),
        ses=np.array([r.profile.ses.ordinal for r in records], dtype=np.int8),
        relationship=np.array([r.profile.relationship.ordinal for r in records], dtype=np.int8),
        model=np.array([r.model for r in records], dtype=object),
        condition=np.array([r.condition.ordinal for r in records], dtype=np.int8),
        iteration=np.array([r.iteration for r in records], dtype=np.int64),
        items=items,
        totals=items.sum(axis=1),
    )


class Dataset:
    """Immutable collection of validated records plus a cohort index."""

    def __init__(self, records: Iterable[PatientRecord], provenance: Provenance | None = None):
        self.records: tuple[PatientRecord, ...] = tuple(records)
        ids = set()
        for r in self.records:
            if r.record_id in ids:
                raise ValidationError(f"duplicate record_id {r.record_id!r}")
            ids.add(r.record_id)
        index: dict[CohortKey, dict[str, list[PatientRecord]]] = defaultdict(lambda: defaultdict(list))
        for r in self.records:
            index[cohort_key(r)][r.instrument].append(r)
        self.index = {k: {i: tuple(v) for i, v in sorted(d.items())} for k, d in
                      sorted(index.items(), key=lambda kv: kv[0].sort_key)}
        self._provenance = provenance
        self._frames: dict[str, InstrumentFrame] = {}

    def __len__(self) -> int:
        return len(self.records)

    @property
    def provenance(self) -> Provenance:
        # Hashing every record is the slowest part of construction, so defer it.
        if self._provenance is None:
            self._provenance = Provenance(_digest_records(self.records), len(self.records))
        return self._provenance

    def __iter__(self):
        return iter(self.records)

    @property
    def instruments(self) -> list[str]:
        return sorted({r.instrument for r in self.records})

    @property
    def models(self) -> list[str]:
        return sorted({r.model for r in self.records})

    @property
    def conditions(self) -> list[Condition]:
        return sorted({r.condition for r in self.records})

    def frame(self, instrument: str) -> InstrumentFrame:
        inst = get_instrument(instrument).id
        if inst not in self._frames:
            self._frames[inst] = _build_frame(inst, [r for r in self.records if r.instrument == inst])
        return self._frames[inst]

    def select(self, selector: GroupSelector, instrument: str | None = None) -> list[PatientRecord]:
        return [r for r in self.records
                if (instrument is None or r.instrument == get_instrument(instrument).id)
                and selector.matches(r.profile, r.model, r.condition)]


def _digest_records(records: Sequence[PatientRecord]) -> str:
    h = hashlib.sha256()
    for line in serialize_records(records):
        h.update(line.encode("utf-8"))
    return h.hexdigest()


def record_from_obj(obj: dict, strict: bool = False) -> PatientRecord:
    if not isinstance(obj, dict):
        raise ValidationError("record is not a JSON object")
    missing = [f for f in RECORD_FIELDS if f not in obj]
    if missing:
        raise ValidationError(f"missing field(s) {', '.join(missing)}")
    if strict:
        extra = sorted(set(obj) - set(RECORD_FIELDS) - set(OPTIONAL_RECORD_FIELDS))
        if extra:
            raise ValidationError(f"unknown field(s) {', '.join(extra)}")
    items = obj["items"]
    if not isinstance(items, list):
        raise ValidationError("items must be a list")
    for i, v in enumerate(items):
        if isinstance(v, bool) or not isinstance(v, int):
            raise ValidationError(f"item {i} is not an integer: {v!r}")
    total = obj.get("total", -1)
    if total is None:
        total = -1
    return PatientRecord(
        record_id=str(obj["record_id"]),
        model=str(obj["model"]),
        condition=obj["condition"],
        iteration=obj["iteration"],
        profile=DemographicProfile(obj["race"], obj["gender"], obj["ses"], obj["relationship"]),
        instrument=obj["instrument"],
        items=tuple(items),
        total=total,
    )


def record_to_obj(r: PatientRecord) -> dict:
    return {
        "record_id": r.record_id,
        "model": r.model,
        "condition": r.condition.value,
        "iteration": r.iteration,
        "race": r.profile.race.value,
        "gender": r.profile.gender.value,
        "ses": r.profile.ses.value,
        "relationship": r.profile.relationship.value,
        "instrument": r.instrument,
        "items": list(r.items),
    }


def serialize_records(records: Iterable[PatientRecord]) -> list[str]:
    return [json.dumps(record_to_obj(r), separators=(",", ":")) + "\n" for r in records]


def write_records(records: Iterable[PatientRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(serialize_records(records))


def scan_records(stream: Iterable[str], strict: bool = False) -> tuple[list[PatientRecord], list[str], str]:
    """Parse every line, collecting diagnostics instead of stopping at the first.

    Returns ``(records, diagnostics, sha256)``; records with problems are left out.
    """
    records: list[PatientRecord] = []
    diagnostics: list[str] = []
    seen: dict[str, int] = {}
    h = hashlib.sha256()
    for lineno, line in enumerate(stream, start=1):
        if isinstance(line, bytes):
            line = line.decode("utf-8")
        h.update(line.encode("utf-8"))
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            diagnostics.append(f"malformed JSON at line {lineno}: {exc.msg}")
            continue
        try:
            rec = record_from_obj(obj, strict=strict)
        except ValidationError as exc:
            diagnostics.append(f"{exc} at line {lineno}")
            continue
        except (TypeError, ValueError) as exc:
            diagnostics.append(f"schema violation at line {lineno}: {exc}")
            continue
        if rec.record_id in seen:
            diagnostics.append(
                f"duplicate record_id {rec.record_id!r} at line {lineno} (first at line {seen[rec.record_id]})")
            continue
        seen[rec.record_id] = lineno
        records.append(rec)
    return records, diagnostics, h.hexdigest()


def parse_records(stream: Iterable[str] | str, strict: bool = False, on_error: str = "raise") -> Dataset:
    """Build a :class:`Dataset` from JSONL lines.

    ``on_error="raise"`` aborts with an :class:`IngestError` listing every bad
    line; ``"skip"`` drops them and records the count in the provenance.
    """
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    records, diagnostics, digest = scan_records(stream, strict=strict)
    if diagnostics and on_error == "raise":
        raise IngestError(diagnostics)
    return Dataset(records, Provenance(digest, len(records), dropped=len(diagnostics)))


def load_records(path: str | Path, strict: bool = False, on_error: str = "raise") -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return parse_records(fh, strict=strict, on_error=on_error)


# -- baselines -------------------------------------------------------------

@dataclass(frozen=True)
class BaselineRow:
    dimension: Dimension
    group: str
    instrument: str
    gt_mean: float
    gt_sd: float | None
    source: str = ""

    def __post_init__(self):
        object.__setattr__(self, "dimension", Dimension.parse(self.dimension))
        spec = get_instrument(self.instrument)
        object.__setattr__(self, "instrument", spec.id)
        # canonicalise the group label and reject unknown tokens
        sel = GroupSelector.for_group(self.dimension, self.group)
        if self.dimension is not Dimension.INTERSECTION:
            (level,) = getattr(sel, self.dimension.attr)
            object.__setattr__(self, "group", level.label)
        if not math.isfinite(self.gt_mean) or not 0 <= self.gt_mean <= spec.total_max:
            raise ValidationError(f"gt_mean {self.gt_mean} outside {spec.id} range 0..{spec.total_max}")
        if self.gt_sd is not None and not (math.isfinite(self.gt_sd) and self.gt_sd > 0):
            raise ValidationError(f"gt_sd must be positive, got {self.gt_sd}")

    @property
    def selector(self) -> GroupSelector:
        return GroupSelector.for_group(self.dimension, self.group)


def parse_baselines(table: str | Iterable[str]) -> list[BaselineRow]:
    if isinstance(table, str):
        table = io.StringIO(table)
    reader = csv.reader(table)
    rows: list[BaselineRow] = []
    header = None
    for lineno, raw in enumerate(reader, start=1):
        if not raw or all(not c.strip() for c in raw):
            continue
        cells = [c.strip() for c in raw]
        if header is None:
            header = tuple(c.lower() for c in cells)
            if header[:5] != BASELINE_HEADER[:5]:
                raise ValidationError(f"baseline header must be {','.join(BASELINE_HEADER)}; got {','.join(cells)}")
            continue
        cells += [""] * (len(header) - len(cells))
        rec = dict(zip(header, cells))
        try:
            mean = float(rec["gt_mean"])
        except ValueError:
            raise ValidationError(f"non-numeric gt_mean {rec['gt_mean']!r} at line {lineno}") from None
        sd_text = rec.get("gt_sd", "")
        try:
            sd = float(sd_text) if sd_text not in ("", "---", "NA") else None
        except ValueError:
            raise ValidationError(f"non-numeric gt_sd {sd_text!r} at line {lineno}") from None
        try:
            rows.append(BaselineRow(rec["dimension"], rec["group"], rec["instrument"], mean, sd,
                                    rec.get("source", "")))
        except ValidationError as exc:
            raise ValidationError(f"{exc} at line {lineno}") from None
    if header is None:
        raise ValidationError("baseline table has no header row")
    return rows


def load_baselines(path: str | Path) -> list[BaselineRow]:
    with open(path, encoding="utf-8", newline="") as fh:
        return parse_baselines(fh)


def write_baselines(rows: Iterable[BaselineRow], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BASELINE_HEADER)
        for r in rows:
            w.writerow([r.dimension.value, r.group, r.instrument, repr(r.gt_mean),
                        "" if r.gt_sd is None else repr(r.gt_sd), r.source])


def lookup_baseline(baselines: Sequence[BaselineRow], dimension: Dimension | str, group: str,
                    instrument: str) -> tuple[BaselineRow | None, str]:
    """Find the baseline for a group: exact intersection row first, then the marginal row.

    Returns ``(row, how)`` with ``how`` one of ``"intersection"``, ``"marginal"``, ``"missing"``.
    """
    dimension = Dimension.parse(dimension)
    inst = get_instrument(instrument).id
    target = GroupSelector.for_group(dimension, group)
    candidates = [b for b in baselines if b.instrument == inst]
    for b in candidates:
        if b.dimension is Dimension.INTERSECTION and b.selector == target:
            return b, "intersection"
    if dimension is not Dimension.INTERSECTION:
        for b in candidates:
            if b.dimension is dimension and b.selector == target:
                return b, "marginal"
    return None, "missing"


# -- config ----------------------------------------------------------------

AUDIT_FAMILIES = ("rigidity", "stability", "fracture", "network", "logic", "calibration")


@dataclass(frozen=True)
class AuditConfig:
    records: str | None = None
    baselines: str | None = None
    out: str | None = None
    alpha: float = 0.05
    permutation_iterations: int = 1000
    reference_group: str = "White"
    rng_seed: int = 20240101
    within_run_pairing: str = "DisjointConsecutive"
    families: tuple[str, ...] = AUDIT_FAMILIES
    bonferroni_families: tuple[str, ...] = ()
    strict: bool = False
    workers: int = 1
    levene_center: str = "Mean"
    pcl5_cut: int = 8
    network_min_n: int = 30
    network_references: tuple[tuple[str, str], ...] = ()
    intersection_min_n: int = 10
    intersection_baseline: float | None = None
    intersection_dims: tuple[tuple[str, ...], ...] = (("Gender", "SES"), ("Race", "Gender", "SES"))
    population_baseline: float | None = None
    paradox_gt_delta: float | None = None
    severity_band: int = 0

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValidationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.permutation_iterations < 100:
            raise ValidationError(f"permutation_iterations must be >= 100, got {self.permutation_iterations}")
        if self.within_run_pairing != "DisjointConsecutive":
            raise ValidationError(f"unsupported within_run_pairing {self.within_run_pairing!r}")
        if not 0 <= self.rng_seed < 2 ** 64:
            raise ValidationError("rng_seed must be an unsigned 64-bit integer")
        unknown = set(self.families) - set(AUDIT_FAMILIES)
        if unknown:
            raise ValidationError(f"unknown hypothesis families: {', '.join(sorted(unknown))}")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")
        if self.levene_center not in ("Mean", "Median"):
            raise ValidationError("levene_center must be Mean or Median")

    def echo(self) -> dict:
        d = dataclasses.asdict(self)
        for k in ("records", "baselines", "out", "workers"):
            d.pop(k)
        return d

    def replace(self, **changes) -> "AuditConfig":
        changes = {k: v for k, v in changes.items() if v is not None}
        return dataclasses.replace(self, **changes)


def _coerce_config(raw: dict) -> dict:
    fields = {f.name: f for f in dataclasses.fields(AuditConfig)}
    paths = raw.pop("paths", {}) if isinstance(raw.get("paths"), dict) else {}
    raw = {**paths, **raw}
    out = {}
    for key, value in raw.items():
        if key not in fields:
            raise ValidationError(f"unknown config key {key!r}")
        if key in ("families", "bonferroni_families"):
            value = tuple(str(v) for v in value)
        elif key == "network_references":
            value = tuple((str(k), str(v)) for k, v in value.items())
        elif key == "intersection_dims":
            value = tuple(tuple(str(d) for d in dims) for dims in value)
        out[key] = value
    return out


def parse_config(text: str) -> AuditConfig:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ValidationError(f"config parse error: {exc}") from None
    try:
        return AuditConfig(**_coerce_config(raw))
    except TypeError as exc:
        raise ValidationError(f"config error: {exc}") from None


def load_config(path: str | Path | None) -> AuditConfig:
    if path is None:
        return AuditConfig()
    return parse_config(Path(path).read_text(encoding="utf-8"))


# -- cross-run matching ----------------------------------------------------

@dataclass(frozen=True)
class CrossRunMatch:
    pairs: tuple[tuple[PatientRecord, PatientRecord], ...]
    unmatched: tuple[PatientRecord, ...] = field(default=())

    def __len__(self) -> int:
        return len(self.pairs)

    def for_instrument(self, instrument: str) -> list[tuple[PatientRecord, PatientRecord]]:
        inst = get_instrument(instrument).id
        return [p for p in self.pairs if p[0].instrument == inst]


def match_cross_run(dataset: Dataset) -> CrossRunMatch:
    """Pair clinical and personal administrations of the same model, profile,
    instrument and iteration index."""
    def key(r: PatientRecord):
        return (r.model, r.profile.sort_key, r.instrument, r.iteration)

    run1: dict = {}
    run2: dict = {}
    unmatched: list[PatientRecord] = []
    for r in dataset.records:
        bucket = run1 if r.condition is Condition.CLINICAL else run2
        if key(r) in bucket:
            # repeated administrations under one key cannot be paired unambiguously
            unmatched.append(r)
        else:
            bucket[key(r)] = r
    pairs = []
    for k in sorted(run1):
        if k in run2:
            pairs.append((run1[k], run2[k]))
        else:
            unmatched.append(run1[k])
    unmatched.extend(run2[k] for k in sorted(run2) if k not in run1)
    return CrossRunMatch(tuple(pairs), tuple(unmatched))
