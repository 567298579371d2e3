"""Seeded synthetic cohorts with planted distributional truth.

Each record starts from a population-law draw: Gaussian-copula item latents
``mu + s * Z`` rounded onto the item scale, with ``mu`` solved so the expected
total equals the cohort's target mean. A population record's total is then
compressed (or expanded) around the target by the variance factor, shifted by
the bias offset, stochastically rounded, and the change spread over the items.
The planted Stereotype Index of a cohort is therefore its variance factor, and
every planted moment follows from the population law, which is computed
exactly below.

All randomness is counter-based (see :mod:`cohortaudit.seeding`), keyed by
profile, model, condition, instrument and iteration, so any subset of the
design is reproduced bit-for-bit regardless of generation order.
"""

from __future__ import annotations

import dataclasses
import functools
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import brentq
from scipy.special import ndtr

from .domain import (
    MARGINAL_DIMENSIONS,
    PHQ8_BANDS,
    Condition,
    DemographicProfile,
    Dimension,
    GroupSelector,
    InstrumentSpec,
    PatientRecord,
    ValidationError,
    all_profiles,
    get_instrument,
    selector_for_label,
)
from .ingest import BaselineRow, Dataset, write_baselines, write_records
from .seeding import derive_seeds, normals, uniforms
from .statkit import frobenius_distance

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

MAX_ATTEMPTS = 256
AUX_DRAWS = 20_000
_AUX_SEED = 0x5EED_CAFE

# One-factor latent correlation and population mean per instrument.
DEFAULT_LOADING = {"PHQ8": 0.45, "GAD7": 0.5, "AUDITC": 0.55, "PCL5": 0.5}
DEFAULT_TARGET = {"PHQ8": 7.0, "GAD7": 6.0, "AUDITC": 3.0, "PCL5": 5.0}

# Counter blocks; each attempt gets its own stride so redraws never reuse bits.
_STRIDE = 16
_C_NORMAL, _C_ROUND, _C_ADJUST, _C_CROSS, _C_GAP_PICK, _C_GAP_PARTNER = range(6)


def equicorrelation(k: int, rho: float) -> np.ndarray:
    m = np.full((k, k), float(rho))
    np.fill_diagonal(m, 1.0)
    return m


def check_copula(matrix, k: int) -> np.ndarray:
    m = np.asarray(matrix, dtype=float)
    if m.shape != (k, k):
        raise ValidationError(f"copula shape {m.shape} does not match {k} items")
    if not np.allclose(m, m.T, atol=1e-12):
        raise ValidationError("copula is not symmetric")
    if not np.allclose(np.diag(m), 1.0, atol=1e-12):
        raise ValidationError("copula diagonal must be 1")
    off = m[~np.eye(k, dtype=bool)]
    if np.any(np.abs(off) >= 1):
        raise ValidationError("copula off-diagonal entries must lie strictly inside (-1, 1)")
    if np.linalg.eigvalsh(m).min() < -1e-10:
        raise ValidationError("non-PSD copula")
    return m


def _copula_root(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(m)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


@dataclass(frozen=True)
class CohortParams:
    """Fully resolved generation parameters for one cohort and instrument."""

    target_mean: float
    copula: tuple[tuple[float, ...], ...]
    variance_factor: float = 1.0
    bias_offset: float = 0.0
    latent_scale: float = 1.0
    gateway_compliant: bool = False
    crossing_probability: float | None = None
    retest_correlation: float = 0.9
    endorsement_gap: tuple[int, float] | None = None

    @property
    def matrix(self) -> np.ndarray:
        return np.array(self.copula)

    def validate(self, spec: InstrumentSpec) -> "CohortParams":
        top = spec.total_max
        if not 0 < self.target_mean < top:
            raise ValidationError(f"infeasible spec: {spec.id} target_mean {self.target_mean} "
                                  f"outside the open score range (0, {top})")
        if not 0 <= self.target_mean + self.bias_offset <= top:
            raise ValidationError(f"infeasible spec: {spec.id} target_mean + bias_offset "
                                  f"= {self.target_mean + self.bias_offset} outside 0..{top}")
        if not self.variance_factor > 0:
            raise ValidationError("variance_factor must be positive")
        if not self.latent_scale > 0:
            raise ValidationError("latent_scale must be positive")
        if not 0 <= self.retest_correlation <= 1:
            raise ValidationError("retest_correlation must lie in [0, 1]")
        if self.crossing_probability is not None and not 0 <= self.crossing_probability <= 1:
            raise ValidationError("crossing_probability must lie in [0, 1]")
        if self.endorsement_gap is not None:
            item, gap = self.endorsement_gap
            if not 1 <= item <= spec.item_count:
                raise ValidationError(f"endorsement_gap item {item} outside 1..{spec.item_count}")
            if not 0 < gap <= 1:
                raise ValidationError("endorsement_gap must lie in (0, 1]")
        check_copula(self.copula, spec.item_count)
        return self


def _as_tuple_matrix(m: np.ndarray) -> tuple[tuple[float, ...], ...]:
    return tuple(tuple(float(v) for v in row) for row in m)


def _resolve_copula(value, k: int, base: np.ndarray) -> np.ndarray:
    if isinstance(value, str):
        if value.strip().lower() != "identity":
            raise ValidationError(f"unknown copula keyword {value!r}")
        return np.eye(k)
    if isinstance(value, (int, float)):
        return equicorrelation(k, float(value))
    return check_copula(value, k)


def _perturb(m: np.ndarray, entries) -> np.ndarray:
    m = m.copy()
    k = len(m)
    for entry in entries:
        i, j, delta = int(entry[0]), int(entry[1]), float(entry[2])
        if not (1 <= i <= k and 1 <= j <= k) or i == j:
            raise ValidationError(f"perturb entry {list(entry)} must name two distinct items in 1..{k}")
        m[i - 1, j - 1] += delta
        m[j - 1, i - 1] += delta
    return m


PARAM_KEYS = frozenset({
    "target_mean", "variance_factor", "bias_offset", "latent_scale", "copula", "perturb",
    "gateway_compliant", "crossing_probability", "retest_correlation", "endorsement_gap",
})


def apply_params(params: CohortParams, raw: Mapping, spec: InstrumentSpec) -> CohortParams:
    unknown = set(raw) - PARAM_KEYS
    if unknown:
        raise ValidationError(f"unknown cohort parameter(s): {', '.join(sorted(unknown))}")
    changes = {k: raw[k] for k in raw if k not in ("copula", "perturb", "endorsement_gap")}
    for key in ("target_mean", "variance_factor", "bias_offset", "latent_scale", "retest_correlation"):
        if key in changes:
            changes[key] = float(changes[key])
    if "crossing_probability" in changes and changes["crossing_probability"] is not None:
        changes["crossing_probability"] = float(changes["crossing_probability"])
    if "gateway_compliant" in changes:
        changes["gateway_compliant"] = bool(changes["gateway_compliant"])
    matrix = params.matrix
    if "copula" in raw:
        matrix = _resolve_copula(raw["copula"], spec.item_count, matrix)
    if "perturb" in raw:
        matrix = _perturb(matrix, raw["perturb"])
    changes["copula"] = _as_tuple_matrix(matrix)
    if "endorsement_gap" in raw:
        gap = raw["endorsement_gap"]
        if gap is None:
            changes["endorsement_gap"] = None
        elif isinstance(gap, Mapping):
            changes["endorsement_gap"] = (int(gap["item"]), float(gap["gap"]))
        else:
            changes["endorsement_gap"] = (int(gap[0]), float(gap[1]))
    return dataclasses.replace(params, **changes)


def base_params(instrument: str) -> CohortParams:
    spec = get_instrument(instrument)
    return CohortParams(
        target_mean=DEFAULT_TARGET[spec.id],
        copula=_as_tuple_matrix(equicorrelation(spec.item_count, DEFAULT_LOADING[spec.id])),
    )


@dataclass(frozen=True)
class CohortOverride:
    selector: GroupSelector
    params: Mapping
    instrument: str | None = None

    def applies(self, profile: DemographicProfile, model: str, condition: Condition, instrument: str) -> bool:
        if self.instrument is not None and self.instrument != instrument:
            return False
        return self.selector.matches(profile, model, condition)


def reference_selector(text: str) -> GroupSelector:
    return selector_for_label(text)


@dataclass(frozen=True)
class SynthSpec:
    models: tuple[str, ...] = ("model-a",)
    conditions: tuple[Condition, ...] = (Condition.CLINICAL, Condition.PERSONAL)
    instruments: tuple[str, ...] = ("PHQ8",)
    iterations: int = 30
    profiles: tuple[DemographicProfile, ...] = field(default_factory=lambda: tuple(all_profiles()))
    rng_seed: int = 20240101
    reference_group: str = "White"
    defaults: Mapping[str, Mapping] = field(default_factory=dict)
    cohorts: tuple[CohortOverride, ...] = ()
    gateway_violations: int = 0

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(str(m) for m in self.models))
        object.__setattr__(self, "conditions", tuple(Condition.parse(c) for c in self.conditions))
        object.__setattr__(self, "instruments", tuple(get_instrument(i).id for i in self.instruments))
        object.__setattr__(self, "profiles", tuple(sorted(self.profiles)))
        if not self.models or not self.conditions or not self.instruments or not self.profiles:
            raise ValidationError("spec needs at least one model, condition, instrument and profile")
        for name in ("models", "conditions", "instruments", "profiles"):
            values = getattr(self, name)
            if len(set(values)) != len(values):
                raise ValidationError(f"duplicate entries in {name}")
        if not isinstance(self.iterations, int) or self.iterations < 1:
            raise ValidationError("iterations must be a positive integer")
        if self.gateway_violations < 0:
            raise ValidationError("gateway_violations must be non-negative")
        reference_selector(self.reference_group)
        # Fail early on infeasible parameters anywhere in the design.
        for key in self._cells():
            self.params_for(*key)

    def _cells(self):
        for inst in self.instruments:
            for p in self.profiles:
                for m in self.models:
                    for c in self.conditions:
                        yield p, m, c, inst

    def params_for(self, profile: DemographicProfile, model: str, condition, instrument: str) -> CohortParams:
        return _resolve(self, profile, model, Condition.parse(condition), get_instrument(instrument).id)

    @property
    def record_count(self) -> int:
        return len(self.profiles) * len(self.models) * len(self.conditions) * self.iterations * len(self.instruments)

    def replace(self, **changes) -> "SynthSpec":
        return dataclasses.replace(self, **changes)

    # Identity hashing keeps the per-spec resolution cache cheap.
    __hash__ = object.__hash__
    __eq__ = object.__eq__


@functools.lru_cache(maxsize=65536)
def _resolve(spec: SynthSpec, profile, model, condition, instrument) -> CohortParams:
    ispec = get_instrument(instrument)
    params = base_params(instrument)
    shared = {k: v for k, v in spec.defaults.items() if not isinstance(v, Mapping)}
    if shared:
        params = apply_params(params, shared, ispec)
    if isinstance(spec.defaults.get(instrument), Mapping):
        params = apply_params(params, spec.defaults[instrument], ispec)
    for override in spec.cohorts:
        if override.applies(profile, model, condition, instrument):
            params = apply_params(params, override.params, ispec)
    return params.validate(ispec)


# Population law -----------------------------------------------------------

_GL_X, _GL_W = np.polynomial.legendre.leggauss(64)


def bivariate_normal_cdf(h, k, r: float) -> np.ndarray:
    """P(X <= h, Y <= k) for a standard bivariate normal with correlation ``r``.

    Integrates the density derivative in ``r`` (Plackett's identity) with
    64-point Gauss-Legendre; adequate for ``|r| < 1``.
    """
    h = np.asarray(h, dtype=float)
    k = np.asarray(k, dtype=float)
    base = ndtr(h) * ndtr(k)
    if r == 0:
        return base
    t = 0.5 * r * (_GL_X + 1.0)
    w = 0.5 * r * _GL_W
    hh, kk = h[..., None], k[..., None]
    one = 1.0 - t * t
    dens = np.exp(-(hh * hh - 2.0 * t * hh * kk + kk * kk) / (2.0 * one)) / (2.0 * np.pi * np.sqrt(one))
    return base + (dens * w).sum(axis=-1)


def _item_tails(mu: float, s: float, m: int) -> np.ndarray:
    # P(item >= a) for a = 1..m under rounding of N(mu, s^2) onto 0..m.
    return ndtr((mu - np.arange(1, m + 1) + 0.5) / s)


def solve_location(target_mean: float, spec: InstrumentSpec, scale: float) -> float:
    """Latent location giving an expected total of ``target_mean``."""
    k, m = spec.item_count, spec.item_max
    f = lambda mu: k * _item_tails(mu, scale, m).sum() - target_mean
    lo, hi = -20.0 * scale - 5.0, m + 20.0 * scale + 5.0
    return brentq(f, lo, hi, xtol=1e-13)


@dataclass(frozen=True)
class Law:
    spec: InstrumentSpec
    params: CohortParams
    location: float
    root: np.ndarray = field(repr=False, compare=False)


@functools.lru_cache(maxsize=4096)
def law_for(instrument: str, params: CohortParams) -> Law:
    spec = get_instrument(instrument)
    mu = solve_location(params.target_mean, spec, params.latent_scale)
    return Law(spec, params, mu, _copula_root(params.matrix))


@functools.lru_cache(maxsize=4096)
def population_moments(instrument: str, params: CohortParams) -> tuple[float, float]:
    """Exact mean and SD of the population-law total score."""
    law = law_for(instrument, params)
    spec, s, mu = law.spec, params.latent_scale, law.location
    k, m = spec.item_count, spec.item_max
    tails = _item_tails(mu, s, m)
    ex = tails.sum()
    var_item = float(((2 * np.arange(1, m + 1) - 1) * tails).sum() - ex * ex)
    h = (mu - np.arange(1, m + 1) + 0.5) / s
    ha, hb = np.meshgrid(h, h, indexing="ij")
    cov_cache: dict[float, float] = {}
    total_var = k * var_item
    R = params.matrix
    for i in range(k):
        for j in range(i + 1, k):
            r = float(R[i, j])
            if r not in cov_cache:
                cov_cache[r] = float(bivariate_normal_cdf(ha, hb, r).sum() - ex * ex)
            total_var += 2 * cov_cache[r]
    return float(k * ex), math.sqrt(max(total_var, 0.0))


# Drawing ------------------------------------------------------------------

def _adjust_totals(items: np.ndarray, targets: np.ndarray, seeds: np.ndarray, counter: int, m: int) -> np.ndarray:
    """Move each row's total to ``targets`` one unit at a time on random eligible items."""
    d = targets - items.sum(axis=1)
    steps = int(np.abs(d).max(initial=0))
    if steps == 0:
        return items
    n, k = items.shape
    keys = uniforms(seeds, counter, steps * k).reshape(n, steps, k)
    rows = np.arange(n)
    for step in range(steps):
        sign = np.sign(d)
        eligible = np.where(sign[:, None] > 0, items < m, items > 0) & (sign != 0)[:, None]
        j = np.where(eligible, keys[:, step, :], -1.0).argmax(axis=1)
        live = eligible.any(axis=1)
        items[rows[live], j[live]] += sign[live]
        d = d - np.where(live, sign, 0)
    return items


def _draw(law: Law, shared_seeds, indep_seeds, attempt: int) -> np.ndarray:
    p, spec = law.params, law.spec
    k, m = spec.item_count, spec.item_max
    base = attempt * _STRIDE
    rho = p.retest_correlation
    z = math.sqrt(1.0 - rho) * (normals(indep_seeds, base + _C_NORMAL, k) @ law.root.T)
    if rho > 0:
        z += math.sqrt(rho) * (normals(shared_seeds, _C_NORMAL, k) @ law.root.T)
    items = np.clip(np.floor(law.location + p.latent_scale * z + 0.5), 0, m).astype(np.int64)
    if p.variance_factor == 1.0 and p.bias_offset == 0.0:
        return items
    totals = items.sum(axis=1)
    x = p.target_mean + p.bias_offset + p.variance_factor * (totals - p.target_mean)
    u = uniforms(indep_seeds, base + _C_ROUND, 1)[:, 0]
    targets = np.clip(np.floor(x + u), 0, spec.total_max).astype(np.int64)
    return _adjust_totals(items, targets, indep_seeds, base + _C_ADJUST, m)


def gateway_mask(items: np.ndarray) -> np.ndarray:
    """Rows violating the PHQ-8 gateway rule."""
    return (items.sum(axis=1) >= 10) & (items[:, 0] <= 1) & (items[:, 1] <= 1)


def _repair_gateway(items: np.ndarray) -> int:
    bad = np.flatnonzero(gateway_mask(items))
    if bad.size:
        # Move the record's largest non-gateway value into item 1; totals are unchanged.
        j = items[bad, 2:].argmax(axis=1) + 2
        first = items[bad, 0].copy()
        items[bad, 0] = items[bad, j]
        items[bad, j] = first
    return int(bad.size)


def _positive(totals: np.ndarray, spec: InstrumentSpec, gender) -> np.ndarray:
    cut = spec.threshold
    if spec.threshold_women is not None and gender.is_woman:
        cut = spec.threshold_women
    return totals >= cut


def _partner_candidates(spec: InstrumentSpec, params: CohortParams, target: int) -> np.ndarray:
    allowed = np.ones(spec.item_count, dtype=bool)
    allowed[target] = False
    if spec.id == "PHQ8" and params.gateway_compliant:
        allowed[:2] = False
    return allowed


def _gap_eligible(items: np.ndarray, target: int, allowed: np.ndarray) -> np.ndarray:
    return (items[:, target] < 2) & ((items >= 2) & allowed).any(axis=1)


@functools.lru_cache(maxsize=1024)
def _aux_sample(instrument: str, params: CohortParams) -> np.ndarray:
    """Large fixed-seed sample of one law, used for planted probabilities."""
    law = law_for(instrument, params)
    seeds = derive_seeds(_AUX_SEED, np.arange(AUX_DRAWS))
    items = _draw(law, derive_seeds(_AUX_SEED, 1, np.arange(AUX_DRAWS)), seeds, 0)
    if law.spec.id == "PHQ8" and params.gateway_compliant:
        _repair_gateway(items)
    return items


@functools.lru_cache(maxsize=1024)
def _gap_schedule(instrument: str, params: CohortParams) -> np.ndarray:
    """Per-total swap probability planting the configured endorsement gap."""
    spec = get_instrument(instrument)
    item, gap = params.endorsement_gap
    target = item - 1
    sample = _aux_sample(instrument, params)
    allowed = _partner_candidates(spec, params, target)
    elig = _gap_eligible(sample, target, allowed)
    totals = sample.sum(axis=1)
    n_t = np.bincount(totals, minlength=spec.total_max + 1).astype(float)
    e_t = np.bincount(totals, weights=elig, minlength=spec.total_max + 1)
    p_elig = np.divide(e_t, n_t, out=np.zeros_like(e_t), where=n_t > 0)
    return np.divide(gap, p_elig, out=np.zeros_like(p_elig), where=p_elig > 0).clip(0, 1)


def _plant_gap(items, spec, params, seeds, instrument) -> None:
    item, _ = params.endorsement_gap
    target = item - 1
    allowed = _partner_candidates(spec, params, target)
    q = _gap_schedule(instrument, params)[items.sum(axis=1)]
    elig = _gap_eligible(items, target, allowed)
    u = uniforms(seeds, _C_GAP_PICK, 1)[:, 0]
    rows = np.flatnonzero(elig & (u < q))
    if rows.size:
        keys = uniforms(seeds[rows], _C_GAP_PARTNER, spec.item_count)
        j = np.where((items[rows] >= 2) & allowed, keys, -1.0).argmax(axis=1)
        low = items[rows, target].copy()
        items[rows, target] = items[rows, j]
        items[rows, j] = low


@dataclass
class GenerationLog:
    crossing_shortfall: int = 0
    gateway_repairs: int = 0
    planted_violations: int = 0


def _profile_key(p: DemographicProfile) -> int:
    r, g, s, rel = p.sort_key
    return ((r * 4 + g) * 3 + s) * 2 + rel


def generate_arrays(spec: SynthSpec, log: GenerationLog | None = None) -> dict:
    """Item arrays keyed by (profile, model, condition, instrument); rows are iterations 1..T."""
    log = log if log is not None else GenerationLog()
    iters = np.arange(1, spec.iterations + 1, dtype=np.uint64)
    out: dict = {}
    reference_condition = spec.conditions[0]
    for inst_idx, inst in enumerate(spec.instruments):
        ispec = get_instrument(inst)
        for profile in spec.profiles:
            pkey = _profile_key(profile)
            for m_idx, model in enumerate(spec.models):
                shared = derive_seeds(spec.rng_seed, 1, pkey, m_idx, inst_idx, iters)
                for cond in spec.conditions:
                    params = spec.params_for(profile, model, cond, inst)
                    law = law_for(inst, params)
                    indep = derive_seeds(spec.rng_seed, 2, pkey, m_idx, cond.ordinal, inst_idx, iters)
                    items = _draw(law, shared, indep, 0)
                    partner = out.get((profile, model, reference_condition, inst))
                    if params.crossing_probability is not None and cond is not reference_condition and partner is not None:
                        items = _force_crossing(law, params, items, partner, shared, indep, profile.gender, log)
                    if ispec.id == "PHQ8" and params.gateway_compliant:
                        log.gateway_repairs += _repair_gateway(items)
                    if params.endorsement_gap is not None:
                        _plant_gap(items, ispec, params, indep, inst)
                    out[(profile, model, cond, inst)] = items
    if spec.gateway_violations:
        _plant_violations(spec, out, log)
    return out


def _force_crossing(law, params, items, partner, shared, indep, gender, log) -> np.ndarray:
    spec = law.spec
    want = uniforms(indep, _C_CROSS, 1)[:, 0] < params.crossing_probability
    ref = _positive(partner.sum(axis=1), spec, gender)
    ok = (_positive(items.sum(axis=1), spec, gender) != ref) == want
    for attempt in range(1, MAX_ATTEMPTS):
        if ok.all():
            break
        redo = np.flatnonzero(~ok)
        cand = _draw(law, shared[redo], indep[redo], attempt)
        hit = (_positive(cand.sum(axis=1), spec, gender) != ref[redo]) == want[redo]
        items[redo[hit]] = cand[hit]
        ok[redo[hit]] = True
    log.crossing_shortfall += int((~ok).sum())
    return items


def _plant_violations(spec: SynthSpec, arrays: dict, log: GenerationLog) -> None:
    remaining = spec.gateway_violations
    for key in _emission_keys(spec):
        if key[3] != "PHQ8":
            continue
        items = arrays[key]
        for row in range(len(items)):
            if remaining == 0:
                return
            rec = items[row]
            if rec.sum() < 10 or gateway_mask(rec[None])[0]:
                continue
            trial = rec.copy()
            for g in (0, 1):
                if trial[g] > 1:
                    j = int(trial[2:].argmin()) + 2
                    if trial[j] > 1:
                        break
                    trial[g], trial[j] = trial[j], trial[g]
            if gateway_mask(trial[None])[0]:
                items[row] = trial
                remaining -= 1
                log.planted_violations += 1
    if remaining:
        raise ValidationError(f"could not plant {remaining} gateway violation(s): too few eligible records")


def _emission_keys(spec: SynthSpec):
    for profile in spec.profiles:
        for model in spec.models:
            for cond in spec.conditions:
                for inst in spec.instruments:
                    yield profile, model, cond, inst


def record_id(spec: SynthSpec, profile, model, cond, iteration: int, inst: str) -> str:
    return f"{model}-{cond.value}-{_profile_key(profile):03d}-{iteration:02d}-{inst}"


def generate(spec: SynthSpec, log: GenerationLog | None = None) -> Dataset:
    """Generate the full design as a validated dataset in canonical cohort order."""
    arrays = generate_arrays(spec, log)
    records = []
    for key in _emission_keys(spec):
        profile, model, cond, inst = key
        for it, row in enumerate(arrays[key].tolist(), start=1):
            records.append(PatientRecord(record_id(spec, profile, model, cond, it, inst),
                                         model, cond, it, profile, inst, tuple(row)))
    return Dataset(records)


# Planted truth --------------------------------------------------------------

@dataclass(frozen=True)
class CellTruth:
    profile: DemographicProfile
    model: str
    condition: Condition
    instrument: str
    gt_mean: float
    gt_sd: float
    model_mean: float
    model_sd: float
    si: float
    mean_offset: float
    copula_distance: float


@dataclass(frozen=True)
class GroupTruth:
    dimension: Dimension
    group: str
    instrument: str
    n: int
    gt_mean: float
    gt_sd: float
    model_mean: float
    model_sd: float
    si: float
    mean_offset: float
    copula_distance: float | None


@dataclass(frozen=True)
class PlantedTruth:
    cells: tuple[CellTruth, ...]
    groups: tuple[GroupTruth, ...]
    expected_gateway_violations: float
    reference_group: str

    def group(self, dimension, group: str, instrument: str = "PHQ8") -> GroupTruth:
        dimension = Dimension.parse(dimension)
        for g in self.groups:
            if g.dimension is dimension and g.group == group and g.instrument == instrument:
                return g
        raise KeyError((dimension.label, group, instrument))


def _mixture(means: np.ndarray, sds: np.ndarray) -> tuple[float, float]:
    mean = float(means.mean())
    var = float((sds ** 2 + means ** 2).mean() - mean ** 2)
    return mean, math.sqrt(max(var, 0.0))


def _cell_law_moments(spec: SynthSpec, profile, model, cond, inst):
    p = spec.params_for(profile, model, cond, inst)
    gt_mean, gt_sd = population_moments(inst, dataclasses.replace(p, variance_factor=1.0, bias_offset=0.0))
    return p, gt_mean, gt_sd, gt_mean + p.bias_offset, p.variance_factor * gt_sd


def _reference_copula(spec: SynthSpec, model, cond, inst) -> np.ndarray | None:
    sel = reference_selector(spec.reference_group)
    for profile in spec.profiles:
        if sel.matches(profile, model, cond):
            return spec.params_for(profile, model, cond, inst).matrix
    return None


def planted_truth(spec: SynthSpec, intersections: Sequence[tuple[str, str]] = ()) -> PlantedTruth:
    """Deterministic summary of what ``generate(spec)`` plants.

    Model moments are those of the compressed law before integer rounding;
    rounding adds at most a quarter point of variance per record.
    """
    cells = []
    expected_violations = 0.0
    for profile, model, cond, inst in _emission_keys(spec):
        p, gm, gs, mm, ms = _cell_law_moments(spec, profile, model, cond, inst)
        ref = _reference_copula(spec, model, cond, inst)
        dist = frobenius_distance(p.matrix, ref) if ref is not None else float("nan")
        cells.append(CellTruth(profile, model, cond, inst, gm, gs, mm, ms, p.variance_factor,
                               p.bias_offset, dist))
        if inst == "PHQ8" and not p.gateway_compliant:
            expected_violations += spec.iterations * float(gateway_mask(_aux_sample(inst, p)).mean())
    expected_violations += spec.gateway_violations

    groups = []
    for inst in spec.instruments:
        inst_cells = [c for c in cells if c.instrument == inst]
        for dim, sel, label in _group_selectors(intersections):
            members = [c for c in inst_cells if sel.matches(c.profile)]
            if not members:
                continue
            gm, gs = _mixture(np.array([c.gt_mean for c in members]), np.array([c.gt_sd for c in members]))
            mm, ms = _mixture(np.array([c.model_mean for c in members]), np.array([c.model_sd for c in members]))
            dists = {round(c.copula_distance, 12) for c in members}
            groups.append(GroupTruth(dim, label, inst, len(members) * spec.iterations, gm, gs, mm, ms,
                                     ms / gs, mm - gm, dists.pop() if len(dists) == 1 else None))
    return PlantedTruth(tuple(cells), tuple(groups), expected_violations, spec.reference_group)


def _group_selectors(intersections):
    for dim in MARGINAL_DIMENSIONS:
        for level in dim.factor:
            yield dim, GroupSelector.of(**{dim.attr: [level]}), level.label
    for a, b in intersections:
        da, db = Dimension.parse(a), Dimension.parse(b)
        for la in da.factor:
            for lb in db.factor:
                label = f"{la.label} + {lb.label}"
                yield Dimension.INTERSECTION, GroupSelector.for_group(Dimension.INTERSECTION, label), label


def reference_baselines(spec: SynthSpec, intersections: Sequence[tuple[str, str]] = (),
                        source: str = "synthetic population law") -> list[BaselineRow]:
    """Baseline rows matching the population law behind ``spec``."""
    truth = planted_truth(spec, intersections)
    return [BaselineRow(g.dimension, g.group, g.instrument, g.gt_mean, g.gt_sd, source)
            for g in truth.groups]


# Spec files -----------------------------------------------------------------

_TOP_KEYS = {"models", "conditions", "instruments", "iterations", "profiles", "rng_seed",
             "reference_group", "defaults", "cohort", "gateway_violations"}


def parse_synth_spec(text: str) -> SynthSpec:
    """Build a spec from TOML text.

    Top-level keys set the design; ``[defaults]`` holds parameters for every
    instrument and ``[defaults.PHQ8]`` per-instrument ones; each ``[[cohort]]``
    block has a ``match`` selector, an optional ``instrument`` and parameters.
    Later blocks win where selectors overlap.
    """
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"synth spec: {exc}") from None
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ValidationError(f"unknown synth spec key(s): {', '.join(sorted(unknown))}")
    kwargs = {k: raw[k] for k in ("models", "conditions", "instruments", "iterations", "rng_seed",
                                  "reference_group", "gateway_violations") if k in raw}
    if "profiles" in raw:
        sel = GroupSelector.parse(raw["profiles"])
        kwargs["profiles"] = tuple(p for p in all_profiles() if sel.matches(p))
    defaults = {}
    for key, value in raw.get("defaults", {}).items():
        if isinstance(value, Mapping):
            defaults[get_instrument(key).id] = dict(value)
        else:
            defaults[key] = value
    kwargs["defaults"] = defaults
    cohorts = []
    for block in raw.get("cohort", []):
        block = dict(block)
        selector = GroupSelector.parse(block.pop("match", ""))
        inst = block.pop("instrument", None)
        cohorts.append(CohortOverride(selector, block, get_instrument(inst).id if inst else None))
    kwargs["cohorts"] = tuple(cohorts)
    return SynthSpec(**kwargs)


def load_synth_spec(path: str | Path) -> SynthSpec:
    return parse_synth_spec(Path(path).read_text(encoding="utf-8"))


def write_synthetic(spec: SynthSpec, records_path: str | Path, baselines_path: str | Path | None = None) -> Dataset:
    ds = generate(spec)
    write_records(ds.records, records_path)
    if baselines_path is not None:
        write_baselines(reference_baselines(spec), baselines_path)
    return ds


# Fixtures -----------------------------------------------------------------

def _items_for_total(total: int, spec: InstrumentSpec) -> tuple[int, ...]:
    # Spread as evenly as possible, filling the gateway items first.
    base, extra = divmod(total, spec.item_count)
    return tuple(base + (1 if j < extra else 0) for j in range(spec.item_count))


def dataset_from_transition_counts(counts, model: str = "fixture") -> Dataset:
    """Matched PHQ-8 pairs realizing a 5x5 severity transition table.

    Pair ``i`` sits on profile ``i % 120`` at iteration ``i // 120 + 1``;
    run-1 records use the clinical condition and run-2 records the personal one.
    Totals cycle through each band so pairs are not all identical.
    """
    counts = np.asarray(counts)
    if counts.shape != (5, 5) or (counts < 0).any() or not np.issubdtype(counts.dtype, np.integer):
        raise ValidationError("transition counts must be a 5x5 grid of non-negative integers")
    spec = get_instrument("PHQ8")
    profiles = all_profiles()
    records = []
    i = 0
    for a in range(5):
        for b in range(5):
            lo_a, hi_a = PHQ8_BANDS[a]
            lo_b, hi_b = PHQ8_BANDS[b]
            for c in range(int(counts[a, b])):
                t1 = lo_a + c % (hi_a - lo_a + 1)
                t2 = lo_b + c % (hi_b - lo_b + 1)
                profile, it = profiles[i % 120], i // 120 + 1
                for cond, total in ((Condition.CLINICAL, t1), (Condition.PERSONAL, t2)):
                    records.append(PatientRecord(f"pair{i:05d}-{cond.value}", model, cond, it, profile,
                                                 "PHQ8", _items_for_total(total, spec)))
                i += 1
    return Dataset(records)


REPLICA_MODELS = ("model-a", "model-b", "model-c", "model-d")


def replica_spec(rng_seed: int = 20240101) -> SynthSpec:
    """Full factorial PHQ-8 design: 120 profiles, 4 models, 2 framings, 30 iterations.

    Cohort targets carry demographic gradients and each model compresses
    variance to a different degree, so every audit section has signal.
    """
    cohorts = [
        CohortOverride(GroupSelector.parse("model=model-a"), {"variance_factor": 0.86}),
        CohortOverride(GroupSelector.parse("model=model-b"), {"variance_factor": 0.84}),
        CohortOverride(GroupSelector.parse("model=model-c"), {"variance_factor": 0.43}),
        CohortOverride(GroupSelector.parse("model=model-d"), {"variance_factor": 0.38}),
        CohortOverride(GroupSelector.parse("ses=Low"), {"target_mean": 9.0, "bias_offset": 2.0}),
        CohortOverride(GroupSelector.parse("ses=High"), {"target_mean": 5.0, "bias_offset": 1.0}),
        CohortOverride(GroupSelector.parse("gender=Trans Woman"), {"target_mean": 12.0, "bias_offset": -2.0}),
        CohortOverride(GroupSelector.parse("race=Asian"), {"copula": 0.3}),
        CohortOverride(GroupSelector.parse("condition=personal"), {"bias_offset": 1.5}),
    ]
    return SynthSpec(models=REPLICA_MODELS, iterations=30, rng_seed=rng_seed,
                     defaults={"PHQ8": {"target_mean": 7.0, "gateway_compliant": True}},
                     cohorts=tuple(cohorts))
