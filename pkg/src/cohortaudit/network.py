"""Symptom-network divergence against a split-half noise floor."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .domain import GroupSelector, ValidationError, get_instrument, selector_for_label
from .ingest import Dataset
from .seeding import rng_for
from .statkit import StatError, correlation_matrix, frobenius_distance, p_from_z


class NetworkError(ValidationError):
    pass


def _selector(group) -> GroupSelector:
    return group if isinstance(group, GroupSelector) else selector_for_label(group)


def group_items(dataset: Dataset, group, instrument: str = "PHQ8") -> np.ndarray:
    frame = dataset.frame(instrument)
    return frame.items[frame.mask(_selector(group))].astype(float)


def group_matrix(dataset: Dataset, group, instrument: str = "PHQ8", min_n: int = 30) -> np.ndarray:
    """Item correlation matrix for a group; raises :class:`NetworkError` when unusable."""
    items = group_items(dataset, group, instrument)
    if items.shape[0] < min_n:
        raise NetworkError(f"group {_describe(group)} has n={items.shape[0]} < {min_n}")
    try:
        return correlation_matrix(items)
    except StatError as exc:
        raise NetworkError(f"group {_describe(group)}: {exc}") from None


def _describe(group) -> str:
    return group.describe() if isinstance(group, GroupSelector) else str(group)


@dataclass(frozen=True)
class NoiseFloor:
    iterations: int
    reference_group: str
    reference_n: int
    mean_distance: float
    sd_distance: float
    ceiling95: float
    seed: int
    instrument: str = "PHQ8"
    redraws: int = 0

    def to_json(self) -> dict:
        return asdict(self)


def _has_constant_column(x: np.ndarray) -> bool:
    return bool(np.any(x.max(axis=0) == x.min(axis=0)))


def _split_distance(items: np.ndarray, seed: int, iteration: int, max_attempts: int) -> tuple[float, int]:
    n = items.shape[0]
    for attempt in range(max_attempts):
        rng = rng_for(seed, iteration, attempt)
        idx = rng.permutation(n)
        if n % 2:
            idx = idx[1:]  # the dropped record is itself random
        half = idx.size // 2
        a, b = items[idx[:half]], items[idx[half:]]
        if _has_constant_column(a) or _has_constant_column(b):
            continue
        return frobenius_distance(correlation_matrix(a), correlation_matrix(b)), attempt
    return float("nan"), max_attempts


def noise_floor(dataset: Dataset, reference_group, iterations: int = 1000, seed: int = 0,
                instrument: str = "PHQ8", workers: int = 1, min_half: int = 30) -> NoiseFloor:
    """Split-half Frobenius distances within the reference group.

    Iteration ``i`` draws its partition from a generator keyed by ``(seed, i,
    attempt)``, so the result does not depend on the worker count. Halves with
    a constant item are redrawn; more than ``10 * iterations`` redraws abort.
    """
    if iterations < 1:
        raise ValidationError("noise floor needs at least one iteration")
    inst = get_instrument(instrument).id
    items = group_items(dataset, reference_group, inst)
    n = items.shape[0]
    if n < 2 * min_half:
        raise NetworkError(f"reference group {_describe(reference_group)} has n={n}; "
                           f"need {2 * min_half} for two halves of {min_half}")
    budget = 10 * iterations
    limit = budget + 1

    def run(block: range) -> list[tuple[float, int]]:
        out = []
        for i in block:
            out.append(_split_distance(items, seed, i, limit))
            if np.isnan(out[-1][0]):
                break  # the whole floor is going to abort
        return out

    blocks = [range(lo, min(lo + 64, iterations)) for lo in range(0, iterations, 64)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = [r for chunk in pool.map(run, blocks) for r in chunk]
    else:
        results = [r for block in blocks for r in run(block)]
    redraws = sum(r[1] for r in results)
    if redraws > budget or any(np.isnan(r[0]) for r in results):
        raise NetworkError(f"noise floor aborted: {redraws} redraws exceed {budget}")
    d = np.array([r[0] for r in results])
    sd = float(d.std(ddof=1)) if d.size > 1 else 0.0
    return NoiseFloor(iterations, _describe(reference_group), n, float(d.mean()), sd,
                      float(np.quantile(d, 0.95, method="linear")), seed, inst, redraws)


@dataclass(frozen=True)
class DivergenceResult:
    comparison: str
    d_f: float
    z: float
    p: float
    exceeds_ceiling: bool
    group_n: int
    reference_n: int

    def to_row(self) -> dict:
        return asdict(self)


def divergence_from_matrices(comparison: str, group_m: np.ndarray, ref_m: np.ndarray, floor: NoiseFloor,
                             group_n: int, reference_n: int) -> DivergenceResult:
    if not floor.sd_distance > 0:
        raise NetworkError("noise floor has zero spread; z undefined")
    d = frobenius_distance(group_m, ref_m)
    z = (d - floor.mean_distance) / floor.sd_distance
    return DivergenceResult(comparison, d, z, p_from_z(z), d > floor.ceiling95, group_n, reference_n)


def divergence(dataset: Dataset, group, reference_group, floor: NoiseFloor, instrument: str = "PHQ8",
               min_n: int = 30) -> DivergenceResult:
    """Distance between the group's and the full reference's matrices, scored against the floor."""
    gm = group_matrix(dataset, group, instrument, min_n)
    rm = group_matrix(dataset, reference_group, instrument, min_n)
    gn = group_items(dataset, group, instrument).shape[0]
    rn = group_items(dataset, reference_group, instrument).shape[0]
    return divergence_from_matrices(f"{_describe(group)} vs {_describe(reference_group)}",
                                    gm, rm, floor, gn, rn)
