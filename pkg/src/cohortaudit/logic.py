"""PHQ-8 gateway coherence check."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import Dataset


@dataclass(frozen=True)
class LogicViolation:
    record_id: str
    total: int
    item1: int
    item2: int


@dataclass(frozen=True)
class GatewayResult:
    count: int
    audited: int
    violations: tuple[LogicViolation, ...]

    @property
    def rate(self) -> float:
        return self.count / self.audited if self.audited else 0.0

    def to_json(self) -> dict:
        return {"count": self.count, "audited": self.audited, "rate": self.rate,
                "violations": [v.record_id for v in self.violations]}


def violates_gateway(items) -> bool:
    """Moderate-or-worse total without depressed mood or anhedonia at 2 or above."""
    return sum(items) >= 10 and items[0] <= 1 and items[1] <= 1


def gateway_violations(dataset: Dataset) -> GatewayResult:
    frame = dataset.frame("PHQ8")
    if len(frame) == 0:
        return GatewayResult(0, 0, ())
    items = frame.items
    bad = np.flatnonzero((frame.totals >= 10) & (items[:, 0] <= 1) & (items[:, 1] <= 1))
    found = tuple(LogicViolation(frame.records[i].record_id, int(frame.totals[i]),
                                 int(items[i, 0]), int(items[i, 1])) for i in bad)
    return GatewayResult(len(found), len(frame), found)
