"""Aggregate outcome type shared by the mapping methods and record ingestion."""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DomainError

SCALES = ("bmi", "zbmi", "percentile")


@dataclass(frozen=True)
class AggregateOutcome:
    """Arm-level (mean, SD) on one scale; percentiles on [0, 1]."""

    scale: str
    mean: float
    sd: float
    n: int | None = None

    def __post_init__(self):
        if self.scale not in SCALES:
            raise DomainError(f"unknown scale {self.scale!r}; expected one of {SCALES}")
        if not (math.isfinite(self.mean) and math.isfinite(self.sd)) or self.sd < 0:
            raise DomainError(f"invalid {self.scale} outcome: mean={self.mean}, sd={self.sd}")
