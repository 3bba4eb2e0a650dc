"""Kernel-sensitivity metrics, the per-iteration signal, and line schedules."""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable

import numpy as np

COUNT_METRICS = ("PL", "PS", "PR", "FE", "DC")
_KIND_OF = {
    "PL": "parallel_for",
    "PS": "parallel_scan",
    "PR": "parallel_reduce",
    "FE": "fence",
    "DC": "deep_copy",
}
FLOOR_SCALE = 1e-4


class ZeroLines(ValueError):
    pass


class IndexOutOfRange(IndexError):
    pass


@dataclass(frozen=True)
class MetricVector:
    ML: float = 0.0
    PL: int = 0
    PS: int = 0
    PR: int = 0
    FE: int = 0
    DC: int = 0

    def __post_init__(self):
        if not 0.0 <= self.ML <= 1.0:
            raise ValueError(f"ML must lie in [0, 1], got {self.ML}")
        for name in COUNT_METRICS:
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def as_dict(self) -> dict:
        return {"ML": self.ML, **{m: getattr(self, m) for m in COUNT_METRICS}}


def compute_metrics(events: Iterable) -> MetricVector:
    """Count kernel events and the fraction of leaked variables.

    A variable leaks when its allocated bytes differ from its freed bytes.
    """
    kinds: Counter = Counter()
    alloc: dict = defaultdict(int)
    dealloc: dict = defaultdict(int)
    for ev in events:
        kinds[ev.kind] += 1
        if ev.kind == "alloc":
            alloc[ev.variable] += ev.bytes
        elif ev.kind == "dealloc":
            dealloc[ev.variable] += ev.bytes
    leaked = sum(1 for var, n in alloc.items() if n != dealloc.get(var, 0))
    ml = leaked / len(alloc) if alloc else 0.0
    return MetricVector(ml, *(kinds[_KIND_OF[m]] for m in COUNT_METRICS))


def compute_signal(prev: MetricVector, cur: MetricVector) -> float:
    total = prev.ML - cur.ML
    for m in COUNT_METRICS:
        a, b = getattr(prev, m), getattr(cur, m)
        total += (b - a) / max(a, b, 1)
    signal = total / 6 / 2
    return min(0.5, max(-0.5, signal))


@dataclass(frozen=True)
class MutationSchedule:
    probs: tuple

    def __len__(self) -> int:
        return len(self.probs)

    @property
    def floor(self) -> float:
        return FLOOR_SCALE / len(self.probs)

    def digest(self) -> str:
        return ",".join(f"{p:.6g}" for p in self.probs)


def initial_schedule(n: int) -> MutationSchedule:
    if n < 1:
        raise ZeroLines("a schedule needs at least one line")
    return MutationSchedule(tuple([1.0 / n] * n))


def update_schedule(s: MutationSchedule, line: int, signal: float) -> MutationSchedule:
    """Scale one line's probability by ``1 + signal`` and renormalise.

    Every other line is rescaled by a common factor; no entry falls below
    ``1e-4 / n``.
    """
    n = len(s.probs)
    if not 0 <= line < n:
        raise IndexOutOfRange(f"line {line} outside schedule of {n}")
    if signal == 0.0:
        return s
    p = np.array(s.probs, dtype=np.float64)
    p[line] *= 1.0 + signal
    p /= p.sum()
    floor = FLOOR_SCALE / n
    low = p < floor
    while low.any() and not low.all():
        # pin starved lines at the floor and share the rest proportionally
        free = ~low
        p[low] = floor
        p[free] *= (1.0 - floor * low.sum()) / p[free].sum()
        low = low | (p < floor)
        if not (p[~low] < floor).any() and (p[low] == floor).all():
            break
    p /= math.fsum(p)
    return MutationSchedule(tuple(float(x) for x in p))

