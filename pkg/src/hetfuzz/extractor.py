"""Trace-based subsystem extraction.

Seeds are executed with first-hit unit logging; every handler or kernel
that no seed reached is stubbed, so a later run that enters it stops with
``StubReached``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from hetfuzz.minisim import UNITS, BackendConfig, run_simulation


class EmptyTrace(ValueError):
    pass


class SeedFailed(RuntimeError):
    """A seed errored during tracing; its partial trace was still merged."""

    def __init__(self, log: "TraceLog", failures: dict):
        super().__init__(f"{len(failures)} seed(s) failed during tracing: {sorted(failures)}")
        self.log = log
        self.failures = failures


@dataclass
class TraceLog:
    executed_units: set = field(default_factory=set)
    per_seed: dict = field(default_factory=dict)
    failed: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SubsystemManifest:
    kept: frozenset
    stubbed: frozenset
    environment: str = "host"

    @property
    def universe(self) -> frozenset:
        return self.kept | self.stubbed

    @property
    def unit_reduction(self) -> float:
        return len(self.stubbed) / len(self.universe) if self.universe else 0.0

    def reduction(self) -> dict:
        handlers = [u for u in self.universe if u.startswith("cmd.")]
        kernels = [u for u in self.universe if u.startswith("kern.")]
        return {
            "units": self.unit_reduction,
            "handlers": _frac(self.stubbed, handlers),
            "kernels": _frac(self.stubbed, kernels),
        }

    def to_json(self) -> str:
        doc = {
            "environment": self.environment,
            "kept": sorted(self.kept),
            "stubbed": sorted(self.stubbed),
            "reduction": self.reduction(),
            "counts": {"kept": len(self.kept), "stubbed": len(self.stubbed), "universe": len(self.universe)},
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "SubsystemManifest":
        doc = json.loads(text)
        kept, stubbed = frozenset(doc["kept"]), frozenset(doc["stubbed"])
        if kept & stubbed:
            raise ValueError("manifest lists units as both kept and stubbed")
        return cls(kept, stubbed, doc.get("environment", "host"))


def _frac(stubbed, units) -> float:
    return sum(1 for u in units if u in stubbed) / len(units) if units else 0.0


def trace_run(seeds: Sequence, cfg: BackendConfig, strict: bool = False) -> TraceLog:
    """Execute every seed and merge the executed units.

    Failed seeds are recorded in ``log.failed``; with ``strict`` a
    :class:`SeedFailed` carrying the merged log is raised afterwards.
    """
    log = TraceLog()
    for i, seed in enumerate(seeds):
        report = run_simulation(seed, cfg)
        units = set(report.covered)
        log.per_seed[i] = units
        log.executed_units |= units
        if report.status != "completed":
            log.failed[i] = f"{report.error_text} ({report.error_location})"
    if strict and log.failed:
        raise SeedFailed(log, log.failed)
    return log


def build_subsystem(log: TraceLog, universe=UNITS, environment: str = "host") -> SubsystemManifest:
    if not log.executed_units:
        raise EmptyTrace("trace log is empty")
    kept = frozenset(log.executed_units) & frozenset(universe)
    return SubsystemManifest(kept, frozenset(universe) - kept, environment)


def save_manifest(manifest: SubsystemManifest, path) -> None:
    Path(path).write_text(manifest.to_json(), encoding="utf-8")


def load_manifest(path) -> SubsystemManifest:
    return SubsystemManifest.from_json(Path(path).read_text(encoding="utf-8"))
