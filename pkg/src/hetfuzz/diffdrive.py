"""Differential execution of one script on two backend configurations."""

from __future__ import annotations

import difflib
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from hetfuzz.minisim import BackendConfig, ExecutionReport, run_simulation

NORMS = ("L1", "L2", "Max")
DEFAULT_NORM = "Max"
DEFAULT_THRESHOLD = 1e-6
# relative tolerance for matching checkpoint fingerprints between backends
CHECKPOINT_RTOL = 1e-8

AGREE = "agree"
NUMERIC = "numeric_divergence"
CRASH_MISMATCH = "crash_mismatch"
BOTH_SAME = "both_crash_same"
BOTH_DIFF = "both_crash_diff"
VERDICTS = (AGREE, NUMERIC, CRASH_MISMATCH, BOTH_SAME, BOTH_DIFF)


class LengthMismatch(ValueError):
    pass


class EmptyOutputs(ValueError):
    pass


class DiffTimeout(Exception):
    """One of the two runs hit its timeout; ``result`` holds the partial comparison."""

    def __init__(self, result: "DiffResult"):
        super().__init__("differential run timed out")
        self.result = result


def parse_norm(name: str) -> str:
    for kind in NORMS:
        if kind.lower() == name.lower():
            return kind
    raise ValueError(f"unknown norm {name!r}; expected one of {', '.join(NORMS)}")


def norm(a: Sequence[float], b: Sequence[float], kind: str = DEFAULT_NORM) -> float:
    if len(a) != len(b):
        raise LengthMismatch(f"series lengths differ: {len(a)} vs {len(b)}")
    diffs = [abs(x - y) for x, y in zip(a, b)]
    if kind == "L1":
        return math.fsum(diffs)
    if kind == "L2":
        return math.sqrt(math.fsum(d * d for d in diffs))
    if kind == "Max":
        return max(diffs, default=0.0)
    raise ValueError(f"unknown norm kind {kind!r}")


@dataclass
class DiffResult:
    verdict: str
    per_column_norms: dict
    threshold: float
    norm_kind: str
    reports: tuple
    dedup_key: tuple
    diverging_columns: tuple = ()
    first_divergence: Optional[str] = None
    script_text: str = ""

    @property
    def found(self) -> bool:
        """True when the backends behaved differently.

        Identical failures on both sides are not platform divergence.
        """
        return self.verdict not in (AGREE, BOTH_SAME)

    def site_units(self) -> set:
        """Units named by the dedup key and the first diverging checkpoint."""
        units = set()
        if self.first_divergence:
            units.add(self.first_divergence)
        for r in self.reports:
            if r.error_location:
                units.add(r.error_location.rsplit(":", 1)[0])
        return units

    def record(self) -> dict:
        a, b = self.reports
        return {
            "verdict": self.verdict,
            "norm": self.norm_kind,
            "threshold": self.threshold,
            "per_column_norms": {c: _finite(v) for c, v in self.per_column_norms.items()},
            "diverging_columns": list(self.diverging_columns),
            "first_divergence": self.first_divergence,
            "dedup_key": list(self.dedup_key),
            "status": [a.status, b.status],
            "error_location": [a.error_location, b.error_location],
            "error_text": [a.error_text, b.error_text],
        }


def first_divergence(ra: ExecutionReport, rb: ExecutionReport) -> Optional[str]:
    """Unit of the first checkpoint whose fingerprints disagree."""
    for (ua, sa, va), (ub, sb, vb) in zip(ra.checkpoints, rb.checkpoints):
        if ua != ub or sa != sb:
            return ub
        if not (abs(va - vb) <= CHECKPOINT_RTOL * max(1.0, abs(va))):
            return ub
    la, lb = len(ra.checkpoints), len(rb.checkpoints)
    if la != lb:
        longer = ra if la > lb else rb
        return longer.checkpoints[min(la, lb)][0]
    return None


def compare_outputs(
    ra: ExecutionReport,
    rb: ExecutionReport,
    kind: str = DEFAULT_NORM,
    threshold: float = DEFAULT_THRESHOLD,
) -> DiffResult:
    """Compare two reports column by column on their common step prefix.

    Each column is scaled by ``max(1, max|a|)`` before the norm so that one
    threshold fits all columns.  ``ra`` is the reference run.
    """
    if kind not in NORMS:
        raise ValueError(f"unknown norm kind {kind!r}")
    if threshold < 0 or not math.isfinite(threshold):
        raise ValueError("threshold must be a finite non-negative number")
    errored = [r.status != "completed" for r in (ra, rb)]
    if not ra.thermo and not rb.thermo and not any(errored):
        raise EmptyOutputs("neither run produced output rows")

    norms: dict = {}
    n = 0
    for ta, tb in zip(ra.thermo, rb.thermo):
        if ta["step"] != tb["step"]:
            break
        n += 1
    cols = [c for c in ra.columns if c in rb.columns]
    for c in cols:
        a = [row.get(c, 0.0) for row in ra.thermo[:n]]
        b = [row.get(c, 0.0) for row in rb.thermo[:n]]
        scale = max(1.0, max((abs(x) for x in a if math.isfinite(x)), default=1.0))
        av = [x / scale for x in a]
        bv = [x / scale for x in b]
        value = norm(av, bv, kind)
        norms[c] = value if not math.isnan(value) else math.inf
    diverging = tuple(c for c in cols if not norms[c] <= threshold)
    div_unit = first_divergence(ra, rb)

    if not any(errored):
        if len(ra.thermo) != len(rb.thermo) or n != len(ra.thermo):
            diverging = tuple(sorted(set(diverging) | {"step"}, key=_col_order))
            norms.setdefault("step", math.inf)
        verdict = NUMERIC if diverging else AGREE
        key = (NUMERIC, diverging, div_unit or "") if diverging else ()
    elif all(errored):
        same = _loc(ra) == _loc(rb)
        verdict = BOTH_SAME if same else BOTH_DIFF
        key = (verdict, _loc(ra), _loc(rb))
    else:
        verdict = CRASH_MISMATCH
        key = (CRASH_MISMATCH, _loc(ra), _loc(rb))
    return DiffResult(
        verdict=verdict,
        per_column_norms=norms,
        threshold=threshold,
        norm_kind=kind,
        reports=(ra, rb),
        dedup_key=key,
        diverging_columns=diverging,
        first_divergence=div_unit if verdict != AGREE else None,
    )


def _col_order(c: str) -> int:
    from hetfuzz.minisim.engine import THERMO_COLUMNS

    return THERMO_COLUMNS.index(c) if c in THERMO_COLUMNS else len(THERMO_COLUMNS)


def _loc(r: ExecutionReport) -> str:
    if r.status == "completed":
        return "completed"
    if r.status == "timeout":
        return "timeout"
    return r.error_location


def run_differential(
    script,
    cfg_a: BackendConfig,
    cfg_b: BackendConfig,
    kind: str = DEFAULT_NORM,
    threshold: float = DEFAULT_THRESHOLD,
    timeout: Optional[float] = None,
    stubbed=frozenset(),
) -> DiffResult:
    """Run ``script`` on both configurations in this process and compare.

    Raises DiffTimeout when either run exceeds ``timeout`` seconds.
    """
    if isinstance(script, str):
        text = script
    elif isinstance(script, (bytes, bytearray)):
        text = bytes(script).decode("latin-1")
    else:
        text = script.render()
    ra = run_simulation(script, cfg_a, timeout, stubbed)
    rb = run_simulation(script, cfg_b, timeout, stubbed)
    try:
        res = compare_outputs(ra, rb, kind, threshold)
    except EmptyOutputs:
        # scripts without a run command produce no rows; nothing to compare
        res = DiffResult(AGREE, {}, threshold, kind, (ra, rb), ())
    res.script_text = text
    if "timeout" in (ra.status, rb.status):
        raise DiffTimeout(res)
    return res


def merged_coverage(res: DiffResult) -> frozenset:
    a, b = res.reports
    return a.covered | b.covered


def dedupe_bugs(findings: Sequence[DiffResult]) -> list[DiffResult]:
    """One representative per dedup key, keeping the shortest script."""
    best: dict = {}
    order: list = []
    for f in findings:
        if not f.found:
            continue
        key = f.dedup_key
        if key not in best:
            best[key] = f
            order.append(key)
        elif _size(f) < _size(best[key]):
            best[key] = f
    return [best[k] for k in order]


def _size(f: DiffResult) -> tuple:
    text = f.script_text
    return (text.count("\n"), len(text), text)


def write_bug_dir(res: DiffResult, path, extra: Optional[dict] = None) -> Path:
    """Store the reproducer, both logs, their unified diff and the verdict."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    a, b = res.reports
    log_a, log_b = a.thermo_text(), b.thermo_text()
    (out / "script.in").write_text(res.script_text, encoding="utf-8")
    (out / f"log.{a.backend}.txt").write_text(log_a, encoding="utf-8")
    (out / f"log.{b.backend}.txt").write_text(log_b, encoding="utf-8")
    diff = difflib.unified_diff(
        log_a.splitlines(keepends=True),
        log_b.splitlines(keepends=True),
        fromfile=f"log.{a.backend}.txt",
        tofile=f"log.{b.backend}.txt",
    )
    (out / "log.diff").write_text("".join(diff), encoding="utf-8")
    record = res.record()
    if extra:
        record.update(extra)
    (out / "verdict.json").write_text(json.dumps(record, indent=2, sort_keys=True, default=_json_default) + "\n", encoding="utf-8")
    return out


def _finite(v: float):
    return v if math.isfinite(v) else repr(v)


def _json_default(x):
    if isinstance(x, (set, frozenset)):
        return sorted(x)
    raise TypeError(type(x))
