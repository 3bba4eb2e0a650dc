"""Fuzzing campaigns: line selection, mutation, differential checks, reports.

Three modes share one loop:

``kernel_sensitive``
    grammar mutation of one line; the kernel-event signal of the device
    run re-weights that line's selection probability.
``grammar_only``
    the same mutation with a fixed uniform schedule.
``random_bytes``
    stacked byte-level havoc on the raw seed text.
"""

from __future__ import annotations

import bisect
import hashlib
import itertools
import json
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

from hetfuzz.diffdrive import (
    DEFAULT_NORM,
    DEFAULT_THRESHOLD,
    DiffResult,
    DiffTimeout,
    dedupe_bugs,
    run_differential,
)
from hetfuzz.extractor import SubsystemManifest
from hetfuzz.grammar import Grammar, GrammarError, command_defaults, mutate_line
from hetfuzz.minisim import UNITS, BackendConfig, Script, parse_script
from hetfuzz.minisim.bugs import get_bug
from hetfuzz.profiler import (
    MetricVector,
    MutationSchedule,
    compute_metrics,
    compute_signal,
    initial_schedule,
    update_schedule,
)

MODES = ("kernel_sensitive", "grammar_only", "random_bytes")
DEFAULT_RUN_TIMEOUT = 2.0
MAX_HAVOC = 4


class ConfigError(ValueError):
    pass


@dataclass
class CampaignConfig:
    seeds: Sequence[str]
    grammar: Grammar
    manifest: Optional[SubsystemManifest] = None
    env_a: BackendConfig = field(default_factory=lambda: BackendConfig("host"))
    env_b: BackendConfig = field(default_factory=lambda: BackendConfig("device"))
    norm: str = DEFAULT_NORM
    threshold: float = DEFAULT_THRESHOLD
    rng_seed: int = 0
    budget: int = 100
    wall_clock: Optional[float] = None
    run_timeout: float = DEFAULT_RUN_TIMEOUT
    mode: str = "kernel_sensitive"
    workers: int = 1
    seed_names: Optional[Sequence[str]] = None

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        if self.budget < 0:
            raise ConfigError("budget must be non-negative")
        if self.env_a == self.env_b:
            raise ConfigError("the two environments must differ")
        if self.threshold < 0:
            raise ConfigError("threshold must be non-negative")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if not self.seeds:
            raise ConfigError("no seed scripts")

    @property
    def stubbed(self) -> frozenset:
        return self.manifest.stubbed if self.manifest else frozenset()

    @property
    def denominator(self) -> frozenset:
        return self.manifest.kept if self.manifest else UNITS

    @property
    def active_bugs(self) -> frozenset:
        return self.env_a.bug_set | self.env_b.bug_set

    def header(self) -> dict:
        """Everything replay needs to re-execute a recorded iteration."""
        doc = {
            "type": "campaign",
            "mode": self.mode,
            "rng_seed": self.rng_seed,
            "budget": self.budget,
            "norm": self.norm,
            "threshold": self.threshold,
            "run_timeout": self.run_timeout,
            "env_a": {"backend": self.env_a.backend, "bugs": sorted(self.env_a.bug_set)},
            "env_b": {"backend": self.env_b.backend, "bugs": sorted(self.env_b.bug_set)},
            "stubbed": sorted(self.stubbed),
            "seeds": list(self.names()),
        }
        doc["config_digest"] = digest(json.dumps(doc, sort_keys=True) + "".join(self.seeds))
        return doc

    def names(self) -> list[str]:
        if self.seed_names:
            return list(self.seed_names)
        return [f"seed_{i + 1}" for i in range(len(self.seeds))]


@dataclass
class CampaignReport:
    mode: str
    rng_seed: int
    iterations: int
    valid_count: int
    invalid_count: int
    stub_hits: int
    timeouts: int
    covered: frozenset
    denominator: frozenset
    lc_percent: float
    cpi: float
    unique_bugs: list
    bp: frozenset
    config_digest: str = ""
    transcript: list = field(default_factory=list)

    @property
    def ubc(self) -> int:
        return len(self.unique_bugs)

    def summary(self) -> dict:
        return {
            "mode": self.mode,
            "rng_seed": self.rng_seed,
            "config_digest": self.config_digest,
            "iterations": self.iterations,
            "valid": self.valid_count,
            "invalid": self.invalid_count,
            "stub_hits": self.stub_hits,
            "timeouts": self.timeouts,
            "covered": len(self.covered & self.denominator),
            "denominator": len(self.denominator),
            "LC_percent": round(self.lc_percent, 6),
            "CPI": round(self.cpi, 9),
            "UBC": self.ubc,
            "BP": sorted(self.bp),
            "unique_bugs": [
                {"dedup_key": list(b.dedup_key), "verdict": b.verdict, "first_divergence": b.first_divergence}
                for b in self.unique_bugs
            ],
        }


def digest(text) -> str:
    if isinstance(text, str):
        text = text.encode("utf-8")
    return hashlib.sha256(text).hexdigest()[:16]


# --------------------------------------------------------------------------
# single steps


def select_line(schedule: MutationSchedule, rng: random.Random) -> int:
    """Draw a line index from the schedule's categorical distribution."""
    cum = list(itertools.accumulate(schedule.probs))
    u = rng.random() * cum[-1]
    return min(bisect.bisect_right(cum, u), len(cum) - 1)


def havoc(data: bytes, rng: random.Random) -> bytes:
    """Apply 1 to 4 stacked bit flips, byte inserts or integer tweaks."""
    buf = bytearray(data)
    for _ in range(rng.randint(1, MAX_HAVOC)):
        op = rng.randrange(3)
        if op == 0 and buf:
            i = rng.randrange(len(buf))
            buf[i] ^= 1 << rng.randrange(8)
        elif op == 1:
            buf.insert(rng.randrange(len(buf) + 1), rng.randrange(256))
        else:
            _tweak_integer(buf, rng)
    return bytes(buf)


def _tweak_integer(buf: bytearray, rng: random.Random) -> None:
    digits = [i for i, b in enumerate(buf) if 0x30 <= b <= 0x39]
    if not digits:
        return
    i = rng.choice(digits)
    j = i
    while j + 1 < len(buf) and 0x30 <= buf[j + 1] <= 0x39:
        j += 1
    while i > 0 and 0x30 <= buf[i - 1] <= 0x39:
        i -= 1
    value = int(buf[i : j + 1])
    value = rng.choice((value + 1, value - 1, value * 2, value // 2, 0, 2**31 - 1, value + rng.randint(-35, 35)))
    buf[i : j + 1] = str(value).encode()


@dataclass
class SeedState:
    index: int
    text: str
    script: Optional[Script]
    schedule: Optional[MutationSchedule]
    defaults: dict
    prev_metrics: Optional[MetricVector] = None


def fuzz_iteration(state: SeedState, rng: random.Random, cfg: CampaignConfig) -> dict:
    """Mutate, run both environments, update the schedule; return a record."""
    rec: dict = {"seed": state.index}
    if cfg.mode == "random_bytes":
        data = havoc(state.text.encode("utf-8"), rng)
        payload = data
        rec["line"] = None
        rec["script"] = data.decode("latin-1")
        rec["encoding"] = "latin-1"
    else:
        line_no = select_line(state.schedule, rng)
        old = state.script.lines[line_no]
        try:
            new = mutate_line(cfg.grammar, old, rng, state.defaults)
        except GrammarError:
            new = old  # unknown command or missing base: preserved verbatim
        mutant = state.script.replace(new)
        payload = mutant.render()
        rec["line"] = line_no
        rec["before"] = old.render()
        rec["after"] = new.render()
        rec["script"] = payload
    try:
        res = run_differential(payload, cfg.env_a, cfg.env_b, cfg.norm, cfg.threshold, cfg.run_timeout, cfg.stubbed)
    except DiffTimeout as exc:
        rec.update(outcome="timeout", verdict=exc.result.verdict, valid=False)
        rec["schedule"] = state.schedule.digest() if state.schedule else None
        return rec

    ra, rb = res.reports
    stub = "stub" in (ra.error_kind, rb.error_kind)
    valid = not stub and ra.valid and rb.valid
    rec["outcome"] = "stub" if stub else ("valid" if valid else "invalid")
    rec["valid"] = valid
    rec["verdict"] = res.verdict
    rec["dedup_key"] = list(res.dedup_key)
    rec["first_divergence"] = res.first_divergence
    rec["_covered"] = ra.covered | rb.covered
    rec["credited"] = sorted(credit(res, cfg.active_bugs)) if res.found else []

    metrics = compute_metrics(rb.events)
    rec["metrics"] = metrics.as_dict()
    signal = None
    if cfg.mode == "kernel_sensitive":
        if state.prev_metrics is not None:
            signal = compute_signal(state.prev_metrics, metrics)
            state.schedule = update_schedule(state.schedule, rec["line"], signal)
        state.prev_metrics = metrics
    rec["signal"] = signal
    rec["schedule"] = state.schedule.digest() if state.schedule else None
    if cfg.mode != "random_bytes" and valid and not res.found:
        state.script = parse_script(payload)
    rec["_result"] = res
    return rec


def credit(res: DiffResult, active) -> set:
    """Benchmark bugs whose injected site matches the finding."""
    units = res.site_units()
    return {b for b in active if get_bug(b).injected_site in units}


# --------------------------------------------------------------------------
# campaigns


def _run_seed(cfg: CampaignConfig, index: int, text: str, all_lines) -> list[dict]:
    rng = random.Random(f"{cfg.rng_seed}:{index}")
    if cfg.mode == "random_bytes":
        state = SeedState(index, text, None, None, {})
    else:
        script = parse_script(text)
        state = SeedState(index, text, script, initial_schedule(len(script)), command_defaults(all_lines))
    records = []
    start = time.monotonic()
    for it in range(cfg.budget):
        if cfg.wall_clock is not None and time.monotonic() - start > cfg.wall_clock:
            break
        rec = fuzz_iteration(state, rng, cfg)
        rec["iter"] = it
        records.append(rec)
    return records


def run_campaign(cfg: CampaignConfig) -> CampaignReport:
    cfg.validate()
    all_lines = [line for text in cfg.seeds for line in parse_script(text)]
    jobs = list(enumerate(cfg.seeds))
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            per_seed = list(pool.map(lambda job: _run_seed(cfg, job[0], job[1], all_lines), jobs))
    else:
        per_seed = [_run_seed(cfg, i, text, all_lines) for i, text in jobs]

    covered: set = set()
    valid = invalid = stubs = timeouts = 0
    findings: list = []
    bp: set = set()
    transcript: list = []
    names = cfg.names()
    for records in per_seed:
        for rec in records:
            res = rec.pop("_result", None)
            covered.update(rec.pop("_covered", ()))
            outcome = rec["outcome"]
            valid += outcome == "valid"
            invalid += outcome == "invalid"
            stubs += outcome == "stub"
            timeouts += outcome == "timeout"
            if res is not None and res.found:
                findings.append(res)
                bp.update(rec["credited"])
            rec["seed_name"] = names[rec["seed"]]
            transcript.append(rec)
    header = cfg.header()
    lc, cpi, unique, bp_set = compute_report_metrics(
        {"covered": covered, "denominator": cfg.denominator, "valid_count": valid, "findings": findings, "credited": bp}
    )
    return CampaignReport(
        mode=cfg.mode,
        rng_seed=cfg.rng_seed,
        iterations=len(transcript),
        valid_count=valid,
        invalid_count=invalid,
        stub_hits=stubs,
        timeouts=timeouts,
        covered=frozenset(covered),
        denominator=cfg.denominator,
        lc_percent=lc,
        cpi=cpi,
        unique_bugs=unique,
        bp=frozenset(bp_set),
        config_digest=header["config_digest"],
        transcript=[header] + transcript,
    )


def compute_report_metrics(raw: dict):
    """Return ``(LC%, CPI, unique findings, BP)`` from raw counters.

    CPI is LC% divided by the number of valid inputs (at least 1).
    """
    denom = frozenset(raw["denominator"])
    covered = frozenset(raw.get("covered", ())) & denom
    lc = 100.0 * len(covered) / len(denom) if denom else 0.0
    cpi = lc / max(int(raw.get("valid_count", 0)), 1)
    unique = dedupe_bugs(raw.get("findings", ()))
    return lc, cpi, unique, frozenset(raw.get("credited", ()))


def cpi_value(lc_percent: float, valid_count: int) -> float:
    return lc_percent / max(valid_count, 1)


# --------------------------------------------------------------------------
# transcript and report files


def transcript_lines(report: CampaignReport) -> list[str]:
    return [json.dumps(rec, sort_keys=True, separators=(",", ":")) for rec in report.transcript]


def write_transcript(report: CampaignReport, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in transcript_lines(report):
            fh.write(line + "\n")


def read_transcript(path) -> tuple[dict, list[dict]]:
    with open(path, encoding="utf-8") as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    if not records or records[0].get("type") != "campaign":
        raise ValueError("transcript has no campaign header")
    return records[0], records[1:]


TABLE_COLUMNS = ("mode", "valid", "invalid", "stub_hits", "LC_percent", "CPI", "UBC", "BP")


def report_table(summaries: Sequence[dict]) -> str:
    """Fixed-width table with one row per campaign summary."""
    head = f"{'mode':<22}{'valid':>8}{'invalid':>9}{'stub':>6}{'LC%':>9}{'CPI':>12}{'UBC':>6}{'BP':>5}"
    rows = [head, "-" * len(head)]
    for s in summaries:
        rows.append(
            f"{s['mode']:<22}{s['valid']:>8}{s['invalid']:>9}{s['stub_hits']:>6}"
            f"{s['LC_percent']:>9.2f}{s['CPI']:>12.6f}{s['UBC']:>6}{len(s['BP']):>5}"
        )
    return "\n".join(rows) + "\n"


# --------------------------------------------------------------------------
# replay


class ReplayMismatch(AssertionError):
    """A re-executed iteration disagreed with its transcript record."""


def _env(doc: dict) -> BackendConfig:
    return BackendConfig(doc["backend"], frozenset(doc["bugs"]))


def replay_record(header: dict, rec: dict) -> dict:
    """Re-run one transcript record and check verdict, dedup key and metrics."""
    if "script" not in rec:
        raise ValueError("record carries no script")
    script = rec["script"]
    if rec.get("encoding") == "latin-1":
        script = script.encode("latin-1")
    try:
        res = run_differential(
            script,
            _env(header["env_a"]),
            _env(header["env_b"]),
            header["norm"],
            header["threshold"],
            header["run_timeout"],
            frozenset(header["stubbed"]),
        )
    except DiffTimeout as exc:
        got = {"outcome": "timeout", "verdict": exc.result.verdict}
    else:
        got = {
            "verdict": res.verdict,
            "dedup_key": json.loads(json.dumps(list(res.dedup_key))),
            "first_divergence": res.first_divergence,
            "metrics": compute_metrics(res.reports[1].events).as_dict(),
        }
    for key, value in got.items():
        if rec.get(key) != value:
            raise ReplayMismatch(f"iteration {rec.get('iter')} of {rec.get('seed_name')}: {key} recorded {rec.get(key)!r}, replayed {value!r}")
    return got
