"""Command-line entry point: ``hetfuzz {seeds,extract,fuzz,bench,replay}``.

Settings come from built-in defaults, then an optional JSON ``--config``
file, then command-line flags; later sources win.  Exit status is 0 when
nothing was found, 1 when bugs were found (or a replay disagreed) and 2 on
usage or configuration errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import random
import sys
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from hetfuzz.diffdrive import NORMS, parse_norm, write_bug_dir
from hetfuzz.extractor import EmptyTrace, SubsystemManifest, build_subsystem, load_manifest, trace_run
from hetfuzz.fuzzer import (
    DEFAULT_RUN_TIMEOUT,
    MODES,
    CampaignConfig,
    ConfigError,
    ReplayMismatch,
    digest,
    read_transcript,
    replay_record,
    report_table,
    run_campaign,
    write_transcript,
)
from hetfuzz.grammar import GrammarError, load_grammar_file
from hetfuzz.minisim import BUG_IDS, BackendConfig
from hetfuzz.plotting import plot_ablation, plot_thermo_pair
from hetfuzz.seedgen import (
    GeneratorUnavailable,
    OfflineGenerator,
    RemoteGenerator,
    SeedRequest,
    generate_seeds,
    load_corpus,
    save_seed,
)

EXIT_CLEAN, EXIT_FOUND, EXIT_USAGE = 0, 1, 2
DEFAULT_DESC = "a small soft-sphere fluid on a lattice integrated with velocity Verlet"

log = logging.getLogger("hetfuzz")


class UsageError(Exception):
    pass


def data_path(name: str) -> str:
    return str(resources.files("hetfuzz") / "data" / name)


@dataclass
class RunConfig:
    grammar: str = field(default_factory=lambda: data_path("grammar.json"))
    seeds_dir: str = field(default_factory=lambda: data_path("seeds"))
    manifest: Optional[str] = field(default_factory=lambda: data_path("manifest.json"))
    out: str = "hetfuzz-out"
    mode: str = "kernel_sensitive"
    norm: str = "Max"
    threshold: float = 1e-6
    budget: int = 100
    rng_seed: int = 0
    workers: int = 1
    env_a: str = "host"
    env_b: str = "device"
    bugs: object = "all"
    run_timeout: float = DEFAULT_RUN_TIMEOUT
    wall_clock: Optional[float] = None
    full_universe: bool = False
    generator: str = "offline"
    endpoint: Optional[str] = None
    model: str = "gpt-3.5-turbo"
    api_key_env: str = "OPENAI_API_KEY"
    sim_desc: str = DEFAULT_DESC
    sut_name: str = "MiniSim"
    generator_params: list = field(default_factory=lambda: [{"temperature": t} for t in (0.2, 0.7, 1.0)])
    max_attempts: int = 3

    def bug_set(self) -> frozenset:
        if self.bugs is True or self.bugs == "all":
            return frozenset(BUG_IDS)
        if self.bugs in (None, False, "", "none"):
            return frozenset()
        items = self.bugs.split(",") if isinstance(self.bugs, str) else self.bugs
        ids = frozenset(int(x) for x in items if str(x).strip())
        unknown = ids - frozenset(BUG_IDS)
        if unknown:
            raise UsageError(f"unknown bug ids {sorted(unknown)}")
        return ids

    def digest(self) -> str:
        return digest(json.dumps(asdict(self), sort_keys=True, default=str))

    def stamp(self) -> dict:
        return {"rng_seed": self.rng_seed, "config_digest": self.digest()}


def load_config(path: Optional[str], overrides: dict) -> RunConfig:
    """Merge defaults, a JSON config file and flag overrides."""
    cfg = RunConfig()
    known = {f.name for f in fields(RunConfig)}
    if path:
        p = Path(path)
        if not p.is_file():
            raise UsageError(f"config file {p} does not exist")
        try:
            doc = json.loads(p.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {p}: {exc}") from None
        extra = set(doc) - known
        if extra:
            raise UsageError(f"unknown config keys: {', '.join(sorted(extra))}")
        for k, v in doc.items():
            setattr(cfg, k.replace("-", "_"), v)
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, v)
    if isinstance(cfg.manifest, str) and cfg.manifest.lower() == "none":
        cfg.manifest = None
    try:
        cfg.norm = parse_norm(cfg.norm)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if cfg.mode not in MODES:
        raise UsageError(f"unknown mode {cfg.mode!r}; expected one of {', '.join(MODES)}")
    if not cfg.threshold >= 0:
        raise UsageError("threshold must be non-negative")
    if cfg.budget < 0:
        raise UsageError("budget must be non-negative")
    if cfg.workers < 1:
        raise UsageError("workers must be at least 1")
    return cfg


def _require(path: Optional[str], what: str) -> Path:
    if not path or not Path(path).exists():
        raise UsageError(f"{what} {path} does not exist")
    return Path(path)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, doc: dict) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")


def _corpus(cfg: RunConfig) -> list[tuple[str, str]]:
    corpus = load_corpus(_require(cfg.seeds_dir, "seed corpus"))
    if not corpus:
        raise UsageError(f"seed corpus {cfg.seeds_dir} holds no seed_<k>.script files")
    return corpus


def _campaign(cfg: RunConfig, mode: str, manifest: Optional[SubsystemManifest]) -> CampaignConfig:
    try:
        grammar = load_grammar_file(_require(cfg.grammar, "grammar"))
    except GrammarError as exc:
        raise UsageError(f"grammar {cfg.grammar}: {exc}") from None
    corpus = _corpus(cfg)
    bugs = cfg.bug_set()
    env_a = BackendConfig(cfg.env_a, bugs if cfg.env_a == "device" else frozenset())
    env_b = BackendConfig(cfg.env_b, bugs if cfg.env_b == "device" else frozenset())
    camp = CampaignConfig(
        seeds=[t for _, t in corpus],
        grammar=grammar,
        manifest=manifest,
        env_a=env_a,
        env_b=env_b,
        norm=cfg.norm,
        threshold=cfg.threshold,
        rng_seed=cfg.rng_seed,
        budget=cfg.budget,
        wall_clock=cfg.wall_clock,
        run_timeout=cfg.run_timeout,
        mode=mode,
        workers=cfg.workers,
        seed_names=[n for n, _ in corpus],
    )
    try:
        camp.validate()
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    return camp


def _manifest(cfg: RunConfig) -> Optional[SubsystemManifest]:
    if cfg.manifest is None:
        return None
    try:
        return load_manifest(_require(cfg.manifest, "manifest"))
    except (ValueError, KeyError) as exc:
        raise UsageError(f"manifest {cfg.manifest}: {exc}") from None


# --------------------------------------------------------------------------
# subcommands


def cmd_seeds(cfg: RunConfig) -> int:
    if cfg.generator == "offline":
        grammar = load_grammar_file(_require(cfg.grammar, "grammar"))
        generator = OfflineGenerator.from_corpus(grammar, [t for _, t in _corpus(cfg)], cfg.rng_seed)
    elif cfg.generator == "remote":
        if not cfg.endpoint:
            raise UsageError("the remote generator needs --endpoint")
        generator = RemoteGenerator(cfg.endpoint, cfg.model, cfg.api_key_env)
    else:
        raise UsageError(f"unknown generator {cfg.generator!r}")
    try:
        req = SeedRequest(cfg.sim_desc, cfg.sut_name, cfg.max_attempts, tuple(cfg.generator_params))
    except (ValueError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    records = generate_seeds(req, generator)
    if not records:
        print(f"error: no valid seed from any of {len(req.generator_params)} parameter combinations", file=sys.stderr)
        return EXIT_USAGE
    out = _out_dir(cfg)
    for k, rec in enumerate(records, start=1):
        save_seed(rec, out, k, {"generator": cfg.generator, "sim_desc": cfg.sim_desc, **cfg.stamp()})
        print(f"seed_{k}: attempts={rec.attempt} params={json.dumps(rec.params, sort_keys=True)}")
    return EXIT_CLEAN


def cmd_extract(cfg: RunConfig) -> int:
    corpus = _corpus(cfg)
    tlog = trace_run([t for _, t in corpus], BackendConfig(cfg.env_a))
    for i, why in sorted(tlog.failed.items()):
        print(f"warning: {corpus[i][0]} failed during tracing: {why}", file=sys.stderr)
    try:
        manifest = build_subsystem(tlog, environment=cfg.env_a)
    except EmptyTrace as exc:
        raise UsageError(str(exc)) from None
    out = _out_dir(cfg)
    doc = json.loads(manifest.to_json())
    doc.update(cfg.stamp())
    doc["per_seed"] = {corpus[i][0]: sorted(units) for i, units in tlog.per_seed.items()}
    _write_json(out / "manifest.json", doc)
    print(f"kept {len(manifest.kept)} stubbed {len(manifest.stubbed)} of {len(manifest.universe)} units")
    return EXIT_CLEAN


def cmd_fuzz(cfg: RunConfig) -> int:
    camp = _campaign(cfg, cfg.mode, _manifest(cfg))
    report = run_campaign(camp)
    out = _out_dir(cfg)
    stamp = {"rng_seed": cfg.rng_seed, "config_digest": report.config_digest}
    write_transcript(report, out / "transcript.jsonl")
    summary = report.summary()
    table = report_table([summary])
    (out / "report.txt").write_text(_stamp_line(stamp) + table, encoding="utf-8")
    _write_json(out / "report.json", summary)
    bugs = out / "bugs"
    bugs.mkdir(exist_ok=True)
    for i, res in enumerate(report.unique_bugs, start=1):
        d = write_bug_dir(res, bugs / f"bug_{i:03d}", stamp)
        if any(r.thermo for r in res.reports):
            plot_thermo_pair(res, d / "thermo.png", stamp)
    sys.stdout.write(table)
    print(f"unique bugs: {report.ubc}  benchmark ids: {sorted(report.bp)}")
    return EXIT_FOUND if report.ubc else EXIT_CLEAN


def _zero_summary(mode: str, cfg: RunConfig) -> dict:
    return {
        "mode": mode, "rng_seed": cfg.rng_seed, "iterations": 0, "valid": 0, "invalid": 0,
        "stub_hits": 0, "timeouts": 0, "LC_percent": 0.0, "CPI": 0.0, "UBC": 0, "BP": [],
    }


def cmd_bench(cfg: RunConfig) -> int:
    manifest = _manifest(cfg)
    runs = [(m, m, manifest) for m in MODES]
    if cfg.full_universe and manifest is not None:
        runs.append(("kernel_sensitive/full", "kernel_sensitive", None))
    summaries = []
    for label, mode, man in runs:
        if cfg.budget == 0:
            _campaign_check(cfg)
            s = _zero_summary(label, cfg)
        else:
            s = run_campaign(_campaign(cfg, mode, man)).summary()
            s["mode"] = label
        summaries.append(s)
    out = _out_dir(cfg)
    stamp = cfg.stamp()
    table = report_table(summaries)
    (out / "bench.txt").write_text(_stamp_line(stamp) + table, encoding="utf-8")
    _write_json(out / "bench.json", {**stamp, "budget": cfg.budget, "rows": summaries})
    plot_ablation(summaries, out / "ablation.png", stamp)
    sys.stdout.write(table)
    return EXIT_CLEAN


def _campaign_check(cfg: RunConfig) -> None:
    _require(cfg.grammar, "grammar")
    _corpus(cfg)
    cfg.bug_set()


def cmd_replay(transcript: str, iterations: Sequence[int], sample: Optional[int], rng_seed: int) -> int:
    header, records = read_transcript(_require(transcript, "transcript"))
    if sample is not None:
        picks = random.Random(rng_seed).sample(range(len(records)), min(sample, len(records)))
    else:
        picks = list(iterations) or range(len(records))
    for i in picks:
        if not 0 <= i < len(records):
            raise UsageError(f"iteration {i} outside transcript of {len(records)} records")
    for i in picks:
        replay_record(header, records[i])
    print(f"replayed {len(picks)} iteration(s); all verdicts match")
    return EXIT_CLEAN


def _stamp_line(stamp: dict) -> str:
    return f"# rng_seed={stamp['rng_seed']} config_digest={stamp['config_digest']}\n"


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file; flags override its values")
    common.add_argument("--grammar")
    common.add_argument("--seeds-dir", dest="seeds_dir")
    common.add_argument("--manifest", help="manifest path, or 'none' to fuzz the full unit universe")
    common.add_argument("--mode", choices=MODES)
    common.add_argument("--norm", type=str.lower, choices=[n.lower() for n in NORMS])
    common.add_argument("--threshold", type=float)
    common.add_argument("--budget", type=int, help="iterations per seed")
    common.add_argument("--rng-seed", dest="rng_seed", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--out")
    common.add_argument("--bugs", help="'all', 'none' or comma-separated benchmark ids active on the device")
    common.add_argument("--run-timeout", dest="run_timeout", type=float)
    common.add_argument("--wall-clock", dest="wall_clock", type=float, help="per-seed time cap in seconds")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="hetfuzz", description="Differential fuzzing of host and device backends.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("seeds", parents=[common], help="generate a validated seed corpus")
    s.add_argument("--generator", choices=("offline", "remote"))
    s.add_argument("--endpoint", help="chat-completion URL for the remote generator")
    s.add_argument("--model")
    s.add_argument("--api-key-env", dest="api_key_env", help="environment variable holding the API key")
    s.add_argument("--sim-desc", dest="sim_desc")
    s.add_argument("--max-attempts", dest="max_attempts", type=int)

    sub.add_parser("extract", parents=[common], help="trace seeds and write a subsystem manifest")
    sub.add_parser("fuzz", parents=[common], help="run one campaign")
    b = sub.add_parser("bench", parents=[common], help="run every mode under one budget")
    b.add_argument("--full-universe", dest="full_universe", action="store_true", default=None)

    r = sub.add_parser("replay", parents=[common], help="re-execute transcript iterations")
    r.add_argument("transcript")
    r.add_argument("--iteration", type=int, action="append", default=[], help="record index, repeatable")
    r.add_argument("--sample", type=int, help="replay this many randomly chosen records")
    return p


_NON_CONFIG = {"command", "config", "verbose", "transcript", "iteration", "sample"}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_CLEAN
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    overrides = {k: v for k, v in vars(args).items() if k not in _NON_CONFIG}
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "seeds":
            return cmd_seeds(cfg)
        if args.command == "extract":
            return cmd_extract(cfg)
        if args.command == "fuzz":
            return cmd_fuzz(cfg)
        if args.command == "bench":
            return cmd_bench(cfg)
        return cmd_replay(args.transcript, args.iteration, args.sample, cfg.rng_seed)
    except ReplayMismatch as exc:
        print(f"replay mismatch: {exc}", file=sys.stderr)
        return EXIT_FOUND
    except (UsageError, FileNotFoundError, GeneratorUnavailable) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
