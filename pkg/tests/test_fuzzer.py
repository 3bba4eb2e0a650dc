import random
from collections import Counter

import pytest

from conftest import ALL_BUGS, DEVICE
from hetfuzz.fuzzer import (
    ConfigError,
    CampaignConfig,
    ReplayMismatch,
    compute_report_metrics,
    cpi_value,
    havoc,
    read_transcript,
    replay_record,
    report_table,
    run_campaign,
    select_line,
    transcript_lines,
    write_transcript,
)
from hetfuzz.minisim import BackendConfig, parse_script, run_simulation
from hetfuzz.profiler import MutationSchedule, compute_metrics, compute_signal


def config(grammar, seeds, manifest, **kw):
    kw.setdefault("budget", 8)
    return CampaignConfig(seeds, grammar, manifest, **kw)


def test_select_line_frequencies():
    sched = MutationSchedule((0.1, 0.2, 0.3, 0.4))
    rng = random.Random(11)
    n = 100_000
    counts = Counter(select_line(sched, rng) for _ in range(n))
    for i, p in enumerate(sched.probs):
        assert abs(counts[i] / n - p) <= 0.01


def test_select_line_single():
    assert select_line(MutationSchedule((1.0,)), random.Random(0)) == 0


def test_havoc_is_deterministic_and_changes_bytes(seeds):
    data = seeds[0].encode()
    a = [havoc(data, random.Random(f"x{i}")) for i in range(50)]
    b = [havoc(data, random.Random(f"x{i}")) for i in range(50)]
    assert a == b
    assert sum(m != data for m in a) >= 45


def test_cpi_examples():
    assert cpi_value(13.68, 960) == pytest.approx(0.01425)
    assert cpi_value(40.0, 0) == 40.0
    lc, cpi, unique, bp = compute_report_metrics({"covered": {"a", "b", "z"}, "denominator": {"a", "b", "c", "d"}, "valid_count": 0})
    assert (lc, cpi, unique, bp) == (50.0, 50.0, [], frozenset())


def test_identical_mutant_has_zero_signal(seeds):
    m = compute_metrics(run_simulation(seeds[0], DEVICE).events)
    assert compute_signal(m, m) == 0.0


def test_longer_run_gives_positive_signal(seeds):
    short = seeds[0].replace("run 20", "run 10")
    long = seeds[0].replace("run 20", "run 50")
    a = compute_metrics(run_simulation(short, DEVICE).events)
    b = compute_metrics(run_simulation(long, DEVICE).events)
    assert compute_signal(a, b) > 0


@pytest.mark.parametrize(
    "kw",
    [{"mode": "afl"}, {"budget": -1}, {"threshold": -1e-6}, {"workers": 0}, {"env_b": BackendConfig("host")}],
)
def test_config_errors(grammar, seeds, manifest, kw):
    with pytest.raises(ConfigError):
        run_campaign(config(grammar, seeds, manifest, **kw))


def test_no_seeds(grammar, manifest):
    with pytest.raises(ConfigError):
        run_campaign(config(grammar, [], manifest))


def test_clean_campaign_has_no_bugs(grammar, seeds, manifest):
    r = run_campaign(config(grammar, seeds, manifest, budget=20))
    assert r.ubc == 0 and r.bp == frozenset()
    assert r.valid_count + r.invalid_count + r.stub_hits + r.timeouts == r.iterations == 100


def test_grammar_modes_stay_valid(grammar, seeds, manifest):
    for mode in ("kernel_sensitive", "grammar_only"):
        r = run_campaign(config(grammar, seeds, manifest, mode=mode))
        assert r.invalid_count == 0


def test_random_bytes_produces_invalid_inputs(grammar, seeds, manifest):
    r = run_campaign(config(grammar, seeds, manifest, mode="random_bytes", budget=20))
    assert r.invalid_count > 0
    assert all(rec["line"] is None for rec in r.transcript[1:])


def test_campaign_is_deterministic(grammar, seeds, manifest):
    env_b = BackendConfig("device", ALL_BUGS)
    a = run_campaign(config(grammar, seeds, manifest, env_b=env_b, rng_seed=3))
    b = run_campaign(config(grammar, seeds, manifest, env_b=env_b, rng_seed=3))
    c = run_campaign(config(grammar, seeds, manifest, env_b=env_b, rng_seed=4))
    assert transcript_lines(a) == transcript_lines(b)
    assert transcript_lines(a) != transcript_lines(c)


def test_workers_do_not_change_results(grammar, seeds, manifest):
    a = run_campaign(config(grammar, seeds, manifest, budget=5))
    b = run_campaign(config(grammar, seeds, manifest, budget=5, workers=3))
    assert transcript_lines(a) == transcript_lines(b)


def test_coverage_grows_with_budget(grammar, seeds, manifest):
    small = run_campaign(config(grammar, seeds, manifest, budget=4))
    big = run_campaign(config(grammar, seeds, manifest, budget=12))
    assert small.covered <= big.covered
    assert small.lc_percent <= big.lc_percent


def test_bugs_found_and_credited(grammar, seeds, manifest):
    env_b = BackendConfig("device", ALL_BUGS)
    r = run_campaign(config(grammar, seeds, manifest, env_b=env_b, budget=30))
    assert r.ubc > 0 and r.bp
    assert r.bp <= ALL_BUGS
    table = report_table([r.summary()])
    assert table.splitlines()[2].startswith("kernel_sensitive")


def test_transcript_round_trip_and_replay(tmp_path, grammar, seeds, manifest):
    env_b = BackendConfig("device", ALL_BUGS)
    r = run_campaign(config(grammar, seeds, manifest, env_b=env_b, mode="random_bytes", budget=6))
    path = tmp_path / "t.jsonl"
    write_transcript(r, path)
    header, records = read_transcript(path)
    assert header["config_digest"] == r.config_digest
    assert len(records) == r.iterations
    for rec in records:
        replay_record(header, rec)
    tampered = dict(records[0], verdict="made_up")
    with pytest.raises(ReplayMismatch):
        replay_record(header, tampered)


def test_transcript_without_header(tmp_path):
    path = tmp_path / "t.jsonl"
    path.write_text('{"iter": 0}\n')
    with pytest.raises(ValueError):
        read_transcript(path)


def test_kernel_sensitive_updates_schedule(grammar, seeds, manifest):
    r = run_campaign(config(grammar, seeds[:1], manifest, budget=10))
    recs = r.transcript[1:]
    assert recs[0]["signal"] is None
    assert all(rec["signal"] is not None for rec in recs[1:])
    go = run_campaign(config(grammar, seeds[:1], manifest, budget=10, mode="grammar_only"))
    assert len({rec["schedule"] for rec in go.transcript[1:]}) == 1


def test_accepted_mutants_are_cumulative(grammar, seeds, manifest):
    r = run_campaign(config(grammar, seeds[:1], manifest, budget=15, mode="grammar_only"))
    script = parse_script(seeds[0])
    for rec in r.transcript[1:]:
        lines = rec["script"].splitlines()
        expected = script.render().splitlines()
        expected[rec["line"]] = rec["after"]
        assert lines == expected
        if rec["valid"] and rec["verdict"] == "agree":
            script = parse_script(rec["script"])
