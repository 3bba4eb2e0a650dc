import json

import pytest

from hetfuzz.cli import EXIT_CLEAN, EXIT_FOUND, EXIT_USAGE, RunConfig, UsageError, load_config, main


def fuzz(tmp_path, name, *extra):
    out = tmp_path / name
    code = main(["fuzz", "--budget", "4", "--out", str(out), *extra])
    return code, out


def test_fuzz_exit_codes(tmp_path):
    code, out = fuzz(tmp_path, "bugs", "--budget", "20", "--rng-seed", "1")
    assert code == EXIT_FOUND
    summary = json.loads((out / "report.json").read_text())
    assert summary["UBC"] > 0
    bug = out / "bugs" / "bug_001"
    assert (bug / "verdict.json").exists() and (bug / "script.in").exists()
    assert json.loads((bug / "verdict.json").read_text())["rng_seed"] == 1
    code, _ = fuzz(tmp_path, "clean", "--bugs", "none")
    assert code == EXIT_CLEAN


@pytest.mark.parametrize(
    "argv",
    [
        ["fuzz", "--threshold", "-1"],
        ["fuzz", "--budget", "-3"],
        ["fuzz", "--norm", "l7"],
        ["fuzz", "--bugs", "99"],
        ["fuzz", "--seeds-dir", "/nonexistent/corpus"],
        ["frobnicate"],
    ],
)
def test_usage_errors(tmp_path, argv):
    assert main(argv + ["--out", str(tmp_path / "o")] if argv[0] == "fuzz" else argv) == EXIT_USAGE


def test_fuzz_is_byte_identical(tmp_path):
    _, a = fuzz(tmp_path, "a", "--rng-seed", "7")
    _, b = fuzz(tmp_path, "b", "--rng-seed", "7")
    for name in ("transcript.jsonl", "report.txt", "report.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_artifacts_are_stamped(tmp_path):
    _, out = fuzz(tmp_path, "s", "--rng-seed", "5")
    header = json.loads((out / "transcript.jsonl").read_text().splitlines()[0])
    first = (out / "report.txt").read_text().splitlines()[0]
    assert first == f"# rng_seed=5 config_digest={header['config_digest']}"
    assert json.loads((out / "report.json").read_text())["config_digest"] == header["config_digest"]


def test_replay_and_tamper(tmp_path, capsys):
    _, out = fuzz(tmp_path, "r", "--mode", "random_bytes")
    path = out / "transcript.jsonl"
    assert main(["replay", str(path), "--sample", "10"]) == EXIT_CLEAN
    assert main(["replay", str(path), "--iteration", "999"]) == EXIT_USAGE
    lines = path.read_text().splitlines()
    rec = json.loads(lines[1])
    rec["verdict"] = "numeric_divergence" if rec["verdict"] == "agree" else "agree"
    lines[1] = json.dumps(rec)
    path.write_text("\n".join(lines) + "\n")
    assert main(["replay", str(path), "--iteration", "0"]) == EXIT_FOUND
    assert "replay mismatch" in capsys.readouterr().err


def test_bench_zero_budget(tmp_path):
    out = tmp_path / "bench"
    assert main(["bench", "--budget", "0", "--out", str(out)]) == EXIT_CLEAN
    doc = json.loads((out / "bench.json").read_text())
    rows = doc["rows"]
    assert doc["budget"] == 0 and "config_digest" in doc
    assert [r["mode"] for r in rows] == ["kernel_sensitive", "grammar_only", "random_bytes"]
    assert all(r["valid"] == r["invalid"] == r["UBC"] == 0 for r in rows)
    assert (out / "ablation.png").read_bytes()[:4] == b"\x89PNG"


def test_extract(tmp_path, capsys):
    out = tmp_path / "ex"
    assert main(["extract", "--out", str(out)]) == EXIT_CLEAN
    assert "kept 50 stubbed 5 of 55 units" in capsys.readouterr().out
    doc = json.loads((out / "manifest.json").read_text())
    assert "rng_seed" in doc and "config_digest" in doc


def test_seeds_offline(tmp_path):
    out = tmp_path / "sd"
    assert main(["seeds", "--out", str(out)]) == EXIT_CLEAN
    scripts = sorted(p.name for p in out.glob("*.script"))
    assert scripts == ["seed_1.script", "seed_2.script", "seed_3.script"]
    meta = json.loads((out / "seed_1.meta").read_text())
    assert meta["rng_seed"] == 0 and 1 <= meta["attempt"] <= 3


def test_seeds_remote_unreachable(tmp_path):
    argv = ["seeds", "--generator", "remote", "--endpoint", "http://127.0.0.1:9/v1", "--out", str(tmp_path / "x")]
    assert main(argv) == EXIT_USAGE


def test_config_file_and_flag_precedence(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"budget": 9, "rng_seed": 4, "norm": "L2"}))
    cfg = load_config(str(path), {"rng_seed": 6})
    assert (cfg.budget, cfg.rng_seed, cfg.norm) == (9, 6, "L2")
    with pytest.raises((UsageError, ValueError)):
        load_config(None, {"workers": 0})


def test_bug_sets():
    assert len(RunConfig().bug_set()) == 20
    assert RunConfig(bugs="none").bug_set() == frozenset()
    assert RunConfig(bugs="3,7").bug_set() == {3, 7}
