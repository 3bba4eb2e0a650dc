import io
import json
import urllib.error

import pytest

from hetfuzz.seedgen import (
    FEEDBACK_SEPARATOR,
    TIMEOUT_FEEDBACK,
    EmptyInput,
    ExecutorUnavailable,
    GeneratorUnavailable,
    OfflineGenerator,
    RemoteGenerator,
    SeedRecord,
    SeedRequest,
    ValidationResult,
    apply_patch,
    build_prompt,
    extract_message,
    generate_seeds,
    load_corpus,
    load_meta,
    parse_response,
    refine_prompt,
    save_seed,
    validate_script,
)

COMB_PROMPT = (
    "You are a helpful assistant who understands how to use LAMMPS for scientific simulation. "
    "Generate a simulation script that can be executed on LAMMPS to simulate models using the COMB potential. "
    "Do not provide any explanations and do not add any comments and blank lines in the script."
)


class Scripted:
    """Fake generator returning canned replies in order."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.prompts = []

    def __call__(self, prompt, params):
        self.prompts.append(prompt)
        return self.replies[min(len(self.prompts) - 1, len(self.replies) - 1)]


def test_example_prompt_verbatim():
    assert build_prompt("LAMMPS", "models using the COMB potential") == COMB_PROMPT


def test_prompt_substitution_and_determinism():
    p = build_prompt("MiniSim", "a cooling gas of 100 particles")
    assert "use MiniSim for" in p and "simulate a cooling gas of 100 particles." in p
    assert "<" not in p
    assert build_prompt("X", "Y") == build_prompt("X", "Y")


@pytest.mark.parametrize("args", [("", "x"), ("x", ""), ("  ", "x")])
def test_empty_prompt_inputs(args):
    with pytest.raises(EmptyInput):
        build_prompt(*args)


def test_refine_appends_error_and_timeout():
    err = ValidationResult("error", "Unknown command: pairstyle (line 7)")
    once = refine_prompt("p", err)
    assert once == "p" + FEEDBACK_SEPARATOR + "Unknown command: pairstyle (line 7)"
    twice = refine_prompt(once, ValidationResult("timeout"))
    assert twice == once + FEEDBACK_SEPARATOR + TIMEOUT_FEEDBACK
    assert TIMEOUT_FEEDBACK == "modify the script to reduce the execution time"
    with pytest.raises(ValueError):
        refine_prompt("p", ValidationResult("ok"))


def test_validate_ok_error_timeout(seeds):
    assert validate_script(seeds[1]).ok
    bad = seeds[1].replace("mass 1 1.0", "mass 9 1.0")
    res = validate_script(bad)
    assert res.status == "error"
    assert res.error_text == "ERROR: Invalid atom type 9 (cmd.mass:0)"
    slow = seeds[1].replace("run 20\nvelocity", "run 1000000000\nvelocity")
    assert validate_script(slow, timeout=2.0).status == "timeout"


def test_validate_needs_callable_executor(seeds):
    with pytest.raises(ExecutorUnavailable):
        validate_script(seeds[0], executor="not callable")


def test_fail_fail_succeed(seeds):
    bad = seeds[1].replace("mass 1 1.0", "mass 9 1.0")
    gen = Scripted([bad, "units lj\nfrobnicate 1\n", seeds[1]])
    recs = generate_seeds(SeedRequest("gas", max_attempts=3), gen)
    assert len(gen.prompts) == 3
    assert len(recs) == 1 and recs[0].attempt == 3
    t = recs[0].prompt_transcript
    assert len(t) == 3 and t[0] == build_prompt("MiniSim", "gas")
    assert t[1] == t[0] + FEEDBACK_SEPARATOR + "ERROR: Invalid atom type 9 (cmd.mass:0)"
    assert t[2].startswith(t[1] + FEEDBACK_SEPARATOR + "ERROR: ")


def test_always_failing_moves_on(seeds):
    gen = Scripted(["units lj\nfrobnicate 1\n"])
    req = SeedRequest("gas", max_attempts=3, generator_params=({"temperature": 0.1}, {"temperature": 0.9}))
    assert generate_seeds(req, gen) == []
    assert len(gen.prompts) == 6


def test_unavailable_generator_skips_combination(seeds):
    calls = []

    def gen(prompt, params):
        calls.append(params["temperature"])
        if params["temperature"] < 0.5:
            raise GeneratorUnavailable("down")
        return seeds[0]

    req = SeedRequest("gas", generator_params=({"temperature": 0.1}, {"temperature": 0.9}))
    recs = generate_seeds(req, gen)
    assert calls == [0.1, 0.9]
    assert [r.params for r in recs] == [{"temperature": 0.9}]


def test_offline_generator_three_combos(grammar, seeds):
    gen = OfflineGenerator.from_corpus(grammar, seeds, rng_seed=0)
    req = SeedRequest("gas", generator_params=tuple({"temperature": t} for t in (0.2, 0.7, 1.0)))
    recs = generate_seeds(req, gen)
    assert len(recs) == 3
    for r in recs:
        assert validate_script(r.script).ok
        assert r.attempt <= req.max_attempts
        assert len(r.prompt_transcript) == r.attempt
    again = generate_seeds(req, OfflineGenerator.from_corpus(grammar, seeds, rng_seed=0))
    assert [r.script for r in again] == [r.script for r in recs]


def test_parse_response_strips_prose():
    text = "Sure! Here is the script:\n```lammps\n1 units lj\n\n# comment\nrun 10\n```\nEnjoy."
    assert parse_response(text) == "units lj\nrun 10\n"
    assert parse_response("units lj\nThis is prose.\nrun 5") == "units lj\nrun 5\n"


def test_apply_patch():
    script = "a 1\nb 2\nc 3\n"
    ops = [{"op": "replace", "line": 2, "text": "b 9"}, {"op": "delete", "line": 3}, {"op": "insert", "line": 1, "text": "z 0"}]
    assert apply_patch(script, ops) == "z 0\na 1\nb 9\n"
    with pytest.raises(ValueError):
        apply_patch(script, [{"op": "swap", "line": 1}])


def test_patch_recorded_in_record(seeds):
    broken = seeds[1].replace("mass 1 1.0", "mass 9 1.0")
    line = broken.splitlines().index("mass 9 1.0") + 1
    patch = [{"op": "replace", "line": line, "text": "mass 1 1.0"}]
    recs = generate_seeds(SeedRequest("gas"), Scripted([broken]), patches={0: patch})
    assert recs[0].patch == patch and recs[0].attempt == 1


def test_seed_request_invariants():
    with pytest.raises(ValueError):
        SeedRequest("x", max_attempts=0)
    with pytest.raises(ValueError):
        SeedRequest("x", validation_timeout=0)
    with pytest.raises(ValueError):
        SeedRequest("x", generator_params=())


def test_corpus_round_trip(tmp_path, seeds):
    rec = SeedRecord(seeds[0], 2, {"temperature": 0.7}, ["p1", "p2"])
    path = save_seed(rec, tmp_path, 1, {"rng_seed": 4})
    save_seed(rec, tmp_path, 10)
    save_seed(rec, tmp_path, 2)
    assert [n for n, _ in load_corpus(tmp_path)] == ["seed_1", "seed_2", "seed_10"]
    meta = load_meta(path)
    assert meta["attempt"] == 2 and meta["transcript"] == ["p1", "p2"] and meta["rng_seed"] == 4


def test_shipped_corpus_metadata(corpus):
    from hetfuzz.cli import data_path

    assert [n for n, _ in corpus] == [f"seed_{k}" for k in range(1, 6)]
    for name, text in corpus:
        meta = load_meta(f"{data_path('seeds')}/{name}.script")
        assert meta["attempt"] == 1 and meta["origin"] == "curated"
        assert validate_script(text).ok


def test_remote_payload_and_errors(monkeypatch):
    gen = RemoteGenerator("http://example.invalid/v1", "m", api_key_env="HETFUZZ_TEST_KEY", retries=1, backoff=0)
    assert gen.payload("hi", {"temperature": 0.3}) == {
        "model": "m",
        "messages": [{"role": "user", "content": "hi"}],
        "temperature": 0.3,
    }
    seen = []

    class Resp(io.BytesIO):
        def __enter__(self):
            return self

        def __exit__(self, *exc):
            return False

    def ok(req, timeout):
        seen.append(req.headers.get("Authorization"))
        return Resp(json.dumps({"choices": [{"message": {"content": "run 1"}}]}).encode())

    monkeypatch.setenv("HETFUZZ_TEST_KEY", "k")
    monkeypatch.setattr("urllib.request.urlopen", ok)
    assert gen("hi", {}) == "run 1"
    assert seen == ["Bearer k"]

    attempts = []

    def flaky(req, timeout):
        attempts.append(1)
        raise urllib.error.URLError("refused")

    monkeypatch.setattr("urllib.request.urlopen", flaky)
    with pytest.raises(GeneratorUnavailable):
        gen("hi", {})
    assert len(attempts) == 2

    def forbidden(req, timeout):
        raise urllib.error.HTTPError(req.full_url, 403, "no", {}, None)

    monkeypatch.setattr("urllib.request.urlopen", forbidden)
    with pytest.raises(GeneratorUnavailable):
        gen("hi", {})


def test_extract_message_malformed():
    with pytest.raises(GeneratorUnavailable):
        extract_message({"choices": []})
