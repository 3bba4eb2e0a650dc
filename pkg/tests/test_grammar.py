import json
import random
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hetfuzz.grammar import (
    FLOAT_RANGE,
    INT_RANGE,
    MissingBase,
    NoChange,
    ParseError,
    Placeholder,
    SchemaError,
    ScriptLine,
    StyleChoice,
    UnknownCommand,
    ValueChoice,
    command_defaults,
    conforms,
    load_grammar,
    mutate_line,
    parse_args,
    sample_command,
)
from hetfuzz.minisim import parse_script

# layout of the published grammar excerpt, trimmed to what MiniSim parses
FIG4 = {
    "create_box": {"arg_1": [1, 2, 3], "arg_2": "No change"},
    "create_atoms": {
        "arg_1": [1, 2, 3],
        "style_arg": {"box": "No change", "region": {"arg_1": "No change"}},
    },
    "mass": {"arg_1": "No change", "arg_2": ["float"]},
}


def line(text, index=0):
    return parse_script(text).lines[index]


def test_load_keeps_choice_and_style_positions():
    g = load_grammar(json.dumps(FIG4))
    specs = g.specs("create_atoms")
    assert specs[0] == ValueChoice((1, 2, 3))
    assert isinstance(specs[1], StyleChoice)
    assert specs[1].names() == ("box", "region")
    assert g.specs("create_box")[1] == NoChange()
    assert g.specs("mass")[1] == Placeholder("float")


def test_empty_document_is_valid():
    assert dict(load_grammar("{}").commands) == {}


@pytest.mark.parametrize(
    "doc",
    [
        '{"mass": {"arg_1": []}}',
        '{"mass": {"arg_1": ["No change", 1]}}',
        '{"mass": {"bogus": [1]}}',
        '{"mass": {"arg_2": [1], "arg_1": [2]}}',
        '{"mass": {"arg_1": [1]}, "mass": {"arg_1": [2]}}',
        '{"mass": {"style_arg": {}}}',
        '{"": {"arg_1": [1]}}',
        '{"mass": {"arg_1": ["float", 2]}}',
    ],
)
def test_schema_violations(doc):
    with pytest.raises(SchemaError):
        load_grammar(doc)


def test_malformed_json():
    with pytest.raises(ParseError):
        load_grammar('{"mass": ')


def test_mutated_choice_is_member():
    g = load_grammar(json.dumps(FIG4))
    src = line("create_atoms 2 region box")
    for seed in range(50):
        out = mutate_line(g, src, random.Random(seed))
        assert out.command == "create_atoms"
        assert out.args[0] in {"1", "2", "3"}
        assert conforms(g, out)


def test_all_nochange_line_is_fixed_point():
    g = load_grammar('{"dimension": {"arg_1": "No change"}, "region": {"arg_1": "No change", "arg_2": "No change"}}')
    for text in ("dimension 3", "region box block"):
        src = line(text)
        assert mutate_line(g, src, random.Random(1)) == src


def test_placeholder_float_is_seed_deterministic():
    g = load_grammar(json.dumps(FIG4))
    src = line("mass 1 1.0")
    a = mutate_line(g, src, random.Random(42))
    b = mutate_line(g, src, random.Random(42))
    assert a == b
    assert a.args[0] == "1"
    v = float(a.args[1])
    assert FLOAT_RANGE[0] <= v <= FLOAT_RANGE[1]


def test_integer_placeholder_range():
    g = load_grammar('{"velocity": {"arg_1": ["integer"]}}')
    vals = [int(mutate_line(g, line("velocity 5"), random.Random(s)).args[0]) for s in range(200)]
    assert all(INT_RANGE[0] <= v <= INT_RANGE[1] for v in vals)
    assert len(set(vals)) > 150


def test_unknown_command():
    g = load_grammar(json.dumps(FIG4))
    with pytest.raises(UnknownCommand):
        mutate_line(g, line("thermo 5"), random.Random(0))
    with pytest.raises(UnknownCommand):
        sample_command(g, "thermo", random.Random(0))


def test_sample_copies_nochange_from_default():
    g = load_grammar(json.dumps(FIG4))
    defaults = command_defaults(parse_script("create_box 2 box\n"))
    out = sample_command(g, "create_box", random.Random(3), defaults)
    assert out.args[0] in {"1", "2", "3"}
    assert out.args[1] == "box"


def test_sample_without_default_raises():
    g = load_grammar(json.dumps(FIG4))
    with pytest.raises(MissingBase):
        sample_command(g, "create_box", random.Random(3))


def test_singleton_grammar_has_one_line():
    g = load_grammar('{"units": {"arg_1": ["lj"]}}')
    assert {sample_command(g, "units", random.Random(s)).render() for s in range(20)} == {"units lj"}


def test_sample_frequencies_uniform():
    g = load_grammar(json.dumps(FIG4))
    defaults = command_defaults(parse_script("create_atoms 1 region box\n"))
    rng = random.Random(7)
    counts = Counter(sample_command(g, "create_atoms", rng, defaults).args[0] for _ in range(10_000))
    for v in ("1", "2", "3"):
        assert abs(counts[v] / 10_000 - 1 / 3) < 0.03


def test_style_arg_picks_two_at_stated_rate():
    g = load_grammar('{"fix": {"style_arg": {"a": {}, "b": {}, "c": {}}}}')
    rng = random.Random(11)
    n2 = sum(len(mutate_line(g, line("fix a"), rng).args) == 2 for _ in range(20_000))
    assert abs(n2 / 20_000 - 0.2) < 0.015


def test_style_one_never_picks_two():
    g = load_grammar('{"fix": {"style_one": {"a": {}, "b": {}}}}')
    rng = random.Random(2)
    assert all(len(mutate_line(g, line("fix a"), rng).args) == 1 for _ in range(500))


def test_identifier_pool():
    g = load_grammar('{"_identifiers": ["box", "slab"], "group": {"arg_1": ["identifier"]}}')
    assert g.identifiers == ("box", "slab")
    got = {mutate_line(g, line("group box"), random.Random(s)).args[0] for s in range(50)}
    assert got == {"box", "slab"}


def test_nochange_inside_style_falls_back_to_original_token():
    # the base line picks another style, so the original token fills the hole
    g = load_grammar('{"create_atoms": {"arg_1": "No change", "style_one": {"region": ["No change"]}}}')
    out = mutate_line(g, ScriptLine(0, "create_atoms", ("1", "box", "slab")), random.Random(0))
    assert out.args == ("1", "region", "slab")


def test_parse_args_rejects_extra_tokens():
    g = load_grammar(json.dumps(FIG4))
    assert parse_args(g, line("create_box 2 box extra")) is None
    assert parse_args(g, line("create_box 2 box")) == ["2", "box"]


# --------------------------------------------------------------------------
# properties over the shipped grammar


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.data())
def test_shipped_mutation_closure(grammar, seeds, seed, data):
    text = data.draw(st.sampled_from(seeds))
    script = parse_script(text)
    src = data.draw(st.sampled_from([ln for ln in script if ln.command in grammar]))
    defaults = command_defaults([ln for t in seeds for ln in parse_script(t)])
    out = mutate_line(grammar, src, random.Random(seed), defaults)
    assert conforms(grammar, out)
    assert parse_script(out.render()).lines[0].args == out.args
    assert mutate_line(grammar, src, random.Random(seed), defaults) == out


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.data())
def test_shipped_top_level_nochange_is_copied(grammar, seeds, seed, data):
    # positions ahead of the first style group keep their output index
    script = parse_script(data.draw(st.sampled_from(seeds)))
    src = data.draw(st.sampled_from([ln for ln in script if ln.command in grammar]))
    out = mutate_line(grammar, src, random.Random(seed))
    for i, spec in enumerate(grammar.specs(src.command)):
        if isinstance(spec, StyleChoice):
            break
        if isinstance(spec, NoChange):
            assert out.args[i] == src.args[i]
