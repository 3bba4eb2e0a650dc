"""Command grammar for simulation scripts.

A grammar document is a JSON object mapping command names to argument
objects.  Positional keys (``arg_1``, ``arg_2``, ...) and style keys are
taken in document order.  Leaf values:

* a list of literals            -> :class:`ValueChoice`
* ``["integer"]`` / ``["float"]`` / ``["identifier"]`` -> :class:`Placeholder`
* ``"No change"`` or ``["No change"]`` -> :class:`NoChange`
* ``"style_arg": {...}``        -> :class:`StyleChoice`, one or more alternatives
* ``"style_one": {...}``        -> :class:`StyleChoice`, exactly one alternative

An alternative inside a style object is emitted as its keyword followed by
its own arguments: an object (recursive argument group), a list (a single
positional argument), ``{}`` or ``"No change"`` (keyword only).

The reserved top-level key ``_identifiers`` declares the identifier pool
used by ``identifier`` placeholders.
"""

from __future__ import annotations

import json
import math
import random
import re
from dataclasses import dataclass
from typing import Mapping, Sequence, Union

NO_CHANGE = "No change"
PLACEHOLDER_KINDS = ("integer", "float", "identifier")
STYLE_KEYS = ("style_arg", "style_one")
IDENTIFIERS_KEY = "_identifiers"

INT_RANGE = (0, 100_000)
FLOAT_RANGE = (1e-6, 1e6)
TWO_STYLE_PROB = 0.2

_ARG_KEY = re.compile(r"^arg_(\d+)$")
_INT_TOKEN = re.compile(r"^[+-]?\d+$")
_IDENT_TOKEN = re.compile(r"^[A-Za-z_][A-Za-z0-9_./-]*$")


class GrammarError(Exception):
    """Base class for grammar failures."""


class ParseError(GrammarError):
    """The grammar document is not well-formed JSON."""


class SchemaError(GrammarError):
    """The grammar document violates a structural rule."""


class UnknownCommand(GrammarError, KeyError):
    """A line names a command the grammar does not define."""

    def __str__(self) -> str:
        return f"unknown command: {self.args[0]!r}"


class MissingBase(GrammarError):
    """A NoChange position has no existing value to copy."""


@dataclass(frozen=True)
class ValueChoice:
    values: tuple


@dataclass(frozen=True)
class Placeholder:
    kind: str


@dataclass(frozen=True)
class NoChange:
    pass


@dataclass(frozen=True)
class StyleChoice:
    alternatives: tuple  # ((keyword, tuple[ArgSpec, ...]), ...)
    multi: bool = True

    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.alternatives)

    def specs_for(self, name: str) -> tuple:
        for alt, specs in self.alternatives:
            if alt == name:
                return specs
        raise KeyError(name)


ArgSpec = Union[ValueChoice, Placeholder, NoChange, StyleChoice]


@dataclass(frozen=True)
class ScriptLine:
    index: int
    command: str
    args: tuple[str, ...] = ()

    def render(self) -> str:
        return " ".join((self.command, *self.args))

    def __str__(self) -> str:
        return self.render()


@dataclass(frozen=True)
class Grammar:
    commands: Mapping[str, tuple]
    identifiers: tuple[str, ...] = ()

    def __contains__(self, name: str) -> bool:
        return name in self.commands

    def specs(self, name: str) -> tuple:
        try:
            return self.commands[name]
        except KeyError:
            raise UnknownCommand(name) from None


# --------------------------------------------------------------------------
# loading


def load_grammar(text: str) -> Grammar:
    try:
        doc = json.loads(text, object_pairs_hook=_no_duplicates)
    except (json.JSONDecodeError, TypeError) as exc:
        raise ParseError(str(exc)) from exc
    if not isinstance(doc, dict):
        raise SchemaError("grammar document must be a JSON object")

    identifiers: tuple[str, ...] = ()
    commands: dict[str, tuple] = {}
    for name, body in doc.items():
        if name == IDENTIFIERS_KEY:
            if not isinstance(body, list) or not all(isinstance(x, str) for x in body):
                raise SchemaError(f"{IDENTIFIERS_KEY} must be a list of strings")
            identifiers = tuple(body)
            continue
        if not isinstance(name, str) or not name.strip():
            raise SchemaError("command names must be non-empty")
        if not isinstance(body, dict):
            raise SchemaError(f"{name}: argument spec must be an object")
        commands[name] = _parse_group(body, name)
    return Grammar(commands=commands, identifiers=identifiers)


def load_grammar_file(path) -> Grammar:
    with open(path, encoding="utf-8") as fh:
        return load_grammar(fh.read())


def _no_duplicates(pairs):
    seen = set()
    for key, _ in pairs:
        if key in seen:
            raise SchemaError(f"duplicate key {key!r}")
        seen.add(key)
    return dict(pairs)


def _parse_group(body: dict, where: str) -> tuple:
    specs = []
    last_pos = 0
    for key, value in body.items():
        if key in STYLE_KEYS:
            specs.append(_parse_style(value, f"{where}.{key}", multi=key == "style_arg"))
            continue
        m = _ARG_KEY.match(key)
        if not m:
            raise SchemaError(f"{where}: unknown key {key!r}")
        pos = int(m.group(1))
        if pos <= last_pos:
            raise SchemaError(f"{where}: argument {key} out of order")
        last_pos = pos
        specs.append(_parse_leaf(value, f"{where}.{key}"))
    return tuple(specs)


def _parse_leaf(value, where: str) -> ArgSpec:
    if value == NO_CHANGE:
        return NoChange()
    if not isinstance(value, list):
        raise SchemaError(f"{where}: expected a list or {NO_CHANGE!r}, got {value!r}")
    if not value:
        raise SchemaError(f"{where}: empty choice list")
    if NO_CHANGE in value:
        if len(value) != 1:
            raise SchemaError(f"{where}: {NO_CHANGE!r} cannot be combined with other values")
        return NoChange()
    if len(value) == 1 and value[0] in PLACEHOLDER_KINDS:
        return Placeholder(value[0])
    for v in value:
        if isinstance(v, bool) or not isinstance(v, (int, float, str)):
            raise SchemaError(f"{where}: unsupported literal {v!r}")
        if isinstance(v, str) and v in PLACEHOLDER_KINDS:
            raise SchemaError(f"{where}: placeholder {v!r} mixed with literals")
    return ValueChoice(tuple(value))


def _parse_style(value, where: str, multi: bool) -> StyleChoice:
    if not isinstance(value, dict) or not value:
        raise SchemaError(f"{where}: style must be a non-empty object")
    alts = []
    for name, body in value.items():
        if not name or not isinstance(name, str):
            raise SchemaError(f"{where}: empty alternative name")
        if body == NO_CHANGE or body == {}:
            specs: tuple = ()
        elif isinstance(body, dict):
            specs = _parse_group(body, f"{where}.{name}")
        else:
            specs = (_parse_leaf(body, f"{where}.{name}"),)
        alts.append((name, specs))
    return StyleChoice(tuple(alts), multi=multi)


# --------------------------------------------------------------------------
# matching: tokens -> parsed tree
#
# A parsed tree mirrors a spec list: plain specs map to a token string,
# StyleChoice maps to a list of (keyword, subtree) pairs.


def _token_matches(spec: ArgSpec, token: str, identifiers: Sequence[str]) -> bool:
    if isinstance(spec, NoChange):
        return True
    if isinstance(spec, Placeholder):
        if spec.kind == "integer":
            return bool(_INT_TOKEN.match(token))
        if spec.kind == "float":
            return _is_float(token)
        if identifiers:
            return token in identifiers
        return bool(_IDENT_TOKEN.match(token))
    if isinstance(spec, ValueChoice):
        return any(_literal_eq(v, token) for v in spec.values)
    return False


def _literal_eq(value, token: str) -> bool:
    if isinstance(value, str):
        return value == token
    if not _is_float(token):
        return False
    return float(token) == float(value)


def _is_float(token: str) -> bool:
    try:
        x = float(token)
    except ValueError:
        return False
    return math.isfinite(x)


def _match(specs: Sequence, tokens: Sequence[str], pos: int, identifiers):
    tree = []
    for spec in specs:
        if isinstance(spec, StyleChoice):
            chosen = []
            while pos < len(tokens) and tokens[pos] in spec.names():
                if chosen and not spec.multi:
                    break
                name = tokens[pos]
                sub = _match(spec.specs_for(name), tokens, pos + 1, identifiers)
                if sub is None:
                    return None
                subtree, pos = sub
                chosen.append((name, subtree))
            if not chosen:
                return None
            tree.append(chosen)
            continue
        if pos >= len(tokens) or not _token_matches(spec, tokens[pos], identifiers):
            return None
        tree.append(tokens[pos])
        pos += 1
    return tree, pos


def parse_args(g: Grammar, line: ScriptLine):
    """Return the parsed argument tree of ``line``, or None if it does not conform."""
    res = _match(g.specs(line.command), line.args, 0, g.identifiers)
    if res is None:
        return None
    tree, pos = res
    if pos != len(line.args):
        return None
    return tree


def conforms(g: Grammar, line: ScriptLine) -> bool:
    if line.command not in g:
        return False
    return parse_args(g, line) is not None


# --------------------------------------------------------------------------
# generation


def _fresh(spec: Placeholder, rng: random.Random, identifiers) -> str:
    if spec.kind == "integer":
        return str(rng.randint(*INT_RANGE))
    if spec.kind == "float":
        lo, hi = (math.log10(x) for x in FLOAT_RANGE)
        return f"{10 ** rng.uniform(lo, hi):.6g}"
    if not identifiers:
        raise MissingBase("identifier placeholder with an empty identifier pool")
    return rng.choice(identifiers)


def _literal(value) -> str:
    return value if isinstance(value, str) else repr(value) if isinstance(value, float) else str(value)


def _emit(specs, base, rng, identifiers, fallback, orig=(), out=None) -> list[str]:
    """Generate tokens for ``specs``.

    ``base`` is a parsed tree aligned with ``specs`` (or None); NoChange
    positions copy from it, then from the ``fallback`` trees, and last from
    the token at the same output position of ``orig``.
    """
    if out is None:
        out = []
    for i, spec in enumerate(specs):
        if isinstance(spec, StyleChoice):
            names = spec.names()
            k = 1
            if spec.multi and len(names) > 1 and rng.random() < TWO_STYLE_PROB:
                k = 2
            picked = rng.sample(names, k)
            picked.sort(key=names.index)
            for name in picked:
                sub_base = _style_base(base, i, name)
                sub_fallback = [t for t in (_style_base(f, i, name) for f in fallback) if t is not None]
                out.append(name)
                _emit(spec.specs_for(name), sub_base, rng, identifiers, sub_fallback, orig, out)
        elif isinstance(spec, ValueChoice):
            out.append(_literal(rng.choice(spec.values)))
        elif isinstance(spec, Placeholder):
            out.append(_fresh(spec, rng, identifiers))
        else:
            for tree in (base, *fallback):
                if tree is not None and i < len(tree) and isinstance(tree[i], str):
                    out.append(tree[i])
                    break
            else:
                if len(out) < len(orig):
                    out.append(orig[len(out)])
                else:
                    raise MissingBase(f"no existing value for NoChange position {i}")
    return out


def _style_base(tree, i, name):
    if tree is None or i >= len(tree) or not isinstance(tree[i], list):
        return None
    for alt, sub in tree[i]:
        if alt == name:
            return sub
    return None


def mutate_line(
    g: Grammar,
    line: ScriptLine,
    rng: random.Random,
    defaults: Mapping[str, Sequence[ScriptLine]] | None = None,
) -> ScriptLine:
    """Return a grammar-directed mutation of ``line``.

    Value choices are redrawn uniformly, placeholders get fresh values,
    NoChange positions are copied verbatim and style positions are rebuilt.
    Raises UnknownCommand when the grammar does not know the command.
    """
    specs = g.specs(line.command)
    base = parse_args(g, line)
    if base is None:
        base = _loose_base(specs, line.args)
    fallback = _default_trees(g, line.command, defaults)
    args = _emit(specs, base, rng, g.identifiers, fallback, line.args)
    return ScriptLine(line.index, line.command, tuple(args))


def sample_command(
    g: Grammar,
    name: str,
    rng: random.Random,
    defaults: Mapping[str, Sequence[ScriptLine]] | None = None,
    index: int = 0,
) -> ScriptLine:
    """Draw a fresh grammar-conformant line for ``name``.

    NoChange positions are copied from the per-command default lines.
    """
    specs = g.specs(name)
    fallback = _default_trees(g, name, defaults)
    base = fallback[0] if fallback else None
    args = _emit(specs, base, rng, g.identifiers, fallback[1:])
    return ScriptLine(index, name, tuple(args))


def _default_trees(g: Grammar, name: str, defaults) -> list:
    if not defaults:
        return []
    trees = []
    for line in defaults.get(name, ()):
        tree = parse_args(g, line)
        if tree is not None:
            trees.append(tree)
    return trees


def _loose_base(specs, args: Sequence[str]) -> list:
    # positional fallback for lines that do not fully conform
    tree: list = []
    for i, spec in enumerate(specs):
        if isinstance(spec, StyleChoice):
            tree.append(None)
        else:
            tree.append(args[i] if i < len(args) else None)
    return tree


def command_defaults(lines) -> dict[str, list[ScriptLine]]:
    """Group corpus lines by command, preserving first-seen order."""
    out: dict[str, list[ScriptLine]] = {}
    for line in lines:
        out.setdefault(line.command, []).append(line)
    return out
