from __future__ import annotations

import re
from dataclasses import dataclass

from hetfuzz.grammar import ScriptLine

_COMMAND = re.compile(r"^[a-z_][a-z0-9_/]*$")
_PRINTABLE = re.compile(r"^[\x21-\x7e]+$")


class ScriptParseError(Exception):
    def __init__(self, message: str, lineno: int = 0):
        super().__init__(f"line {lineno}: {message}" if lineno else message)
        self.message = message
        self.lineno = lineno


@dataclass(frozen=True)
class Script:
    lines: tuple[ScriptLine, ...]

    def __len__(self) -> int:
        return len(self.lines)

    def __iter__(self):
        return iter(self.lines)

    def render(self) -> str:
        return "".join(line.render() + "\n" for line in self.lines)

    def replace(self, line: ScriptLine) -> "Script":
        lines = list(self.lines)
        lines[line.index] = line
        return Script(tuple(lines))


def parse_script(text) -> Script:
    """Split script text into command lines.

    ``#`` starts a comment; blank and comment-only lines are dropped and the
    remaining lines are numbered from 0.  ``text`` may be bytes.
    """
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ScriptParseError(f"invalid UTF-8 at byte {exc.start}") from None
    lines = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0]
        tokens = body.split()
        if not tokens:
            continue
        for tok in tokens:
            if not _PRINTABLE.match(tok):
                raise ScriptParseError(f"unreadable token {tok!r}", lineno)
        if not _COMMAND.match(tokens[0]):
            raise ScriptParseError(f"invalid command name {tokens[0]!r}", lineno)
        lines.append(ScriptLine(len(lines), tokens[0], tuple(tokens[1:])))
    if not lines:
        raise ScriptParseError("empty script")
    return Script(tuple(lines))
