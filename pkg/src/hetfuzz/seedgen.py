"""Seed script generation with error-feedback refinement.

A generator is any callable ``(prompt, params) -> text``.  Each candidate
is validated on the simulator; on failure the diagnostic (or a request to
shorten the run) is appended to the prompt and the generator is asked
again, up to ``max_attempts`` times per parameter combination.
"""

from __future__ import annotations

import json
import logging
import os
import random
import re
import time
import urllib.error
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

from hetfuzz.grammar import Grammar, MissingBase, command_defaults, mutate_line
from hetfuzz.minisim import BackendConfig, parse_script, run_simulation
from hetfuzz.minisim.script import ScriptParseError

log = logging.getLogger(__name__)

PROMPT_TEMPLATE = (
    "You are a helpful assistant who understands how to use <SUT name> for scientific simulation. "
    "Generate a simulation script that can be executed on <SUT name> to simulate <simulation description>. "
    "Do not provide any explanations and do not add any comments and blank lines in the script."
)
TIMEOUT_FEEDBACK = "modify the script to reduce the execution time"
FEEDBACK_SEPARATOR = "\n"

CANONICAL_ORDER = (
    "units",
    "dimension",
    "boundary",
    "atom_style",
    "lattice",
    "region",
    "create_box",
    "create_atoms",
    "mass",
    "set",
    "pair_style",
    "pair_coeff",
    "timestep",
    "thermo",
    "thermo_style",
    "velocity",
    "fix",
    "run",
)

_COMMAND_TOKEN = re.compile(r"^[a-z_][a-z0-9_/]*$")
_FENCE = re.compile(r"```[^\n]*\n(.*?)```", re.S)


class EmptyInput(ValueError):
    pass


class ExecutorUnavailable(RuntimeError):
    pass


class GeneratorUnavailable(RuntimeError):
    pass


@dataclass(frozen=True)
class SeedRequest:
    sim_desc: str
    sut_name: str = "MiniSim"
    max_attempts: int = 3
    generator_params: tuple = ({"temperature": 0.7},)
    validation_timeout: float = 10.0

    def __post_init__(self):
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")
        if not self.validation_timeout > 0:
            raise ValueError("validation_timeout must be positive")
        if not self.generator_params:
            raise ValueError("generator_params must not be empty")
        object.__setattr__(self, "generator_params", tuple(dict(p) for p in self.generator_params))


@dataclass
class ValidationResult:
    status: str  # ok | error | timeout
    error_text: str = ""

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass
class SeedRecord:
    script: str
    attempt: int
    params: dict
    prompt_transcript: list = field(default_factory=list)
    patch: Optional[list] = None

    def meta(self) -> dict:
        return {
            "attempt": self.attempt,
            "params": self.params,
            "transcript": self.prompt_transcript,
            "patch": self.patch,
        }


def build_prompt(sut_name: str, sim_desc: str) -> str:
    if not sut_name or not sut_name.strip() or not sim_desc or not sim_desc.strip():
        raise EmptyInput("SUT name and simulation description must be non-empty")
    return PROMPT_TEMPLATE.replace("<SUT name>", sut_name).replace("<simulation description>", sim_desc)


def refine_prompt(prompt: str, result: ValidationResult) -> str:
    if result.status == "timeout":
        return prompt + FEEDBACK_SEPARATOR + TIMEOUT_FEEDBACK
    if result.status == "error":
        return prompt + FEEDBACK_SEPARATOR + result.error_text
    raise ValueError("only failed validations can refine a prompt")


def minisim_executor(backend: str = "host") -> Callable:
    cfg = BackendConfig(backend)

    def execute(script: str, timeout: float):
        return run_simulation(script, cfg, timeout)

    return execute


def validate_script(script: str, executor: Optional[Callable] = None, timeout: float = 10.0) -> ValidationResult:
    """Run ``script`` once and report ok, the first diagnostic, or timeout."""
    if executor is None:
        executor = minisim_executor()
    if not callable(executor):
        raise ExecutorUnavailable("executor is not callable")
    report = executor(script, timeout)
    if report.status == "completed":
        return ValidationResult("ok")
    if report.status == "timeout":
        return ValidationResult("timeout")
    text = report.error_text.splitlines()[0] if report.error_text else "error"
    loc = f" ({report.error_location})" if report.error_location else ""
    return ValidationResult("error", f"ERROR: {text}{loc}")


def parse_response(text: str, known_commands: Sequence[str] = CANONICAL_ORDER) -> str:
    """Pull a script out of a free-form generator response.

    Fenced code blocks win when present.  Blank lines, comment lines and
    lines that do not start with a plausible command are dropped; a leading
    line number (``12 pair_style ...``) is stripped.
    """
    blocks = _FENCE.findall(text)
    body = "\n".join(blocks) if blocks else text
    known = set(known_commands)
    out = []
    for raw in body.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        if tokens[0].isdigit() and len(tokens) > 1:
            tokens = tokens[1:]
        head = tokens[0]
        if head in known or (_COMMAND_TOKEN.match(head) and not line.endswith((":", ".", "?", "!"))):
            out.append(" ".join(tokens))
    return "".join(line + "\n" for line in out)


def generate_seeds(
    req: SeedRequest,
    generator: Callable[[str, dict], str],
    executor: Optional[Callable] = None,
    patches: Optional[Mapping[int, list]] = None,
) -> list[SeedRecord]:
    """Generate at most one validated script per parameter combination."""
    records = []
    base_prompt = build_prompt(req.sut_name, req.sim_desc)
    for combo_index, params in enumerate(req.generator_params):
        prompt = base_prompt
        transcript: list[str] = []
        attempt = 1
        while attempt <= req.max_attempts:
            transcript.append(prompt)
            try:
                raw = generator(prompt, params)
            except GeneratorUnavailable as exc:
                log.warning("generator unavailable for combination %d: %s", combo_index, exc)
                break
            script = parse_response(raw)
            patch = (patches or {}).get(combo_index)
            if patch:
                script = apply_patch(script, patch)
            result = validate_script(script, executor, req.validation_timeout)
            if result.ok:
                records.append(SeedRecord(script, attempt, dict(params), list(transcript), patch or None))
                break
            prompt = refine_prompt(prompt, result)
            attempt += 1
    return records


# --------------------------------------------------------------------------
# generators


class OfflineGenerator:
    """Rewrites a corpus script line by line with grammar mutations.

    Each call picks one template script and mutates every line with
    probability ``rate``, so multi-line commands such as per-type
    ``pair_coeff`` stay consistent with the template's ``create_box``.
    Output depends only on ``(rng_seed, params, prompt)``.
    """

    def __init__(self, grammar: Grammar, templates: Sequence[str], rng_seed: int = 0, rate: float = 0.5):
        if not templates:
            raise EmptyInput("the offline generator needs at least one template script")
        self.grammar = grammar
        self.templates = [parse_script(t) for t in templates]
        self.defaults = command_defaults([line for t in self.templates for line in t])
        self.rng_seed = rng_seed
        self.rate = rate
        self.calls = 0

    @classmethod
    def from_corpus(cls, grammar: Grammar, scripts: Sequence[str], rng_seed: int = 0) -> "OfflineGenerator":
        return cls(grammar, scripts, rng_seed)

    def __call__(self, prompt: str, params: dict) -> str:
        self.calls += 1
        key = json.dumps([self.rng_seed, params, prompt], sort_keys=True)
        rng = random.Random(key)
        rate = min(1.0, self.rate * float(params.get("temperature", 1.0)) * 2)
        out = []
        for line in rng.choice(self.templates):
            if line.command in self.grammar and rng.random() < rate:
                try:
                    line = mutate_line(self.grammar, line, rng, self.defaults)
                except MissingBase:
                    pass
            out.append(line.render())
        return "\n".join(out) + "\n"


class RemoteGenerator:
    """Chat-completion client for an OpenAI-style HTTP endpoint.

    The API key is read from the environment variable named by
    ``api_key_env``.  Transient failures (429 and 5xx) are retried with
    exponential backoff.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str = "OPENAI_API_KEY",
        timeout: float = 60.0,
        retries: int = 3,
        backoff: float = 1.0,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.retries = retries
        self.backoff = backoff

    def payload(self, prompt: str, params: dict) -> dict:
        body = {"model": self.model, "messages": [{"role": "user", "content": prompt}]}
        body.update(params)
        return body

    def __call__(self, prompt: str, params: dict) -> str:
        data = json.dumps(self.payload(prompt, params)).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_env)
        if key:
            headers["Authorization"] = f"Bearer {key}"
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            req = urllib.request.Request(self.endpoint, data=data, headers=headers, method="POST")
            try:
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    doc = json.loads(resp.read().decode("utf-8"))
                return extract_message(doc)
            except urllib.error.HTTPError as exc:
                last = exc
                if exc.code != 429 and exc.code < 500:
                    raise GeneratorUnavailable(f"HTTP {exc.code} from {self.endpoint}") from exc
            except (urllib.error.URLError, OSError, ValueError) as exc:
                last = exc
            if attempt < self.retries:
                time.sleep(self.backoff * 2**attempt)
        raise GeneratorUnavailable(f"{self.endpoint} unreachable: {last}")


def extract_message(doc: dict) -> str:
    try:
        return doc["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError):
        raise GeneratorUnavailable("malformed chat-completion response") from None


# --------------------------------------------------------------------------
# manual fix-ups and corpus files


def apply_patch(script: str, ops: Sequence[dict]) -> str:
    """Apply line edits to a generated script.

    Each op is ``{"op": "replace"|"insert"|"delete", "line": n, "text": s}``
    with 1-based line numbers referring to the script before any edit.
    """
    lines = script.splitlines()
    edits = sorted(ops, key=lambda o: (o["line"], o["op"] != "insert"), reverse=True)
    for op in edits:
        i = op["line"] - 1
        kind = op["op"]
        if kind == "replace":
            lines[i] = op["text"]
        elif kind == "delete":
            del lines[i]
        elif kind == "insert":
            lines.insert(i, op["text"])
        else:
            raise ValueError(f"unknown patch op {kind!r}")
    return "".join(line + "\n" for line in lines)


def save_seed(record: SeedRecord, directory, k: int, provenance: Optional[dict] = None) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    script_path = out / f"seed_{k}.script"
    script_path.write_text(record.script, encoding="utf-8")
    meta = record.meta()
    if provenance:
        meta.update(provenance)
    (out / f"seed_{k}.meta").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return script_path


def _seed_number(path: Path) -> int:
    m = re.match(r"seed_(\d+)$", path.stem)
    return int(m.group(1)) if m else 1 << 30


def load_corpus(directory) -> list[tuple[str, str]]:
    """Return ``(name, text)`` for every ``seed_<k>.script`` in numeric order."""
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"seed corpus {root} does not exist")
    paths = sorted(root.glob("seed_*.script"), key=lambda p: (_seed_number(p), p.name))
    return [(p.stem, p.read_text(encoding="utf-8")) for p in paths]


def load_meta(script_path) -> dict:
    meta = Path(script_path).with_suffix(".meta")
    if not meta.exists():
        return {}
    return json.loads(meta.read_text(encoding="utf-8"))


def is_parseable(text: str) -> bool:
    try:
        parse_script(text)
    except ScriptParseError:
        return False
    return True
