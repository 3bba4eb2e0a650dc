"""Dual-backend particle simulator used as the system under test."""

from hetfuzz.minisim.bugs import BUG_IDS, CATEGORIES, BugEntry, get_bug, list_benchmark
from hetfuzz.minisim.engine import (
    UNITS,
    BackendConfig,
    ExecutionReport,
    run_simulation,
)
from hetfuzz.minisim.runtime import (
    DEVICE,
    HOST,
    IllegalAccess,
    MirroredArray,
    RuntimeEvent,
    SimError,
    StubReached,
)
from hetfuzz.minisim.script import Script, ScriptParseError, parse_script

__all__ = [
    "BUG_IDS",
    "CATEGORIES",
    "DEVICE",
    "HOST",
    "UNITS",
    "BackendConfig",
    "BugEntry",
    "ExecutionReport",
    "IllegalAccess",
    "MirroredArray",
    "RuntimeEvent",
    "Script",
    "ScriptParseError",
    "SimError",
    "StubReached",
    "get_bug",
    "list_benchmark",
    "parse_script",
    "run_simulation",
]
