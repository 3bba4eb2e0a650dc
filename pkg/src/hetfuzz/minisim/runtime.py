"""Mirrored host/device memory runtime with kernel-event logging.

On the ``host`` backend both views of a :class:`MirroredArray` alias the
same buffer, so synchronisation is a no-op and emits nothing.  On the
``device`` backend the views are distinct buffers and every transfer is an
explicit ``deep_copy`` event, mirroring a dual-view programming model.
"""

from __future__ import annotations

import time
from math import gcd
from typing import Callable, NamedTuple, Optional

import numpy as np

HOST = "host"
DEVICE = "device"
BACKENDS = (HOST, DEVICE)

EVENT_KINDS = (
    "alloc",
    "dealloc",
    "parallel_for",
    "parallel_scan",
    "parallel_reduce",
    "fence",
    "deep_copy",
)


class SimError(Exception):
    """Semantic failure inside the simulator, tagged with ``unit:step``."""

    def __init__(self, message: str, location: str = ""):
        super().__init__(message)
        self.message = message
        self.location = location

    def __str__(self) -> str:
        if self.location:
            return f"{self.message} ({self.location})"
        return self.message


class StubReached(SimError):
    """Execution entered a unit that the active manifest stubbed out."""


class IllegalAccess(SimError):
    """Host code touched a device-resident view."""


class SimTimeout(Exception):
    pass


class RuntimeEvent(NamedTuple):
    kind: str
    variable: Optional[str] = None
    bytes: int = 0
    kernel_id: Optional[str] = None


class MirroredArray:
    __slots__ = ("name", "host", "device", "host_modified", "device_modified")

    def __init__(self, name: str, host: np.ndarray, device: np.ndarray):
        self.name = name
        self.host = host
        self.device = device
        self.host_modified = False
        self.device_modified = False

    @property
    def nbytes(self) -> int:
        return int(self.host.nbytes)

    def __len__(self) -> int:
        return len(self.host)


def _weights(n: int) -> np.ndarray:
    # fixed irregular weights so that permuted or partial changes do not cancel
    return 1.0 + (np.arange(n, dtype=np.float64) * 0.6180339887498949) % 1.0


_WEIGHTS = _weights(4096)


def fingerprint(a: np.ndarray) -> float:
    flat = np.asarray(a, dtype=np.float64).ravel()
    n = flat.size
    w = _WEIGHTS[:n] if n <= _WEIGHTS.size else _weights(n)
    return float(flat @ w)


class Runtime:
    """Per-run execution context: buffers, event log, coverage, checkpoints."""

    def __init__(
        self,
        backend: str,
        faults: frozenset = frozenset(),
        stubbed: frozenset = frozenset(),
        deadline: Optional[float] = None,
        step_limit: Optional[int] = None,
    ):
        if backend not in BACKENDS:
            raise ValueError(f"unknown backend {backend!r}")
        self.backend = backend
        self.device = backend == DEVICE
        self.faults = faults
        self.stubbed = stubbed
        self.deadline = deadline
        self.step_limit = step_limit
        self.steps_taken = 0
        self.events: list[RuntimeEvent] = []
        self.covered: set[str] = set()
        self.checkpoints: list[tuple[str, int, float]] = []
        self.arrays: dict[str, MirroredArray] = {}
        self.fired: set[int] = set()
        self.violations = 0
        self.step = 0

    # -- control --------------------------------------------------------

    def enter(self, unit: str) -> None:
        if unit in self.stubbed:
            raise StubReached(f"stubbed unit reached: {unit}", self.loc(unit))
        self.covered.add(unit)

    def loc(self, unit: str) -> str:
        return f"{unit}:{self.step}"

    def fault(self, bug_id: int) -> bool:
        """True when ``bug_id`` is compiled into this (device) build."""
        return self.device and bug_id in self.faults

    def fire(self, bug_id: int) -> None:
        self.fired.add(bug_id)

    def check_deadline(self) -> None:
        """Called once per integration step."""
        self.steps_taken += 1
        if self.step_limit is not None and self.steps_taken > self.step_limit:
            raise SimTimeout()
        if self.deadline is not None and time.monotonic() > self.deadline:
            raise SimTimeout()

    # -- memory ---------------------------------------------------------

    def alloc(self, name: str, shape, dtype=np.float64, fill=0) -> MirroredArray:
        if name in self.arrays:
            self.free(name)
        host = np.full(shape, fill, dtype=dtype)
        device = host.copy() if self.device else host
        arr = MirroredArray(name, host, device)
        self.arrays[name] = arr
        if arr.nbytes > 0:
            self.events.append(RuntimeEvent("alloc", name, arr.nbytes))
        return arr

    def free(self, name: str) -> None:
        arr = self.arrays.pop(name)
        if arr.nbytes > 0:
            self.events.append(RuntimeEvent("dealloc", name, arr.nbytes))

    def free_all(self) -> None:
        for name in list(self.arrays):
            self.free(name)

    def deep_copy(self, arr: MirroredArray, to_device: bool) -> None:
        if not self.device:
            return
        if to_device:
            np.copyto(arr.device, arr.host)
        else:
            np.copyto(arr.host, arr.device)
        if arr.nbytes > 0:
            self.events.append(RuntimeEvent("deep_copy", arr.name, arr.nbytes))

    def sync_device(self, *arrays: MirroredArray) -> None:
        for arr in arrays:
            if arr.host_modified:
                self.deep_copy(arr, to_device=True)
                arr.host_modified = False

    def sync_host(self, *arrays: MirroredArray) -> None:
        for arr in arrays:
            if arr.device_modified:
                self.deep_copy(arr, to_device=False)
                arr.device_modified = False

    def modify_host(self, *arrays: MirroredArray) -> None:
        # writing one side while the other holds unsynced data loses it
        if not self.device:
            return
        for arr in arrays:
            if arr.device_modified:
                self.violations += 1
            arr.host_modified = True
            arr.device_modified = False

    def modify_device(self, *arrays: MirroredArray) -> None:
        if not self.device:
            return
        for arr in arrays:
            if arr.host_modified:
                self.violations += 1
            arr.device_modified = True
            arr.host_modified = False

    def view(self, arr: MirroredArray) -> np.ndarray:
        """Buffer a kernel operates on."""
        if arr.host_modified:
            self.violations += 1
        return arr.device

    def effective(self, arr: MirroredArray) -> np.ndarray:
        """Buffer holding the logically current contents of ``arr``."""
        if arr.host_modified:
            return arr.host
        return arr.device

    # -- kernels --------------------------------------------------------

    def parallel_for(self, kernel: str, body: Callable[[], None]) -> None:
        self.enter(kernel)
        body()
        self.events.append(RuntimeEvent("parallel_for", kernel_id=kernel))
        self.fence()

    def parallel_reduce(self, kernel: str, body: Callable[[], float]) -> float:
        self.enter(kernel)
        value = body()
        self.events.append(RuntimeEvent("parallel_reduce", kernel_id=kernel))
        self.fence()
        self.checkpoints.append((kernel, self.step, fingerprint(value)))
        return value

    def parallel_scan(self, kernel: str, body: Callable[[], np.ndarray]) -> np.ndarray:
        self.enter(kernel)
        out = body()
        self.events.append(RuntimeEvent("parallel_scan", kernel_id=kernel))
        self.fence()
        return out

    def fence(self) -> None:
        self.events.append(RuntimeEvent("fence"))

    def checkpoint(self, unit: str, *arrays: MirroredArray) -> None:
        value = 0.0
        for arr in arrays:
            value += fingerprint(self.effective(arr))
        self.checkpoints.append((unit, self.step, value))

    # -- accumulation order --------------------------------------------

    def permutation(self, n: int) -> Optional[np.ndarray]:
        """Strided index order used by device reductions (None on host)."""
        if not self.device or n < 3:
            return None
        stride = _coprime_stride(n)
        return (np.arange(n) * stride) % n


def _coprime_stride(n: int) -> int:
    s = max(2, int(n * 0.618))
    while gcd(s, n) != 1:
        s += 1
    return s
