"""MiniSim: a small particle-dynamics interpreter with two backends.

Particles in a (partly) periodic box interact through a cutoff spring
force ``F = k (r0 - r) / r * d`` and are advanced with velocity Verlet.
The ``device`` backend runs every kernel on separate device buffers and
sums forces and reductions in a strided order, so clean runs differ from
the ``host`` backend only by floating-point reassociation.

Injected faults are guarded by ``rt.fault(id)``; see :mod:`.bugs`.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from hetfuzz.minisim.runtime import (
    DEVICE,
    HOST,
    IllegalAccess,
    MirroredArray,
    Runtime,
    RuntimeEvent,
    SimError,
    SimTimeout,
    StubReached,
)
from hetfuzz.minisim.script import Script, ScriptParseError, parse_script

THERMO_COLUMNS = ("step", "temp", "pe", "ke", "etotal", "press", "vol")
THERMO_STYLES = {
    "one": ("step", "temp", "pe", "etotal", "press"),
    "multi": THERMO_COLUMNS,
}
DEFAULT_DT = {"lj": 0.005, "metal": 0.001, "real": 0.002}
LATTICE_BASIS = {
    "sc": ((0.0, 0.0, 0.0),),
    "bcc": ((0.0, 0.0, 0.0), (0.5, 0.5, 0.5)),
    "fcc": ((0.0, 0.0, 0.0), (0.0, 0.5, 0.5), (0.5, 0.0, 0.5), (0.5, 0.5, 0.0)),
}
COUL_CONST = 1.0
MAX_ATOMS = 500
# nominal step rate used to turn a timeout into a deterministic step budget;
# a step on MAX_ATOMS atoms takes about 3 ms, so the backstop rarely fires
STEPS_PER_SECOND = 1000
WALL_CLOCK_SLACK = 5.0
# a system this cold only carries rounding noise; rescaling it would
# amplify backend reassociation differences to macroscopic velocities
NOISE_TEMPERATURE = 1e-12

HANDLER_UNITS = (
    "cmd.units",
    "cmd.dimension",
    "cmd.boundary",
    "cmd.atom_style",
    "cmd.lattice.sc",
    "cmd.lattice.bcc",
    "cmd.lattice.fcc",
    "cmd.region",
    "cmd.create_box",
    "cmd.create_atoms.box",
    "cmd.create_atoms.region",
    "cmd.create_atoms.random",
    "cmd.mass",
    "cmd.set.group",
    "cmd.set.type",
    "cmd.velocity.create",
    "cmd.velocity.set",
    "cmd.velocity.scale",
    "cmd.pair_style.soft",
    "cmd.pair_style.soft/coul",
    "cmd.pair_style.zero",
    "cmd.pair_coeff",
    "cmd.timestep",
    "cmd.thermo",
    "cmd.thermo_style",
    "cmd.thermo_modify",
    "cmd.fix.nve",
    "cmd.fix.langevin",
    "cmd.fix.temp/rescale",
    "cmd.fix.viscous",
    "cmd.fix.momentum",
    "cmd.fix.setforce",
    "cmd.unfix",
    "cmd.displace_atoms",
    "cmd.reset_timestep",
    "cmd.run",
)
KERNEL_UNITS = (
    "kern.type_counts",
    "kern.setup_mass",
    "kern.integrate_initial",
    "kern.integrate_final",
    "kern.pbc_wrap",
    "kern.reflect_walls",
    "kern.force_clear",
    "kern.force_soft",
    "kern.force_soft_coul",
    "kern.langevin",
    "kern.viscous",
    "kern.setforce",
    "kern.temp_rescale",
    "kern.momentum_sum",
    "kern.momentum_remove",
    "kern.reduce_ke",
    "kern.reduce_pe",
    "kern.reduce_virial",
    "kern.count_atoms",
)
UNITS = frozenset(HANDLER_UNITS + KERNEL_UNITS)


@dataclass(frozen=True)
class BackendConfig:
    backend: str = HOST
    bug_set: frozenset = frozenset()
    accumulation_order: str = ""

    def __post_init__(self):
        if self.backend not in (HOST, DEVICE):
            raise ValueError(f"unknown backend {self.backend!r}")
        object.__setattr__(self, "bug_set", frozenset(self.bug_set))
        if not self.accumulation_order:
            order = "strided" if self.backend == DEVICE else "natural"
            object.__setattr__(self, "accumulation_order", order)

    def label(self) -> str:
        bugs = ",".join(str(b) for b in sorted(self.bug_set)) or "-"
        return f"{self.backend}[{bugs}]"


@dataclass
class ExecutionReport:
    status: str  # completed | error | timeout
    error_text: str = ""
    error_location: str = ""
    error_kind: str = ""  # parse | semantic | runtime | stub | illegal
    columns: tuple = ()
    thermo: list = field(default_factory=list)
    events: list = field(default_factory=list)
    covered: frozenset = frozenset()
    checkpoints: list = field(default_factory=list)
    fired: frozenset = frozenset()
    violations: int = 0
    reached_dynamics: bool = False
    backend: str = HOST

    @property
    def completed(self) -> bool:
        return self.status == "completed"

    @property
    def valid(self) -> bool:
        """False when the script was rejected before the first timestep."""
        if self.status == "timeout":
            return True
        if self.status == "error" and not self.reached_dynamics:
            return self.error_kind not in ("parse", "semantic", "stub")
        return self.error_kind != "stub"

    def series(self, column: str) -> list[float]:
        return [row[column] for row in self.thermo if column in row]

    def thermo_text(self) -> str:
        """Aligned log text in the style of a simulation log file."""
        out = []
        header = None
        for row in self.thermo:
            cols = tuple(row)
            if cols != header:
                header = cols
                out.append(" ".join(f"{c:>14s}" for c in cols))
            out.append(" ".join(_fmt(row[c]) for c in cols))
        if self.status == "error":
            out.append(f"ERROR: {self.error_text} ({self.error_location})")
        elif self.status == "timeout":
            out.append("ERROR: timeout")
        return "\n".join(out) + "\n"


def _fmt(v: float) -> str:
    if float(v).is_integer() and abs(v) < 1e12:
        return f"{int(v):>14d}"
    return f"{v:>14.8g}"


@dataclass
class _Fix:
    fid: str
    style: str
    params: dict
    order: int


class Simulator:
    """Interprets one script on one backend."""

    def __init__(self, rt: Runtime):
        self.rt = rt
        self.units = "lj"
        self.dim = 3
        self.periodic = [True, True, True]
        self.atom_style = "atomic"
        self.lattice: Optional[tuple[str, float]] = None
        self.regions: dict[str, tuple[np.ndarray, np.ndarray]] = {}
        self.box: Optional[tuple[np.ndarray, np.ndarray]] = None
        self.ntypes = 0
        self.natoms = 0
        self.mass_set: list[bool] = []
        self.coeff_set: set = set()
        self.pair_style: Optional[str] = None
        self.cutoff = 0.0
        self.dt: Optional[float] = None
        self.thermo_every = 0
        self.columns = THERMO_STYLES["one"]
        self.fixes: dict[str, _Fix] = {}
        self.thermo: list[dict] = []
        self.ran = False
        self.last_run_length = 0
        self.run_start = 0
        self.run_length = 0
        self._coeff_uploaded = False
        self._momentum_cache: dict[str, np.ndarray] = {}
        self.x = self.v = self.f = self.type = self.rmass = None
        self.q = self.eatom = self.vatom = None
        self.mass_t = self.coeff = None
        self.dispatch = {
            "units": self.cmd_units,
            "dimension": self.cmd_dimension,
            "boundary": self.cmd_boundary,
            "atom_style": self.cmd_atom_style,
            "lattice": self.cmd_lattice,
            "region": self.cmd_region,
            "create_box": self.cmd_create_box,
            "create_atoms": self.cmd_create_atoms,
            "mass": self.cmd_mass,
            "set": self.cmd_set,
            "velocity": self.cmd_velocity,
            "pair_style": self.cmd_pair_style,
            "pair_coeff": self.cmd_pair_coeff,
            "timestep": self.cmd_timestep,
            "thermo": self.cmd_thermo,
            "thermo_style": self.cmd_thermo_style,
            "thermo_modify": self.cmd_thermo_modify,
            "fix": self.cmd_fix,
            "unfix": self.cmd_unfix,
            "displace_atoms": self.cmd_displace_atoms,
            "reset_timestep": self.cmd_reset_timestep,
            "run": self.cmd_run,
        }

    # ------------------------------------------------------------------
    # helpers

    def err(self, unit: str, message: str) -> SimError:
        return SimError(message, self.rt.loc(unit))

    def need_box(self, unit: str, cmd: str) -> None:
        if self.box is None:
            raise self.err(unit, f"{cmd} command before simulation box is defined")

    def need_args(self, unit: str, cmd: str, args, n: int, exact: bool = True) -> None:
        if len(args) < n or (exact and len(args) != n):
            raise self.err(unit, f"Illegal {cmd} command")

    def num(self, unit: str, tok: str) -> float:
        try:
            x = float(tok)
        except ValueError:
            raise self.err(unit, f"Expected floating point parameter instead of {tok} in input script") from None
        if not math.isfinite(x):
            raise self.err(unit, f"Expected floating point parameter instead of {tok} in input script")
        return x

    def integer(self, unit: str, tok: str) -> int:
        try:
            return int(tok)
        except ValueError:
            raise self.err(unit, f"Expected integer parameter instead of {tok} in input script") from None

    def type_range(self, unit: str, tok: str) -> list[int]:
        if tok == "*":
            return list(range(1, self.ntypes + 1))
        t = self.integer(unit, tok)
        if t < 1 or t > self.ntypes:
            raise self.err(unit, f"Invalid atom type {t}")
        return [t]

    def box_lengths(self) -> np.ndarray:
        lo, hi = self.box
        return hi - lo

    def volume(self) -> float:
        L = self.box_lengths()
        return float(np.prod(L[: self.dim]))

    def dof(self) -> int:
        return max(1, self.dim * self.natoms - self.dim)

    # ------------------------------------------------------------------
    # settings commands

    def cmd_units(self, args):
        u = "cmd.units"
        self.rt.enter(u)
        self.need_args(u, "units", args, 1)
        if self.box is not None:
            raise self.err(u, "Units command after simulation box is defined")
        if args[0] not in DEFAULT_DT:
            raise self.err(u, f"Unknown units style {args[0]}")
        self.units = args[0]

    def cmd_dimension(self, args):
        u = "cmd.dimension"
        self.rt.enter(u)
        self.need_args(u, "dimension", args, 1)
        if self.box is not None:
            raise self.err(u, "Dimension command after simulation box is defined")
        d = self.integer(u, args[0])
        if d not in (2, 3):
            raise self.err(u, "Illegal dimension command")
        self.dim = d

    def cmd_boundary(self, args):
        u = "cmd.boundary"
        self.rt.enter(u)
        self.need_args(u, "boundary", args, 3)
        if self.box is not None:
            raise self.err(u, "Boundary command after simulation box is defined")
        flags = []
        for tok in args:
            if tok not in ("p", "f"):
                raise self.err(u, f"Unknown boundary keyword {tok}")
            flags.append(tok == "p")
        self.periodic = flags

    def cmd_atom_style(self, args):
        u = "cmd.atom_style"
        self.rt.enter(u)
        self.need_args(u, "atom_style", args, 1)
        if self.box is not None:
            raise self.err(u, "Atom_style command after simulation box is defined")
        if args[0] not in ("atomic", "charge"):
            raise self.err(u, f"Unknown atom style {args[0]}")
        self.atom_style = args[0]

    def cmd_lattice(self, args):
        style = args[0] if args else ""
        if style not in LATTICE_BASIS:
            self.rt.enter("cmd.lattice.sc")
            raise self.err("cmd.lattice.sc", f"Unknown lattice style {style}")
        u = f"cmd.lattice.{style}"
        self.rt.enter(u)
        self.need_args(u, "lattice", args, 2)
        a = self.num(u, args[1])
        if a <= 0:
            raise self.err(u, "Lattice spacing must be > 0")
        self.lattice = (style, a)

    def cmd_region(self, args):
        u = "cmd.region"
        self.rt.enter(u)
        self.need_args(u, "region", args, 8)
        rid, style = args[0], args[1]
        if style != "block":
            raise self.err(u, f"Unknown region style {style}")
        if self.lattice is None:
            raise self.err(u, "Use of region with undefined lattice")
        ext = [self.num(u, t) for t in args[2:8]]
        lo = np.array(ext[0::2]) * self.lattice[1]
        hi = np.array(ext[1::2]) * self.lattice[1]
        if np.any(hi <= lo):
            raise self.err(u, "Illegal region block extent")
        self.regions[rid] = (lo, hi)

    def cmd_create_box(self, args):
        u = "cmd.create_box"
        self.rt.enter(u)
        self.need_args(u, "create_box", args, 2)
        if self.box is not None:
            raise self.err(u, "Cannot create_box after simulation box is defined")
        n = self.integer(u, args[0])
        if n < 1 or n > 16:
            raise self.err(u, "Illegal create_box command")
        if args[1] not in self.regions:
            raise self.err(u, f"Create_box region {args[1]} does not exist")
        lo, hi = self.regions[args[1]]
        lo, hi = lo.copy(), hi.copy()
        if self.dim == 2:
            lo[2], hi[2] = -0.5, 0.5
        self.box = (lo, hi)
        self.ntypes = n
        self.mass_set = [False] * (n + 1)
        rt = self.rt
        self.mass_t = rt.alloc("mass", n + 1)
        self.coeff = rt.alloc("pair_coeff", (n + 1, n + 1, 2))
        self._alloc_atoms(0)
        rt.checkpoint(u, self.mass_t)

    def _alloc_atoms(self, n: int, old: Optional[dict] = None) -> None:
        rt = self.rt
        self.x = rt.alloc("x", (n, 3))
        self.v = rt.alloc("v", (n, 3))
        self.f = rt.alloc("f", (n, 3))
        self.type = rt.alloc("type", n, dtype=np.int64)
        self.rmass = rt.alloc("rmass", n)
        self.eatom = rt.alloc("eatom", n)
        self.vatom = rt.alloc("vatom", n)
        if self.atom_style == "charge":
            self.q = rt.alloc("q", n)
        if old:
            m = len(old["x"])
            for name, data in old.items():
                getattr(self, name).host[:m] = data

    # ------------------------------------------------------------------
    # atoms

    def cmd_create_atoms(self, args):
        style = args[1] if len(args) > 1 else "box"
        if style not in ("box", "region", "random"):
            style = "box"
        u = f"cmd.create_atoms.{style}"
        rt = self.rt
        rt.enter(u)
        self.need_box(u, "Create_atoms")
        if len(args) < 2 or args[1] != style:
            raise self.err(u, "Illegal create_atoms command")
        t = self.integer(u, args[0])
        if t < 1 or t > self.ntypes:
            raise self.err(u, "Invalid atom type in create_atoms command")
        if style == "box":
            self.need_args(u, "create_atoms", args, 2)
            new = self._lattice_points(self.box, u)
        elif style == "region":
            self.need_args(u, "create_atoms", args, 3)
            if args[2] not in self.regions:
                raise self.err(u, f"Create_atoms region {args[2]} does not exist")
            new = self._lattice_points(self.regions[args[2]], u)
        else:
            self.need_args(u, "create_atoms", args, 5)
            count = self.integer(u, args[2])
            seed = self.integer(u, args[3])
            if count < 0 or seed < 0:
                raise self.err(u, "Illegal create_atoms command")
            if self.natoms + count > MAX_ATOMS:
                raise self.err(u, "Too many atoms")
            if args[4] not in self.regions:
                raise self.err(u, f"Create_atoms region {args[4]} does not exist")
            lo, hi = self.regions[args[4]]
            gen = np.random.default_rng(seed)
            new = lo + gen.random((count, 3)) * (hi - lo)
            if self.dim == 2:
                new[:, 2] = 0.0
        m = len(new)
        if self.natoms + m > MAX_ATOMS:
            raise self.err(u, "Too many atoms")

        # grow: host copies of existing per-atom data must be current
        names = ["x", "v", "type"] + (["q"] if self.q is not None else [])
        arrays = [getattr(self, name) for name in names]
        if style == "box" and rt.fault(17) and self.ran and self.natoms:
            rt.fire(17)
        else:
            rt.sync_host(*arrays)
        old = {name: getattr(self, name).host.copy() for name in names}
        n0 = self.natoms
        self.natoms = n0 + m
        for name in ("x", "v", "f", "type", "rmass", "eatom", "vatom", "q"):
            if getattr(self, name) is not None:
                rt.free(name)
        self._alloc_atoms(self.natoms, old)
        self.x.host[n0:] = new
        self.type.host[n0:] = t
        grown = [self.x, self.v, self.type]
        if self.q is not None:
            grown.append(self.q)
        if style == "region" and rt.fault(5) and n0 > 0:
            # staging buffer allocated for the type upload, never copied or freed
            rt.fire(5)
            rt.events.append(RuntimeEvent("alloc", "type_staging", 8 * m))
            grown.remove(self.type)
            self.type.device[:] = 0
        rt.modify_host(*grown)
        self.rt.parallel_scan("kern.type_counts", lambda: self._type_counts())
        rt.checkpoint(u, self.x, self.type)

    def _type_counts(self) -> np.ndarray:
        rt = self.rt
        rt.sync_device(self.type)
        counts = np.bincount(rt.view(self.type), minlength=self.ntypes + 1)
        return np.cumsum(counts)

    def _lattice_points(self, bounds, unit: str) -> np.ndarray:
        style, a = self.lattice
        lo, hi = bounds
        ilo = np.floor(lo / a - 1e-9).astype(int)
        ihi = np.ceil(hi / a + 1e-9).astype(int)
        if self.dim == 2:
            ilo[2], ihi[2] = 0, 1
        cells = np.prod(np.maximum(ihi - ilo, 0).astype(float))
        if cells * len(LATTICE_BASIS[style]) > 4 * MAX_ATOMS:
            raise SimError("Too many atoms", self.rt.loc(unit))
        pts = []
        for i in range(ilo[0], ihi[0]):
            for j in range(ilo[1], ihi[1]):
                for k in range(ilo[2], ihi[2]):
                    for b in LATTICE_BASIS[style]:
                        if self.dim == 2 and b[2] != 0.0:
                            continue
                        p = (np.array((i, j, k)) + np.array(b)) * a
                        if self.dim == 2:
                            p[2] = 0.0
                            inside = np.all(p[:2] >= lo[:2] - 1e-9) and np.all(p[:2] < hi[:2] - 1e-9)
                        else:
                            inside = np.all(p >= lo - 1e-9) and np.all(p < hi - 1e-9)
                        if inside:
                            pts.append(p)
        return np.array(pts, dtype=np.float64).reshape(-1, 3)

    def cmd_mass(self, args):
        u = "cmd.mass"
        rt = self.rt
        rt.enter(u)
        self.need_box(u, "Mass")
        self.need_args(u, "mass", args, 2)
        types = self.type_range(u, args[0])
        m = self.num(u, args[1])
        if m <= 0:
            raise self.err(u, "Invalid mass value")
        rt.sync_host(self.mass_t)
        for t in types:
            self.mass_t.host[t] = m
            self.mass_set[t] = True
        if args[0] == "*" and rt.fault(1):
            rt.fire(1)
            rt.modify_device(self.mass_t)
        else:
            rt.modify_host(self.mass_t)
        rt.checkpoint(u, self.mass_t)

    def cmd_set(self, args):
        style = args[0] if args else ""
        if style not in ("group", "type"):
            style = "group"
        u = f"cmd.set.{style}"
        rt = self.rt
        rt.enter(u)
        self.need_box(u, "Set")
        self.need_args(u, "set", args, 4)
        if args[0] != style:
            raise self.err(u, f"Illegal set command style {args[0]}")
        if style == "group":
            if args[1] != "all":
                raise self.err(u, f"Could not find set group ID {args[1]}")
            sel = slice(None)
        else:
            t = self.type_range(u, args[1])[0]
            sel = None
        if args[2] != "charge":
            raise self.err(u, f"Unknown set keyword {args[2]}")
        if self.q is None:
            raise self.err(u, "Cannot set attribute charge for atom style atomic")
        value = self.num(u, args[3])
        rt.sync_host(self.q)
        if sel is None:
            rt.sync_host(self.type)
            sel = self.type.host == t
        self.q.host[sel] = value
        if style == "type" and rt.fault(13):
            rt.fire(13)
        else:
            rt.modify_host(self.q)
        rt.checkpoint(u, self.q)

    def cmd_velocity(self, args):
        style = args[1] if len(args) > 1 else ""
        if style not in ("create", "set", "scale"):
            style = "create"
        u = f"cmd.velocity.{style}"
        rt = self.rt
        rt.enter(u)
        self.need_box(u, "Velocity")
        if len(args) < 2 or args[0] != "all" or args[1] != style:
            raise self.err(u, "Illegal velocity command")
        rest = args[2:]
        v = self.v
        n = self.natoms
        if style == "create":
            if len(rest) < 2:
                raise self.err(u, "Illegal velocity command")
            temp = self.num(u, rest[0])
            seed = self.integer(u, rest[1])
            if temp < 0 or seed < 0:
                raise self.err(u, "Illegal velocity create command")
            opts = {"dist": "uniform", "mom": "yes"}
            kw = rest[2:]
            if len(kw) % 2:
                raise self.err(u, "Illegal velocity command")
            for key, val in zip(kw[0::2], kw[1::2]):
                if key == "dist" and val in ("uniform", "gaussian"):
                    opts[key] = val
                elif key == "mom" and val in ("yes", "no"):
                    opts[key] = val
                else:
                    raise self.err(u, f"Illegal velocity keyword {key} {val}")
            gen = np.random.default_rng(seed)
            if opts["dist"] == "uniform":
                vel = gen.random((n, 3)) - 0.5
            else:
                vel = gen.standard_normal((n, 3))
            if self.dim == 2:
                vel[:, 2] = 0.0
            rt.sync_host(self.type, self.mass_t)
            m = self.mass_t.host[self.type.host]
            if opts["mom"] == "yes" and n > 0 and m.sum() > 0:
                vel -= (m[:, None] * vel).sum(axis=0) / m.sum()
            vel = self._scale_to(vel, m, temp)
            rt.sync_host(v)
            v.host[:] = vel
            if opts["dist"] == "gaussian" and rt.fault(20) and self.ran:
                rt.fire(20)
                rt.deep_copy(v, to_device=False)
            rt.modify_host(v)
        elif style == "set":
            if len(rest) != 3:
                raise self.err(u, "Illegal velocity set command")
            comps = [self.num(u, t) for t in rest]
            if rt.fault(2) and self.ran:
                rt.fire(2)
                raise IllegalAccess("Illegal host access to device view v", rt.loc(u))
            rt.sync_host(v)
            v.host[:] = comps
            if self.dim == 2:
                v.host[:, 2] = 0.0
            rt.modify_host(v)
        else:
            if len(rest) != 1:
                raise self.err(u, "Illegal velocity scale command")
            temp = self.num(u, rest[0])
            if temp < 0:
                raise self.err(u, "Illegal velocity scale command")
            if rt.fault(7) and self.ran:
                rt.fire(7)
            else:
                rt.sync_host(v)
            rt.sync_host(self.type, self.mass_t)
            m = self.mass_t.host[self.type.host]
            v.host[:] = self._scale_to(v.host.copy(), m, temp)
            rt.modify_host(v)
        rt.checkpoint(u, v)

    def _scale_to(self, vel: np.ndarray, m: np.ndarray, temp: float) -> np.ndarray:
        ke2 = float((m[:, None] * vel * vel).sum())
        current = ke2 / self.dof()
        if current <= NOISE_TEMPERATURE:
            return vel
        return vel * math.sqrt(temp / current)

    def cmd_displace_atoms(self, args):
        u = "cmd.displace_atoms"
        rt = self.rt
        rt.enter(u)
        self.need_box(u, "Displace_atoms")
        self.need_args(u, "displace_atoms", args, 5)
        if args[0] != "all" or args[1] != "move":
            raise self.err(u, "Illegal displace_atoms command")
        delta = np.array([self.num(u, t) for t in args[2:5]])
        if self.lattice is not None:
            delta = delta * self.lattice[1]
        if self.dim == 2:
            delta[2] = 0.0
        if rt.fault(8) and self.ran and delta[2] != 0.0:
            rt.fire(8)
        else:
            rt.sync_host(self.x)
        x = self.x.host
        x += delta
        lo, hi = self.box
        L = hi - lo
        for d in range(self.dim):
            if self.periodic[d]:
                x[:, d] = lo[d] + np.mod(x[:, d] - lo[d], L[d])
            else:
                # walls mirror displaced atoms back inside
                x[:, d] = np.where(x[:, d] < lo[d], 2 * lo[d] - x[:, d], x[:, d])
                x[:, d] = np.where(x[:, d] > hi[d], 2 * hi[d] - x[:, d], x[:, d])
        rt.modify_host(self.x)
        rt.checkpoint(u, self.x)

    # ------------------------------------------------------------------
    # interactions

    def cmd_pair_style(self, args):
        style = args[0] if args else ""
        if style not in ("soft", "soft/coul", "zero"):
            self.rt.enter("cmd.pair_style.soft")
            raise self.err("cmd.pair_style.soft", f"Unrecognized pair style {style}")
        u = f"cmd.pair_style.{style}"
        self.rt.enter(u)
        self.need_args(u, "pair_style", args, 2)
        rc = self.num(u, args[1])
        if rc <= 0:
            raise self.err(u, "Illegal pair_style cutoff")
        if style == "soft/coul" and self.atom_style != "charge":
            raise self.err(u, "Pair style soft/coul requires atom attribute q")
        self.pair_style = style
        self.cutoff = rc

    def cmd_pair_coeff(self, args):
        u = "cmd.pair_coeff"
        rt = self.rt
        rt.enter(u)
        self.need_box(u, "Pair_coeff")
        if self.pair_style is None:
            raise self.err(u, "Pair coeffs are set before pair style is defined")
        if self.pair_style == "zero":
            if len(args) < 2:
                raise self.err(u, "Incorrect args for pair coefficients")
            for i in self.type_range(u, args[0]):
                for j in self.type_range(u, args[1]):
                    self.coeff_set.add((min(i, j), max(i, j)))
            return
        self.need_args(u, "pair_coeff", args, 4)
        ti = self.type_range(u, args[0])
        tj = self.type_range(u, args[1])
        k = self.num(u, args[2])
        r0 = self.num(u, args[3])
        if k < 0 or r0 <= 0:
            raise self.err(u, "Incorrect args for pair coefficients")
        rt.sync_host(self.coeff)
        c = self.coeff.host
        for i in ti:
            for j in tj:
                c[i, j] = c[j, i] = (k, r0)
                self.coeff_set.add((min(i, j), max(i, j)))
        rt.modify_host(self.coeff)
        rt.checkpoint(u, self.coeff)

    # ------------------------------------------------------------------
    # output / control settings

    def cmd_timestep(self, args):
        u = "cmd.timestep"
        self.rt.enter(u)
        self.need_args(u, "timestep", args, 1)
        dt = self.num(u, args[0])
        if dt <= 0:
            raise self.err(u, "Timestep must be > 0")
        self.dt = dt

    def cmd_thermo(self, args):
        u = "cmd.thermo"
        self.rt.enter(u)
        self.need_args(u, "thermo", args, 1)
        n = self.integer(u, args[0])
        if n < 0:
            raise self.err(u, "Illegal thermo command")
        self.thermo_every = n

    def cmd_thermo_style(self, args):
        u = "cmd.thermo_style"
        self.rt.enter(u)
        if not args:
            raise self.err(u, "Illegal thermo_style command")
        if args[0] in THERMO_STYLES:
            self.need_args(u, "thermo_style", args, 1)
            self.columns = THERMO_STYLES[args[0]]
            return
        if args[0] != "custom" or len(args) < 2:
            raise self.err(u, f"Illegal thermo_style command")
        cols = []
        for c in args[1:]:
            if c not in THERMO_COLUMNS:
                raise self.err(u, f"Unknown keyword '{c}' in thermo_style custom command")
            if c not in cols:
                cols.append(c)
        if "step" not in cols:
            cols.insert(0, "step")
        self.columns = tuple(cols)

    def cmd_thermo_modify(self, args):
        u = "cmd.thermo_modify"
        self.rt.enter(u)
        if not args or len(args) % 2:
            raise self.err(u, "Illegal thermo_modify command")
        for key, val in zip(args[0::2], args[1::2]):
            if key not in ("flush", "norm") or val not in ("yes", "no"):
                raise self.err(u, f"Illegal thermo_modify keyword {key}")

    def cmd_reset_timestep(self, args):
        u = "cmd.reset_timestep"
        self.rt.enter(u)
        self.need_args(u, "reset_timestep", args, 1)
        n = self.integer(u, args[0])
        if n < 0:
            raise self.err(u, "Timestep must be >= 0")
        if self.thermo and n <= self.thermo[-1]["step"]:
            raise self.err(u, "Cannot reset timestep backwards past logged output")
        self.rt.step = n

    # ------------------------------------------------------------------
    # fixes

    def cmd_fix(self, args):
        style = args[2] if len(args) > 2 else ""
        if style not in ("nve", "langevin", "temp/rescale", "viscous", "momentum", "setforce"):
            self.rt.enter("cmd.fix.nve")
            raise self.err("cmd.fix.nve", f"Unrecognized fix style {style}")
        u = f"cmd.fix.{style}"
        rt = self.rt
        rt.enter(u)
        self.need_box(u, "Fix")
        fid, group, rest = args[0], args[1], args[3:]
        if group != "all":
            raise self.err(u, f"Could not find fix group ID {group}")
        p: dict = {}
        if style == "nve":
            self.need_args(u, "fix nve", rest, 0)
        elif style == "langevin":
            self.need_args(u, "fix langevin", rest, 4)
            p["t_start"], p["t_stop"], p["damp"] = (self.num(u, t) for t in rest[:3])
            p["seed"] = self.integer(u, rest[3])
            if p["damp"] <= 0 or p["t_start"] < 0 or p["t_stop"] < 0 or p["seed"] < 0:
                raise self.err(u, "Illegal fix langevin command")
        elif style == "temp/rescale":
            self.need_args(u, "fix temp/rescale", rest, 5)
            p["every"] = self.integer(u, rest[0])
            p["t_start"], p["t_stop"], p["window"], p["fraction"] = (self.num(u, t) for t in rest[1:])
            if p["every"] <= 0 or p["t_start"] < 0 or p["t_stop"] < 0:
                raise self.err(u, "Illegal fix temp/rescale command")
        elif style == "viscous":
            self.need_args(u, "fix viscous", rest, 1)
            p["gamma"] = self.num(u, rest[0])
            if p["gamma"] < 0:
                raise self.err(u, "Illegal fix viscous command")
        elif style == "momentum":
            self.need_args(u, "fix momentum", rest, 1)
            p["every"] = self.integer(u, rest[0])
            if p["every"] <= 0:
                raise self.err(u, "Illegal fix momentum command")
        else:
            self.need_args(u, "fix setforce", rest, 3)
            vals = [math.nan if t == "NULL" else self.num(u, t) for t in rest]
            name = f"fix_setforce_{fid}"
            p["array"] = name
            p["mask"] = np.array([t != "NULL" for t in rest])
            arr = rt.alloc(name, 3)
            arr.host[:] = vals
            rt.modify_host(arr)
        if fid in self.fixes:
            old = self.fixes[fid]
            if old.style != style:
                raise self.err(u, f"Replacing a fix, but new style != old style")
            self._release_fix(old)
            order = old.order
        else:
            order = len(self.fixes)
        self.fixes[fid] = _Fix(fid, style, p, order)

    def cmd_unfix(self, args):
        u = "cmd.unfix"
        self.rt.enter(u)
        self.need_args(u, "unfix", args, 1)
        if args[0] not in self.fixes:
            raise self.err(u, f"Could not find fix ID {args[0]} to delete")
        self._release_fix(self.fixes.pop(args[0]))

    def _release_fix(self, fix: _Fix) -> None:
        name = fix.params.get("array")
        if name and name in self.rt.arrays:
            self.rt.free(name)

    def _fixes(self, *styles) -> list[_Fix]:
        return [f for f in self.fixes.values() if f.style in styles]

    # ------------------------------------------------------------------
    # run

    def cmd_run(self, args):
        u = "cmd.run"
        rt = self.rt
        rt.enter(u)
        self.need_box(u, "Run")
        self.need_args(u, "run", args, 1)
        nsteps = self.integer(u, args[0])
        if nsteps < 0:
            raise self.err(u, "Invalid run command N value")
        if self.natoms == 0:
            raise self.err(u, "No atoms in simulation")
        for t in range(1, self.ntypes + 1):
            if not self.mass_set[t]:
                raise self.err(u, "Not all per-type masses are set")
        if self.pair_style in ("soft", "soft/coul"):
            for i in range(1, self.ntypes + 1):
                for j in range(i, self.ntypes + 1):
                    if (i, j) not in self.coeff_set:
                        raise self.err(u, "All pair coeffs are not set")
        dt = self.dt if self.dt is not None else DEFAULT_DT[self.units]

        if rt.fault(14) and self.ran and self.last_run_length >= 40:
            # setup re-uploads the host mirror unconditionally
            rt.fire(14)
            rt.deep_copy(self.v, to_device=True)
            self.v.host_modified = False
        rt.checkpoint(u, self.v)

        self.run_start = rt.step
        self.run_length = nsteps
        self._setup()
        self.ran = True
        for _ in range(nsteps):
            rt.check_deadline()
            rt.step += 1
            self._step(dt)
        self.last_run_length = nsteps

    def _setup(self) -> None:
        rt = self.rt
        rt.parallel_for("kern.setup_mass", self._k_setup_mass)
        rt.checkpoint("kern.setup_mass", self.rmass)
        self._compute_forces()
        self._post_force()
        self._thermo(force=True)

    def _step(self, dt: float) -> None:
        rt = self.rt
        nve = self._fixes("nve")
        for fix in nve:
            rt.parallel_for("kern.integrate_initial", lambda: self._k_integrate_initial(dt))
            rt.checkpoint("kern.integrate_initial", self.x, self.v)
        self._boundaries()
        self._compute_forces()
        self._post_force()
        for i, fix in enumerate(nve):
            stale = i > 0 and rt.fault(11)
            rt.parallel_for("kern.integrate_final", lambda: self._k_integrate_final(dt, stale))
            rt.checkpoint("kern.integrate_final", self.v)
        self._end_of_step()
        self._thermo()

    def _thermo(self, force: bool = False) -> None:
        step = self.rt.step
        last = step == self.run_start + self.run_length
        due = self.thermo_every > 0 and step % self.thermo_every == 0
        if not (force or last or due):
            return
        if self.thermo and self.thermo[-1]["step"] >= step:
            return
        self._check_lost()
        cols = self.columns
        row = {"step": float(step)}
        ke = pe = virial = None
        if any(c in cols for c in ("temp", "ke", "etotal", "press")):
            ke = self._reduce_ke()
        if any(c in cols for c in ("pe", "etotal")):
            pe = self._reduce_pe()
        if "press" in cols:
            virial = self._reduce_virial()
        vol = self.volume()
        for c in cols:
            if c == "temp":
                row[c] = 2.0 * ke / self.dof()
            elif c == "ke":
                row[c] = ke
            elif c == "pe":
                row[c] = pe
            elif c == "etotal":
                row[c] = pe + ke
            elif c == "press":
                row[c] = (2.0 * ke + virial) / (self.dim * vol)
            elif c == "vol":
                row[c] = vol
        self.thermo.append(row)

    # ------------------------------------------------------------------
    # kernels

    def _k_setup_mass(self):
        rt = self.rt
        rt.sync_device(self.type, self.mass_t)
        rt.view(self.rmass)[:] = rt.view(self.mass_t)[rt.view(self.type)]
        rt.modify_device(self.rmass)

    def _k_integrate_initial(self, dt: float):
        rt = self.rt
        rt.sync_device(self.x, self.v, self.f, self.rmass)
        x, v, f, m = (rt.view(a) for a in (self.x, self.v, self.f, self.rmass))
        v += 0.5 * dt * f / m[:, None]
        if self.dim == 2:
            v[:, 2] = 0.0
        x += dt * v
        rt.modify_device(self.x, self.v)

    def _k_integrate_final(self, dt: float, stale: bool):
        rt = self.rt
        rt.sync_device(self.v, self.f, self.rmass)
        f = self.f.host if stale else rt.view(self.f)
        if stale:
            rt.fire(11)
        v, m = rt.view(self.v), rt.view(self.rmass)
        v += 0.5 * dt * f / m[:, None]
        if self.dim == 2:
            v[:, 2] = 0.0
        rt.modify_device(self.v)

    def _boundaries(self) -> None:
        rt = self.rt
        if any(self.periodic[: self.dim]):
            rt.parallel_for("kern.pbc_wrap", self._k_pbc_wrap)
            rt.checkpoint("kern.pbc_wrap", self.x)
        if not all(self.periodic[: self.dim]):
            rt.parallel_for("kern.reflect_walls", self._k_reflect)
            rt.checkpoint("kern.reflect_walls", self.x, self.v)

    def _k_pbc_wrap(self):
        rt = self.rt
        rt.sync_device(self.x)
        x = rt.view(self.x)
        lo, hi = self.box
        L = hi - lo
        for d in range(self.dim):
            if self.periodic[d]:
                x[:, d] = lo[d] + np.mod(x[:, d] - lo[d], L[d])
        if rt.fault(3) and self.periodic[0] and not self.periodic[1]:
            # host thread rewrites the y column while the kernel is in flight
            rt.fire(3)
            x[:, 1] = self.x.host[:, 1]
        rt.modify_device(self.x)

    def _k_reflect(self):
        rt = self.rt
        rt.sync_device(self.x, self.v)
        x, v = rt.view(self.x), rt.view(self.v)
        lo, hi = self.box
        for d in range(self.dim):
            if self.periodic[d]:
                continue
            below = x[:, d] < lo[d]
            x[below, d] = 2 * lo[d] - x[below, d]
            v[below, d] = -v[below, d]
            above = x[:, d] > hi[d]
            x[above, d] = 2 * hi[d] - x[above, d]
            v[above, d] = -v[above, d]
        rt.modify_device(self.x, self.v)

    def _compute_forces(self) -> None:
        rt = self.rt
        if self.pair_style in ("soft", "soft/coul"):
            unit = "kern.force_soft" if self.pair_style == "soft" else "kern.force_soft_coul"
            rt.parallel_for(unit, self._k_force)
            rt.checkpoint(unit, self.f, self.eatom)
        else:
            rt.parallel_for("kern.force_clear", self._k_force_clear)
            rt.checkpoint("kern.force_clear", self.f)

    def _k_force_clear(self):
        rt = self.rt
        rt.sync_device(self.f, self.eatom, self.vatom)
        for a in (self.f, self.eatom, self.vatom):
            rt.view(a)[:] = 0.0
        rt.modify_device(self.f, self.eatom, self.vatom)

    def _k_force(self):
        rt = self.rt
        coul = self.pair_style == "soft/coul"
        if rt.fault(4) and self._coeff_uploaded and self.coeff.host_modified:
            # coefficient table uploaded only once per simulation
            rt.fire(4)
            self.coeff.host_modified = False
        rt.sync_device(self.x, self.type, self.coeff)
        self._coeff_uploaded = True
        if coul:
            rt.sync_device(self.q)
        x = rt.view(self.x)
        typ = rt.view(self.type)
        coeff = rt.view(self.coeff)
        n = len(x)
        d = x[None, :, :] - x[:, None, :]
        lo, hi = self.box
        L = hi - lo
        for k in range(3):
            if k < self.dim and self.periodic[k]:
                d[:, :, k] -= L[k] * np.round(d[:, :, k] / L[k])
        if self.dim == 2:
            d[:, :, 2] = 0.0
        r2 = np.einsum("ijk,ijk->ij", d, d)
        rc = self.cutoff
        mask = (r2 < rc * rc) & (r2 > 1e-20)
        r = np.sqrt(np.where(mask, r2, 1.0))
        kk = coeff[typ[:, None], typ[None, :], 0]
        r0 = coeff[typ[:, None], typ[None, :], 1]
        stretch = r0 - r
        # coef multiplies d (= x_j - x_i) to give the force on i
        coef = np.where(mask, -kk * stretch / r, 0.0)
        epair = np.where(mask, 0.5 * kk * stretch * stretch, 0.0)
        if coul:
            qv = rt.view(self.q)
            qq = COUL_CONST * qv[:, None] * qv[None, :]
            s = 1.0 - r / rc
            coef = coef + np.where(mask, -2.0 * qq * s / (rc * r), 0.0)
            epair = epair + np.where(mask, qq * s * s, 0.0)
        perm = rt.permutation(n)
        if perm is not None:
            coef = coef[:, perm]
            d = d[:, perm]
            epair = epair[:, perm]
            r2w = np.where(mask, r2, 0.0)[:, perm]
        else:
            r2w = np.where(mask, r2, 0.0)
        rt.view(self.f)[:] = np.einsum("ij,ijk->ik", coef, d)
        rt.view(self.eatom)[:] = 0.5 * epair.sum(axis=1)
        # pairwise r.F = -coef * r^2; half to each atom
        rt.view(self.vatom)[:] = -0.5 * (coef * r2w).sum(axis=1)
        rt.modify_device(self.f, self.eatom, self.vatom)

    def _post_force(self) -> None:
        rt = self.rt
        for fix in sorted(self.fixes.values(), key=lambda f: f.order):
            if fix.style == "langevin":
                rt.parallel_for("kern.langevin", lambda: self._k_langevin(fix))
                rt.checkpoint("kern.langevin", self.f)
            elif fix.style == "viscous":
                rt.parallel_for("kern.viscous", lambda: self._k_viscous(fix))
                rt.checkpoint("kern.viscous", self.f)
            elif fix.style == "setforce":
                rt.parallel_for("kern.setforce", lambda: self._k_setforce(fix))
                rt.checkpoint("kern.setforce", self.f)

    def _ramp(self, t_start: float, t_stop: float) -> float:
        if self.run_length <= 0:
            return t_start
        delta = (self.rt.step - self.run_start) / self.run_length
        return t_start + delta * (t_stop - t_start)

    def _k_langevin(self, fix: _Fix):
        rt = self.rt
        p = fix.params
        rt.sync_device(self.v, self.f, self.rmass)
        v, f, m = rt.view(self.v), rt.view(self.f), rt.view(self.rmass)
        target = self._ramp(p["t_start"], p["t_stop"])
        if rt.fault(6) and p["t_start"] != p["t_stop"]:
            # ramped target lives in a host scalar uploaded at setup only
            rt.fire(6)
            target = p["t_start"]
        dt = self.dt if self.dt is not None else DEFAULT_DT[self.units]
        gen = np.random.default_rng((p["seed"], rt.step))
        u = gen.random(v.shape) - 0.5
        gamma1 = -m / p["damp"]
        gamma2 = np.sqrt(m) * math.sqrt(24.0 * target / (p["damp"] * dt))
        df = gamma1[:, None] * v + gamma2[:, None] * u
        if self.dim == 2:
            df[:, 2] = 0.0
        f += df
        rt.modify_device(self.f)

    def _k_viscous(self, fix: _Fix):
        rt = self.rt
        gamma = fix.params["gamma"]
        if rt.fault(10) and gamma >= 0.5:
            rt.fire(10)
            rt.sync_device(self.f)
        else:
            rt.sync_device(self.v, self.f)
        rt.view(self.f)[:] -= gamma * rt.view(self.v)
        rt.modify_device(self.f)

    def _k_setforce(self, fix: _Fix):
        rt = self.rt
        params = rt.arrays[fix.params["array"]]
        mask = fix.params["mask"].copy()
        if self.dim == 2:
            mask[2] = False
        if rt.fault(12) and np.any(params.host[mask] != 0.0):
            rt.fire(12)
        else:
            rt.sync_device(params)
        rt.sync_device(self.f)
        rt.view(self.f)[:, mask] = rt.view(params)[mask]
        rt.modify_device(self.f)

    def _end_of_step(self) -> None:
        rt = self.rt
        step = rt.step
        for fix in sorted(self.fixes.values(), key=lambda f: f.order):
            p = fix.params
            if fix.style == "temp/rescale" and step % p["every"] == 0:
                ke = self._reduce_ke()
                current = 2.0 * ke / self.dof()
                target = self._ramp(p["t_start"], p["t_stop"])
                if rt.fault(15) and p["t_start"] != p["t_stop"]:
                    rt.fire(15)
                    target = p["t_start"]
                # guard band: exact decimal ties must not split on rounding noise
                if current > NOISE_TEMPERATURE and abs(current - target) > p["window"] * (1 + 1e-9) + 1e-12:
                    new = current - p["fraction"] * (current - target)
                    factor = math.sqrt(max(new, 0.0) / current)
                    rt.parallel_for("kern.temp_rescale", lambda: self._k_scale_v(factor))
                    rt.checkpoint("kern.temp_rescale", self.v)
            elif fix.style == "momentum" and step % p["every"] == 0:
                stale = rt.fault(9) and p["every"] == 10
                mom = rt.parallel_reduce("kern.momentum_sum", lambda: self._k_momentum_sum(fix, stale))
                buggy = rt.fault(18) and p["every"] == 1
                rt.parallel_for("kern.momentum_remove", lambda: self._k_momentum_remove(mom, buggy))
                rt.checkpoint("kern.momentum_remove", self.v)

    def _k_scale_v(self, factor: float):
        rt = self.rt
        rt.sync_device(self.v)
        rt.view(self.v)[:] *= factor
        rt.modify_device(self.v)

    def _k_momentum_sum(self, fix: _Fix, stale: bool) -> np.ndarray:
        rt = self.rt
        rt.sync_device(self.v, self.rmass)
        v, m = rt.view(self.v), rt.view(self.rmass)
        perm = rt.permutation(len(m))
        p = m[:, None] * v
        if perm is not None:
            p = p[perm]
        total = np.concatenate([p.sum(axis=0), [m.sum()]])
        if stale:
            # reuses the result of the previous invocation
            rt.fire(9)
            cached = self._momentum_cache.get(fix.fid, np.zeros(4))
            self._momentum_cache[fix.fid] = total
            return cached
        return total

    def _k_momentum_remove(self, mom: np.ndarray, buggy: bool):
        rt = self.rt
        if buggy:
            rt.fire(18)
            v = rt.view(self.v)
            v[:] = self.v.host
        else:
            rt.sync_device(self.v)
            v = rt.view(self.v)
        if mom[3] > 0:
            v -= mom[:3] / mom[3]
        if self.dim == 2:
            v[:, 2] = 0.0
        rt.modify_device(self.v)

    def _reduce_ke(self) -> float:
        rt = self.rt

        def body():
            rt.sync_device(self.v, self.rmass)
            v, m = rt.view(self.v), rt.view(self.rmass)
            e = m * np.einsum("ij,ij->i", v, v)
            perm = rt.permutation(len(e))
            if perm is not None:
                e = e[perm]
            return 0.5 * float(e.sum())

        return rt.parallel_reduce("kern.reduce_ke", body)

    def _reduce_pe(self) -> float:
        rt = self.rt

        def body():
            if rt.fault(16) and self.thermo_every == 1:
                # reduction reads the host mirror of the per-atom energies
                rt.fire(16)
                e = self.eatom.host
            else:
                rt.sync_device(self.eatom)
                e = rt.view(self.eatom)
            perm = rt.permutation(len(e))
            if perm is not None:
                e = e[perm]
            return float(e.sum())

        return rt.parallel_reduce("kern.reduce_pe", body)

    def _reduce_virial(self) -> float:
        rt = self.rt

        def body():
            if rt.fault(19) and self.thermo_every == 2:
                rt.fire(19)
                w = self.vatom.host
            else:
                rt.sync_device(self.vatom)
                w = rt.view(self.vatom)
            perm = rt.permutation(len(w))
            if perm is not None:
                w = w[perm]
            return float(w.sum())

        return rt.parallel_reduce("kern.reduce_virial", body)

    def _check_lost(self) -> None:
        rt = self.rt

        def body():
            rt.sync_device(self.x)
            x = rt.view(self.x)
            lo, hi = self.box
            ok = np.all(np.isfinite(x), axis=1)
            for d in range(self.dim):
                slack = 1e-6 * (hi[d] - lo[d])
                ok &= (x[:, d] >= lo[d] - slack) & (x[:, d] <= hi[d] + slack)
            return float(ok.sum())

        count = int(rt.parallel_reduce("kern.count_atoms", body))
        if count != self.natoms:
            raise SimError(
                f"Lost atoms: original {self.natoms} current {count}",
                rt.loc("kern.count_atoms"),
            )

    # ------------------------------------------------------------------

    def execute(self, script: Script) -> None:
        for line in script:
            handler = self.dispatch.get(line.command)
            if handler is None:
                raise SimError(f"Unknown command: {line.render()}", f"input:{line.index + 1}")
            handler(line.args)


def run_simulation(
    script,
    cfg: BackendConfig,
    timeout: Optional[float] = None,
    stubbed=frozenset(),
) -> ExecutionReport:
    """Run ``script`` (text or :class:`Script`) on one backend.

    A timeout of T seconds allows ``T * STEPS_PER_SECOND`` integration steps,
    so whether a run times out does not depend on machine load. A wall-clock
    backstop at ``WALL_CLOCK_SLACK * T`` catches anything the step count
    misses; only that backstop can make a run impure in
    ``(script, cfg, stubbed, timeout)``.
    """
    deadline = step_limit = None
    if timeout:
        deadline = time.monotonic() + WALL_CLOCK_SLACK * timeout
        step_limit = int(timeout * STEPS_PER_SECOND)
    rt = Runtime(cfg.backend, frozenset(cfg.bug_set), frozenset(stubbed), deadline, step_limit)
    sim = Simulator(rt)
    report = ExecutionReport(status="completed", backend=cfg.backend)
    try:
        if not isinstance(script, Script):
            script = parse_script(script)
        with np.errstate(all="ignore"):
            sim.execute(script)
        rt.free_all()
    except ScriptParseError as exc:
        report.status, report.error_kind = "error", "parse"
        report.error_text, report.error_location = exc.message, f"input:{exc.lineno}"
    except StubReached as exc:
        report.status, report.error_kind = "error", "stub"
        report.error_text, report.error_location = exc.message, exc.location
    except IllegalAccess as exc:
        report.status, report.error_kind = "error", "illegal"
        report.error_text, report.error_location = exc.message, exc.location
    except SimError as exc:
        report.status = "error"
        report.error_kind = "runtime" if sim.ran else "semantic"
        report.error_text, report.error_location = exc.message, exc.location
    except SimTimeout:
        report.status = "timeout"
        report.error_text = "timeout"
    report.columns = _columns(sim.thermo)
    report.thermo = sim.thermo
    report.events = rt.events
    report.covered = frozenset(rt.covered)
    report.checkpoints = rt.checkpoints
    report.fired = frozenset(rt.fired)
    report.violations = rt.violations
    report.reached_dynamics = sim.ran
    return report


def _columns(rows) -> tuple:
    cols: list = []
    for row in rows:
        for c in row:
            if c not in cols:
                cols.append(c)
    return tuple(cols)
