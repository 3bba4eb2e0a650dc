"""Registry of the injectable heterogeneous bugs.

Each entry names the unit that carries its patch and a reproducer script
that exposes it when the bug is active on the device backend only.
"""

from __future__ import annotations

from dataclasses import dataclass

from hetfuzz.minisim.script import Script, parse_script

INCORRECT_SYNC = "Incorrect synchronization between host and device variables"
MISSING_SYNC = "Missing synchronization between host and device variables"
DEVICE_ACCESS = "Accessing memory in device space from host"
MISSED_COPY = "Missed copying variable data from host to device or vice versa"
INCORRECT_COPY = "Incorrect copying of variables from host to device or vice versa"
STALE_DATA = "Use of stale data"
CONCURRENT_MOD = "Concurrent modification to shared variable from host and device"

CATEGORIES = (
    INCORRECT_SYNC,
    MISSING_SYNC,
    DEVICE_ACCESS,
    MISSED_COPY,
    INCORRECT_COPY,
    STALE_DATA,
    CONCURRENT_MOD,
)


@dataclass(frozen=True)
class BugEntry:
    id: int
    category: str
    description: str
    injected_site: str
    reproducer_text: str
    user_reported: bool = False

    @property
    def reproducer(self) -> Script:
        return parse_script(self.reproducer_text)


def _script(
    *,
    boundary="p p p",
    atom_style="atomic",
    pair="pair_style soft 1.3",
    creates=("create_atoms 1 box",),
    masses=("mass 1 1.0",),
    ntypes=1,
    setup=(),
    fixes=("fix 1 all nve",),
    thermo=5,
    velocity="velocity all create 1.0 4928 dist gaussian",
    body=("run 20",),
) -> str:
    lines = [
        "units lj",
        f"boundary {boundary}",
        f"atom_style {atom_style}",
        "lattice fcc 1.5",
        "region box block 0 2 0 2 0 2",
        f"create_box {ntypes} box",
        *creates,
        *masses,
        *setup,
        pair,
        "pair_coeff * * 5.0 1.06",
        f"thermo {thermo}",
        "thermo_style custom step temp pe ke etotal press vol",
        velocity,
        *fixes,
        *body,
    ]
    return "\n".join(lines) + "\n"


_CHARGED = dict(atom_style="charge", pair="pair_style soft/coul 1.3")

_REGISTRY = (
    BugEntry(1, INCORRECT_SYNC, "wildcard mass assignment flags the device copy as modified instead of the host copy",
             "cmd.mass", _script(masses=("mass * 1.0",)), user_reported=True),
    BugEntry(2, DEVICE_ACCESS, "velocity set after a run writes through a device-resident view from the host",
             "cmd.velocity.set", _script(body=("run 10", "velocity all set 0.1 0.0 0.0", "run 10")), user_reported=True),
    BugEntry(3, CONCURRENT_MOD, "periodic wrap races with a host write of the wall-bounded y column",
             "kern.pbc_wrap", _script(boundary="p f p"), user_reported=True),
    BugEntry(4, INCORRECT_SYNC, "pair coefficient table is uploaded to the device only once",
             "kern.force_soft", _script(body=("run 10", "pair_coeff * * 8.0 1.06", "run 10")), user_reported=True),
    BugEntry(5, MISSED_COPY, "appending atoms through a region skips the type upload and leaks a staging buffer",
             "cmd.create_atoms.region", _script(ntypes=2, creates=("create_atoms 1 random 20 71 box", "create_atoms 2 region box"),
                                                masses=("mass 1 1.0", "mass 2 2.0"))),
    BugEntry(6, INCORRECT_SYNC, "langevin ramp target is not refreshed on the device",
             "kern.langevin", _script(fixes=("fix 1 all langevin 0.5 1.5 0.5 123", "fix 2 all nve"))),
    BugEntry(7, MISSING_SYNC, "velocity scale after a run reads stale host velocities",
             "cmd.velocity.scale", _script(body=("run 10", "velocity all scale 1.5", "run 10"))),
    BugEntry(8, MISSING_SYNC, "displace_atoms with a z offset after a run reads stale host positions",
             "cmd.displace_atoms", _script(body=("run 10", "displace_atoms all move 0.0 0.0 0.1", "run 10"))),
    BugEntry(9, STALE_DATA, "momentum removal every 10 steps reuses the previous momentum sum",
             "kern.momentum_sum", _script(velocity="velocity all create 1.0 4928 dist gaussian mom no",
                                          fixes=("fix 1 all nve", "fix 2 all momentum 10"), body=("run 30",))),
    BugEntry(10, MISSING_SYNC, "strong viscous damping reads device velocities without syncing them",
             "kern.viscous", _script(fixes=("fix 1 all nve", "fix 2 all viscous 0.5"))),
    BugEntry(11, INCORRECT_SYNC, "a second nve fix integrates with the host copy of the forces",
             "kern.integrate_final", _script(fixes=("fix 1 all nve", "fix 2 all nve"))),
    BugEntry(12, MISSING_SYNC, "nonzero setforce components are never uploaded to the device",
             "kern.setforce", _script(fixes=("fix 1 all nve", "fix 2 all setforce 0.1 NULL NULL"))),
    BugEntry(13, MISSING_SYNC, "set type after a run does not flag the host charges as modified",
             "cmd.set.type", _script(**_CHARGED, setup=("set type 1 charge 0.5",),
                                     body=("run 10", "set type 1 charge 1.0", "run 10"))),
    BugEntry(14, STALE_DATA, "a run following a long run re-uploads the stale host velocity mirror",
             "cmd.run", _script(body=("run 40", "run 10"))),
    BugEntry(15, INCORRECT_SYNC, "temp/rescale ramp target is not refreshed on the device",
             "kern.temp_rescale", _script(fixes=("fix 1 all nve", "fix 2 all temp/rescale 5 1.0 2.0 0.01 1.0"))),
    BugEntry(16, INCORRECT_SYNC, "per-step potential-energy output reduces the host copy of per-atom energies",
             "kern.reduce_pe", _script(thermo=1)),
    BugEntry(17, MISSING_SYNC, "growing the atom arrays after a run copies stale host data",
             "cmd.create_atoms.box", _script(body=("run 10", "create_atoms 1 box", "run 10"))),
    BugEntry(18, INCORRECT_SYNC, "momentum removal every step starts from the host copy of the velocities",
             "kern.momentum_remove", _script(fixes=("fix 1 all nve", "fix 2 all momentum 1"))),
    BugEntry(19, INCORRECT_SYNC, "pressure output every other step reduces the host copy of the per-atom virial",
             "kern.reduce_virial", _script(thermo=2)),
    BugEntry(20, INCORRECT_COPY, "gaussian velocity creation after a run copies device data over the new host velocities",
             "cmd.velocity.create", _script(body=("run 10", "velocity all create 1.0 99 dist gaussian", "run 10"))),
)

BUG_IDS = tuple(b.id for b in _REGISTRY)


def list_benchmark() -> list[BugEntry]:
    return sorted(_REGISTRY, key=lambda b: b.id)


def get_bug(bug_id: int) -> BugEntry:
    for b in _REGISTRY:
        if b.id == bug_id:
            return b
    raise KeyError(bug_id)


def sites() -> dict[int, str]:
    return {b.id: b.injected_site for b in _REGISTRY}
