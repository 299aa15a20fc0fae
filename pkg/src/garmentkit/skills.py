"""Dual-arm skill library: arm allocation, waypoints and feasibility checks.

Each skill expands into a short synchronized waypoint plan.  A waypoint is a
gripper position, a wrist orientation and a gripper command; every arm gets
the same number of steps, with idle arms padded by hold-in-place waypoints
so that step indices line up across arms.

The five skills:

* grasp(p, ...) approaches each contact from above at the lift height,
  descends to it and closes the gripper (3 steps).
* moveto(t, ...) raises each holding gripper to a carry height, traverses
  to the target xy and descends to just above the target (3 steps).  In a
  hanging context the wrist pitches to a fixed tilt, otherwise it stays at
  zero.
* release() opens every gripper (1 step).
* rotate(angle) sweeps the holding grippers about the midpoint between
  them in increments of at most ``rotate_step_deg`` per step.
* pull() moves the two holding grippers apart along the line joining them
  by a tenth of their current separation, half per side (1 step).

Positions are metres in the table frame: origin at the table centre, z up,
z = 0 at the tabletop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import Config, DEFAULTS
from .plans import ArityMismatch

LEFT = "left"
RIGHT = "right"
ARM_ORDER = (LEFT, RIGHT)

OPEN = "open"
CLOSE = "close"
HOLD = "hold"


class NoFreeArm(RuntimeError):
    """More contacts than free grippers."""


class NotHolding(RuntimeError):
    """The skill needs a gripper that currently holds the garment."""


@dataclass(frozen=True)
class ArmState:
    """One arm: fixed base, current gripper pose, gripper status."""

    name: str
    base: Tuple[float, float, float]
    gripper: Tuple[float, float, float]
    gripper_open: bool = True
    holding: bool = False


@dataclass(frozen=True)
class Workspace:
    """Reachable volume: table bounds, per-arm bases and reach radii."""

    table_min: Tuple[float, float] = (-0.4, -0.4)
    table_max: Tuple[float, float] = (0.4, 0.4)
    bases: Dict[str, Tuple[float, float, float]] = field(
        default_factory=lambda: {LEFT: (-0.55, 0.0, 0.0), RIGHT: (0.55, 0.0, 0.0)})
    reach: Dict[str, float] = field(
        default_factory=lambda: {LEFT: 1.2, RIGHT: 1.2})

    def rest_arms(self) -> Dict[str, ArmState]:
        """Both arms parked near their table edge, grippers open."""
        out = {}
        for name in ARM_ORDER:
            bx, by, _ = self.bases[name]
            gx = math.copysign(0.35, bx) if bx else 0.0
            out[name] = ArmState(name, self.bases[name], (gx, by, 0.25))
        return out


@dataclass(frozen=True)
class Waypoint:
    position: Tuple[float, float, float]
    orientation_deg: float = 0.0
    gripper: str = HOLD


@dataclass(frozen=True)
class WaypointPlan:
    """Synchronized per-arm waypoint lists, equal length."""

    skill: str
    steps: Dict[str, Tuple[Waypoint, ...]]

    def __post_init__(self):
        lengths = {len(v) for v in self.steps.values()}
        if len(lengths) > 1:
            raise ValueError("arms must have the same number of steps")

    @property
    def n_steps(self) -> int:
        return len(next(iter(self.steps.values()))) if self.steps else 0


@dataclass(frozen=True)
class FailureReason:
    """A feasibility violation, e.g. OUT_OF_REACH at step 2."""

    kind: str
    step: int
    arm: Optional[str] = None

    def __str__(self) -> str:
        return f"{self.kind}@step {self.step}"


def _dist(a, b) -> float:
    return float(np.linalg.norm(np.asarray(a, float) - np.asarray(b, float)))


def allocate_arms(contacts: Sequence[Tuple[float, float, float]],
                  arms: Dict[str, ArmState]) -> Dict[int, str]:
    """Assign each contact point to a free arm.

    Contacts are taken in order of ascending distance to the nearest free
    gripper; each picks its closest remaining arm, ties going to the left
    arm.  Raises NoFreeArm when contacts outnumber free grippers.
    """
    free = [arms[n] for n in ARM_ORDER if not arms[n].holding]
    if len(contacts) > len(free):
        raise NoFreeArm(f"{len(contacts)} contacts but {len(free)} free arms")
    order = sorted(
        range(len(contacts)),
        key=lambda i: min(_dist(contacts[i], a.gripper) for a in free))
    assignment: Dict[int, str] = {}
    remaining = list(free)
    for i in order:
        remaining.sort(key=lambda a: (_dist(contacts[i], a.gripper),
                                      ARM_ORDER.index(a.name)))
        chosen = remaining.pop(0)
        assignment[i] = chosen.name
    return assignment


def _pad_hold(arm: ArmState, n: int) -> Tuple[Waypoint, ...]:
    return tuple(Waypoint(arm.gripper) for _ in range(n))


def generate_waypoints(skill: str,
                       arms: Dict[str, ArmState],
                       contacts: Sequence[Tuple[float, float, float]] = (),
                       targets: Sequence[Tuple[float, float, float]] = (),
                       angle: Optional[float] = None,
                       hanging: bool = False,
                       cfg: Config = DEFAULTS) -> WaypointPlan:
    """Expand one skill invocation into a WaypointPlan.

    ``contacts`` are 3-D grasp points (grasp), ``targets`` are 3-D set-down
    points (moveto); labels must already be resolved to positions by the
    caller.  ``hanging`` switches moveto to the tilted-wrist carry.
    """
    skill = skill.lower()
    if skill == "grasp":
        return _grasp(arms, contacts, cfg)
    if skill == "moveto":
        return _moveto(arms, targets, hanging, cfg)
    if skill == "release":
        return _release(arms)
    if skill == "rotate":
        if angle is None:
            raise ArityMismatch("rotate needs an angle")
        return _rotate(arms, float(angle), cfg)
    if skill == "pull":
        return _pull(arms, cfg)
    raise ArityMismatch(f"unknown skill {skill!r}")


def _grasp(arms, contacts, cfg) -> WaypointPlan:
    if not contacts:
        raise ArityMismatch("grasp needs at least one contact")
    assignment = allocate_arms(contacts, arms)
    steps: Dict[str, Tuple[Waypoint, ...]] = {}
    by_arm = {name: i for i, name in assignment.items()}
    for name in ARM_ORDER:
        if name not in arms:
            continue
        if name in by_arm:
            cx, cy, cz = contacts[by_arm[name]]
            approach = (cx, cy, cz + cfg.lift_height)
            steps[name] = (Waypoint(approach, 0.0, OPEN),
                           Waypoint((cx, cy, cz), 0.0, OPEN),
                           Waypoint((cx, cy, cz), 0.0, CLOSE))
        else:
            steps[name] = _pad_hold(arms[name], 3)
    return WaypointPlan("grasp", steps)


def _moveto(arms, targets, hanging, cfg) -> WaypointPlan:
    holding = [arms[n] for n in ARM_ORDER if n in arms and arms[n].holding]
    if not holding:
        raise NotHolding("moveto needs at least one holding arm")
    if not targets or len(targets) > len(holding):
        raise ArityMismatch(
            f"moveto got {len(targets)} targets for {len(holding)} holding arms")
    # Match targets to holding arms: each target takes its closest
    # unclaimed holding gripper, nearer pairs first.
    pairs = sorted(
        ((_dist(t, a.gripper), ti, a.name)
         for ti, t in enumerate(targets) for a in holding),
        key=lambda x: (x[0], x[1], ARM_ORDER.index(x[2])))
    chosen: Dict[str, int] = {}
    used_t = set()
    for _, ti, name in pairs:
        if name in chosen or ti in used_t:
            continue
        chosen[name] = ti
        used_t.add(ti)
    tilt = cfg.hang_orientation_deg if hanging else 0.0
    steps: Dict[str, Tuple[Waypoint, ...]] = {}
    for name in ARM_ORDER:
        if name not in arms:
            continue
        if name in chosen:
            g = arms[name].gripper
            tx, ty, tz = targets[chosen[name]]
            carry_z = max(cfg.lift_height, tz + cfg.placement_height)
            steps[name] = (Waypoint((g[0], g[1], carry_z), tilt),
                           Waypoint((tx, ty, carry_z), tilt),
                           Waypoint((tx, ty, tz + cfg.placement_height), tilt))
        else:
            steps[name] = _pad_hold(arms[name], 3)
    return WaypointPlan("moveto", steps)


def _release(arms) -> WaypointPlan:
    steps = {name: (Waypoint(arms[name].gripper, 0.0, OPEN),)
             for name in ARM_ORDER if name in arms}
    return WaypointPlan("release", steps)


def _rotate(arms, angle, cfg) -> WaypointPlan:
    holding = [arms[n] for n in ARM_ORDER if n in arms and arms[n].holding]
    if not holding:
        raise NotHolding("rotate needs at least one holding arm")
    centre = np.mean([a.gripper for a in holding], axis=0)
    n = max(1, math.ceil(abs(angle) / cfg.rotate_step_deg))
    steps: Dict[str, List[Waypoint]] = {name: [] for name in arms}
    for k in range(1, n + 1):
        phi = math.radians(angle * k / n)
        c, s = math.cos(phi), math.sin(phi)
        for name in ARM_ORDER:
            if name not in arms:
                continue
            if arms[name].holding:
                gx, gy, gz = arms[name].gripper
                dx, dy = gx - centre[0], gy - centre[1]
                pos = (centre[0] + c * dx - s * dy,
                       centre[1] + s * dx + c * dy, gz)
                steps[name].append(Waypoint(pos))
            else:
                steps[name].append(Waypoint(arms[name].gripper))
    return WaypointPlan("rotate", {k: tuple(v) for k, v in steps.items()})


def _pull(arms, cfg) -> WaypointPlan:
    if not all(n in arms and arms[n].holding for n in ARM_ORDER):
        raise NotHolding("pull needs both arms holding")
    gl = np.asarray(arms[LEFT].gripper, float)
    gr = np.asarray(arms[RIGHT].gripper, float)
    d = float(np.linalg.norm(gl - gr))
    if d <= 0.0:
        raise ValueError("grippers coincide, pull direction undefined")
    u = (gl - gr) / d
    half = 0.5 * cfg.pull_fraction * d
    steps = {LEFT: (Waypoint(tuple(gl + half * u)),),
             RIGHT: (Waypoint(tuple(gr - half * u)),)}
    return WaypointPlan("pull", steps)


def apply_plan(arms: Dict[str, ArmState], plan: WaypointPlan) -> Dict[str, ArmState]:
    """Bookkeeping update: final gripper poses and open/holding flags.

    Used by plan verification to thread arm state through a sequence of
    skills without running the simulator; a close is assumed to succeed.
    """
    out = dict(arms)
    for name, wps in plan.steps.items():
        arm = out[name]
        gripper_open, holding = arm.gripper_open, arm.holding
        for wp in wps:
            if wp.gripper == CLOSE:
                gripper_open, holding = False, True
            elif wp.gripper == OPEN:
                gripper_open, holding = True, False
        out[name] = replace(arm, gripper=wps[-1].position,
                            gripper_open=gripper_open, holding=holding)
    return out


def check_motion_feasibility(plan: WaypointPlan,
                             workspace: Workspace,
                             cfg: Config = DEFAULTS) -> Optional[FailureReason]:
    """First kinematic violation in a plan, or None if it is feasible.

    Checks, per step: each gripper within its arm's reach sphere, not below
    the tabletop, xy inside the table bounds (with one reach-radius margin
    for carries beyond the edge is not allowed: targets must stay on the
    table), and the two grippers at least ``min_gripper_clearance`` apart.
    Steps are numbered from 1 in the failure message.
    """
    names = [n for n in ARM_ORDER if n in plan.steps]
    for s in range(plan.n_steps):
        positions = {}
        for name in names:
            wp = plan.steps[name][s]
            p = np.asarray(wp.position, float)
            positions[name] = p
            if _dist(p, workspace.bases[name]) > workspace.reach[name] + 1e-9:
                return FailureReason("OUT_OF_REACH", s + 1, name)
            if p[2] < -1e-9:
                return FailureReason("BELOW_TABLE", s + 1, name)
            if not (workspace.table_min[0] - 1e-9 <= p[0] <= workspace.table_max[0] + 1e-9
                    and workspace.table_min[1] - 1e-9 <= p[1] <= workspace.table_max[1] + 1e-9):
                return FailureReason("OUT_OF_BOUNDS", s + 1, name)
        if len(names) == 2:
            gap = _dist(positions[names[0]], positions[names[1]])
            if gap < cfg.min_gripper_clearance - 1e-9:
                return FailureReason("ARM_CLEARANCE", s + 1)
    return None
