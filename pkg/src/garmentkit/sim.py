"""Quasi-static particle cloth on a tabletop, with rack and box fixtures.

The garment is a grid of particles joined by stretch-only tethers:
structural links to the right and down neighbours plus both diagonal shear
links.  A tether only acts when longer than its rest length, so slack cloth
keeps its shape (implicit friction) while taut chains transmit drag.  The
solver is position based: each settle pass lowers every free particle by a
small gravity step, then runs Jacobi projections that remove stretch, with
corrections accumulated per particle and averaged by incidence count.  The
tabletop clamps z at zero.

The rack is a sticky capture bar: a particle that crosses the bar height
moving downward while horizontally within the capture band hooks onto it
(xy frozen, z pinned at bar height) until a gripper grasps it again.  The
box is a purely geometric region used by the placement checker.

Everything is integer-seeded and runs in fixed iteration order, so equal
seeds give bitwise-identical states.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import Config, DEFAULTS
from .geometry import CameraModel, top_down_camera
from .perception import Observation
from .skills import ARM_ORDER, CLOSE, HOLD, OPEN, ArmState, WaypointPlan

PROJECT_ITERS = 12      # constraint projections per settle pass
POLISH_MAX = 1000       # zero-gravity passes to reach the stretch bound
REST_MAX_SWEEPS = 1200  # gravity passes allowed in settle_to_rest
QUIESCENT_EPS = 1e-7    # max particle motion that still counts as rest


class NothingGrasped(RuntimeError):
    """A close command found no particle within the grasp radius."""


class SceneError(ValueError):
    """A scene description is malformed."""


@dataclass(frozen=True)
class RackSpec:
    x1: float
    y1: float
    x2: float
    y2: float
    z: float

    def endpoints(self) -> Tuple[np.ndarray, np.ndarray]:
        return (np.array([self.x1, self.y1]), np.array([self.x2, self.y2]))

    def point_at(self, frac: float) -> Tuple[float, float, float]:
        a, b = self.endpoints()
        p = a + frac * (b - a)
        return (float(p[0]), float(p[1]), self.z)


@dataclass(frozen=True)
class BoxSpec:
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    def contains(self, xy: np.ndarray) -> np.ndarray:
        xy = np.atleast_2d(xy)
        return ((xy[:, 0] >= self.xmin) & (xy[:, 0] <= self.xmax)
                & (xy[:, 1] >= self.ymin) & (xy[:, 1] <= self.ymax))

    def point_at(self, fx: float, fy: float) -> Tuple[float, float, float]:
        return (self.xmin + fx * (self.xmax - self.xmin),
                self.ymin + fy * (self.ymax - self.ymin), 0.0)


GOAL_TYPES = ("fold", "flatten", "place", "hang")


@dataclass
class Scene:
    """Declarative scene: cloth layout, fixtures, goal and seed."""

    name: str
    category: str
    cloth: Dict[str, object]
    goal: Dict[str, object]
    seed: int = 0
    keypoints: Dict[str, Tuple[int, int]] = field(default_factory=dict)
    rack: Optional[RackSpec] = None
    box: Optional[BoxSpec] = None
    crumple: Optional[Dict[str, object]] = None
    overrides: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        for key in ("rows", "cols", "spacing", "center"):
            if key not in self.cloth:
                raise SceneError(f"cloth spec needs {key!r}")
        gtype = self.goal.get("type")
        if gtype not in GOAL_TYPES:
            raise SceneError(f"goal type must be one of {GOAL_TYPES}")
        if gtype == "hang" and self.rack is None:
            raise SceneError("a hang scene needs a rack")
        if gtype == "place" and self.box is None:
            raise SceneError("a place scene needs a box")
        self.keypoints = {str(k): (int(v[0]), int(v[1]))
                          for k, v in self.keypoints.items()}

    def to_json(self) -> dict:
        out = {"name": self.name, "category": self.category,
               "cloth": self.cloth, "goal": self.goal, "seed": self.seed,
               "keypoints": {k: list(v) for k, v in self.keypoints.items()}}
        if self.rack is not None:
            out["rack"] = {"x1": self.rack.x1, "y1": self.rack.y1,
                           "x2": self.rack.x2, "y2": self.rack.y2,
                           "z": self.rack.z}
        if self.box is not None:
            out["box"] = {"min": [self.box.xmin, self.box.ymin],
                          "max": [self.box.xmax, self.box.ymax]}
        if self.crumple is not None:
            out["crumple"] = self.crumple
        if self.overrides:
            out["overrides"] = self.overrides
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "Scene":
        if not isinstance(obj, dict):
            raise SceneError("scene must be a JSON object")
        try:
            rack = None
            if obj.get("rack") is not None:
                r = obj["rack"]
                rack = RackSpec(float(r["x1"]), float(r["y1"]),
                                float(r["x2"]), float(r["y2"]), float(r["z"]))
            box = None
            if obj.get("box") is not None:
                b = obj["box"]
                box = BoxSpec(float(b["min"][0]), float(b["min"][1]),
                              float(b["max"][0]), float(b["max"][1]))
            return cls(name=str(obj["name"]), category=str(obj["category"]),
                       cloth=dict(obj["cloth"]), goal=dict(obj["goal"]),
                       seed=int(obj.get("seed", 0)),
                       keypoints={k: tuple(v) for k, v in
                                  obj.get("keypoints", {}).items()},
                       rack=rack, box=box,
                       crumple=obj.get("crumple"),
                       overrides=dict(obj.get("overrides", {})))
        except (KeyError, TypeError, ValueError, IndexError) as exc:
            if isinstance(exc, SceneError):
                raise
            raise SceneError(f"bad scene description: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2,
                                         sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "Scene":
        try:
            obj = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise SceneError(f"cannot read scene {path}: {exc}") from exc
        return cls.from_json(obj)


def grid_edges(rows: int, cols: int,
               spacing: float) -> Tuple[np.ndarray, np.ndarray]:
    """Structural and both-diagonal shear tethers of a cloth grid."""
    def idx(r, c):
        return r * cols + c

    edges, rest = [], []
    for r in range(rows):
        for c in range(cols):
            if c + 1 < cols:
                edges.append((idx(r, c), idx(r, c + 1)))
                rest.append(spacing)
            if r + 1 < rows:
                edges.append((idx(r, c), idx(r + 1, c)))
                rest.append(spacing)
            if r + 1 < rows and c + 1 < cols:
                edges.append((idx(r, c), idx(r + 1, c + 1)))
                rest.append(spacing * np.sqrt(2.0))
                edges.append((idx(r, c + 1), idx(r + 1, c)))
                rest.append(spacing * np.sqrt(2.0))
    return (np.asarray(edges, dtype=np.int64),
            np.asarray(rest, dtype=np.float64))


def flat_positions(rows: int, cols: int, spacing: float,
                   center: Sequence[float],
                   yaw_deg: float = 0.0) -> np.ndarray:
    """Particle positions of the flat cloth: row r grows toward -y.

    Row 0 is the far edge (+y, the image top), columns grow toward +x, so
    the layout matches the rendered top-down view.
    """
    r = np.arange(rows, dtype=np.float64)
    c = np.arange(cols, dtype=np.float64)
    xs = (c - (cols - 1) / 2.0) * spacing
    ys = ((rows - 1) / 2.0 - r) * spacing
    gx, gy = np.meshgrid(xs, ys)
    pts = np.stack([gx.ravel(), gy.ravel(), np.zeros(rows * cols)], axis=1)
    th = np.deg2rad(yaw_deg)
    cth, sth = np.cos(th), np.sin(th)
    rot = np.array([[cth, -sth], [sth, cth]])
    pts[:, :2] = pts[:, :2] @ rot.T
    pts[:, 0] += float(center[0])
    pts[:, 1] += float(center[1])
    return pts


class Simulator:
    """Owns the cloth state, fixtures and the logical clock for one scene."""

    def __init__(self, scene: Scene, cfg: Config = DEFAULTS):
        self.scene = scene
        self.cfg = cfg
        cl = scene.cloth
        self.rows = int(cl["rows"])
        self.cols = int(cl["cols"])
        self.spacing = float(cl["spacing"])
        self.flat = flat_positions(self.rows, self.cols, self.spacing,
                                   cl["center"], float(cl.get("yaw", 0.0)))
        self.positions = self.flat.copy()
        self.edges, self.rest = grid_edges(self.rows, self.cols, self.spacing)
        n = self.rows * self.cols
        self.hooked = np.zeros(n, dtype=bool)
        self.grasped: Dict[str, np.ndarray] = {}
        self._grip_pos: Dict[str, np.ndarray] = {}
        self._grip_off: Dict[str, np.ndarray] = {}
        self._fr_anchor = self.positions[:, :2].copy()
        self._fr_stuck = np.zeros(len(self.positions), dtype=bool)
        self.clock = 0
        self.max_edge_error = 0.0
        self.min_z_seen = 0.0
        self._flat_mask = None
        if scene.crumple:
            self._crumple(int(scene.crumple.get("picks", 4)),
                          int(scene.crumple.get("seed", scene.seed)),
                          float(scene.crumple.get("height", 0.06)))

    # ------------------------------------------------------------- solver

    def _free(self) -> np.ndarray:
        free = ~self.hooked
        for idx in self.grasped.values():
            free[idx] = False
        return free

    def _project(self, free: np.ndarray, iters: int) -> None:
        pos = self.positions
        i, j = self.edges[:, 0], self.edges[:, 1]
        for _ in range(iters):
            d = pos[j] - pos[i]
            length = np.linalg.norm(d, axis=1)
            over = length > self.rest
            if not over.any():
                break
            exc = (length[over] - self.rest[over])
            dirs = d[over] / length[over, None]
            corr = 0.5 * exc[:, None] * dirs
            delta = np.zeros_like(pos)
            count = np.zeros(len(pos))
            np.add.at(delta, i[over], corr)
            np.add.at(count, i[over], 1.0)
            np.add.at(delta, j[over], -corr)
            np.add.at(count, j[over], 1.0)
            apply = free & (count > 0)
            pos[apply] += delta[apply] / count[apply, None]
            pos[free, 2] = np.maximum(pos[free, 2], 0.0)

    def _capture(self, free: np.ndarray, z_prev: np.ndarray) -> None:
        """Hook slack cloth that settles onto the bar from above.

        A garment under active gripper tension slides over the bar, so
        capture only engages while nothing is held.
        """
        rack = self.scene.rack
        if rack is None or self.grasped:
            return
        a, b = rack.endpoints()
        ab = b - a
        ab2 = float(ab @ ab)
        xy = self.positions[:, :2]
        t = np.clip(((xy - a) @ ab) / ab2, 0.0, 1.0) if ab2 > 0 else \
            np.zeros(len(xy))
        near = a + t[:, None] * ab
        band = np.linalg.norm(xy - near, axis=1) <= self.cfg.rack_capture
        crossed = (free & band & (z_prev >= rack.z)
                   & (self.positions[:, 2] < rack.z))
        if crossed.any():
            self.positions[crossed, 2] = rack.z
            self.hooked |= crossed

    def _anchor_friction(self) -> None:
        """Remember which particles rest on the table before a settle.

        Static friction works against these anchors: a resting particle
        snaps back to its anchored xy until the solver has tried to drag
        it further than the slip threshold, after which it is free for
        the remainder of the settle.
        """
        self._fr_anchor = self.positions[:, :2].copy()
        contact = self.positions[:, 2] <= self.cfg.contact_eps
        self._fr_stuck = contact & self._free()

    def _apply_friction(self, free: np.ndarray) -> None:
        stuck = self._fr_stuck & free
        if not stuck.any():
            return
        demand = np.linalg.norm(self.positions[:, :2] - self._fr_anchor,
                                axis=1)
        broke = stuck & (demand >= self.cfg.friction_slip)
        self._fr_stuck &= ~broke
        hold = stuck & ~broke & (self.positions[:, 2] <= self.cfg.contact_eps)
        self.positions[hold, :2] = self._fr_anchor[hold]

    def _settle_pass(self, free: np.ndarray, gravity: bool) -> float:
        before = self.positions.copy()
        z_prev = self.positions[:, 2].copy()
        if gravity:
            self.positions[free, 2] -= self.cfg.gravity_step
            self.positions[free, 2] = np.maximum(self.positions[free, 2], 0.0)
        self._project(free, PROJECT_ITERS)
        if gravity:
            self._apply_friction(free)
        self._capture(free, z_prev)
        for arm, idx in self.grasped.items():
            self.positions[idx] = self._grip_pos[arm] + self._grip_off[arm]
        moved = float(np.abs(self.positions - before).max()) \
            if len(before) else 0.0
        return moved

    def _record_invariants(self) -> None:
        d = self.positions[self.edges[:, 1]] - self.positions[self.edges[:, 0]]
        length = np.linalg.norm(d, axis=1)
        err = float(np.max((length - self.rest) / self.rest))
        self.max_edge_error = max(self.max_edge_error, err)
        self.min_z_seen = min(self.min_z_seen,
                              float(self.positions[:, 2].min()))

    def edge_error(self) -> float:
        """Current worst stretch beyond rest length, as a fraction."""
        d = self.positions[self.edges[:, 1]] - self.positions[self.edges[:, 0]]
        length = np.linalg.norm(d, axis=1)
        return float(np.max((length - self.rest) / self.rest))

    def settle(self) -> None:
        """Fixed gravity passes, then stretch polish; the per-move settle."""
        free = self._free()
        self._anchor_friction()
        for _ in range(self.cfg.solver_sweeps):
            self._settle_pass(free, gravity=True)
        for _ in range(POLISH_MAX):
            if self.edge_error() <= self.cfg.edge_error_tol:
                break
            self._settle_pass(free, gravity=False)
        self._record_invariants()

    def settle_to_rest(self) -> None:
        """Gravity passes until nothing moves; used after releases."""
        free = self._free()
        self._anchor_friction()
        for _ in range(REST_MAX_SWEEPS):
            moved = self._settle_pass(free, gravity=True)
            if moved <= max(QUIESCENT_EPS, 0.0):
                break
            free = self._free()  # capture may have hooked particles
        for _ in range(POLISH_MAX):
            if self.edge_error() <= self.cfg.edge_error_tol:
                break
            self._settle_pass(free, gravity=False)
        self._record_invariants()

    # ------------------------------------------------------------ gripper

    def grasp_at(self, arm: str, position: Sequence[float]) -> np.ndarray:
        """Close a gripper: pinch the single nearest particle.

        A pinch holds the one touched particle; the surrounding material
        follows through the cloth itself.  Pinning a single point keeps
        the grip free of any frozen local shape, so a grasped fold can
        still roll open under tension instead of riding along rigidly.
        """
        p = np.asarray(position, dtype=np.float64)
        d = np.linalg.norm(self.positions - p, axis=1)
        near = np.nonzero(d <= self.cfg.grasp_radius)[0]
        if len(near) == 0:
            raise NothingGrasped(
                f"{arm} closed at {tuple(np.round(p, 3))} with no particle "
                f"within {self.cfg.grasp_radius} m")
        i0 = int(near[np.argmin(d[near])])
        idx = np.array([i0])
        self.hooked[idx] = False
        self.grasped[arm] = idx
        self._grip_pos[arm] = p
        self._grip_off[arm] = self.positions[idx] - p
        return idx

    def release_arm(self, arm: str) -> bool:
        had = arm in self.grasped
        self.grasped.pop(arm, None)
        self._grip_pos.pop(arm, None)
        self._grip_off.pop(arm, None)
        return had

    def move_grippers(self, targets: Dict[str, Sequence[float]]) -> None:
        """Move grippers linearly in bounded substeps, settling after each.

        A transit where no moving arm holds cloth cannot disturb the scene,
        so it collapses to a single repositioning step.
        """
        starts = {a: np.asarray(self._grip_pos.get(a, t), dtype=np.float64)
                  for a, t in targets.items()}
        ends = {a: np.asarray(t, dtype=np.float64) for a, t in targets.items()}
        if not any(a in self.grasped for a in targets):
            for a in targets:
                self._grip_pos[a] = ends[a]
            self.clock += 1
            return
        dist = max((float(np.linalg.norm(ends[a] - starts[a]))
                    for a in targets), default=0.0)
        n_sub = max(1, int(np.ceil(dist / self.cfg.substep_length)))
        for k in range(1, n_sub + 1):
            f = k / n_sub
            for a in targets:
                if a in self.grasped:
                    self._grip_pos[a] = starts[a] + f * (ends[a] - starts[a])
                    self.positions[self.grasped[a]] = \
                        self._grip_pos[a] + self._grip_off[a]
            self.settle()
            self.clock += 1

    # ---------------------------------------------------------- execution

    def execute(self, plan: WaypointPlan,
                arms: Dict[str, ArmState]) -> Tuple[Dict[str, ArmState],
                                                    List[dict]]:
        """Run a waypoint plan; returns updated arms and an event list."""
        events: List[dict] = []
        arms = dict(arms)
        names = [n for n in ARM_ORDER if n in plan.steps]
        for a in names:
            self._grip_pos.setdefault(a, np.asarray(arms[a].gripper,
                                                    dtype=np.float64))
        for s in range(plan.n_steps):
            targets = {}
            for a in names:
                wp = plan.steps[a][s]
                targets[a] = wp.position
            self.move_grippers(targets)
            released = False
            for a in names:
                wp = plan.steps[a][s]
                self._grip_pos[a] = np.asarray(wp.position, dtype=np.float64)
                if wp.gripper == CLOSE:
                    idx = self.grasp_at(a, wp.position)
                    events.append({"t": self.clock, "arm": a,
                                   "event": "close",
                                   "particles": [int(i) for i in idx]})
                elif wp.gripper == OPEN:
                    if self.release_arm(a):
                        released = True
                    events.append({"t": self.clock, "arm": a,
                                   "event": "open"})
                arms[a] = replace(
                    arms[a], gripper=tuple(float(x) for x in wp.position),
                    gripper_open=(wp.gripper != CLOSE
                                  if wp.gripper != HOLD
                                  else arms[a].gripper_open),
                    holding=a in self.grasped)
            if released:
                self.settle_to_rest()
                self.clock += 1
        return arms, events

    # ----------------------------------------------------------- crumple

    def _crumple(self, picks: int, seed: int, height: float) -> None:
        """Disorder the cloth by a seeded run of pick, lift and drop moves.

        Each perturbation grasps a particle near a randomly chosen border
        anchor, lifts it with a small sideways jitter and lets the cloth
        fall back.  More picks bury more of the footprint, so expected
        coverage decreases with intensity, and the fixed draw order keeps
        every run seed-deterministic.
        """
        rng = np.random.default_rng(seed)
        rows, cols = self.rows, self.cols
        mr, mc = rows // 2, cols // 2
        border = [0, cols - 1, (rows - 1) * cols, rows * cols - 1,
                  mc, (rows - 1) * cols + mc,
                  mr * cols, mr * cols + cols - 1]
        for _ in range(picks):
            anchor = border[int(rng.integers(0, len(border)))]
            pxy = self.positions[anchor, :2] + rng.uniform(-0.03, 0.03,
                                                           size=2)
            i = int(np.linalg.norm(self.positions[:, :2] - pxy,
                                   axis=1).argmin())
            p = self.positions[i].copy()
            self.grasp_at("left", p)
            jit = rng.uniform(-0.03, 0.03, size=2)
            self.move_grippers({"left": (p[0] + jit[0], p[1] + jit[1],
                                         height)})
            self.release_arm("left")
            self.settle_to_rest()

    # ----------------------------------------------------- observation/GT

    def camera(self) -> CameraModel:
        return top_down_camera(self.cfg.render_size, self.cfg.camera_span,
                               self.cfg.camera_height)

    def _splat(self, positions: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        size = self.cfg.render_size
        cam = self.camera()
        r_px = max(1, int(round(self.cfg.particle_radius
                                / self.cfg.camera_span * size)))
        dv, du = np.mgrid[-r_px:r_px + 1, -r_px:r_px + 1]
        disk = dv ** 2 + du ** 2 <= r_px ** 2
        dv, du = dv[disk], du[disk]
        dbuf = np.full((size, size), np.inf)
        for p in positions:
            u, v, depth = cam.project(p)
            ui, vi = int(round(u)), int(round(v))
            us, vs = ui + du, vi + dv
            ok = (us >= 0) & (us < size) & (vs >= 0) & (vs < size)
            if not ok.any():
                continue
            flat = vs[ok] * size + us[ok]
            np.minimum.at(dbuf.ravel(), flat, depth)
        mask = np.isfinite(dbuf)
        depth_map = np.where(mask, dbuf, self.cfg.camera_height)
        return mask, depth_map

    def _compose(self, mask: np.ndarray, depth: np.ndarray) -> Observation:
        rgb = np.full((self.cfg.render_size, self.cfg.render_size, 3), 40,
                      dtype=np.uint8)
        rgb[mask] = 220
        return Observation(rgb, depth, self.camera())

    def render(self) -> Observation:
        """Current top-down view: flat-gray garment on a dark table."""
        mask, depth = self._splat(self.positions)
        return self._compose(mask, depth)

    def render_flat(self) -> Observation:
        """Top-down view of the flat layout, for prototype building."""
        mask, depth = self._splat(self.flat)
        return self._compose(mask, depth)

    def flat_mask(self) -> np.ndarray:
        if self._flat_mask is None:
            self._flat_mask, _ = self._splat(self.flat)
        return self._flat_mask

    def coverage(self) -> float:
        """Projected area relative to the flat configuration."""
        mask, _ = self._splat(self.positions)
        return float(mask.sum()) / float(self.flat_mask().sum())

    def goal_positions(self) -> Optional[np.ndarray]:
        """Analytic particle target for fold goals: top half onto bottom."""
        if self.scene.goal.get("type") != "fold":
            return None
        pts = self.flat.copy()
        grid = self.flat.reshape(self.rows, self.cols, 3)
        half = self.rows // 2
        out = grid.copy()
        for r in range(half):
            out[r] = grid[self.rows - 1 - r]
        return out.reshape(-1, 3)

    def keypoint_positions(self) -> Dict[str, Tuple[float, float, float]]:
        """Current 3-D positions of the scene's anchored keypoints."""
        out = {}
        for label, (r, c) in self.scene.keypoints.items():
            p = self.positions[r * self.cols + c]
            out[label] = (float(p[0]), float(p[1]), float(p[2]))
        return out

    def keypoint_pixels(self) -> Dict[str, Tuple[float, float]]:
        """Anchored keypoints projected into the current rendering."""
        cam = self.camera()
        out = {}
        for label, pos in self.keypoint_positions().items():
            u, v, _ = cam.project(pos)
            out[label] = (float(u), float(v))
        return out

    def checks(self) -> Dict[str, object]:
        """Ground-truth goal measurements on the current state."""
        gtype = self.scene.goal["type"]
        out: Dict[str, object] = {"goal": gtype}
        out["min_z"] = float(self.positions[:, 2].min())
        out["coverage"] = self.coverage()
        if gtype == "fold":
            goal_mask, _ = self._splat(self.goal_positions())
            cur_mask, _ = self._splat(self.positions)
            inter = float(np.logical_and(goal_mask, cur_mask).sum())
            union = float(np.logical_or(goal_mask, cur_mask).sum())
            out["iou"] = inter / union if union else 0.0
            out["success"] = out["iou"] >= self.cfg.fold_iou_threshold
        elif gtype == "flatten":
            out["success"] = \
                out["coverage"] >= self.cfg.flatten_coverage_threshold
        elif gtype == "place":
            inside = self.scene.box.contains(self.positions[:, :2])
            out["in_box"] = int(inside.sum())
            out["all_inside"] = bool(inside.all())
            out["success"] = out["all_inside"]
        elif gtype == "hang":
            rack = self.scene.rack
            a, b = rack.endpoints()
            a3 = np.array([a[0], a[1], rack.z])
            b3 = np.array([b[0], b[1], rack.z])
            ab = b3 - a3
            t = np.clip(((self.positions - a3) @ ab) / float(ab @ ab), 0, 1)
            near = a3 + t[:, None] * ab
            dist = np.linalg.norm(self.positions - near, axis=1)
            out["on_rack"] = int((dist <= self.cfg.rack_capture).sum())
            out["hung"] = out["on_rack"] >= self.cfg.hang_min_particles
            grounded = bool((self.positions[:, 2] < self.cfg.ground_eps).any())
            out["ground_contact"] = grounded
            out["success"] = out["hung"] and not grounded
        return out
