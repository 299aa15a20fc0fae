"""Closed-loop task planning: check completion, propose, verify, execute.

Each episode round renders an observation, resolves the contact labels the
client may use, and asks the client whether the task is done.  If not, the
client proposes a plan, which is verified subtask by subtask: the skill
must exist, every contact label must resolve to a 3-D position, and the
expanded waypoints must pass the kinematic feasibility checks with the arm
state threaded forward.  A failed check becomes feedback for the next
proposal, up to the attempt cap.  Verified subtasks run in the simulator
until the first release, after which the garment is re-observed and the
loop repeats, up to the round cap.

Labels are resolved in two frames.  A label used by ``grasp`` means the
material there now, so it resolves to the garment's current state; a label
used by ``moveto`` means the place the material belongs, so it resolves to
the label's home spot in the flat layout, or to a drop point on the named
fixture (``rack``, ``box``).  When both arms carry to the same fixture
label the drop points spread out along it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import Config, DEFAULTS
from .perception import Observation, extract_semantic_keypoints
from .plans import PlanSyntaxError, SubTask, TaskPlan, parse_subtask
from .skills import (ARM_ORDER, ArityMismatch, ArmState, NoFreeArm,
                     NotHolding, WaypointPlan, Workspace, apply_plan,
                     check_motion_feasibility, generate_waypoints)
from .vlm import (MalformedReply, build_completion_request,
                  build_plan_request, parse_plan_reply)


class ClientRejected(RuntimeError):
    """The client kept answering malformed replies past the retry budget."""


def _norm(label: str) -> str:
    return label.strip().lower()


# ------------------------------------------------------------- resolvers

class GoalFrame:
    """Destinations for carried material: flat-layout homes and fixtures."""

    def __init__(self, sim, cfg: Config = DEFAULTS):
        self.sim = sim
        self.cfg = cfg
        self._homes: Dict[str, Tuple[float, float, float]] = {}
        for label, (r, c) in sim.scene.keypoints.items():
            p = sim.flat[r * sim.cols + c]
            self._homes[_norm(label)] = (float(p[0]), float(p[1]), 0.0)

    def fixture_labels(self) -> Tuple[str, ...]:
        out = []
        if self.sim.scene.rack is not None:
            out.append("rack")
        if self.sim.scene.box is not None:
            out.append("box")
        return tuple(out)

    def is_fixture(self, label: str) -> bool:
        return _norm(label) in self.fixture_labels()

    def home(self, label: str) -> Optional[Tuple[float, float, float]]:
        return self._homes.get(_norm(label))

    def fixture_point(self, label: str, slot: int,
                      count: int) -> Tuple[float, float, float]:
        """Drop point number ``slot`` of ``count`` on the named fixture."""
        fracs = (0.5,) if count <= 1 else (0.25, 0.75)
        frac = fracs[min(slot, len(fracs) - 1)]
        name = _norm(label)
        if name == "rack":
            x, y, z = self.sim.scene.rack.point_at(frac)
            return (x, y, z + self.cfg.hang_drop)
        if name == "box":
            return self.sim.scene.box.point_at(frac, 0.7)
        raise KeyError(f"no fixture named {label!r}")


class AnchorResolver:
    """Contact labels read straight from the scene's named grid anchors.

    The ground-truth resolver for tests and scripted runs: every anchored
    label resolves to the exact current particle position.
    """

    def __init__(self, sim, cfg: Config = DEFAULTS):
        self.sim = sim
        self.cfg = cfg
        self.goal = GoalFrame(sim, cfg)
        self._current: Dict[str, Tuple[float, float, float]] = {}
        self.refresh(None)

    def refresh(self, obs: Optional[Observation]) -> None:
        self._current = {_norm(k): v
                         for k, v in self.sim.keypoint_positions().items()}

    def labels(self) -> Tuple[str, ...]:
        return tuple(sorted(self._current))

    def knows(self, label: str) -> bool:
        return _norm(label) in self._current or self.goal.is_fixture(label)

    def contact_position(self, label: str) -> Tuple[float, float, float]:
        name = _norm(label)
        if name in self._current:
            return self._current[name]
        if self.goal.is_fixture(label):
            return self.goal.fixture_point(label, 0, 1)
        raise KeyError(f"unknown contact {label!r}")

    def target_position(self, label: str, slot: int,
                        count: int) -> Tuple[Tuple[float, float, float], bool]:
        """Destination for a carried label and whether it hangs on a rack."""
        if self.goal.is_fixture(label):
            return (self.goal.fixture_point(label, slot, count),
                    _norm(label) == "rack")
        home = self.goal.home(label)
        if home is not None:
            return home, False
        return self.contact_position(label), False


class PerceptionResolver(AnchorResolver):
    """Contact labels extracted from the rendered observation.

    Runs the full matching pipeline against the prototype library on every
    refresh; grasp labels resolve to the back-projected matched points,
    while carry destinations still come from the goal frame.
    """

    def __init__(self, sim, library, client, cfg: Config = DEFAULTS):
        self.library = library
        self.client = client
        self.result = None
        super().__init__(sim, cfg)

    def refresh(self, obs: Optional[Observation]) -> None:
        if obs is None:
            obs = self.sim.render()
        self.result = extract_semantic_keypoints(obs, self.library,
                                                 self.client, self.cfg)
        self._current = {_norm(k): v.position
                         for k, v in self.result.keypoints.items()}


# ---------------------------------------------------------- verification

@dataclass(frozen=True)
class VerificationReport:
    """Outcome of checking a plan: OK with bound waypoints, or why not."""

    status: str                               # "OK" | "FAILED"
    reason: str = ""
    failing_index: Optional[int] = None       # 1-based subtask position
    bound: Tuple[Tuple[SubTask, WaypointPlan], ...] = ()

    def __post_init__(self):
        if self.status == "FAILED" and (not self.reason
                                        or self.failing_index is None):
            raise ValueError("a failed report needs a reason and an index")

    @property
    def ok(self) -> bool:
        return self.status == "OK"


def _expand(sub: SubTask, resolver, arms: Dict[str, ArmState],
            cfg: Config) -> WaypointPlan:
    """Resolve a subtask's labels and generate its waypoints."""
    if sub.skill == "grasp":
        contacts = [resolver.contact_position(l) for l in sub.labels]
        return generate_waypoints("grasp", arms, contacts=contacts, cfg=cfg)
    if sub.skill == "moveto":
        total: Dict[str, int] = {}
        for l in sub.labels:
            total[_norm(l)] = total.get(_norm(l), 0) + 1
        seen: Dict[str, int] = {}
        targets, hanging = [], False
        for l in sub.labels:
            slot = seen.get(_norm(l), 0)
            seen[_norm(l)] = slot + 1
            pos, hang = resolver.target_position(l, slot, total[_norm(l)])
            targets.append(pos)
            hanging = hanging or hang
        return generate_waypoints("moveto", arms, targets=targets,
                                  hanging=hanging, cfg=cfg)
    if sub.skill == "rotate":
        return generate_waypoints("rotate", arms, angle=sub.angle, cfg=cfg)
    return generate_waypoints(sub.skill, arms, cfg=cfg)


def verify_plan(plan: TaskPlan, resolver, arms: Dict[str, ArmState],
                workspace: Optional[Workspace] = None,
                cfg: Config = DEFAULTS) -> VerificationReport:
    """Check a proposed plan subtask by subtask.

    Grammar and label problems report as ``Invalid subtask w_j``; waypoint
    plans that violate the workspace report as ``Infeasible motion in w_j``.
    Arm state is threaded forward so each subtask is checked in the pose
    the previous ones leave behind.
    """
    workspace = workspace or Workspace()
    arms = dict(arms)
    bound: List[Tuple[SubTask, WaypointPlan]] = []
    for j, text in enumerate(plan.subtasks, start=1):
        try:
            sub = parse_subtask(text)
        except PlanSyntaxError as exc:
            return VerificationReport("FAILED",
                                      f"Invalid subtask w_{j}: {exc}", j)
        if sub.skill in ("grasp", "moveto"):
            for label in sub.labels:
                if not resolver.knows(label):
                    return VerificationReport(
                        "FAILED",
                        f"Invalid subtask w_{j}: unknown contact {label!r}", j)
        try:
            wp = _expand(sub, resolver, arms, cfg)
        except (NoFreeArm, NotHolding, ArityMismatch, ValueError) as exc:
            return VerificationReport("FAILED",
                                      f"Invalid subtask w_{j}: {exc}", j)
        fail = check_motion_feasibility(wp, workspace, cfg)
        if fail is not None:
            return VerificationReport(
                "FAILED", f"Infeasible motion in w_{j}: {fail}", j)
        arms = apply_plan(arms, wp)
        bound.append((sub, wp))
    return VerificationReport("OK", bound=tuple(bound))


# -------------------------------------------------------------- planning

def _ask(client, request, cfg: Config) -> Tuple[TaskPlan, str]:
    """One request with the malformed-reply retry budget applied."""
    last: Optional[str] = None
    for _ in range(cfg.client_retries + 1):
        raw = client.complete(request)
        try:
            return parse_plan_reply(raw, cfg), raw
        except MalformedReply as exc:
            last = str(exc)
    raise ClientRejected(f"reply stayed malformed after retries: {last}")


def check_completion(task: str, obs: Optional[Observation], client,
                     summary: str = "",
                     slots: Optional[Dict[str, object]] = None,
                     cfg: Config = DEFAULTS) -> bool:
    """Ask the client whether the task already looks finished."""
    request = build_completion_request(
        task, summary, obs.rgb if obs is not None else None, slots, cfg)
    plan, _ = _ask(client, request, cfg)
    return plan.completed


@dataclass(frozen=True)
class PlanningResult:
    """One planning pass: completion short-circuit, verified plan, or not."""

    status: str                               # "completed"|"verified"|"failed"
    plan: Optional[TaskPlan] = None
    report: Optional[VerificationReport] = None
    attempts: int = 0
    feedbacks: Tuple[str, ...] = ()           # reasons fed back, in order
    completion_reply: str = ""
    plan_replies: Tuple[str, ...] = ()


def propose_and_verify(task: str, obs: Optional[Observation], resolver,
                       client, arms: Dict[str, ArmState],
                       workspace: Optional[Workspace] = None,
                       summary: str = "", feedback: str = "",
                       cfg: Config = DEFAULTS) -> PlanningResult:
    """One full planning pass for the current observation.

    First asks whether the task is complete; if not, proposes and verifies
    plans up to the attempt cap, feeding each failure reason back into the
    next proposal.  ``feedback`` seeds the first proposal, carrying e.g. an
    execution failure from the previous round.
    """
    request = build_completion_request(
        task, summary, obs.rgb if obs is not None else None, None, cfg)
    done, completion_reply = _ask(client, request, cfg)
    if done.completed:
        return PlanningResult("completed", TaskPlan(True),
                              completion_reply=completion_reply)
    fixtures = resolver.goal.fixture_labels() if hasattr(resolver, "goal") \
        else ()
    image = obs.rgb if obs is not None else None
    feedbacks: List[str] = []
    replies: List[str] = []
    attempts = 0
    while attempts < cfg.max_plan_attempts:
        attempts += 1
        request = build_plan_request(task, resolver.labels(), image,
                                     fixtures=fixtures, feedback=feedback,
                                     cfg=cfg)
        plan, raw = _ask(client, request, cfg)
        replies.append(raw)
        if plan.completed:
            return PlanningResult("completed", plan, None, attempts,
                                  tuple(feedbacks), completion_reply,
                                  tuple(replies))
        report = verify_plan(plan, resolver, arms, workspace, cfg)
        if report.ok:
            return PlanningResult("verified", plan, report, attempts,
                                  tuple(feedbacks), completion_reply,
                                  tuple(replies))
        feedback = report.reason
        feedbacks.append(feedback)
    return PlanningResult("failed", None,
                          VerificationReport("FAILED", feedbacks[-1], 0),
                          attempts, tuple(feedbacks), completion_reply,
                          tuple(replies))


# -------------------------------------------------------------- episodes

@dataclass
class EpisodeLog:
    """Append-only JSON-lines record of one episode."""

    records: List[dict] = field(default_factory=list)

    @property
    def status(self) -> str:
        return self.records[-1].get("status", "") if self.records else ""

    @property
    def rounds(self) -> List[dict]:
        return [r for r in self.records if r.get("type") == "round"]

    @property
    def final_checks(self) -> dict:
        return self.records[-1].get("checks", {}) if self.records else {}

    def to_jsonl(self) -> str:
        lines = [json.dumps(r, sort_keys=True, separators=(",", ":"))
                 for r in self.records]
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "EpisodeLog":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls([json.loads(line) for line in lines if line.strip()])


def _jsonable(value):
    """Coerce numpy scalars and containers into plain JSON types."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value)
    return value


def _sync_arms(arms: Dict[str, ArmState], sim) -> Dict[str, ArmState]:
    """Reconcile arm bookkeeping with the simulator after a failure."""
    out = dict(arms)
    for name in out:
        pos = sim._grip_pos.get(name)
        holding = name in sim.grasped
        if pos is not None:
            out[name] = replace(out[name],
                                gripper=tuple(float(x) for x in pos),
                                gripper_open=not holding, holding=holding)
    return out


def run_episode(task: str, scene_or_sim, client,
                library=None, resolver=None,
                cfg: Config = DEFAULTS, log_path=None) -> EpisodeLog:
    """Drive one task to completion, the round cap, or planning failure.

    Every round renders the scene, refreshes the resolver, and runs one
    planning pass.  A verified plan executes subtask by subtask until its
    first release, then the loop re-observes and replans; a grasp that
    closes on air aborts the round and feeds the failure to the next one.
    """
    from .sim import NothingGrasped, Simulator

    sim = scene_or_sim if isinstance(scene_or_sim, Simulator) \
        else Simulator(scene_or_sim, cfg)
    if resolver is None:
        resolver = PerceptionResolver(sim, library, client, cfg) \
            if library is not None else AnchorResolver(sim, cfg)
    workspace = Workspace()
    arms = workspace.rest_arms()
    log = EpisodeLog()
    log.records.append({"type": "episode", "task": task,
                        "scene": sim.scene.name, "seed": sim.scene.seed,
                        "round_cap": cfg.round_cap,
                        "max_plan_attempts": cfg.max_plan_attempts})
    status = "round_cap_exceeded"
    carry_feedback = ""
    summary = ""
    for rnd in range(1, cfg.round_cap + 1):
        obs = sim.render()
        resolver.refresh(obs)
        clock_obs = sim.clock
        result = propose_and_verify(task, obs, resolver, client, arms,
                                    workspace, summary, carry_feedback, cfg)
        carry_feedback = ""
        record = {"type": "round", "round": rnd, "clock_obs": clock_obs,
                  "labels": list(resolver.labels()),
                  "planning": result.status, "attempts": result.attempts,
                  "feedbacks": list(result.feedbacks),
                  "completion_reply": result.completion_reply,
                  "plan_replies": list(result.plan_replies)}
        if result.status == "completed":
            record["checks"] = _jsonable(sim.checks())
            record["clock_end"] = sim.clock
            log.records.append(record)
            status = "completed"
            break
        if result.status == "failed":
            record["reason"] = result.report.reason
            record["checks"] = _jsonable(sim.checks())
            record["clock_end"] = sim.clock
            log.records.append(record)
            status = "planning_failed"
            break
        record["plan"] = list(result.plan.subtasks)
        executed: List[dict] = []
        for sub, wp in result.report.bound:
            try:
                arms, events = sim.execute(wp, arms)
            except NothingGrasped as exc:
                carry_feedback = f"Execution failed in {sub.skill}: {exc}"
                arms = _sync_arms(arms, sim)
                break
            executed.append({"skill": sub.skill,
                             "events": _jsonable(events)})
            if sub.skill == "release":
                break
        record["executed"] = executed
        if carry_feedback:
            record["execution_error"] = carry_feedback
        record["checks"] = _jsonable(sim.checks())
        record["clock_end"] = sim.clock
        log.records.append(record)
        if executed:
            summary = "last round executed: " + "; ".join(
                e["skill"] for e in executed)
    checks = _jsonable(sim.checks())
    log.records.append({"type": "result", "status": status,
                        "rounds": len(log.rounds), "checks": checks,
                        "max_edge_error": float(sim.max_edge_error),
                        "min_z_seen": float(sim.min_z_seen),
                        "clock": sim.clock})
    if log_path is not None:
        log.save(log_path)
    return log
