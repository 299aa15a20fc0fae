"""Sub-task grammar and plan wire format.

A sub-task is written ``skill(arg, arg)``: a case-insensitive skill name
from the fixed library and zero to two arguments.  ``grasp`` and ``moveto``
take contact-point labels, ``rotate`` takes an angle in degrees, ``release``
and ``pull`` take no arguments (the pull distance is derived from the
gripper gap at execution time).

A task plan travels as JSON::

    {"completed": false, "subtasks": ["grasp(left sleeve)", "..."]}

``subtasks`` keeps the raw strings so that grammar violations surface as
verification feedback rather than transport errors.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Optional, Tuple


class PlanSyntaxError(ValueError):
    """Base class for sub-task grammar violations."""


class ParseError(PlanSyntaxError):
    pass


class UnknownSkill(PlanSyntaxError):
    pass


class ArityMismatch(PlanSyntaxError):
    pass


@dataclass(frozen=True)
class SkillSpec:
    name: str
    min_args: int
    max_args: int
    arg_kind: str  # "labels" | "angle" | "none"


SKILLS = {
    "grasp": SkillSpec("grasp", 1, 2, "labels"),
    "moveto": SkillSpec("moveto", 1, 2, "labels"),
    "release": SkillSpec("release", 0, 0, "none"),
    "rotate": SkillSpec("rotate", 1, 1, "angle"),
    "pull": SkillSpec("pull", 0, 0, "none"),
}


@dataclass(frozen=True)
class SubTask:
    """A parsed skill invocation."""

    skill: str
    labels: Tuple[str, ...] = ()
    angle: Optional[float] = None


_CALL_RE = re.compile(r"\s*([A-Za-z_][A-Za-z0-9_]*)\s*\((.*)\)\s*\Z", re.S)
_NUM_RE = re.compile(r"[+-]?(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?\Z")


def parse_subtask(text: str) -> SubTask:
    """Parse ``skill(arg, ...)`` into a SubTask.

    Raises ParseError for malformed syntax, UnknownSkill for a name outside
    the library and ArityMismatch when the argument count or kind does not
    match the skill.
    """
    if not isinstance(text, str):
        raise ParseError("subtask must be a string")
    m = _CALL_RE.fullmatch(text)
    if not m:
        raise ParseError(f"malformed subtask {text!r}")
    name = m.group(1).lower()
    if name not in SKILLS:
        raise UnknownSkill(f"unknown skill {m.group(1)!r}")
    spec = SKILLS[name]
    body = m.group(2).strip()
    if body == "":
        args = []
    else:
        args = [a.strip() for a in body.split(",")]
    if any(a == "" for a in args):
        raise ParseError(f"empty argument in {text!r}")
    if any("(" in a or ")" in a for a in args):
        raise ParseError(f"nested parentheses in {text!r}")
    if not spec.min_args <= len(args) <= spec.max_args:
        raise ArityMismatch(
            f"{name} takes {spec.min_args}-{spec.max_args} arguments, got {len(args)}")
    if spec.arg_kind == "angle":
        if not _NUM_RE.fullmatch(args[0]):
            raise ArityMismatch(f"{name} needs a numeric angle, got {args[0]!r}")
        return SubTask(name, (), float(args[0]))
    if spec.arg_kind == "labels":
        for a in args:
            if _NUM_RE.fullmatch(a):
                raise ArityMismatch(f"{name} takes contact labels, got number {a!r}")
        return SubTask(name, tuple(args), None)
    return SubTask(name)


def format_subtask(subtask: SubTask) -> str:
    """Canonical text for a SubTask; parse(format(s)) round-trips."""
    if subtask.skill not in SKILLS:
        raise UnknownSkill(f"unknown skill {subtask.skill!r}")
    if SKILLS[subtask.skill].arg_kind == "angle":
        a = subtask.angle
        body = str(int(a)) if float(a) == int(a) else repr(float(a))
        return f"{subtask.skill}({body})"
    return f"{subtask.skill}({', '.join(subtask.labels)})"


@dataclass(frozen=True)
class TaskPlan:
    """Planner output: either "done" or an ordered list of sub-task strings."""

    completed: bool
    subtasks: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.completed and self.subtasks:
            raise ValueError("a completed plan must carry no subtasks")
        for s in self.subtasks:
            if not isinstance(s, str) or not s.strip():
                raise ValueError("subtasks must be non-empty strings")

    def __len__(self) -> int:
        return len(self.subtasks)


def plan_to_wire(plan: TaskPlan) -> dict:
    return {"completed": plan.completed, "subtasks": list(plan.subtasks)}


def plan_from_wire(obj) -> TaskPlan:
    """Validate the JSON wire schema and build a TaskPlan.

    Raises ValueError on any schema violation; transports wrap this into
    their own error type.
    """
    if not isinstance(obj, dict):
        raise ValueError("plan must be a JSON object")
    if "completed" not in obj or not isinstance(obj["completed"], bool):
        raise ValueError('plan needs a boolean "completed" field')
    subtasks = obj.get("subtasks", [])
    if not isinstance(subtasks, list) or any(not isinstance(s, str) for s in subtasks):
        raise ValueError('"subtasks" must be a list of strings')
    if obj["completed"] and subtasks:
        raise ValueError("a completed plan must carry no subtasks")
    try:
        return TaskPlan(bool(obj["completed"]), tuple(subtasks))
    except ValueError as exc:
        raise ValueError(str(exc)) from exc
