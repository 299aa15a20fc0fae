"""Vision-language client layer: prompt assets, mark rendering, transports.

Requests are built from text templates shipped with the package plus
annotated images; replies are parsed into typed results.  Two transports
share the interface: ScriptedClient answers from an ordered rule list for
offline runs and tests, HttpChatClient talks to a chat-completions endpoint.

A ``ClientRequest`` also carries ``slots``: the structured facts that went
into the prompt (candidate coordinates, grid geometry, rotation angle).
Scripted rules can read them to compute ground-truth answers instead of
pattern-matching prose.
"""

from __future__ import annotations

import base64
import hashlib
import io
import json
import re
import string
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from PIL import Image, ImageDraw

from .config import Config, DEFAULTS
from .geometry import GridSpec
from .plans import TaskPlan, plan_from_wire

KEYPOINT_SELECT = "keypoint_select"
REGION_MATCH = "region_match"
PLAN = "plan"
COMPLETION = "completion"
SKILL_DISCOVERY = "skill_discovery"

TEMPLATE_IDS = (KEYPOINT_SELECT, REGION_MATCH, PLAN, COMPLETION, SKILL_DISCOVERY)

_TEMPLATE_DIR = Path(__file__).parent / "templates"


class TemplateError(RuntimeError):
    """Missing or corrupted prompt asset."""


class MalformedReply(ValueError):
    """The client answer does not fit the expected shape for its template."""


class ScriptMiss(LookupError):
    """No scripted rule covers the request."""


class BackendUnavailable(RuntimeError):
    """The HTTP endpoint kept failing after the configured retries."""


def load_template(template_id: str) -> str:
    path = _TEMPLATE_DIR / f"{template_id}.txt"
    if not path.is_file():
        raise TemplateError(f"no template asset {template_id!r}")
    return path.read_text(encoding="utf-8")


def template_manifest() -> Dict[str, str]:
    """SHA-256 of each shipped template, matching templates/manifest.json."""
    out = {}
    for tid in TEMPLATE_IDS:
        data = (_TEMPLATE_DIR / f"{tid}.txt").read_bytes()
        out[f"{tid}.txt"] = hashlib.sha256(data).hexdigest()
    return out


def verify_templates() -> None:
    """Raise TemplateError when any asset differs from the manifest."""
    path = _TEMPLATE_DIR / "manifest.json"
    if not path.is_file():
        raise TemplateError("template manifest missing")
    want = json.loads(path.read_text(encoding="utf-8"))
    got = template_manifest()
    if want != got:
        bad = sorted(set(want.items()) ^ set(got.items()))
        raise TemplateError(f"template assets differ from manifest: {bad}")


def _fill(template_id: str, values: Dict[str, str]) -> str:
    return string.Template(load_template(template_id)).substitute(values)


@dataclass(frozen=True)
class ClientRequest:
    """One round-trip to the language model."""

    template_id: str
    text: str
    images: Tuple[np.ndarray, ...] = ()
    slots: Dict[str, object] = field(default_factory=dict)


# ---------------------------------------------------------------- rendering

def _as_rgb(image: np.ndarray) -> np.ndarray:
    a = np.asarray(image)
    if a.dtype != np.uint8:
        a = np.clip(a, 0, 255).astype(np.uint8)
    if a.ndim == 2:
        a = np.stack([a] * 3, axis=-1)
    return a.copy()


def annotate_dots(image: np.ndarray,
                  points: Sequence[Sequence[float]],
                  labels: Optional[Sequence[str]] = None,
                  color: Tuple[int, int, int] = (255, 200, 0),
                  cfg: Config = DEFAULTS) -> np.ndarray:
    """Draw numbered filled dots at (u, v) pixel positions."""
    img = Image.fromarray(_as_rgb(image))
    draw = ImageDraw.Draw(img)
    r = cfg.mark_radius_px
    for i, (u, v) in enumerate(points):
        u, v = float(u), float(v)
        draw.ellipse([u - r, v - r, u + r, v + r], fill=color,
                     outline=(0, 0, 0))
        text = labels[i] if labels is not None else str(i)
        draw.text((u + r + 1, v - r), text, fill=(255, 255, 255))
    return np.asarray(img)


def annotate_red_dot(image: np.ndarray, point: Sequence[float],
                     cfg: Config = DEFAULTS) -> np.ndarray:
    """Mark one reference pixel with a red dot."""
    img = Image.fromarray(_as_rgb(image))
    draw = ImageDraw.Draw(img)
    r = cfg.mark_radius_px
    u, v = float(point[0]), float(point[1])
    draw.ellipse([u - r, v - r, u + r, v + r], fill=(255, 0, 0),
                 outline=(255, 255, 255))
    return np.asarray(img)


def annotate_grid(image: np.ndarray, grid: GridSpec) -> np.ndarray:
    """Overlay the labelled region grid on an observation."""
    rgb = _as_rgb(image)
    h, w = rgb.shape[:2]
    img = Image.fromarray(rgb)
    draw = ImageDraw.Draw(img)
    line = (90, 200, 255)
    vs = grid._bounds(h, grid.rows)
    us = grid._bounds(w, grid.cols)
    for v in vs:
        draw.line([(0, min(v, h - 1)), (w - 1, min(v, h - 1))], fill=line)
    for u in us:
        draw.line([(min(u, w - 1), 0), (min(u, w - 1), h - 1)], fill=line)
    for r in range(grid.rows):
        for c in range(grid.cols):
            draw.text((us[c] + 3, vs[r] + 2), grid.label_at(r, c), fill=line)
    return np.asarray(img)


# ---------------------------------------------------------- request builders

def build_keypoint_request(image: np.ndarray,
                           candidates: np.ndarray,
                           category: str,
                           cfg: Config = DEFAULTS) -> ClientRequest:
    """Ask which numbered candidate marks are semantic keypoints."""
    pts = np.asarray(candidates, float)
    text = _fill(KEYPOINT_SELECT,
                 {"CATEGORY": category, "COUNT": str(len(pts))})
    marked = annotate_dots(image, pts, cfg=cfg)
    slots = {"category": category,
             "candidates": [[float(u), float(v)] for u, v in pts]}
    return ClientRequest(KEYPOINT_SELECT, text, (marked,), slots)


def build_region_request(ref_image: np.ndarray,
                         ref_pixel: Sequence[float],
                         query_image: np.ndarray,
                         rotation_deg: float,
                         description: str = "",
                         grid: Optional[GridSpec] = None,
                         cfg: Config = DEFAULTS) -> ClientRequest:
    """Ask which grid cell of the query matches the red dot on the reference.

    The query image must already be rotated into the reference orientation;
    ``rotation_deg`` records that angle so scripted oracles can undo it.
    """
    grid = grid or GridSpec(cfg.grid_rows, cfg.grid_cols)
    labels = grid.labels()
    text = _fill(REGION_MATCH,
                 {"ROWS": str(grid.rows), "COLS": str(grid.cols),
                  "FIRST": labels[0], "LAST": labels[-1],
                  "ROTATION": f"{rotation_deg:g}"})
    if description:
        text += f"\nThe red dot marks: {description}.\n"
    ref_marked = annotate_red_dot(ref_image, ref_pixel, cfg=cfg)
    query_marked = annotate_grid(query_image, grid)
    slots = {"grid": {"rows": grid.rows, "cols": grid.cols},
             "labels": labels,
             "rotation_deg": float(rotation_deg),
             "ref_pixel": [float(ref_pixel[0]), float(ref_pixel[1])],
             "query_shape": list(np.asarray(query_image).shape[:2]),
             "description": description}
    return ClientRequest(REGION_MATCH, text, (ref_marked, query_marked), slots)


def build_plan_request(task: str,
                       labels: Sequence[str],
                       image: Optional[np.ndarray] = None,
                       fixtures: Sequence[str] = (),
                       feedback: str = "",
                       cfg: Config = DEFAULTS) -> ClientRequest:
    """Ask for a sub-task sequence for the task, given visible keypoints."""
    fb = ""
    if feedback:
        fb = ("Your previous attempt failed verification:\n"
              f"{feedback}\nPropose a corrected plan.\n")
    text = _fill(PLAN, {
        "TASK": task,
        "LABELS": ", ".join(labels) if labels else "(none detected)",
        "FIXTURES": ", ".join(fixtures) if fixtures else "(none)",
        "FEEDBACK": fb,
    })
    images = (annotate_dots(image, [], cfg=cfg),) if image is not None else ()
    slots = {"task": task, "labels": list(labels),
             "fixtures": list(fixtures), "feedback": feedback}
    return ClientRequest(PLAN, text, images, slots)


def build_completion_request(task: str,
                             summary: str = "",
                             image: Optional[np.ndarray] = None,
                             slots: Optional[Dict[str, object]] = None,
                             cfg: Config = DEFAULTS) -> ClientRequest:
    """Ask whether the task already looks finished."""
    text = _fill(COMPLETION, {"TASK": task, "SUMMARY": summary or "(none)"})
    images = (_as_rgb(image),) if image is not None else ()
    merged = {"task": task, "summary": summary}
    if slots:
        merged.update(slots)
    return ClientRequest(COMPLETION, text, images, merged)


# ------------------------------------------------------------- reply parsing

_FENCE_RE = re.compile(r"```[a-zA-Z0-9]*\n(.*?)```", re.S)
_BOLD_RE = re.compile(r"\*\*\s*([A-Za-z]\d+)\s*\*\*")


def _strip_fences(reply: str) -> str:
    m = _FENCE_RE.search(reply)
    return m.group(1) if m else reply


def _check_size(reply: str, cfg: Config) -> None:
    if len(reply.encode("utf-8", errors="replace")) > cfg.reply_max_bytes:
        raise MalformedReply(f"reply exceeds {cfg.reply_max_bytes} bytes")


def parse_keypoint_reply(reply: str, n_candidates: int,
                         cfg: Config = DEFAULTS) -> List[Dict[str, str]]:
    """Parse the keypoint selection: JSON list of {keypoint, description}.

    Entries must use in-range candidate indices, each at most once, and a
    non-empty language description; "reason" is carried through when given.
    """
    _check_size(reply, cfg)
    try:
        data = json.loads(_strip_fences(reply))
    except json.JSONDecodeError as exc:
        raise MalformedReply(f"keypoint reply is not JSON: {exc}") from exc
    if not isinstance(data, list) or not data:
        raise MalformedReply("keypoint reply must be a non-empty JSON list")
    out, seen_idx, seen_desc = [], set(), set()
    for entry in data:
        if not isinstance(entry, dict):
            raise MalformedReply("keypoint entries must be objects")
        if "keypoint" not in entry or "language_description" not in entry:
            raise MalformedReply("keypoint entries need keypoint"
                                 " and language_description")
        idx = entry["keypoint"]
        if not isinstance(idx, int) or isinstance(idx, bool) \
                or not 0 <= idx < n_candidates:
            raise MalformedReply(f"keypoint index {idx!r} out of range")
        desc = entry["language_description"]
        if not isinstance(desc, str) or not desc.strip():
            raise MalformedReply("language_description must be non-empty")
        desc = desc.strip()
        if idx in seen_idx or desc.lower() in seen_desc:
            raise MalformedReply("duplicate keypoint index or description")
        seen_idx.add(idx)
        seen_desc.add(desc.lower())
        item = {"keypoint": idx, "language_description": desc}
        if isinstance(entry.get("reason"), str):
            item["reason"] = entry["reason"].strip()
        out.append(item)
    return out


def parse_region_reply(reply: str, grid: GridSpec,
                       cfg: Config = DEFAULTS) -> str:
    """Extract the final **bold** cell label from a region answer."""
    _check_size(reply, cfg)
    found = None
    for m in _BOLD_RE.finditer(reply):
        try:
            grid.parse_label(m.group(1))
        except ValueError:
            continue
        found = m.group(1).upper()
    if found is None:
        raise MalformedReply("no grid cell label marked in bold")
    return found


def parse_plan_reply(reply: str, cfg: Config = DEFAULTS) -> TaskPlan:
    """Parse a plan or completion answer into a TaskPlan.

    Tolerates a markdown code fence around the JSON.  Sub-task strings are
    kept verbatim; grammar problems surface later during verification.
    """
    _check_size(reply, cfg)
    body = _strip_fences(reply).strip()
    try:
        data = json.loads(body)
    except json.JSONDecodeError as exc:
        raise MalformedReply(f"plan reply is not JSON: {exc}") from exc
    try:
        return plan_from_wire(data)
    except ValueError as exc:
        raise MalformedReply(str(exc)) from exc


def parse_reply(template_id: str, reply: str, *,
                n_candidates: int = 0,
                grid: Optional[GridSpec] = None,
                cfg: Config = DEFAULTS):
    """Dispatch to the parser for the request's template."""
    if template_id == KEYPOINT_SELECT:
        return parse_keypoint_reply(reply, n_candidates, cfg)
    if template_id == REGION_MATCH:
        return parse_region_reply(reply, grid or GridSpec(cfg.grid_rows,
                                                          cfg.grid_cols), cfg)
    if template_id in (PLAN, COMPLETION):
        return parse_plan_reply(reply, cfg)
    raise TemplateError(f"no parser for template {template_id!r}")


# --------------------------------------------------------------- transports

Reply = Union[str, Callable[[ClientRequest], str]]


@dataclass
class Rule:
    """One scripted behaviour: match a request, produce a reply.

    ``template_id`` of None matches any template; ``matcher`` is an extra
    predicate over the request; ``times`` bounds how often the rule fires
    (None means unlimited).
    """

    template_id: Optional[str]
    reply: Reply
    matcher: Optional[Callable[[ClientRequest], bool]] = None
    times: Optional[int] = None


class ScriptedClient:
    """Deterministic offline client answering from an ordered rule list."""

    def __init__(self, rules: Sequence[Rule] = ()):
        self.rules: List[Rule] = list(rules)
        self.transcript: List[Tuple[ClientRequest, str]] = []

    def add(self, template_id: Optional[str], reply: Reply,
            matcher: Optional[Callable[[ClientRequest], bool]] = None,
            times: Optional[int] = None) -> "ScriptedClient":
        self.rules.append(Rule(template_id, reply, matcher, times))
        return self

    def complete(self, request: ClientRequest) -> str:
        for rule in self.rules:
            if rule.times is not None and rule.times <= 0:
                continue
            if rule.template_id is not None \
                    and rule.template_id != request.template_id:
                continue
            if rule.matcher is not None and not rule.matcher(request):
                continue
            if rule.times is not None:
                rule.times -= 1
            reply = rule.reply(request) if callable(rule.reply) else rule.reply
            self.transcript.append((request, reply))
            return reply
        raise ScriptMiss(f"no rule for template {request.template_id!r}")


def _image_data_url(image: np.ndarray, cfg: Config) -> str:
    img = Image.fromarray(_as_rgb(image))
    long_side = max(img.size)
    if long_side > cfg.image_long_side:
        scale = cfg.image_long_side / long_side
        img = img.resize((max(1, round(img.width * scale)),
                          max(1, round(img.height * scale))),
                         Image.LANCZOS)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    b64 = base64.b64encode(buf.getvalue()).decode("ascii")
    return f"data:image/png;base64,{b64}"


class HttpChatClient:
    """Chat-completions transport: text plus inline base64 images."""

    def __init__(self, url: str = "", api_key: str = "",
                 model: str = "", cfg: Config = DEFAULTS):
        self.cfg = cfg
        self.url = url or cfg.vlm_url
        self.api_key = api_key or cfg.vlm_key
        self.model = model or cfg.vlm_model
        if not self.url:
            raise BackendUnavailable("no endpoint URL configured")

    def _payload(self, request: ClientRequest) -> dict:
        content: List[dict] = [{"type": "text", "text": request.text}]
        for image in request.images:
            content.append({"type": "image_url",
                            "image_url": {"url": _image_data_url(image,
                                                                 self.cfg)}})
        return {"model": self.model,
                "temperature": self.cfg.vlm_temperature,
                "messages": [{"role": "user", "content": content}]}

    def complete(self, request: ClientRequest) -> str:
        import requests

        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        payload = self._payload(request)
        last = "no attempt made"
        for _ in range(self.cfg.client_retries + 1):
            try:
                resp = requests.post(self.url, json=payload, headers=headers,
                                     timeout=self.cfg.vlm_timeout_s)
            except requests.RequestException as exc:
                last = f"transport error: {exc}"
                continue
            if resp.status_code >= 500:
                last = f"server error {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise BackendUnavailable(f"endpoint returned "
                                         f"{resp.status_code}: {resp.text[:200]}")
            try:
                data = resp.json()
                return data["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise MalformedReply(f"unexpected response shape: {exc}") from exc
        raise BackendUnavailable(last)
