"""Deterministic garment fixtures: rasters, prototype library and scenes.

Four garment categories are drawn as filled polygons on a fixed-size
canvas.  Each carries a set of canonical keypoint positions with language
labels; the shipped prototype library is built by running the discovery
pipeline with a scripted selection client that snaps candidates to these
canonical points.

The second half of the module ships one scene per manipulation goal (a
10x10 towel to fold, flatten, hang or place) plus scripted chat clients
that drive each scene to its goal: the completion answer comes from the
scene's ground-truth checker and the plans are fixed sub-task scripts.
"""

from __future__ import annotations

import json
import os
from typing import Dict, List, Tuple

import numpy as np
from skimage.draw import polygon as _fill_polygon

from .config import DEFAULTS

CANVAS = DEFAULTS.render_size  # fixture rasters match the sim render size
BG_GRAY = 40
FG_GRAY = 220

# polygon vertices as (u, v); canonical keypoints as label -> (u, v)
_GARMENTS: Dict[str, Dict] = {
    "towel": {
        "polygon": [(100, 112), (219, 112), (219, 207), (100, 207)],
        "keypoints": {
            "top left corner": (100, 112),
            "top right corner": (219, 112),
            "bottom left corner": (100, 207),
            "bottom right corner": (219, 207),
            "center": (160, 160),
        },
    },
    "tshirt": {
        "polygon": [
            (120, 100), (200, 100), (252, 138), (238, 158), (208, 148),
            (208, 232), (112, 232), (112, 148), (82, 158), (68, 138),
        ],
        "keypoints": {
            "left sleeve": (75, 148),
            "right sleeve": (245, 148),
            "left hem corner": (112, 232),
            "right hem corner": (208, 232),
            "collar": (160, 100),
            "center": (160, 170),
        },
    },
    "trousers": {
        "polygon": [
            (116, 96), (204, 96), (204, 236), (170, 236), (160, 150),
            (150, 236), (116, 236),
        ],
        "keypoints": {
            "waist left": (116, 96),
            "waist right": (204, 96),
            "left leg hem": (133, 236),
            "right leg hem": (187, 236),
            "crotch": (160, 150),
        },
    },
    "skirt": {
        "polygon": [(128, 110), (192, 110), (228, 225), (92, 225)],
        "keypoints": {
            "waist left": (128, 110),
            "waist right": (192, 110),
            "hem left": (92, 225),
            "hem right": (228, 225),
            "center": (160, 167),
        },
    },
}


def categories() -> List[str]:
    return list(_GARMENTS)


def garment_mask(category: str, size: int = CANVAS) -> np.ndarray:
    """Filled polygon mask for a fixture category."""
    spec = _GARMENTS[category]
    us = np.array([p[0] for p in spec["polygon"]], dtype=np.float64)
    vs = np.array([p[1] for p in spec["polygon"]], dtype=np.float64)
    mask = np.zeros((size, size), dtype=bool)
    rr, cc = _fill_polygon(vs, us, shape=mask.shape)
    mask[rr, cc] = True
    return mask


def garment_image(category: str, size: int = CANVAS) -> np.ndarray:
    """Flat-lit RGB rendering of the garment mask."""
    mask = garment_mask(category, size)
    img = np.full((size, size, 3), BG_GRAY, dtype=np.uint8)
    img[mask] = FG_GRAY
    return img


def canonical_keypoints(category: str) -> Dict[str, Tuple[int, int]]:
    """Label -> (u, v) canonical keypoint positions for a category."""
    return dict(_GARMENTS[category]["keypoints"])


def garment_gray(category: str, size: int = CANVAS) -> np.ndarray:
    """Single-channel rendering, the form prototype entries store."""
    mask = garment_mask(category, size)
    img = np.full((size, size), BG_GRAY, dtype=np.uint8)
    img[mask] = FG_GRAY
    return img


def scripted_discovery_client():
    """Selection client that snaps canonical keypoints to candidate marks.

    For each canonical keypoint of the requested category it answers with
    the nearest unused candidate mark, so discovery lands on (or right next
    to) the canonical positions without any remote model.
    """
    from .vlm import KEYPOINT_SELECT, ScriptedClient

    def reply(request) -> str:
        cands = np.asarray(request.slots["candidates"], dtype=np.float64)
        entries = []
        used: set = set()
        for label, (u, v) in canonical_keypoints(
                request.slots["category"]).items():
            d = np.linalg.norm(cands - [u, v], axis=1)
            idx = next(int(i) for i in np.argsort(d, kind="stable")
                       if int(i) not in used)
            used.add(idx)
            entries.append({"keypoint": idx,
                            "language_description": label,
                            "reason": "canonical fixture point"})
        return json.dumps(entries)

    client = ScriptedClient()
    client.add(KEYPOINT_SELECT, reply)
    return client


def build_library(cats: List[str] = None, cfg=DEFAULTS):
    """Run scripted discovery over the fixture garments into a library."""
    from .library import PrototypeEntry, PrototypeLibrary
    from .perception import discover_keypoints

    client = scripted_discovery_client()
    lib = PrototypeLibrary()
    for cat in cats or categories():
        image = garment_gray(cat)
        mask = garment_mask(cat)
        kps = discover_keypoints(image, mask, client, cat, cfg)
        lib.add(PrototypeEntry(cat, image, mask, kps))
    return lib


# --------------------------------------------------------------- scenes

TOWEL_ROWS = 10
TOWEL_COLS = 10
TOWEL_SPACING = 0.03

FOLD_TASK = "fold the towel in half"
FLATTEN_TASK = "flatten the towel"
HANG_TASK = "hang the towel on the rack"
PLACE_TASK = "place the towel in the box"

FLATTEN_SEEDS = (0, 4, 5, 9, 10)

# per-seed flatten scripts: each round grasps two labels, optionally pulls
# them apart, carries both to their flat-layout homes and releases
_FLATTEN_SCRIPTS: Dict[int, List[Tuple[str, str, int]]] = {
    0: [("bottom left corner", "bottom right corner", 2),
        ("top left corner", "top right corner", 2),
        ("bottom right corner", "right edge middle", 0),
        ("top edge middle", "top right corner", 0)],
    4: [("bottom right corner", "right edge middle", 0),
        ("bottom left corner", "top left corner", 0),
        ("bottom edge middle", "top right corner", 0),
        ("bottom left corner", "bottom right corner", 0)],
    5: [("bottom right corner", "top right corner", 2),
        ("top left corner", "top edge middle", 0),
        ("right edge middle", "top right corner", 0),
        ("bottom left corner", "left edge middle", 0)],
    9: [("bottom left corner", "top left corner", 2),
        ("bottom edge middle", "bottom right corner", 0),
        ("top edge middle", "top right corner", 0),
        ("left edge middle", "top left corner", 0),
        ("bottom left corner", "bottom right corner", 0)],
    10: [("bottom right corner", "top right corner", 2),
         ("bottom left corner", "bottom edge middle", 0),
         ("top left corner", "top edge middle", 0)],
}


def towel_anchor_labels(rows: int = TOWEL_ROWS,
                        cols: int = TOWEL_COLS) -> Dict[str, Tuple[int, int]]:
    """Named (row, col) anchors of a towel grid: corners, edges, quarters."""
    mr, mc = rows // 2, cols // 2
    qr, qc = rows // 4, cols // 4
    return {
        "top left corner": (0, 0),
        "top right corner": (0, cols - 1),
        "bottom left corner": (rows - 1, 0),
        "bottom right corner": (rows - 1, cols - 1),
        "top edge middle": (0, mc),
        "bottom edge middle": (rows - 1, mc),
        "left edge middle": (mr, 0),
        "right edge middle": (mr, cols - 1),
        "upper left quarter": (qr, qc),
        "upper right quarter": (qr, cols - 1 - qc),
        "lower left quarter": (rows - 1 - qr, qc),
        "lower right quarter": (rows - 1 - qr, cols - 1 - qc),
        "center": (mr, mc),
    }


def _towel_cloth(center=(0.0, 0.0)) -> Dict[str, object]:
    return {"rows": TOWEL_ROWS, "cols": TOWEL_COLS,
            "spacing": TOWEL_SPACING, "center": list(center)}


def fold_scene():
    """Flat towel at the table centre, goal: top half folded onto bottom."""
    from .sim import Scene

    return Scene(name="towel_10x10", category="towel",
                 cloth=_towel_cloth(), goal={"type": "fold"},
                 keypoints=towel_anchor_labels())


def flatten_scene(seed: int):
    """Seeded crumpled towel, goal: spread back over its flat footprint."""
    from .sim import Scene

    return Scene(name=f"towel_crumpled_{seed}", category="towel",
                 cloth=_towel_cloth(), goal={"type": "flatten"}, seed=seed,
                 keypoints=towel_anchor_labels(),
                 crumple={"picks": 4, "seed": seed, "height": 0.06})


def hang_scene():
    """Flat towel before a rack bar, goal: hung without ground contact."""
    from .sim import RackSpec, Scene

    return Scene(name="towel_rack", category="towel",
                 cloth=_towel_cloth(), goal={"type": "hang"},
                 keypoints=towel_anchor_labels(),
                 rack=RackSpec(0.1, -0.27, 0.1, 0.28, 0.35))


def place_scene():
    """Flat towel beside a box region, goal: every particle inside it."""
    from .sim import BoxSpec, Scene

    return Scene(name="towel_box", category="towel",
                 cloth=_towel_cloth(center=(0.0, -0.18)),
                 goal={"type": "place"}, keypoints=towel_anchor_labels(),
                 box=BoxSpec(-0.26, 0.05, 0.26, 0.52))


# ------------------------------------------------------ scripted clients

def region_oracle(true_pixels, src_shape: Tuple[int, int]):
    """Coarse-region rule that answers from known true pixel positions.

    ``true_pixels`` is a callable returning label -> (u, v) in the source
    observation.  The oracle carries the pixel through the alignment
    rotation recorded in the request and names the grid cell it lands in,
    which is exactly the answer an ideal matcher would give.
    """
    from .geometry import GridSpec, RasterRotation

    def reply(request) -> str:
        slots = request.slots
        uv = true_pixels()[slots["description"]]
        rot = RasterRotation(float(slots["rotation_deg"]), src_shape)
        uvd = rot.map_points(np.asarray([uv], dtype=np.float64))[0]
        grid = GridSpec(slots["grid"]["rows"], slots["grid"]["cols"])
        cell = grid.cell_of(uvd, tuple(slots["query_shape"]))
        return f"The region corresponding to the red keypoint is **{cell}**."
    return reply


def add_region_oracle(client, sim):
    """Let a task client answer region queries from the scene's anchors."""
    from .vlm import REGION_MATCH

    shape = (sim.cfg.render_size, sim.cfg.render_size)
    client.add(REGION_MATCH,
               region_oracle(lambda: sim.keypoint_pixels(), shape))
    return client


def _ground_truth_completion(sim) -> "callable":
    """Completion rule that reads the scene's own goal checker."""
    def reply(request) -> str:
        done = bool(sim.checks()["success"])
        return json.dumps({"completed": done, "subtasks": []})
    return reply


def _plan_json(subtasks: List[str]) -> str:
    return json.dumps({"completed": False, "subtasks": subtasks})


def fold_client(sim):
    """Scripted planner for the half fold: one carry of the top corners."""
    from .vlm import COMPLETION, PLAN, ScriptedClient

    client = ScriptedClient()
    client.add(COMPLETION, _ground_truth_completion(sim))
    client.add(PLAN, _plan_json([
        "grasp(top left corner, top right corner)",
        "moveto(bottom left corner, bottom right corner)",
        "release()",
    ]))
    return client


def flatten_client(sim, seed: int):
    """Scripted planner replaying the shipped flatten rounds for a seed."""
    from .vlm import COMPLETION, PLAN, ScriptedClient

    if seed not in _FLATTEN_SCRIPTS:
        raise KeyError(f"no flatten script for seed {seed}")
    client = ScriptedClient()
    client.add(COMPLETION, _ground_truth_completion(sim))
    rounds = _FLATTEN_SCRIPTS[seed]
    for la, lb, pulls in rounds:
        subtasks = [f"grasp({la}, {lb})"] + ["pull()"] * pulls \
            + [f"moveto({la}, {lb})", "release()"]
        client.add(PLAN, _plan_json(subtasks), times=1)
    la, lb, pulls = rounds[-1]
    client.add(PLAN, _plan_json(
        [f"grasp({la}, {lb})", f"moveto({la}, {lb})", "release()"]))
    return client


def hang_client(sim):
    """Scripted planner for hanging: rotate to the bar, carry, release."""
    from .vlm import COMPLETION, PLAN, ScriptedClient

    client = ScriptedClient()
    client.add(COMPLETION, _ground_truth_completion(sim))
    client.add(PLAN, _plan_json([
        "grasp(top left corner, top right corner)",
        "rotate(90)",
        "moveto(rack, rack)",
        "release()",
    ]))
    return client


def place_client(sim):
    """Scripted planner for placing: carry the top corners into the box."""
    from .vlm import COMPLETION, PLAN, ScriptedClient

    client = ScriptedClient()
    client.add(COMPLETION, _ground_truth_completion(sim))
    client.add(PLAN, _plan_json([
        "grasp(top left corner, top right corner)",
        "moveto(box, box)",
        "release()",
    ]))
    return client


def sim_prototype_library(sim, labels: List[str] = None):
    """One-entry prototype library built from the scene's own flat render.

    The prototype image is the simulator's flat layout rendered through the
    same camera that produces observations, so retrieval and matching run
    in the query's own visual domain.  Prototype keypoints are the
    projected flat positions of the named scene anchors.
    """
    from .library import PrototypeEntry, PrototypeLibrary
    from .perception import BuiltinSegmenter

    if labels is None:
        labels = ["top left corner", "top right corner",
                  "bottom left corner", "bottom right corner", "center"]
    obs = sim.render_flat()
    mask = BuiltinSegmenter().segment(obs.rgb)
    cam = sim.camera()
    kps: Dict[str, Tuple[int, int]] = {}
    for label in labels:
        r, c = sim.scene.keypoints[label]
        u, v, _ = cam.project(sim.flat[r * sim.cols + c])
        kps[label] = (int(round(u)), int(round(v)))
    lib = PrototypeLibrary()
    lib.add(PrototypeEntry(sim.scene.category, obs.gray(), mask, kps))
    return lib


def build_episode(kind: str, seed: int = 0, cfg=DEFAULTS):
    """Simulator, scripted client and instruction for one shipped task."""
    from .sim import Simulator

    if kind == "fold":
        sim = Simulator(fold_scene(), cfg)
        return sim, fold_client(sim), FOLD_TASK
    if kind == "flatten":
        sim = Simulator(flatten_scene(seed), cfg)
        return sim, flatten_client(sim, seed), FLATTEN_TASK
    if kind == "hang":
        sim = Simulator(hang_scene(), cfg)
        return sim, hang_client(sim), HANG_TASK
    if kind == "place":
        sim = Simulator(place_scene(), cfg)
        return sim, place_client(sim), PLACE_TASK
    raise KeyError(f"no shipped episode kind {kind!r}")
