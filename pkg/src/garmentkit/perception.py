"""Semantic keypoint pipeline: discovery on prototypes, matching on scenes.

Discovery runs once per garment category on a flat exemplar: segment, trace
the outline and fold skeleton, spread candidate marks over both by farthest
point sampling, and let the language model pick and name the semantically
meaningful ones.  The named pixels become a prototype library entry.

Matching runs on every new observation: retrieve the category and in-plane
rotation by best-buddies patch similarity against the library, ask the
model which coarse grid cell corresponds to each prototype keypoint, then
refine to a pixel by maximising patch-feature similarity inside that cell.
Matched pixels are back-projected through the depth image to 3-D grasp
points in the table frame.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import Config, DEFAULTS
from .features import (FeatureMap, NoEffectivePatch, bbs_score,
                       extract_features, match_fine)
from .geometry import (BadDepth, CameraModel, EmptyMask, GridSpec,
                       RasterRotation, extract_contour, farthest_point_sample,
                       largest_component, mask_centroid, skeletonize)
from .library import PrototypeLibrary
from . import vlm
from .vlm import ClientRequest, MalformedReply


class NeedsPrototype(RuntimeError):
    """Retrieval scored below the new-category threshold everywhere."""


@dataclass(frozen=True)
class Observation:
    """One top-down capture: grayscale-ish RGB, metric depth, camera."""

    rgb: np.ndarray
    depth: np.ndarray
    camera: CameraModel

    def gray(self) -> np.ndarray:
        a = np.asarray(self.rgb)
        if a.ndim == 3:
            return a.mean(axis=-1).astype(np.uint8)
        return a.astype(np.uint8)


class BuiltinSegmenter:
    """Brightness-threshold segmentation for high-contrast tabletop scenes.

    Uses Otsu's threshold unless a fixed one is given, then keeps the
    largest connected component.
    """

    def __init__(self, threshold: Optional[float] = None):
        self.threshold = threshold

    def segment(self, rgb: np.ndarray) -> np.ndarray:
        gray = np.asarray(rgb)
        if gray.ndim == 3:
            gray = gray.mean(axis=-1)
        gray = gray.astype(np.float64)
        if self.threshold is not None:
            t = float(self.threshold)
        else:
            if float(gray.max() - gray.min()) < 10.0:
                raise EmptyMask("image has no contrast to segment")
            from skimage.filters import threshold_otsu
            t = float(threshold_otsu(gray))
        mask = gray > t
        if not mask.any():
            raise EmptyMask("nothing above the segmentation threshold")
        return largest_component(mask)


class HttpSegmenter:
    """Remote segmentation: POST the image as PNG, receive a PNG mask."""

    def __init__(self, url: str, cfg: Config = DEFAULTS):
        if not url:
            raise vlm.BackendUnavailable("no segmenter URL configured")
        self.url = url
        self.cfg = cfg

    def segment(self, rgb: np.ndarray) -> np.ndarray:
        import io

        import requests
        from PIL import Image

        buf = io.BytesIO()
        Image.fromarray(np.asarray(rgb, dtype=np.uint8)).save(buf, format="PNG")
        last = "no attempt made"
        for _ in range(self.cfg.client_retries + 1):
            try:
                resp = requests.post(self.url, data=buf.getvalue(),
                                     headers={"Content-Type": "image/png"},
                                     timeout=self.cfg.vlm_timeout_s)
            except requests.RequestException as exc:
                last = f"transport error: {exc}"
                continue
            if resp.status_code >= 500:
                last = f"server error {resp.status_code}"
                continue
            if resp.status_code != 200:
                raise vlm.BackendUnavailable(
                    f"segmenter returned {resp.status_code}")
            arr = np.asarray(Image.open(io.BytesIO(resp.content)))
            if arr.ndim == 3:
                arr = arr[..., 0]
            return largest_component(arr > 127)
        raise vlm.BackendUnavailable(last)


def _ask(client, request: ClientRequest, parse, cfg: Config):
    """Send a request, re-asking on malformed replies up to the retry cap."""
    last: Optional[MalformedReply] = None
    for _ in range(cfg.client_retries + 1):
        reply = client.complete(request)
        try:
            return parse(reply)
        except MalformedReply as exc:
            last = exc
    raise last


def candidate_points(mask: np.ndarray, cfg: Config = DEFAULTS) -> np.ndarray:
    """Candidate keypoint pixels: outline plus fold skeleton, FPS-spread.

    Returns (k, 2) integer (u, v) points.  Sampling starts from the contour
    pixel closest to the mask centroid so the spread is reproducible.
    """
    contour = extract_contour(mask)
    skel = skeletonize(mask, cfg.spur_min_px)
    sk_vu = np.argwhere(skel)
    pool = contour
    if len(sk_vu):
        sk_uv = sk_vu[:, ::-1]
        pool = np.concatenate([contour, sk_uv], axis=0)
    # drop duplicate pixels, keeping first occurrence order
    _, first = np.unique(pool, axis=0, return_index=True)
    pool = pool[np.sort(first)]
    cen = np.asarray(mask_centroid(mask))
    d = np.linalg.norm(contour - cen, axis=1)
    seed_pt = contour[int(np.argmin(d))]
    seed_index = int(np.nonzero((pool == seed_pt).all(axis=1))[0][0])
    idx = farthest_point_sample(pool.astype(np.float64), cfg.fps_count,
                                seed_index)
    return pool[idx]


def discover_keypoints(image: np.ndarray, mask: np.ndarray, client,
                       category: str,
                       cfg: Config = DEFAULTS) -> Dict[str, Tuple[int, int]]:
    """Name semantic keypoints on a flat prototype via mark selection.

    Returns label to (u, v) pixel.  Raises MalformedReply after the retry
    budget if the client keeps answering off-format.
    """
    cands = candidate_points(mask, cfg)
    request = vlm.build_keypoint_request(image, cands, category, cfg)
    picked = _ask(client, request,
                  lambda r: vlm.parse_keypoint_reply(r, len(cands), cfg), cfg)
    return {p["language_description"]: (int(cands[p["keypoint"], 0]),
                                        int(cands[p["keypoint"], 1]))
            for p in picked}


@dataclass
class RetrievalResult:
    """Winner of the category and rotation search, plus the score table."""

    category: str
    rotation_deg: float
    score: float
    scores: Dict[Tuple[str, float], float]
    query_features: FeatureMap = field(repr=False)
    rotation: RasterRotation = field(repr=False)
    query_image: np.ndarray = field(repr=False)
    query_mask: np.ndarray = field(repr=False)


def retrieve_prototype(image: np.ndarray, mask: np.ndarray,
                       library: PrototypeLibrary,
                       cfg: Config = DEFAULTS,
                       extractor: Optional[Callable] = None) -> RetrievalResult:
    """Find the library entry and query rotation with the best buddy score.

    The query is rotated through ``cfg.rotations``; each rotated copy is
    scored against every prototype and the best (category, rotation) pair
    wins, first occurrence on ties.  A best score below
    ``cfg.bbs_threshold`` means no known category fits: NeedsPrototype.
    """
    if not len(library):
        raise NeedsPrototype("the prototype library is empty")
    mask = np.asarray(mask, dtype=bool)
    image = np.asarray(image)

    def _extract(img, msk):
        if extractor is not None:
            return extractor(img, msk, cfg)
        return extract_features(img, msk, patch_size=cfg.patch_size,
                                stride=cfg.patch_stride,
                                orient_bins=cfg.orient_bins)

    proto_feats = {}
    for cat in library.categories():
        if extractor is None:
            proto_feats[cat] = library.features(cat, cfg)
        else:
            e = library.get(cat)
            proto_feats[cat] = extractor(e.image, e.mask, cfg)

    best = None
    scores: Dict[Tuple[str, float], float] = {}
    for angle in cfg.rotations:
        rot = RasterRotation(float(angle), mask.shape)
        m_rot = rot.apply(mask, nearest=True).astype(bool)
        i_rot = rot.apply(image, nearest=True)
        try:
            q_feats = _extract(i_rot, m_rot)
        except EmptyMask:
            continue
        for cat in library.categories():
            s = bbs_score(q_feats, proto_feats[cat])
            scores[(cat, float(angle))] = s
            if best is None or s > best[0]:
                best = (s, cat, float(angle), q_feats, rot, i_rot, m_rot)
    if best is None:
        raise NeedsPrototype("query produced no usable features")
    s, cat, angle, q_feats, rot, i_rot, m_rot = best
    if s < cfg.bbs_threshold:
        raise NeedsPrototype(
            f"best buddy score {s:.3f} is below {cfg.bbs_threshold:.2f}; "
            "run discovery on a flat exemplar first")
    return RetrievalResult(cat, angle, s, scores, q_feats, rot, i_rot, m_rot)


@dataclass(frozen=True)
class Keypoint:
    """A matched semantic point: pixel in the observation, 3-D grasp point."""

    label: str
    pixel: Tuple[int, int]
    position: Tuple[float, float, float]


@dataclass
class SemanticKeypoints:
    """Full matching output for one observation."""

    category: str
    rotation_deg: float
    score: float
    keypoints: Dict[str, Keypoint]
    cells: Dict[str, str] = field(default_factory=dict)

    def labels(self) -> List[str]:
        return list(self.keypoints)

    def positions(self) -> Dict[str, Tuple[float, float, float]]:
        return {k: v.position for k, v in self.keypoints.items()}


def _region_points(grid: GridSpec, labels: Sequence[str],
                   shape: Tuple[int, int]) -> np.ndarray:
    m = grid.cells_mask(labels, shape)
    vu = np.argwhere(m)
    return vu[:, ::-1]


def _depth_at(depth: np.ndarray, pixel: Tuple[int, int],
              cfg: Config) -> float:
    """Depth at a pixel, falling back to the nearest valid neighbour."""
    h, w = depth.shape
    u, v = pixel
    d = depth[v, u]
    if np.isfinite(d) and d > 0:
        return float(d)
    r = cfg.depth_fallback_px
    v0, v1 = max(0, v - r), min(h, v + r + 1)
    u0, u1 = max(0, u - r), min(w, u + r + 1)
    window = depth[v0:v1, u0:u1]
    ok = np.isfinite(window) & (window > 0)
    if not ok.any():
        raise BadDepth(f"no valid depth within {r}px of {pixel}")
    vv, uu = np.nonzero(ok)
    dist = (vv + v0 - v) ** 2 + (uu + u0 - u) ** 2
    i = int(np.argmin(dist))
    return float(window[vv[i], uu[i]])


def extract_semantic_keypoints(obs: Observation,
                               library: PrototypeLibrary,
                               client,
                               cfg: Config = DEFAULTS,
                               segmenter=None,
                               extractor: Optional[Callable] = None
                               ) -> SemanticKeypoints:
    """Match every prototype keypoint of the retrieved category into ``obs``.

    For each keypoint: the client proposes a coarse grid cell on the
    rotation-aligned observation, the fine matcher picks the best pixel in
    that cell (widening to the cell neighbourhood and then the whole raster
    when the cell holds no garment), and the pixel is back-projected to a
    table-frame 3-D point after a nearest-valid depth lookup.
    """
    segmenter = segmenter or BuiltinSegmenter()
    mask = segmenter.segment(obs.rgb)
    gray = obs.gray()
    ret = retrieve_prototype(gray, mask, library, cfg, extractor)
    entry = library.get(ret.category)
    if extractor is None:
        ref_feats = library.features(ret.category, cfg)
    else:
        ref_feats = extractor(entry.image, entry.mask, cfg)
    grid = GridSpec(cfg.grid_rows, cfg.grid_cols)
    q_shape = ret.query_mask.shape

    keypoints: Dict[str, Keypoint] = {}
    cells: Dict[str, str] = {}
    h, w = mask.shape
    for label, ref_pixel in entry.keypoints.items():
        request = vlm.build_region_request(entry.image, ref_pixel,
                                           ret.query_image, ret.rotation_deg,
                                           description=label, grid=grid,
                                           cfg=cfg)
        cell = _ask(client, request,
                    lambda r: vlm.parse_region_reply(r, grid, cfg), cfg)
        cells[label] = cell
        ladder = ([cell], [cell] + grid.neighbors(cell), grid.labels())
        pixel_rot = None
        for labels_try in ladder:
            try:
                pixel_rot = match_fine(ret.query_features, ref_feats,
                                       ref_pixel,
                                       _region_points(grid, labels_try,
                                                      q_shape))
                break
            except NoEffectivePatch:
                continue
        if pixel_rot is None:
            raise NoEffectivePatch(
                f"no effective patches anywhere for keypoint {label!r}")
        uv = ret.rotation.unmap_points(np.asarray([pixel_rot], float))[0]
        u = int(np.clip(np.rint(uv[0]), 0, w - 1))
        v = int(np.clip(np.rint(uv[1]), 0, h - 1))
        d = _depth_at(obs.depth, (u, v), cfg)
        pos = obs.camera.backproject((u, v), d)
        keypoints[label] = Keypoint(label, (u, v),
                                    (float(pos[0]), float(pos[1]),
                                     float(pos[2])))
    return SemanticKeypoints(ret.category, ret.rotation_deg, ret.score,
                             keypoints, cells)
