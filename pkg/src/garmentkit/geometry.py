"""Pixel-space and table-space geometric primitives.

Conventions used throughout the package:

* raster arrays are indexed ``[v, u]`` (row, column); points are ``(u, v)``
* masks are boolean arrays, True = foreground
* the contour of a mask is traced over its largest 8-connected component,
  starts at the topmost-leftmost boundary pixel and runs counter-clockwise
  as displayed (down the left side first)
* table coordinates are metric, z up, z = 0 on the table surface
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np
from scipy import ndimage
from skimage.morphology import thin as _thin


class EmptyMask(ValueError):
    """Raised when an operation needs foreground pixels and finds none."""


class BadDepth(ValueError):
    """Raised for non-positive depth at back-projection."""


# ------------------------------------------------------------- mask basics

def largest_component(mask: np.ndarray) -> np.ndarray:
    """Largest 8-connected foreground component (ties: first in scan order)."""
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        raise EmptyMask("mask has no foreground")
    labels, n = ndimage.label(m, structure=np.ones((3, 3), dtype=int))
    if n == 1:
        return labels == 1
    sizes = ndimage.sum_labels(m, labels, index=np.arange(1, n + 1))
    return labels == (int(np.argmax(sizes)) + 1)


def mask_centroid(mask: np.ndarray) -> Tuple[float, float]:
    """Foreground centroid as (u, v)."""
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        raise EmptyMask("mask has no foreground")
    vs, us = np.nonzero(m)
    return float(us.mean()), float(vs.mean())


# neighbour offsets counter-clockwise as displayed, starting West
_MOORE = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


def extract_contour(mask: np.ndarray) -> np.ndarray:
    """Ordered outer boundary of the largest component, as an (N, 2) array.

    Every returned pixel is foreground with at least one background
    8-neighbour (the raster border counts as background).  The walk starts
    at the topmost-leftmost boundary pixel and proceeds counter-clockwise
    as displayed.
    """
    m = largest_component(mask)
    h, w = m.shape
    vs, us = np.nonzero(m)
    # topmost, then leftmost
    i0 = np.lexsort((us, vs))[0]
    start = (int(us[i0]), int(vs[i0]))

    def fg(u: int, v: int) -> bool:
        return 0 <= u < w and 0 <= v < h and m[v, u]

    contour: List[Tuple[int, int]] = [start]
    backtrack = (start[0] - 1, start[1])  # came from the West
    cur = start
    second = None
    for _ in range(32 * (len(us) + 1)):
        # scan the Moore neighbourhood starting just after the backtrack pixel
        k0 = _MOORE.index((backtrack[0] - cur[0], backtrack[1] - cur[1]))
        nxt = None
        for step in range(1, 9):
            off = _MOORE[(k0 + step) % 8]
            cand = (cur[0] + off[0], cur[1] + off[1])
            if fg(*cand):
                nxt = cand
                break
        if nxt is None:
            break  # isolated pixel
        if cur == start and second is not None and nxt == second:
            break  # the walk has closed
        prev = _MOORE[(k0 + step - 1) % 8]
        cur, backtrack = nxt, (cur[0] + prev[0], cur[1] + prev[1])
        contour.append(cur)
        if second is None:
            second = cur
    else:
        raise RuntimeError("contour trace did not close")
    if len(contour) > 1 and contour[-1] == start:
        contour.pop()
    return np.asarray(contour, dtype=np.int64)


# -------------------------------------------------------------- skeleton

def _ridge_pixels(dist: np.ndarray) -> np.ndarray:
    """Distance-transform ridge: local maxima along every axis direction.

    A pixel is a ridge pixel when its distance value is >= both neighbours
    along each of the four directions (two axes, two diagonals) and strictly
    greater than at least one neighbour overall.
    """
    d = np.pad(dist, 1)
    core = d[1:-1, 1:-1]
    ge_all = np.ones_like(core, dtype=bool)
    gt_any = np.zeros_like(core, dtype=bool)
    for dv, du in ((0, 1), (1, 0), (1, 1), (1, -1)):
        a = d[1 + dv : d.shape[0] - 1 + dv, 1 + du : d.shape[1] - 1 + du]
        b = d[1 - dv : d.shape[0] - 1 - dv, 1 - du : d.shape[1] - 1 - du]
        ge_all &= (core >= a) & (core >= b)
        gt_any |= (core > a) | (core > b)
    return ge_all & gt_any & (dist > 0)


def _prune_spurs(skel: np.ndarray, min_len: int) -> np.ndarray:
    """Iteratively remove branch tips shorter than ``min_len`` pixels."""
    s = skel.copy()
    kernel = np.ones((3, 3), dtype=int)
    changed = True
    while changed:
        changed = False
        deg = ndimage.convolve(s.astype(int), kernel, mode="constant") - s.astype(int)
        ends = np.argwhere(s & (deg == 1))
        for v, u in ends:
            if not s[v, u]:
                continue
            path = [(v, u)]
            pv, pu = -1, -1
            cv, cu = v, u
            while True:
                nbrs = [
                    (cv + dv, cu + du)
                    for dv in (-1, 0, 1)
                    for du in (-1, 0, 1)
                    if (dv or du)
                    and 0 <= cv + dv < s.shape[0]
                    and 0 <= cu + du < s.shape[1]
                    and s[cv + dv, cu + du]
                    and (cv + dv, cu + du) != (pv, pu)
                ]
                if len(nbrs) != 1:
                    # junction (or dead end): path up to here is the spur
                    break
                pv, pu = cv, cu
                cv, cu = nbrs[0]
                if deg[cv, cu] >= 3:
                    break
                path.append((cv, cu))
                if len(path) >= min_len:
                    break
            if len(path) < min_len and len(path) < s.sum():
                for qv, qu in path:
                    s[qv, qu] = False
                changed = True
    return s


def skeletonize(mask: np.ndarray, spur_min_px: int = 3) -> np.ndarray:
    """Medial-axis skeleton of the largest component.

    Ridge pixels of the Euclidean distance transform are thinned to unit
    width, then spurs shorter than ``spur_min_px`` are pruned.  The result
    is a subset of the mask.
    """
    m = largest_component(mask)
    dist = ndimage.distance_transform_edt(m)
    ridge = _ridge_pixels(dist)
    if not ridge.any():
        ridge = dist == dist.max()
    skel = _thin(ridge)
    skel = _prune_spurs(skel, spur_min_px)
    if not skel.any():
        skel = np.zeros_like(m)
        skel[np.unravel_index(int(np.argmax(dist)), m.shape)] = True
    return skel


# ------------------------------------------------- farthest point sampling

def farthest_point_sample(points: np.ndarray, k: int, seed_index: int = 0) -> np.ndarray:
    """Greedy maximin subsample of ``points`` ((N, 2) array), k indices.

    Starts at ``seed_index``; each step adds the point with the largest
    distance to the selected set, breaking ties toward the lowest input
    index.  If k >= N all indices are returned in selection order.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be an (N, 2) array")
    n = len(pts)
    if n == 0:
        raise EmptyMask("no points to sample")
    if k <= 0:
        raise ValueError("k must be positive")
    if not 0 <= seed_index < n:
        raise ValueError("seed_index out of range")
    k = min(k, n)
    chosen = [seed_index]
    dmin = np.linalg.norm(pts - pts[seed_index], axis=1)
    for _ in range(k - 1):
        nxt = int(np.argmax(dmin))  # argmax takes the first (lowest) index on ties
        chosen.append(nxt)
        dmin = np.minimum(dmin, np.linalg.norm(pts - pts[nxt], axis=1))
    return np.asarray(chosen, dtype=np.int64)


# ------------------------------------------------------------- rotation

@dataclass
class RasterRotation:
    """Rotation of a raster about its centre with an expanded canvas.

    Provides the forward and inverse mapping between source and destination
    pixel coordinates so points can follow the raster through the rotation.
    """

    angle_deg: float
    src_shape: Tuple[int, int]  # (H, W)
    dst_shape: Tuple[int, int] = field(init=False)
    _rot: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        h, w = self.src_shape
        th = np.deg2rad(self.angle_deg)
        c, s = np.cos(th), np.sin(th)
        if abs(self.angle_deg) % 90 == 0:
            c, s = round(c), round(s)  # exact quarter turns
        self._rot = np.array([[c, -s], [s, c]], dtype=np.float64)
        wd = int(np.ceil(w * abs(c) + h * abs(s) - 1e-9))
        hd = int(np.ceil(w * abs(s) + h * abs(c) - 1e-9))
        self.dst_shape = (hd, wd)

    def _centers(self):
        h, w = self.src_shape
        hd, wd = self.dst_shape
        return (np.array([(w - 1) / 2.0, (h - 1) / 2.0]),
                np.array([(wd - 1) / 2.0, (hd - 1) / 2.0]))

    def map_points(self, pts: np.ndarray) -> np.ndarray:
        """Source (u, v) points -> destination frame."""
        csrc, cdst = self._centers()
        p = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        return (p - csrc) @ self._rot.T + cdst

    def unmap_points(self, pts: np.ndarray) -> np.ndarray:
        """Destination (u, v) points -> source frame."""
        csrc, cdst = self._centers()
        p = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        return (p - cdst) @ self._rot + csrc

    def apply(self, raster: np.ndarray, nearest: bool = True, cval: float = 0) -> np.ndarray:
        """Rotate a 2-D (or HxWx3) raster. nearest=True for masks/labels."""
        arr = np.asarray(raster)
        hd, wd = self.dst_shape
        vv, uu = np.mgrid[0:hd, 0:wd].astype(np.float64)
        src = self.unmap_points(np.stack([uu.ravel(), vv.ravel()], axis=1))
        coords = np.stack([src[:, 1], src[:, 0]])  # row, col
        order = 0 if nearest else 1
        if arr.ndim == 2:
            out = ndimage.map_coordinates(
                arr.astype(np.float64), coords, order=order, mode="constant",
                cval=cval, prefilter=False,
            ).reshape(hd, wd)
            return out.astype(arr.dtype) if nearest or arr.dtype == bool else out.astype(arr.dtype)
        if arr.ndim == 3:
            chans = [
                ndimage.map_coordinates(
                    arr[..., i].astype(np.float64), coords, order=order,
                    mode="constant", cval=cval, prefilter=False,
                ).reshape(hd, wd)
                for i in range(arr.shape[2])
            ]
            return np.stack(chans, axis=-1).astype(arr.dtype)
        raise ValueError("raster must be HxW or HxWxC")


def rotate_raster(raster: np.ndarray, angle_deg: float, nearest: bool = True,
                  cval: float = 0) -> np.ndarray:
    """Convenience wrapper around :class:`RasterRotation`."""
    return RasterRotation(angle_deg, raster.shape[:2]).apply(raster, nearest, cval)


# ------------------------------------------------------------------ grid

@dataclass(frozen=True)
class GridSpec:
    """Rows x cols cell grid over a raster, cells labelled 'A1'..'D4' style."""

    rows: int = 4
    cols: int = 4

    def labels(self) -> List[str]:
        return [self.label_at(r, c) for r in range(self.rows) for c in range(self.cols)]

    def label_at(self, row: int, col: int) -> str:
        if not (0 <= row < self.rows and 0 <= col < self.cols):
            raise ValueError("cell out of range")
        return f"{chr(ord('A') + row)}{col + 1}"

    def parse_label(self, label: str) -> Tuple[int, int]:
        s = label.strip().upper()
        if len(s) < 2 or not s[0].isalpha() or not s[1:].isdigit():
            raise ValueError(f"bad cell label {label!r}")
        row, col = ord(s[0]) - ord("A"), int(s[1:]) - 1
        if not (0 <= row < self.rows and 0 <= col < self.cols):
            raise ValueError(f"cell label {label!r} outside grid")
        return row, col

    def _bounds(self, extent: int, n: int) -> np.ndarray:
        return np.floor(np.arange(n + 1) * extent / n).astype(int)

    def cell_of(self, pixel: Sequence[float], shape: Tuple[int, int]) -> str:
        """Cell label containing the pixel (total on the raster)."""
        h, w = shape
        u = min(max(int(pixel[0]), 0), w - 1)
        v = min(max(int(pixel[1]), 0), h - 1)
        row = int(np.searchsorted(self._bounds(h, self.rows), v, side="right")) - 1
        col = int(np.searchsorted(self._bounds(w, self.cols), u, side="right")) - 1
        return self.label_at(min(row, self.rows - 1), min(col, self.cols - 1))

    def cell_bounds(self, label: str, shape: Tuple[int, int]) -> Tuple[int, int, int, int]:
        """(u0, v0, u1, v1) half-open pixel bounds of a cell."""
        row, col = self.parse_label(label)
        h, w = shape
        rb, cb = self._bounds(h, self.rows), self._bounds(w, self.cols)
        return int(cb[col]), int(rb[row]), int(cb[col + 1]), int(rb[row + 1])

    def cells_mask(self, labels: Sequence[str], shape: Tuple[int, int]) -> np.ndarray:
        out = np.zeros(shape, dtype=bool)
        for lab in labels:
            u0, v0, u1, v1 = self.cell_bounds(lab, shape)
            out[v0:v1, u0:u1] = True
        return out

    def neighbors(self, label: str) -> List[str]:
        """The 8-neighbour cell labels (on-grid only), row-major order."""
        row, col = self.parse_label(label)
        out = []
        for r in range(max(0, row - 1), min(self.rows, row + 2)):
            for c in range(max(0, col - 1), min(self.cols, col + 2)):
                if (r, c) != (row, col):
                    out.append(self.label_at(r, c))
        return out


# ---------------------------------------------------------------- camera

@dataclass
class CameraModel:
    """Pinhole intrinsics plus a 4x4 camera-to-table extrinsic."""

    fx: float
    fy: float
    cx: float
    cy: float
    extrinsic: np.ndarray  # (4, 4), camera frame -> table frame

    def __post_init__(self):
        ex = np.asarray(self.extrinsic, dtype=np.float64)
        if ex.shape != (4, 4):
            raise ValueError("extrinsic must be 4x4")
        r = ex[:3, :3]
        if not np.allclose(r @ r.T, np.eye(3), atol=1e-6) or np.linalg.det(r) < 0:
            raise ValueError("extrinsic rotation must be a proper rotation")
        self.extrinsic = ex

    def backproject(self, pixel: Sequence[float], depth: float) -> np.ndarray:
        """Pixel (u, v) + metric depth -> 3-D point in the table frame."""
        if not depth > 0:
            raise BadDepth(f"depth must be positive, got {depth}")
        u, v = float(pixel[0]), float(pixel[1])
        pc = np.array([(u - self.cx) * depth / self.fx,
                       (v - self.cy) * depth / self.fy,
                       depth, 1.0])
        return (self.extrinsic @ pc)[:3]

    def project(self, point: Sequence[float]) -> Tuple[float, float, float]:
        """Table-frame 3-D point -> (u, v, depth)."""
        p = np.ones(4)
        p[:3] = np.asarray(point, dtype=np.float64)
        pc = np.linalg.inv(self.extrinsic) @ p
        d = pc[2]
        if not d > 0:
            raise BadDepth("point is behind the camera")
        return (self.fx * pc[0] / d + self.cx, self.fy * pc[1] / d + self.cy, d)


def top_down_camera(size: int, span: float, height: float,
                    center: Tuple[float, float] = (0.0, 0.0)) -> CameraModel:
    """Camera ``height`` metres above ``center`` looking straight down.

    Image +u maps to table +x, image +v to table -y; ``span`` metres of
    table are visible across the image width at table level.
    """
    f = size * height / span
    ex = np.array([
        [1.0, 0.0, 0.0, center[0]],
        [0.0, -1.0, 0.0, center[1]],
        [0.0, 0.0, -1.0, height],
        [0.0, 0.0, 0.0, 1.0],
    ])
    return CameraModel(fx=f, fy=f, cx=(size - 1) / 2.0, cy=(size - 1) / 2.0, extrinsic=ex)
