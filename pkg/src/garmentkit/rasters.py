"""Raster file IO: binary masks (PGM), images (PNG) and depth maps (PFM).

Masks travel as 8-bit binary PGM (P5, maxval 255) with foreground stored as
255.  Images are PNG.  Depth maps use the portable float map format (Pf,
single channel float32) with 0 meaning "missing".  All writers are
deterministic: no timestamps or ancillary chunks are embedded.
"""

from __future__ import annotations

import struct

import numpy as np
from PIL import Image


class RasterError(ValueError):
    """Raised for malformed raster files."""


# ---------------------------------------------------------------- PGM masks

def write_pgm(path: str, mask: np.ndarray) -> None:
    """Write a boolean (or 0/255) array as binary PGM, foreground = 255."""
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise RasterError("mask must be 2-D")
    data = (arr.astype(bool).astype(np.uint8)) * 255
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path: str) -> np.ndarray:
    """Read a binary PGM mask; any value > 127 counts as foreground."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(b"P5"):
        raise RasterError(f"{path}: not a binary PGM (P5) file")
    # header = magic, width, height, maxval separated by whitespace/comments
    tokens, pos = [], 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise RasterError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    try:
        w, h, maxval = (int(t) for t in tokens)
    except ValueError as exc:
        raise RasterError(f"{path}: bad PGM header") from exc
    if maxval != 255:
        raise RasterError(f"{path}: PGM maxval must be 255, got {maxval}")
    body = raw[pos : pos + w * h]
    if len(body) != w * h:
        raise RasterError(f"{path}: PGM payload truncated")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w) > 127


# ---------------------------------------------------------------- PNG images

def write_png(path: str, image: np.ndarray) -> None:
    """Write a uint8 grayscale or RGB array as PNG."""
    arr = np.asarray(image)
    if arr.dtype != np.uint8:
        raise RasterError("PNG image must be uint8")
    if arr.ndim == 2:
        Image.fromarray(arr, mode="L").save(path, format="PNG")
    elif arr.ndim == 3 and arr.shape[2] == 3:
        Image.fromarray(arr, mode="RGB").save(path, format="PNG")
    else:
        raise RasterError("PNG image must be HxW or HxWx3")


def read_png(path: str) -> np.ndarray:
    try:
        with Image.open(path) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB")
            return np.asarray(im).copy()
    except (OSError, SyntaxError) as exc:
        raise RasterError(f"{path}: cannot read PNG: {exc}") from exc


# ---------------------------------------------------------------- PFM depth

def write_pfm(path: str, depth: np.ndarray) -> None:
    """Write a float32 depth map as a single-channel PFM (little endian)."""
    arr = np.asarray(depth, dtype=np.float32)
    if arr.ndim != 2:
        raise RasterError("depth must be 2-D")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        # PFM stores rows bottom-to-top
        fh.write(arr[::-1].tobytes())


def read_pfm(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"Pf":
            raise RasterError(f"{path}: not a single-channel PFM file")
        try:
            w, h = (int(t) for t in fh.readline().split())
            scale = float(fh.readline())
        except ValueError as exc:
            raise RasterError(f"{path}: bad PFM header") from exc
        endian = "<" if scale < 0 else ">"
        body = fh.read(w * h * 4)
    if len(body) != w * h * 4:
        raise RasterError(f"{path}: PFM payload truncated")
    arr = np.frombuffer(body, dtype=endian + "f4").reshape(h, w)
    return arr[::-1].astype(np.float32)


def mask_digest(arrays) -> str:
    """Stable hex digest of a sequence of arrays (shape + dtype + bytes)."""
    import hashlib

    h = hashlib.sha256()
    for arr in arrays:
        a = np.ascontiguousarray(arr)
        h.update(str(a.shape).encode())
        h.update(str(a.dtype).encode())
        h.update(a.tobytes())
    return h.hexdigest()
