"""Prototype library: one annotated flat exemplar per garment category.

An entry holds the prototype's grayscale image, its segmentation mask and
the discovered semantic keypoints (label to pixel).  Libraries persist as a
directory: ``library.json`` plus one PGM mask and one PNG image per
category, with a digest over all content so silent corruption is caught at
load time.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from .config import Config, DEFAULTS
from .features import FeatureMap, extract_features
from .rasters import read_pgm, read_png, write_pgm, write_png

MANIFEST = "library.json"


class CorruptLibrary(RuntimeError):
    """The on-disk library is incomplete or fails its digest."""


@dataclass
class PrototypeEntry:
    category: str
    image: np.ndarray                      # uint8 (H, W)
    mask: np.ndarray                       # bool (H, W)
    keypoints: Dict[str, Tuple[int, int]]  # label -> (u, v)

    def __post_init__(self):
        self.image = np.asarray(self.image, dtype=np.uint8)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.image.shape != self.mask.shape:
            raise ValueError("image and mask shapes differ")
        if not self.keypoints:
            raise ValueError("a prototype needs at least one keypoint")
        self.keypoints = {str(k): (int(v[0]), int(v[1]))
                          for k, v in self.keypoints.items()}

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.image.tobytes())
        h.update(np.packbits(self.mask).tobytes())
        h.update(json.dumps(self.keypoints, sort_keys=True).encode())
        return h.hexdigest()


class PrototypeLibrary:
    """Ordered mapping of category name to PrototypeEntry."""

    def __init__(self, entries: Optional[List[PrototypeEntry]] = None):
        self.entries: Dict[str, PrototypeEntry] = {}
        self._feature_cache: Dict[tuple, FeatureMap] = {}
        for e in entries or []:
            self.add(e)

    def add(self, entry: PrototypeEntry) -> None:
        self.entries[entry.category] = entry
        self._feature_cache = {k: v for k, v in self._feature_cache.items()
                               if k[0] != entry.category}

    def get(self, category: str) -> PrototypeEntry:
        if category not in self.entries:
            raise KeyError(f"no prototype for category {category!r}")
        return self.entries[category]

    def categories(self) -> List[str]:
        return list(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def features(self, category: str, cfg: Config = DEFAULTS) -> FeatureMap:
        """Patch features of a prototype, memoized per parameter set."""
        key = (category, cfg.patch_size, cfg.patch_stride, cfg.orient_bins)
        if key not in self._feature_cache:
            e = self.get(category)
            self._feature_cache[key] = extract_features(
                e.image, e.mask, patch_size=cfg.patch_size,
                stride=cfg.patch_stride, orient_bins=cfg.orient_bins)
        return self._feature_cache[key]

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        manifest = {"version": 1, "entries": {}}
        for cat, e in self.entries.items():
            write_png(str(d / f"{cat}_image.png"), e.image)
            write_pgm(str(d / f"{cat}_mask.pgm"), e.mask)
            manifest["entries"][cat] = {
                "image": f"{cat}_image.png",
                "mask": f"{cat}_mask.pgm",
                "keypoints": {k: list(v) for k, v in e.keypoints.items()},
                "digest": e.digest(),
            }
        (d / MANIFEST).write_text(json.dumps(manifest, indent=2,
                                             sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory) -> "PrototypeLibrary":
        d = Path(directory)
        path = d / MANIFEST
        if not path.is_file():
            raise CorruptLibrary(f"no {MANIFEST} in {d}")
        try:
            manifest = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise CorruptLibrary(f"unreadable manifest: {exc}") from exc
        if manifest.get("version") != 1:
            raise CorruptLibrary("unsupported library version")
        lib = cls()
        for cat, meta in manifest.get("entries", {}).items():
            try:
                image = read_png(str(d / meta["image"]))
                mask = read_pgm(str(d / meta["mask"]))
            except (OSError, KeyError, ValueError) as exc:
                raise CorruptLibrary(f"entry {cat!r}: {exc}") from exc
            if image.ndim == 3:
                image = image[..., 0]
            entry = PrototypeEntry(cat, image, mask,
                                   {k: tuple(v)
                                    for k, v in meta["keypoints"].items()})
            if entry.digest() != meta.get("digest"):
                raise CorruptLibrary(f"digest mismatch for entry {cat!r}")
            lib.add(entry)
        return lib
