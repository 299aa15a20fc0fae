"""Semantic keypoints, language plans and a particle cloth simulator.

The package covers a desk-scale garment manipulation pipeline: prototype
discovery and retrieval, coarse-to-fine keypoint matching, skill waypoint
generation with motion checks, closed-loop planning against a chat
client, and a deterministic simulator used for benchmarks.
"""

__version__ = "0.1.0"
