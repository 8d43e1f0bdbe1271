"""Desk-scale parallel-beam XCT reconstruction fused with adaptive-patch
segmentation, running on a deterministic simulated multi-rank fabric."""

from . import (
    config,
    fabric,
    fbp,
    formats,
    geometry,
    partition,
    patching,
    phantom,
    pipeline,
    segmentation,
)

__all__ = [
    "config",
    "fabric",
    "fbp",
    "formats",
    "geometry",
    "partition",
    "patching",
    "phantom",
    "pipeline",
    "segmentation",
]

__version__ = "0.1.0"
