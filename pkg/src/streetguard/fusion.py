"""Depth/detection fusion: per-box depth aggregation and proximity gating.

Each detection is annotated with a robust depth statistic sampled inside a
shrunken copy of its box; a hit is "close" only when that statistic falls
under the proximity threshold AND enough valid depth pixels backed it up
(insufficient evidence never counts as proximity).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import BoxOutsideImage
from .types import BBox, DepthMap, Detection


class DepthStatistic(enum.Enum):
    MEDIAN = "median"
    MEAN = "mean"
    P10 = "p10"


@dataclass(frozen=True)
class FusionConfig:
    proximity_threshold_m: float = 3.0
    depth_statistic: DepthStatistic = DepthStatistic.MEDIAN
    min_valid_fraction: float = 0.2
    box_shrink: float = 0.1

    def __post_init__(self):
        if self.proximity_threshold_m <= 0:
            raise ValueError(f"proximity threshold must be > 0, got {self.proximity_threshold_m}")
        if not 0.0 <= self.box_shrink < 0.5:
            raise ValueError(f"box_shrink {self.box_shrink} outside [0, 0.5)")
        if not 0.0 <= self.min_valid_fraction <= 1.0:
            raise ValueError(f"min_valid_fraction {self.min_valid_fraction} outside [0, 1]")


@dataclass(frozen=True)
class ProximityHit:
    """A detection annotated with its aggregated depth."""

    detection: Detection
    depth_m: float
    is_close: bool
    valid_fraction: float


def shrink_box(box: BBox, fraction: float) -> BBox:
    """Trim ``fraction`` of the width/height from each side of the box."""
    dx = box.width * fraction
    dy = box.height * fraction
    return BBox(box.x_min + dx, box.y_min + dy, box.x_max - dx, box.y_max - dy)


def _pixel_range(lo: float, hi: float, size: int) -> tuple[int, int]:
    # A pixel index i belongs to the box when its center i + 0.5 lies in
    # [lo, hi]; returns a half-open index range clipped to the buffer.
    start = max(math.ceil(lo - 0.5), 0)
    stop = min(math.floor(hi - 0.5) + 1, size)
    return start, max(stop, start)


def box_depth(
    depth: DepthMap, box: BBox, config: FusionConfig = FusionConfig()
) -> tuple[float, float]:
    """Aggregate depth inside a (shrunken) box.

    Returns ``(statistic_m, valid_fraction)``; ``(inf, 0.0)`` when no valid
    pixel falls inside. Raises BoxOutsideImage when the box does not overlap
    the map at all.
    """
    if (
        box.x_min >= depth.width
        or box.x_max <= 0
        or box.y_min >= depth.height
        or box.y_max <= 0
    ):
        raise BoxOutsideImage(f"box {box.as_tuple()} outside {depth.width}x{depth.height} map")
    inner = shrink_box(box, config.box_shrink)
    x0, x1 = _pixel_range(inner.x_min, inner.x_max, depth.width)
    y0, y1 = _pixel_range(inner.y_min, inner.y_max, depth.height)
    n_pixels = (x1 - x0) * (y1 - y0)
    if n_pixels == 0:
        return math.inf, 0.0
    window_valid = depth.valid[y0:y1, x0:x1]
    values = depth.depth[y0:y1, x0:x1][window_valid]
    if values.size == 0:
        return math.inf, 0.0
    if config.depth_statistic is DepthStatistic.MEDIAN:
        statistic = float(np.median(values))
    elif config.depth_statistic is DepthStatistic.MEAN:
        statistic = float(values.mean())
    else:
        statistic = float(np.percentile(values, 10))
    return statistic, values.size / n_pixels


def fuse(
    depth: DepthMap,
    detections: list[Detection],
    config: FusionConfig = FusionConfig(),
) -> tuple[list[ProximityHit], int]:
    """Annotate each detection with proximity; order is preserved.

    Returns the hits plus the count of detections skipped because their box
    fell entirely outside the depth map.
    """
    hits: list[ProximityHit] = []
    skipped = 0
    for det in detections:
        try:
            depth_m, valid_fraction = box_depth(depth, det.bbox, config)
        except BoxOutsideImage:
            skipped += 1
            continue
        is_close = (
            depth_m <= config.proximity_threshold_m
            and valid_fraction >= config.min_valid_fraction
        )
        hits.append(
            ProximityHit(
                detection=det,
                depth_m=depth_m,
                is_close=is_close,
                valid_fraction=valid_fraction,
            )
        )
    return hits, skipped
