"""Proximity alerting from monocular depth and street-object detection."""

__version__ = "0.1.0"

from .types import (  # noqa: F401
    BBox,
    ClassList,
    DEFAULT_CLASSES,
    DepthMap,
    Detection,
    Frame,
    FrameSource,
    GroundTruthObject,
    box_area,
    iou,
)
