"""Core domain types shared by every pipeline stage.

All types here are immutable value objects once constructed; they are safe
to hand between threads. Box coordinates are floating-point pixels in
corner form (``x_min, y_min, x_max, y_max``); normalized center-form labels
are converted at ingestion.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import BadClassId

# The 13 street-object categories, in class-id order. A class-list file
# (one name per line, line number = id) can override this mapping.
RSUD20K_CLASS_NAMES = (
    "person",
    "rickshaw",
    "rickshaw van",
    "auto rickshaw",
    "truck",
    "pickup truck",
    "private car",
    "motorcycle",
    "bicycle",
    "bus",
    "micro bus",
    "covered van",
    "human hauler",
)


class FrameSource(enum.Enum):
    REPLAY = "replay"
    CAMERA = "camera"


@dataclass(frozen=True)
class Frame:
    """One timestamped RGB image flowing through the pipeline.

    ``pixels`` is a row-major ``(height, width, 3)`` uint8 buffer. Frame ids
    strictly increase within one pipeline run.
    """

    id: int
    timestamp_ns: int
    pixels: np.ndarray
    source: FrameSource = FrameSource.REPLAY

    def __post_init__(self):
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ValueError(f"pixels must be (h, w, 3), got {self.pixels.shape}")
        if self.pixels.dtype != np.uint8:
            raise ValueError(f"pixels must be uint8, got {self.pixels.dtype}")

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box in pixel coordinates, corners inclusive of subpixels."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ValueError(f"inverted box: {self}")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def translate(self, dx: float, dy: float) -> "BBox":
        return BBox(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x_min, self.y_min, self.x_max, self.y_max)


def box_area(box: BBox) -> float:
    """Area of a box in square pixels (0 for degenerate boxes)."""
    return box.area


def intersection_area(a: BBox, b: BBox) -> float:
    w = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    h = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if w <= 0.0 or h <= 0.0:
        return 0.0
    return w * h


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes.

    Defined as 0 when the union has zero area (two degenerate boxes), which
    keeps suppression and matching total and branch-free downstream.
    """
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


@dataclass(frozen=True)
class ClassList:
    """Fixed id <-> name bijection for the detector's categories."""

    names: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise ValueError("duplicate class names")
        if not self.names:
            raise ValueError("empty class list")

    def __len__(self) -> int:
        return len(self.names)

    def check(self, class_id: int) -> int:
        if not 0 <= class_id < len(self.names):
            raise BadClassId(
                f"class id {class_id} outside [0, {len(self.names) - 1}]"
            )
        return class_id

    def name(self, class_id: int) -> str:
        return self.names[self.check(class_id)]

    def id(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise BadClassId(f"unknown class name {name!r}") from None

    @classmethod
    def from_file(cls, path: str | Path) -> "ClassList":
        """Load one class name per line; line number = class id."""
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        names = tuple(line.strip() for line in lines if line.strip())
        return cls(names)


DEFAULT_CLASSES = ClassList(RSUD20K_CLASS_NAMES)


@dataclass(frozen=True)
class Detection:
    """One detector output: box, class and confidence."""

    bbox: BBox
    class_id: int
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} outside [0, 1]")
        if self.class_id < 0:
            raise ValueError(f"negative class id {self.class_id}")


@dataclass(frozen=True)
class GroundTruthObject:
    """An annotated object: box plus class, no confidence."""

    bbox: BBox
    class_id: int


@dataclass(frozen=True)
class DepthMap:
    """Per-pixel depth in meters with a validity mask.

    ``depth`` and ``valid`` are row-major ``(height, width)`` buffers of the
    same shape. Wherever ``valid`` is true, depth is expected to be
    non-negative; backend outputs are clamped by a shared wrapper to keep
    that invariant regardless of the model.
    """

    depth: np.ndarray
    valid: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.valid is None:
            object.__setattr__(self, "valid", np.ones(self.depth.shape, dtype=bool))
        if self.depth.ndim != 2:
            raise ValueError(f"depth must be 2-D, got shape {self.depth.shape}")
        if self.valid.shape != self.depth.shape:
            raise ValueError(
                f"valid mask shape {self.valid.shape} != depth shape {self.depth.shape}"
            )
        if self.valid.dtype != bool:
            raise ValueError(f"valid mask must be bool, got {self.valid.dtype}")

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]
