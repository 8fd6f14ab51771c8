"""Dataset decoding and frame sources.

Covers the on-disk formats the toolkit consumes:

* depth ground truth: 16-bit single-channel PNG, ``meters = raw / 256``,
  raw value 0 marks an invalid pixel (bit-exact, lossless round-trip);
* detection labels: YOLO text files, one ``class cx cy w h`` line per
  object, coordinates normalized to [0, 1];
* prediction files: the label format plus a confidence column;
* replay/synthetic frame sources standing in for a live camera.
"""

from __future__ import annotations

import io
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

import yaml

from .errors import (
    BadClassId,
    BadCoordinate,
    BadFieldCount,
    ConfigInvalid,
    MalformedImage,
    MalformedPng,
    WrongBitDepth,
)
from .types import (
    BBox,
    ClassList,
    DEFAULT_CLASSES,
    DepthMap,
    Detection,
    Frame,
    FrameSource,
    GroundTruthObject,
)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")

# Coordinates may exceed [0, 1] by at most this much before the line is
# rejected; anything inside the tolerance is clamped.
COORD_TOLERANCE = 1e-6

_DEPTH_SCALE = 256.0


# --- depth maps (KITTI convention) ----------------------------------------

def decode_kitti_depth(png_bytes: bytes) -> DepthMap:
    """Decode a 16-bit grayscale PNG into a metric depth map.

    ``depth = raw / 256`` meters; raw 0 means no measurement (invalid).
    """
    try:
        img = Image.open(io.BytesIO(png_bytes))
        img.load()
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise MalformedPng(f"cannot decode PNG: {exc}") from exc
    if img.format != "PNG":
        raise MalformedPng(f"expected PNG, got {img.format}")
    # Pillow maps 16-bit grayscale PNGs to mode I;16 (or I on older
    # versions); anything else is the wrong bit depth or channel count.
    if img.mode not in ("I;16", "I;16B", "I"):
        raise WrongBitDepth(f"expected 16-bit single-channel PNG, got mode {img.mode}")
    raw = np.asarray(img)
    if raw.ndim != 2:
        raise WrongBitDepth(f"expected single channel, got shape {raw.shape}")
    if raw.min() < 0 or raw.max() > 0xFFFF:
        raise WrongBitDepth("pixel values outside the 16-bit range")
    raw = raw.astype(np.uint16)
    depth = raw.astype(np.float64) / _DEPTH_SCALE
    return DepthMap(depth=depth, valid=raw != 0)


def encode_kitti_depth(depth_map: DepthMap) -> bytes:
    """Inverse of :func:`decode_kitti_depth`; invalid pixels encode as 0.

    Raises ValueError if a valid depth does not fit the 16-bit raw range.
    """
    scaled = depth_map.depth * _DEPTH_SCALE
    raw = np.where(depth_map.valid, np.rint(scaled), 0.0)
    if raw.min() < 0 or raw.max() > 0xFFFF:
        raise ValueError("depth values outside the representable 16-bit range")
    img = Image.fromarray(raw.astype(np.uint16))
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


@dataclass(frozen=True)
class LabeledImage:
    """An image file with its ground-truth objects in pixel coordinates."""

    image_path: Path
    objects: tuple[GroundTruthObject, ...]


def load_labeled_images(
    image_dir: str | Path,
    label_dir: str | Path,
    classes: ClassList = DEFAULT_CLASSES,
) -> list[LabeledImage]:
    """Pair images with `<stem>.txt` label files; images without labels get
    an empty object list."""
    out = []
    for path in list_frame_paths(image_dir):
        label_path = Path(label_dir) / f"{path.stem}.txt"
        objects: tuple[GroundTruthObject, ...] = ()
        if label_path.is_file():
            width, height = image_dimensions(path)
            objects = tuple(
                parse_yolo_labels(label_path.read_text(encoding="utf-8"), width, height, classes)
            )
        out.append(LabeledImage(image_path=path, objects=objects))
    return out


@dataclass(frozen=True)
class DepthSamplePair:
    """An estimated depth map paired with its ground truth.

    Metric comparisons use only pixels valid in the truth map.
    """

    estimate: DepthMap
    truth: DepthMap

    def __post_init__(self):
        if self.estimate.depth.shape != self.truth.depth.shape:
            raise ValueError(
                f"estimate {self.estimate.depth.shape} and truth "
                f"{self.truth.depth.shape} dimensions differ"
            )


# --- YOLO-style labels and predictions ------------------------------------

def _parse_float(token: str, line_no: int, what: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise BadCoordinate(f"line {line_no}: non-numeric {what} {token!r}") from None
    if not math.isfinite(value):
        raise BadCoordinate(f"line {line_no}: non-finite {what} {token!r}")
    return value


def _parse_normalized(token: str, line_no: int, what: str) -> float:
    value = _parse_float(token, line_no, what)
    if value < -COORD_TOLERANCE or value > 1.0 + COORD_TOLERANCE:
        raise BadCoordinate(f"line {line_no}: {what} {value} outside [0, 1]")
    return min(max(value, 0.0), 1.0)


def _parse_class(token: str, line_no: int, n_classes: int) -> int:
    try:
        class_id = int(token)
    except ValueError:
        raise BadClassId(f"line {line_no}: non-integer class id {token!r}") from None
    if not 0 <= class_id < n_classes:
        raise BadClassId(
            f"line {line_no}: class id {class_id} outside [0, {n_classes - 1}]"
        )
    return class_id


def _center_to_corners(
    cx: float, cy: float, w: float, h: float, image_width: float, image_height: float
) -> BBox:
    # Clamp to the image so every parsed box satisfies the box invariants
    # even when a centered box pokes past an edge.
    x_min = max((cx - w / 2.0) * image_width, 0.0)
    y_min = max((cy - h / 2.0) * image_height, 0.0)
    x_max = min((cx + w / 2.0) * image_width, float(image_width))
    y_max = min((cy + h / 2.0) * image_height, float(image_height))
    x_max = max(x_max, x_min)
    y_max = max(y_max, y_min)
    return BBox(x_min, y_min, x_max, y_max)


def parse_yolo_labels(
    text: str,
    image_width: float,
    image_height: float,
    classes: ClassList = DEFAULT_CLASSES,
) -> list[GroundTruthObject]:
    """Parse ``class cx cy w h`` lines into corner-form ground truth boxes."""
    objects: list[GroundTruthObject] = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 5:
            raise BadFieldCount(f"line {line_no}: expected 5 fields, got {len(fields)}")
        class_id = _parse_class(fields[0], line_no, len(classes))
        cx, cy, w, h = (
            _parse_normalized(tok, line_no, name)
            for tok, name in zip(fields[1:], ("cx", "cy", "w", "h"))
        )
        bbox = _center_to_corners(cx, cy, w, h, image_width, image_height)
        objects.append(GroundTruthObject(bbox=bbox, class_id=class_id))
    return objects


def format_yolo_labels(
    objects: Sequence[GroundTruthObject], image_width: float, image_height: float
) -> str:
    """Inverse of :func:`parse_yolo_labels`, used to author fixtures."""
    lines = []
    for obj in objects:
        b = obj.bbox
        cx = float((b.x_min + b.x_max) / 2.0 / image_width)
        cy = float((b.y_min + b.y_max) / 2.0 / image_height)
        w = float(b.width / image_width)
        h = float(b.height / image_height)
        lines.append(f"{obj.class_id} {cx!r} {cy!r} {w!r} {h!r}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_predictions(
    text: str,
    image_width: float,
    image_height: float,
    classes: ClassList = DEFAULT_CLASSES,
) -> list[Detection]:
    """Parse ``class confidence cx cy w h`` lines into detections."""
    detections: list[Detection] = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 6:
            raise BadFieldCount(f"line {line_no}: expected 6 fields, got {len(fields)}")
        class_id = _parse_class(fields[0], line_no, len(classes))
        confidence = _parse_normalized(fields[1], line_no, "confidence")
        cx, cy, w, h = (
            _parse_normalized(tok, line_no, name)
            for tok, name in zip(fields[2:], ("cx", "cy", "w", "h"))
        )
        bbox = _center_to_corners(cx, cy, w, h, image_width, image_height)
        detections.append(Detection(bbox=bbox, class_id=class_id, confidence=confidence))
    return detections


def format_predictions(
    detections: Sequence[Detection], image_width: float, image_height: float
) -> str:
    lines = []
    for det in detections:
        b = det.bbox
        cx = float((b.x_min + b.x_max) / 2.0 / image_width)
        cy = float((b.y_min + b.y_max) / 2.0 / image_height)
        w = float(b.width / image_width)
        h = float(b.height / image_height)
        lines.append(
            f"{det.class_id} {float(det.confidence)!r} {cx!r} {cy!r} {w!r} {h!r}"
        )
    return "\n".join(lines) + ("\n" if lines else "")


# --- frame sources ---------------------------------------------------------

def load_frame_pixels(path: str | Path) -> np.ndarray:
    """Decode an image file into an (h, w, 3) uint8 RGB buffer."""
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"), dtype=np.uint8)
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise MalformedImage(f"cannot decode {path}: {exc}") from exc


def list_frame_paths(directory: str | Path) -> list[Path]:
    """Image files under ``directory`` in sorted (replay) order."""
    root = Path(directory)
    return sorted(
        p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file()
    )


@dataclass
class SourceStats:
    emitted: int = 0
    decode_failures: int = 0


class ReplaySource:
    """Feeds frames from image files, simulating the camera.

    Frame ids count attempts (so ``id % len(paths)`` always names the file,
    even across skipped decode failures) and timestamps are synthesized from
    the target fps, which keeps downstream event traces reproducible. With
    ``pace=True`` emission additionally sleeps to honor the fps target in
    wall-clock time.
    """

    def __init__(
        self,
        frame_paths: Sequence[str | Path],
        fps: float = 30.0,
        loop: bool = False,
        pace: bool = False,
    ):
        if fps <= 0:
            raise ValueError(f"fps must be positive, got {fps}")
        self.frame_paths = [Path(p) for p in frame_paths]
        self.fps = fps
        self.loop = loop
        self.pace = pace
        self.stats = SourceStats()

    def __iter__(self) -> Iterator[Frame]:
        if not self.frame_paths:
            return
        period_ns = 1e9 / self.fps
        start = time.monotonic()
        attempt = 0
        while True:
            for path in self.frame_paths:
                timestamp_ns = round(attempt * period_ns)
                if self.pace:
                    deadline = start + attempt / self.fps
                    delay = deadline - time.monotonic()
                    if delay > 0:
                        time.sleep(delay)
                try:
                    pixels = load_frame_pixels(path)
                except MalformedImage:
                    # A live assistive pipeline must not halt on one bad
                    # capture: skip and count.
                    self.stats.decode_failures += 1
                    attempt += 1
                    continue
                yield Frame(
                    id=attempt,
                    timestamp_ns=timestamp_ns,
                    pixels=pixels,
                    source=FrameSource.REPLAY,
                )
                self.stats.emitted += 1
                attempt += 1
            if not self.loop:
                return


class SyntheticSource:
    """Deterministic generated frames for benchmarking without a dataset."""

    def __init__(
        self, n_frames: int, width: int = 640, height: int = 480, fps: float = 30.0
    ):
        if n_frames < 0:
            raise ValueError("n_frames must be non-negative")
        self.n_frames = n_frames
        self.width = width
        self.height = height
        self.fps = fps
        self.stats = SourceStats()
        base = np.linspace(0, 255, width, dtype=np.float64)
        self._gradient = np.broadcast_to(
            base[None, :, None], (height, width, 3)
        ).astype(np.uint8)

    def __iter__(self) -> Iterator[Frame]:
        period_ns = 1e9 / self.fps
        for i in range(self.n_frames):
            pixels = np.roll(self._gradient, shift=(i * 7) % self.width, axis=1)
            yield Frame(
                id=i,
                timestamp_ns=round(i * period_ns),
                pixels=np.ascontiguousarray(pixels),
                source=FrameSource.REPLAY,
            )
            self.stats.emitted += 1


# --- dataset manifest -------------------------------------------------------

_MANIFEST_KEYS = {
    "images",
    "labels",
    "depth_truth",
    "depth_estimates",
    "predictions",
    "classes",
    "image_size",
}


@dataclass
class DatasetManifest:
    """Paths of one evaluation dataset, loaded from a YAML manifest.

    Files in the different directories are paired by stem. ``image_size``
    lets label-only fixtures be evaluated without image files.
    """

    image_dir: Path | None = None
    label_dir: Path | None = None
    depth_truth_dir: Path | None = None
    depth_estimate_dir: Path | None = None
    prediction_dir: Path | None = None
    image_size: tuple[int, int] | None = None
    classes: ClassList = field(default_factory=lambda: DEFAULT_CLASSES)

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        path = Path(path)
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigInvalid(f"{path}: invalid YAML: {exc}") from exc
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigInvalid(f"{path}: manifest must be a mapping")
        unknown = set(raw) - _MANIFEST_KEYS
        if unknown:
            raise ConfigInvalid(f"{path}: unknown manifest key {sorted(unknown)[0]!r}")

        def resolve(key: str) -> Path | None:
            value = raw.get(key)
            if value is None:
                return None
            p = Path(value)
            return p if p.is_absolute() else path.parent / p

        classes = DEFAULT_CLASSES
        class_path = resolve("classes")
        if class_path is not None:
            classes = ClassList.from_file(class_path)
        image_size = raw.get("image_size")
        if image_size is not None:
            if (
                not isinstance(image_size, (list, tuple))
                or len(image_size) != 2
                or not all(isinstance(v, int) and v > 0 for v in image_size)
            ):
                raise ConfigInvalid(
                    f"{path}: image_size must be [width, height] positive integers"
                )
            image_size = (image_size[0], image_size[1])
        return cls(
            image_dir=resolve("images"),
            label_dir=resolve("labels"),
            depth_truth_dir=resolve("depth_truth"),
            depth_estimate_dir=resolve("depth_estimates"),
            prediction_dir=resolve("predictions"),
            image_size=image_size,
            classes=classes,
        )


def image_dimensions(path: str | Path) -> tuple[int, int]:
    """(width, height) from the image header without decoding pixel data."""
    with Image.open(path) as img:
        return img.size
