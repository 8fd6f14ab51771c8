"""Frame preprocessing and the two model backends.

The depth estimator and the object detector sit behind small protocols so
the pipeline can run against deterministic stubs (the default, used by the
whole test suite) or against exported ``.onnx`` models when onnxruntime is
installed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence, runtime_checkable

import numpy as np
import cv2
import yaml

from .errors import (
    ConfigInvalid,
    MissingFixtureEntry,
    ModelLoadFailure,
    RuntimeUnavailable,
    ShapeMismatch,
    ZeroSizedFrame,
)
from .types import BBox, ClassList, DEFAULT_CLASSES, DepthMap, Frame


class Layout(enum.Enum):
    """Tensor memory layout expected by a backend."""

    HWC = "hwc"  # channels interleaved
    CHW = "chw"  # channels planar


@dataclass(frozen=True)
class PreprocessSpec:
    """Resize + normalize settings applied before inference."""

    width: int = 224
    height: int = 224
    layout: Layout = Layout.HWC

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"target dims must be positive, got {self.width}x{self.height}")


def preprocess(frame: Frame, spec: PreprocessSpec = PreprocessSpec()) -> np.ndarray:
    """Bilinear-resize a frame to the spec dims and scale to [0, 1].

    Returns float32 in the requested layout; deterministic for identical
    inputs.
    """
    if frame.width == 0 or frame.height == 0:
        raise ZeroSizedFrame(f"frame {frame.id} has zero-sized pixel buffer")
    img = frame.pixels.astype(np.float32)
    if (frame.width, frame.height) != (spec.width, spec.height):
        img = cv2.resize(img, (spec.width, spec.height), interpolation=cv2.INTER_LINEAR)
    img /= 255.0
    np.clip(img, 0.0, 1.0, out=img)
    if spec.layout is Layout.CHW:
        img = np.ascontiguousarray(img.transpose(2, 0, 1))
    return img


def _as_hwc(image: np.ndarray) -> np.ndarray:
    if image.ndim != 3:
        raise ShapeMismatch(f"expected a 3-D image tensor, got shape {image.shape}")
    if image.shape[2] == 3:
        return image
    if image.shape[0] == 3:
        return image.transpose(1, 2, 0)
    raise ShapeMismatch(f"no 3-channel axis in shape {image.shape}")


@dataclass
class RawDetections:
    """Detector output before thresholding and suppression.

    Each candidate is a box plus an independent per-class score vector
    (scores are not assumed to be normalized across classes).
    """

    candidates: list[tuple[BBox, np.ndarray]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.candidates)


@runtime_checkable
class DepthBackend(Protocol):
    """Produces a metric depth map at the preprocessed resolution."""

    shareable: bool

    def estimate(self, image: np.ndarray, frame_id: int = -1) -> DepthMap: ...


@runtime_checkable
class DetectBackend(Protocol):
    """Produces raw box/score candidates at the preprocessed resolution."""

    shareable: bool

    def detect(self, image: np.ndarray, frame_id: int = -1) -> RawDetections: ...


class StubDepthBackend:
    """Deterministic test double: depth from per-pixel brightness.

    ``depth = base + gain * brightness`` with brightness the channel mean of
    the normalized image, so an all-black frame reads ``base`` meters and an
    all-white frame ``base + gain``.
    """

    shareable = True

    def __init__(self, base_m: float = 1.0, gain_m: float = 9.0):
        self.base_m = base_m
        self.gain_m = gain_m

    def estimate(self, image: np.ndarray, frame_id: int = -1) -> DepthMap:
        hwc = _as_hwc(image)
        brightness = hwc.mean(axis=2, dtype=np.float64)
        depth = self.base_m + self.gain_m * brightness
        return DepthMap(depth=depth, valid=np.ones(depth.shape, dtype=bool))


class ScriptedDetectBackend:
    """Deterministic test double: detections planted per frame id.

    The script maps frame id to a list of candidates; frames without an
    entry yield no candidates unless ``strict`` is set, in which case a
    missing entry is an error. Returned candidates are raw (no thresholding
    or suppression; that is downstream work).
    """

    shareable = True

    def __init__(
        self,
        script: Mapping[int, Sequence[tuple[BBox, np.ndarray]]] | None = None,
        n_classes: int = len(DEFAULT_CLASSES),
        strict: bool = False,
    ):
        self.script = {k: list(v) for k, v in (script or {}).items()}
        self.n_classes = n_classes
        self.strict = strict

    @classmethod
    def single_class_script(
        cls,
        entries: Mapping[int, Sequence[tuple[tuple[float, float, float, float], int, float]]],
        n_classes: int = len(DEFAULT_CLASSES),
        strict: bool = False,
    ) -> "ScriptedDetectBackend":
        """Build from ``frame_id -> [(box, class_id, score), ...]`` entries."""
        script: dict[int, list[tuple[BBox, np.ndarray]]] = {}
        for frame_id, dets in entries.items():
            candidates = []
            for box, class_id, score in dets:
                scores = np.zeros(n_classes, dtype=np.float64)
                scores[class_id] = score
                candidates.append((BBox(*box), scores))
            script[int(frame_id)] = candidates
        return cls(script, n_classes=n_classes, strict=strict)

    @classmethod
    def from_file(
        cls,
        path: str | Path,
        classes: ClassList = DEFAULT_CLASSES,
        strict: bool = False,
    ) -> "ScriptedDetectBackend":
        """Load a YAML script: ``frame_id: [{box, class, score}, ...]``."""
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        if not isinstance(raw, dict):
            raise ConfigInvalid(f"{path}: detection script must be a mapping")
        entries: dict[int, list[tuple[tuple[float, float, float, float], int, float]]] = {}
        for frame_id, dets in raw.items():
            parsed = []
            for det in dets or []:
                unknown = set(det) - {"box", "class", "score"}
                if unknown:
                    raise ConfigInvalid(
                        f"{path}: frame {frame_id}: unknown key {sorted(unknown)[0]!r}"
                    )
                box = det.get("box")
                if not isinstance(box, (list, tuple)) or len(box) != 4:
                    raise ConfigInvalid(f"{path}: frame {frame_id}: box must be [x1,y1,x2,y2]")
                cls_field = det.get("class")
                class_id = classes.id(cls_field) if isinstance(cls_field, str) else int(cls_field)
                classes.check(class_id)
                parsed.append((tuple(float(v) for v in box), class_id, float(det.get("score", 1.0))))
            entries[int(frame_id)] = parsed
        return cls.single_class_script(entries, n_classes=len(classes), strict=strict)

    def detect(self, image: np.ndarray, frame_id: int = -1) -> RawDetections:
        if frame_id not in self.script:
            if self.strict:
                raise MissingFixtureEntry(f"no scripted detections for frame {frame_id}")
            return RawDetections()
        return RawDetections(
            candidates=[(box, scores.copy()) for box, scores in self.script[frame_id]]
        )


def clamp_depth_non_negative(depth_map: DepthMap) -> DepthMap:
    """Clamp depth at 0 so outputs always represent physical distances."""
    if depth_map.depth.size and depth_map.depth.min() >= 0.0:
        return depth_map
    return DepthMap(depth=np.maximum(depth_map.depth, 0.0), valid=depth_map.valid)


class NonNegativeDepthBackend:
    """Wrapper enforcing the non-negativity invariant on any depth backend."""

    def __init__(self, inner: DepthBackend):
        self.inner = inner
        self.shareable = getattr(inner, "shareable", False)

    def estimate(self, image: np.ndarray, frame_id: int = -1) -> DepthMap:
        return clamp_depth_non_negative(self.inner.estimate(image, frame_id))


# --- onnxruntime adapter -----------------------------------------------------

@dataclass(frozen=True)
class OnnxBackendConfig:
    """Settings for one exported model."""

    model: Path
    width: int = 224
    height: int = 224
    layout: Layout = Layout.CHW
    # Metric calibration for relative-depth models; depth = raw * scale + shift.
    depth_scale: float = 1.0
    depth_shift: float = 0.0
    threads: int = 1


def _load_session(config: OnnxBackendConfig):
    try:
        import onnxruntime  # noqa: PLC0415
    except ImportError as exc:
        raise RuntimeUnavailable(
            "onnxruntime is not installed; install the [onnx] extra or use stub backends"
        ) from exc
    if not Path(config.model).exists():
        raise ModelLoadFailure(f"model file not found: {config.model}")
    try:
        options = onnxruntime.SessionOptions()
        options.intra_op_num_threads = config.threads
        return onnxruntime.InferenceSession(
            str(config.model), sess_options=options, providers=["CPUExecutionProvider"]
        )
    except Exception as exc:
        raise ModelLoadFailure(f"cannot load {config.model}: {exc}") from exc


def _to_model_input(image: np.ndarray, config: OnnxBackendConfig) -> np.ndarray:
    hwc = _as_hwc(image)
    if hwc.shape[:2] != (config.height, config.width):
        raise ShapeMismatch(
            f"input is {hwc.shape[1]}x{hwc.shape[0]}, model expects "
            f"{config.width}x{config.height}"
        )
    tensor = hwc if config.layout is Layout.HWC else hwc.transpose(2, 0, 1)
    return np.ascontiguousarray(tensor, dtype=np.float32)[None, ...]


def decode_depth_output(
    output: np.ndarray, config: OnnxBackendConfig
) -> DepthMap:
    """Reshape a raw depth tensor, apply calibration, clamp at 0."""
    depth = np.asarray(output, dtype=np.float64).squeeze()
    if depth.ndim != 2:
        raise ShapeMismatch(f"depth output with shape {output.shape} is not a 2-D map")
    depth = depth * config.depth_scale + config.depth_shift
    return clamp_depth_non_negative(DepthMap(depth=depth))


def decode_detector_output(
    output: np.ndarray, n_classes: int, width: int, height: int
) -> RawDetections:
    """Reshape a raw detector head into box/score candidates.

    Accepts the common one-stage export layouts ``(1, 4 + C, N)`` or
    ``(1, N, 4 + C)`` with boxes as ``cx cy w h`` in input pixels. Boxes are
    clamped to the image, scores clipped to [0, 1].
    """
    arr = np.asarray(output, dtype=np.float64)
    if arr.ndim == 3:
        if arr.shape[0] != 1:
            raise ShapeMismatch(f"expected batch size 1, got shape {arr.shape}")
        arr = arr[0]
    if arr.ndim != 2:
        raise ShapeMismatch(f"detector output with shape {output.shape} is not 2-D")
    n_cols = 4 + n_classes
    if arr.shape[1] == n_cols:
        pass
    elif arr.shape[0] == n_cols:
        arr = arr.T
    else:
        raise ShapeMismatch(
            f"no axis of size 4+{n_classes} in detector output shape {output.shape}"
        )
    candidates: list[tuple[BBox, np.ndarray]] = []
    for row in arr:
        cx, cy, w, h = row[:4]
        x_min = min(max(cx - w / 2.0, 0.0), float(width))
        y_min = min(max(cy - h / 2.0, 0.0), float(height))
        x_max = min(max(cx + w / 2.0, x_min), float(width))
        y_max = min(max(cy + h / 2.0, y_min), float(height))
        scores = np.clip(row[4:], 0.0, 1.0)
        candidates.append((BBox(x_min, y_min, x_max, y_max), scores))
    return RawDetections(candidates=candidates)


class OnnxDepthBackend:
    """Runs an exported depth model through onnxruntime."""

    shareable = True  # onnxruntime sessions allow concurrent run() calls

    def __init__(self, config: OnnxBackendConfig):
        self.config = config
        self.session = _load_session(config)
        self._input_name = self.session.get_inputs()[0].name

    def estimate(self, image: np.ndarray, frame_id: int = -1) -> DepthMap:
        tensor = _to_model_input(image, self.config)
        outputs = self.session.run(None, {self._input_name: tensor})
        return decode_depth_output(outputs[0], self.config)


class OnnxDetectBackend:
    """Runs an exported one-stage detector through onnxruntime."""

    shareable = True

    def __init__(self, config: OnnxBackendConfig, n_classes: int = len(DEFAULT_CLASSES)):
        self.config = config
        self.n_classes = n_classes
        self.session = _load_session(config)
        self._input_name = self.session.get_inputs()[0].name

    def detect(self, image: np.ndarray, frame_id: int = -1) -> RawDetections:
        tensor = _to_model_input(image, self.config)
        outputs = self.session.run(None, {self._input_name: tensor})
        return decode_detector_output(
            outputs[0], self.n_classes, self.config.width, self.config.height
        )
