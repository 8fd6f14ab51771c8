"""Dataset-level evaluation: pairing files, aggregating metrics, reports.

Files across the manifest's directories are paired by stem. Detection
ground truth comes from YOLO label files; predictions either from
prediction files (label format plus a confidence column) or from a detector
backend run over the images. Depth estimates likewise come from 16-bit PNG
files or from a depth backend.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from . import metrics as M
from .errors import ConfigInvalid, EmptyDataset, MixedImageSizes
from .infer import (
    DepthBackend,
    DetectBackend,
    NonNegativeDepthBackend,
    PreprocessSpec,
    preprocess,
)
from .ingest import (
    IMAGE_SUFFIXES,
    DatasetManifest,
    DepthSamplePair,
    decode_kitti_depth,
    image_dimensions,
    load_frame_pixels,
    parse_predictions,
    parse_yolo_labels,
)
from .postprocess import PostprocessConfig, decode_detections
from .types import BBox, ClassList, DepthMap, Detection, Frame, FrameSource


@dataclass
class DetectionReport:
    map50: float
    per_class_ap: dict[int, float | None]
    precision: float
    recall: float
    f1: float
    counts: M.ConfusionCounts
    curve: M.PRCurve
    iou_threshold: float
    n_images: int
    n_predictions: int
    n_truths: int
    map50_95: float | None = None  # optional 0.50:0.05:0.95 sweep


@dataclass
class DepthReport:
    overall: M.DepthMetrics
    per_image: list[tuple[str, M.DepthMetrics]]


@dataclass
class EvalReport:
    detection: DetectionReport | None = None
    depth: DepthReport | None = None
    model_sizes: "ModelSizeReport | None" = None


def _stems(directory: Path, suffix: str) -> dict[str, Path]:
    return {p.stem: p for p in sorted(directory.glob(f"*{suffix}")) if p.is_file()}


def _image_stems(directory: Path | None) -> dict[str, Path]:
    if directory is None:
        return {}
    return {
        p.stem: p
        for p in sorted(directory.iterdir())
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    }


def _image_size_for(
    manifest: DatasetManifest, stem: str, images: dict[str, Path]
) -> tuple[int, int]:
    if stem in images:
        size = image_dimensions(images[stem])
        if manifest.image_size is not None and size != manifest.image_size:
            raise MixedImageSizes(
                f"{images[stem]} is {size[0]}x{size[1]}, manifest says "
                f"{manifest.image_size[0]}x{manifest.image_size[1]}"
            )
        return size
    if manifest.image_size is not None:
        return manifest.image_size
    raise ConfigInvalid(
        f"no image file for {stem!r} and the manifest sets no image_size"
    )


def _scale_detections(
    detections: list[Detection], from_size: tuple[int, int], to_size: tuple[int, int]
) -> list[Detection]:
    if from_size == to_size:
        return detections
    sx = to_size[0] / from_size[0]
    sy = to_size[1] / from_size[1]
    return [
        Detection(
            bbox=BBox(d.bbox.x_min * sx, d.bbox.y_min * sy, d.bbox.x_max * sx, d.bbox.y_max * sy),
            class_id=d.class_id,
            confidence=d.confidence,
        )
        for d in detections
    ]


def _detect_on_image(
    path: Path,
    backend: DetectBackend,
    frame_id: int,
    spec: PreprocessSpec,
    post: PostprocessConfig,
    original_size: tuple[int, int],
) -> list[Detection]:
    pixels = load_frame_pixels(path)
    frame = Frame(id=frame_id, timestamp_ns=0, pixels=pixels, source=FrameSource.REPLAY)
    raw = backend.detect(preprocess(frame, spec), frame_id)
    dets = decode_detections(raw, post)
    return _scale_detections(dets, (spec.width, spec.height), original_size)


def evaluate_detection(
    manifest: DatasetManifest,
    match_config: M.MatchConfig = M.MatchConfig(),
    n_curve_points: int = 101,
    backend: DetectBackend | None = None,
    preprocess_spec: PreprocessSpec = PreprocessSpec(),
    postprocess_config: PostprocessConfig = PostprocessConfig(),
) -> DetectionReport:
    """Match predictions against labels over the whole dataset."""
    if manifest.label_dir is None:
        raise ConfigInvalid("manifest has no label directory")
    if backend is None and manifest.prediction_dir is None:
        raise ConfigInvalid("need either a prediction directory or a detector backend")
    labels = _stems(manifest.label_dir, ".txt")
    if not labels:
        raise EmptyDataset(f"no label files in {manifest.label_dir}")
    images = _image_stems(manifest.image_dir)
    predictions = (
        _stems(manifest.prediction_dir, ".txt") if manifest.prediction_dir else {}
    )

    classes = manifest.classes
    counts = M.ConfusionCounts(n_classes=len(classes))
    flags: list[M.MatchedPrediction] = []
    n_truth_per_class = np.zeros(len(classes), dtype=np.int64)
    n_predictions = 0
    n_truths = 0

    for frame_id, stem in enumerate(sorted(labels)):
        width, height = _image_size_for(manifest, stem, images)
        truths = parse_yolo_labels(
            labels[stem].read_text(encoding="utf-8"), width, height, classes
        )
        if backend is not None:
            if stem not in images:
                raise ConfigInvalid(f"backend evaluation needs an image for {stem!r}")
            preds = _detect_on_image(
                images[stem], backend, frame_id, preprocess_spec,
                postprocess_config, (width, height),
            )
        elif stem in predictions:
            preds = parse_predictions(
                predictions[stem].read_text(encoding="utf-8"), width, height, classes
            )
        else:
            preds = []
        result = M.match_detections(preds, truths, match_config, n_classes=len(classes))
        counts.update(result.counts)
        flags.extend(result.predictions)
        n_truth_per_class += result.n_truth_per_class
        n_predictions += len(preds)
        n_truths += len(truths)

    per_class_ap = M.per_class_average_precision(flags, n_truth_per_class)
    return DetectionReport(
        map50=M.mean_ap(per_class_ap),
        per_class_ap=per_class_ap,
        precision=M.precision(counts),
        recall=M.recall(counts),
        f1=M.f1(counts),
        counts=counts,
        curve=M.pr_f1_curves(flags, int(n_truth_per_class.sum()), n_curve_points),
        iou_threshold=match_config.iou_threshold,
        n_images=len(labels),
        n_predictions=n_predictions,
        n_truths=n_truths,
    )


def map_sweep(
    manifest: DatasetManifest,
    thresholds: list[float] | None = None,
    backend: DetectBackend | None = None,
    preprocess_spec: PreprocessSpec = PreprocessSpec(),
    postprocess_config: PostprocessConfig = PostprocessConfig(),
) -> float:
    """Mean of mAP over matching thresholds 0.50:0.05:0.95 by default."""
    if thresholds is None:
        thresholds = [0.5 + 0.05 * i for i in range(10)]
    maps = [
        evaluate_detection(
            manifest,
            match_config=M.MatchConfig(iou_threshold=t),
            n_curve_points=2,
            backend=backend,
            preprocess_spec=preprocess_spec,
            postprocess_config=postprocess_config,
        ).map50
        for t in thresholds
    ]
    return float(np.mean(maps))


def _estimate_for(
    path: Path,
    backend: DepthBackend,
    frame_id: int,
    spec: PreprocessSpec,
    truth: DepthMap,
) -> DepthMap:
    pixels = load_frame_pixels(path)
    frame = Frame(id=frame_id, timestamp_ns=0, pixels=pixels, source=FrameSource.REPLAY)
    estimate = backend.estimate(preprocess(frame, spec), frame_id)
    if estimate.depth.shape == truth.depth.shape:
        return estimate
    resized = cv2.resize(
        estimate.depth.astype(np.float64),
        (truth.width, truth.height),
        interpolation=cv2.INTER_LINEAR,
    )
    return DepthMap(depth=resized)


def evaluate_depth(
    manifest: DatasetManifest,
    backend: DepthBackend | None = None,
    preprocess_spec: PreprocessSpec = PreprocessSpec(),
) -> DepthReport:
    """Per-image depth metrics, averaged over the dataset."""
    if manifest.depth_truth_dir is None:
        raise ConfigInvalid("manifest has no depth_truth directory")
    truth_files = _stems(manifest.depth_truth_dir, ".png")
    if not truth_files:
        raise EmptyDataset(f"no depth ground truth in {manifest.depth_truth_dir}")
    if backend is None and manifest.depth_estimate_dir is None:
        raise ConfigInvalid("need either a depth_estimates directory or a depth backend")

    images = _image_stems(manifest.image_dir)
    estimates = (
        _stems(manifest.depth_estimate_dir, ".png") if manifest.depth_estimate_dir else {}
    )
    wrapped = NonNegativeDepthBackend(backend) if backend is not None else None

    per_image: list[tuple[str, M.DepthMetrics]] = []
    for frame_id, stem in enumerate(sorted(truth_files)):
        truth = decode_kitti_depth(truth_files[stem].read_bytes())
        if wrapped is not None:
            if stem not in images:
                raise ConfigInvalid(f"backend evaluation needs an image for {stem!r}")
            estimate = _estimate_for(images[stem], wrapped, frame_id, preprocess_spec, truth)
        else:
            if stem not in estimates:
                raise EmptyDataset(f"no depth estimate for {stem!r}")
            estimate = decode_kitti_depth(estimates[stem].read_bytes())
        if estimate.depth.shape != truth.depth.shape:
            raise MixedImageSizes(
                f"{stem}: estimate {estimate.depth.shape} vs truth {truth.depth.shape}"
            )
        per_image.append((stem, M.depth_metrics(DepthSamplePair(estimate, truth))))

    return DepthReport(
        overall=M.mean_depth_metrics([m for _, m in per_image]),
        per_image=per_image,
    )


# --- report files ----------------------------------------------------------------

def report_as_dict(report: EvalReport, classes: ClassList) -> dict:
    out: dict = {}
    if report.detection is not None:
        det = report.detection
        out["detection"] = {
            "map50": det.map50,
            "map50_95": det.map50_95,
            "iou_threshold": det.iou_threshold,
            "precision": det.precision,
            "recall": det.recall,
            "f1": det.f1,
            "per_class_ap": {
                classes.name(c): ap for c, ap in sorted(det.per_class_ap.items())
            },
            "tp": det.counts.tp_total,
            "fp": det.counts.fp_total,
            "fn": det.counts.fn_total,
            "n_images": det.n_images,
            "n_predictions": det.n_predictions,
            "n_truths": det.n_truths,
        }
    if report.depth is not None:
        dep = report.depth
        out["depth"] = {
            "abs_rel": dep.overall.abs_rel,
            "sq_rel": dep.overall.sq_rel,
            "rmse": dep.overall.rmse,
            "n_pixels": dep.overall.n_pixels,
            "n_images": len(dep.per_image),
            "per_image": {
                stem: {
                    "abs_rel": m.abs_rel,
                    "sq_rel": m.sq_rel,
                    "rmse": m.rmse,
                    "n_pixels": m.n_pixels,
                }
                for stem, m in dep.per_image
            },
        }
    if report.model_sizes is not None:
        out["model_sizes"] = model_size_report_as_dict(report.model_sizes)
    return out


def write_report(report: EvalReport, out_dir: str | Path, classes: ClassList) -> Path:
    """Write report.json plus plain-text curve and confusion-matrix files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report_path = out_dir / "report.json"
    report_path.write_text(
        json.dumps(report_as_dict(report, classes), indent=2) + "\n", encoding="utf-8"
    )
    if report.detection is not None:
        det = report.detection
        with open(out_dir / "pr_curve.txt", "w", encoding="utf-8") as fh:
            fh.write("# threshold precision recall\n")
            for t, p, r in det.curve.points:
                fh.write(f"{t:.9f} {p:.9f} {r:.9f}\n")
        with open(out_dir / "f1_curve.txt", "w", encoding="utf-8") as fh:
            fh.write("# threshold f1\n")
            for t, score in det.curve.f1_points:
                fh.write(f"{t:.9f} {score:.9f}\n")
        names = [classes.name(c) for c in range(len(classes))] + ["background"]
        with open(out_dir / "confusion_matrix.txt", "w", encoding="utf-8") as fh:
            fh.write("# rows: truth, columns: predicted\n")
            fh.write("\t".join(["truth\\pred"] + names) + "\n")
            for r, name in enumerate(names):
                row = "\t".join(str(int(v)) for v in det.counts.matrix[r])
                fh.write(f"{name}\t{row}\n")
    return report_path


# --- model size comparison ----------------------------------------------------------

@dataclass(frozen=True)
class ModelSizeReport:
    original_path: str
    quantized_path: str
    original_bytes: int
    quantized_bytes: int
    ratio: float
    reduction_percent: float


def compare_model_files(original: str | Path, quantized: str | Path) -> ModelSizeReport:
    """Byte sizes, quantized/original ratio and percentage reduction."""
    original = Path(original)
    quantized = Path(quantized)
    for path in (original, quantized):
        if not path.is_file():
            raise FileNotFoundError(f"model file not found: {path}")
    original_bytes = original.stat().st_size
    quantized_bytes = quantized.stat().st_size
    if original_bytes == 0:
        raise ValueError(f"original model {original} is empty")
    ratio = quantized_bytes / original_bytes
    return ModelSizeReport(
        original_path=str(original),
        quantized_path=str(quantized),
        original_bytes=original_bytes,
        quantized_bytes=quantized_bytes,
        ratio=ratio,
        reduction_percent=(1.0 - ratio) * 100.0,
    )


def model_size_report_as_dict(report: ModelSizeReport) -> dict:
    return {
        "original_path": report.original_path,
        "quantized_path": report.quantized_path,
        "original_bytes": report.original_bytes,
        "quantized_bytes": report.quantized_bytes,
        "original_mb": report.original_bytes / 1e6,
        "quantized_mb": report.quantized_bytes / 1e6,
        "ratio": report.ratio,
        "reduction_percent": report.reduction_percent,
    }
