"""Depth and detection evaluation metrics plus loss diagnostics.

Depth error follows the standard convention of dividing by the ground-truth
depth. Average precision integrates the full precision envelope over recall
(all-point interpolation), matching the evaluation of the one-stage
detector tooling the models come from. Every formula here is pinned by an
independent brute-force oracle in the test suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import NoDefinedClasses, NoValidPixels
from .ingest import DepthSamplePair
from .types import BBox, Detection, GroundTruthObject, iou

_LOG_EPS = 1e-12


# --- depth metrics -----------------------------------------------------------

@dataclass(frozen=True)
class DepthMetrics:
    abs_rel: float
    sq_rel: float
    rmse: float
    n_pixels: int


def _valid_pixels(pair: DepthSamplePair) -> tuple[np.ndarray, np.ndarray]:
    # Pixels valid in truth and strictly positive there (division guard).
    mask = pair.truth.valid & (pair.truth.depth > 0)
    if not mask.any():
        raise NoValidPixels("no valid ground-truth pixels to compare against")
    return pair.estimate.depth[mask], pair.truth.depth[mask]


def abs_rel(pair: DepthSamplePair) -> float:
    """Mean absolute relative error, |estimate - truth| / truth."""
    est, truth = _valid_pixels(pair)
    return float(np.mean(np.abs(est - truth) / truth))


def sq_rel(pair: DepthSamplePair) -> float:
    """Mean squared relative error, (estimate - truth)^2 / truth."""
    est, truth = _valid_pixels(pair)
    return float(np.mean((est - truth) ** 2 / truth))


def rmse(pair: DepthSamplePair) -> float:
    """Root mean squared error in meters."""
    est, truth = _valid_pixels(pair)
    return float(np.sqrt(np.mean((est - truth) ** 2)))


def depth_metrics(pair: DepthSamplePair) -> DepthMetrics:
    est, truth = _valid_pixels(pair)
    diff = est - truth
    return DepthMetrics(
        abs_rel=float(np.mean(np.abs(diff) / truth)),
        sq_rel=float(np.mean(diff**2 / truth)),
        rmse=float(np.sqrt(np.mean(diff**2))),
        n_pixels=int(truth.size),
    )


def mean_depth_metrics(per_image: Sequence[DepthMetrics]) -> DepthMetrics:
    """Dataset-level depth metrics: the mean of per-image metrics."""
    if not per_image:
        raise NoValidPixels("no depth sample pairs")
    return DepthMetrics(
        abs_rel=float(np.mean([m.abs_rel for m in per_image])),
        sq_rel=float(np.mean([m.sq_rel for m in per_image])),
        rmse=float(np.mean([m.rmse for m in per_image])),
        n_pixels=sum(m.n_pixels for m in per_image),
    )


# --- detection matching -------------------------------------------------------

@dataclass(frozen=True)
class MatchConfig:
    iou_threshold: float = 0.50

    def __post_init__(self):
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError(f"iou_threshold {self.iou_threshold} outside (0, 1]")


@dataclass(frozen=True)
class MatchedPrediction:
    """One prediction's matching outcome, for AP accumulation."""

    class_id: int
    confidence: float
    is_tp: bool
    gt_index: int | None = None


@dataclass
class ConfusionCounts:
    """Per-class TP/FP/FN plus a confusion matrix with a background slot.

    ``matrix[truth_class, predicted_class]``; index ``n_classes`` is the
    background row/column holding unmatched predictions and truths.
    """

    n_classes: int
    tp: np.ndarray = field(default=None)  # type: ignore[assignment]
    fp: np.ndarray = field(default=None)  # type: ignore[assignment]
    fn: np.ndarray = field(default=None)  # type: ignore[assignment]
    matrix: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        n = self.n_classes
        if self.tp is None:
            self.tp = np.zeros(n, dtype=np.int64)
        if self.fp is None:
            self.fp = np.zeros(n, dtype=np.int64)
        if self.fn is None:
            self.fn = np.zeros(n, dtype=np.int64)
        if self.matrix is None:
            self.matrix = np.zeros((n + 1, n + 1), dtype=np.int64)

    @property
    def tp_total(self) -> int:
        return int(self.tp.sum())

    @property
    def fp_total(self) -> int:
        return int(self.fp.sum())

    @property
    def fn_total(self) -> int:
        return int(self.fn.sum())

    def update(self, other: "ConfusionCounts") -> None:
        if other.n_classes != self.n_classes:
            raise ValueError("cannot merge counts over different class counts")
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        self.matrix += other.matrix


@dataclass
class MatchResult:
    counts: ConfusionCounts
    # Aligned with the input prediction order.
    predictions: list[MatchedPrediction]
    n_truth_per_class: np.ndarray


def _prediction_order(preds: Sequence[Detection]) -> list[int]:
    # Descending confidence; equal confidences keep input order.
    return sorted(range(len(preds)), key=lambda i: (-preds[i].confidence, i))


def match_detections(
    preds: Sequence[Detection],
    truths: Sequence[GroundTruthObject],
    config: MatchConfig = MatchConfig(),
    n_classes: int = 13,
) -> MatchResult:
    """Greedy one-to-one matching of predictions to ground truth.

    Predictions are visited by descending confidence; each takes the
    unmatched same-class truth of highest IoU >= threshold (ties: lower
    truth index). Matched predictions are TPs, the rest FPs; unmatched
    truths are FNs. The confusion matrix is filled by a second, class-blind
    greedy pass so cross-class confusions land in off-diagonal cells.
    """
    counts = ConfusionCounts(n_classes=n_classes)
    n_truth_per_class = np.zeros(n_classes, dtype=np.int64)
    for t in truths:
        n_truth_per_class[t.class_id] += 1

    order = _prediction_order(preds)
    ious = [
        [iou(preds[i].bbox, t.bbox) for t in truths] for i in range(len(preds))
    ]

    matched: list[MatchedPrediction | None] = [None] * len(preds)
    taken = [False] * len(truths)
    for i in order:
        pred = preds[i]
        best_j = None
        best_iou = config.iou_threshold
        for j, truth in enumerate(truths):
            if taken[j] or truth.class_id != pred.class_id:
                continue
            if ious[i][j] > best_iou or (best_j is None and ious[i][j] >= best_iou):
                best_iou = ious[i][j]
                best_j = j
        if best_j is not None:
            taken[best_j] = True
            counts.tp[pred.class_id] += 1
            matched[i] = MatchedPrediction(pred.class_id, pred.confidence, True, best_j)
        else:
            counts.fp[pred.class_id] += 1
            matched[i] = MatchedPrediction(pred.class_id, pred.confidence, False, None)
    for j, truth in enumerate(truths):
        if not taken[j]:
            counts.fn[truth.class_id] += 1

    # Confusion pass: same greedy order, best IoU regardless of class.
    bg = n_classes
    taken_conf = [False] * len(truths)
    for i in order:
        pred = preds[i]
        best_j = None
        best_iou = config.iou_threshold
        for j in range(len(truths)):
            if taken_conf[j]:
                continue
            if ious[i][j] > best_iou or (best_j is None and ious[i][j] >= best_iou):
                best_iou = ious[i][j]
                best_j = j
        if best_j is not None:
            taken_conf[best_j] = True
            counts.matrix[truths[best_j].class_id, pred.class_id] += 1
        else:
            counts.matrix[bg, pred.class_id] += 1
    for j, truth in enumerate(truths):
        if not taken_conf[j]:
            counts.matrix[truth.class_id, bg] += 1

    return MatchResult(
        counts=counts,
        predictions=[m for m in matched if m is not None],
        n_truth_per_class=n_truth_per_class,
    )


# --- scalar scores -------------------------------------------------------------

def precision(counts: ConfusionCounts) -> float:
    denom = counts.tp_total + counts.fp_total
    return counts.tp_total / denom if denom else 0.0


def recall(counts: ConfusionCounts) -> float:
    denom = counts.tp_total + counts.fn_total
    return counts.tp_total / denom if denom else 0.0


def f1(counts: ConfusionCounts) -> float:
    p = precision(counts)
    r = recall(counts)
    return 2 * p * r / (p + r) if p + r else 0.0


def _f1_from(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r else 0.0


# --- average precision ----------------------------------------------------------

def average_precision(
    flags: Sequence[MatchedPrediction], n_truth: int
) -> float | None:
    """Area under the precision envelope over recall for one class.

    ``flags`` are that class's predictions across the whole dataset. With no
    ground truth the AP is undefined and None is returned (such classes are
    excluded from the mAP mean).
    """
    if n_truth == 0:
        return None
    if not flags:
        return 0.0
    order = sorted(range(len(flags)), key=lambda i: (-flags[i].confidence, i))
    tps = np.array([flags[i].is_tp for i in order], dtype=np.float64)
    cum_tp = np.cumsum(tps)
    prec = cum_tp / np.arange(1, len(tps) + 1)
    rec = cum_tp / n_truth

    # Precision envelope: at each recall, the best precision at any
    # recall >= it; integrate over the recall steps.
    mrec = np.concatenate(([0.0], rec, [1.0]))
    mpre = np.concatenate(([1.0], prec, [0.0]))
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def per_class_average_precision(
    predictions: Iterable[MatchedPrediction],
    n_truth_per_class: np.ndarray,
) -> dict[int, float | None]:
    by_class: dict[int, list[MatchedPrediction]] = {
        c: [] for c in range(len(n_truth_per_class))
    }
    for flag in predictions:
        by_class[flag.class_id].append(flag)
    return {
        c: average_precision(by_class[c], int(n_truth_per_class[c]))
        for c in range(len(n_truth_per_class))
    }


def mean_ap(per_class: dict[int, float | None]) -> float:
    """Arithmetic mean of the defined per-class APs."""
    defined = [ap for ap in per_class.values() if ap is not None]
    if not defined:
        raise NoDefinedClasses("every class has zero ground truth")
    return float(np.mean(defined))


# --- PR / F1 curves ---------------------------------------------------------------

@dataclass
class PRCurve:
    """Sampled precision/recall/F1 against the confidence threshold."""

    points: list[tuple[float, float, float]]  # (threshold, precision, recall)
    f1_points: list[tuple[float, float]]  # (threshold, f1)


def pr_f1_curves(
    predictions: Sequence[MatchedPrediction],
    n_truth: int,
    n_points: int = 101,
) -> PRCurve:
    """Sweep confidence thresholds over already-matched predictions.

    At threshold t only predictions with confidence >= t count, which for
    greedy confidence-ordered matching is identical to re-matching the
    filtered set.
    """
    order = sorted(range(len(predictions)), key=lambda i: (-predictions[i].confidence, i))
    confs = np.array([predictions[i].confidence for i in order], dtype=np.float64)
    tps = np.cumsum([predictions[i].is_tp for i in order], dtype=np.float64)
    points = []
    f1_points = []
    for t in np.linspace(0.0, 1.0, n_points):
        kept = int(np.searchsorted(-confs, -t, side="right"))
        tp = float(tps[kept - 1]) if kept else 0.0
        p = tp / kept if kept else 0.0
        r = tp / n_truth if n_truth else 0.0
        points.append((float(t), p, r))
        f1_points.append((float(t), _f1_from(p, r)))
    return PRCurve(points=points, f1_points=f1_points)


# --- loss diagnostics ---------------------------------------------------------------

@dataclass(frozen=True)
class LossWeights:
    lambda_box: float = 7.5
    lambda_cls: float = 0.5
    lambda_dfl: float = 1.5

    def __post_init__(self):
        if min(self.lambda_box, self.lambda_cls, self.lambda_dfl) < 0:
            raise ValueError("loss weights must be non-negative")


def box_loss(matched_pairs: Iterable[tuple[BBox, BBox]]) -> float:
    """Sum of (1 - IoU) over matched predicted/actual box pairs."""
    return float(sum(1.0 - iou(pred, truth) for pred, truth in matched_pairs))


def cls_loss(true_probs: np.ndarray, pred_probs: np.ndarray) -> float:
    """Cross-entropy between one-hot truth and predicted class probabilities.

    Predictions are clamped to [1e-12, 1] so the loss stays finite and
    non-negative.
    """
    p = np.asarray(true_probs, dtype=np.float64)
    q = np.clip(np.asarray(pred_probs, dtype=np.float64), _LOG_EPS, 1.0)
    if p.shape != q.shape:
        raise ValueError(f"shape mismatch: {p.shape} vs {q.shape}")
    return float(-np.sum(p * np.log(q)))


def combined_loss(
    box: float, cls: float, dfl: float = 0.0, weights: LossWeights = LossWeights()
) -> float:
    """Weighted sum of the three detector loss components."""
    return weights.lambda_box * box + weights.lambda_cls * cls + weights.lambda_dfl * dfl
