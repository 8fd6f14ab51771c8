"""Detector postprocessing: class assignment and non-maximum suppression.

Tie-breaking is fully specified (confidence, then class id, then insertion
order) so outputs are bit-reproducible across platforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .infer import RawDetections
from .types import Detection, iou


@dataclass(frozen=True)
class PostprocessConfig:
    confidence_threshold: float = 0.25
    nms_iou_threshold: float = 0.45
    max_detections: int = 300
    class_agnostic_nms: bool = False

    def __post_init__(self):
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ValueError(f"confidence_threshold {self.confidence_threshold} outside [0, 1]")
        if not 0.0 <= self.nms_iou_threshold <= 1.0:
            raise ValueError(f"nms_iou_threshold {self.nms_iou_threshold} outside [0, 1]")
        if self.max_detections < 1:
            raise ValueError(f"max_detections must be >= 1, got {self.max_detections}")


def assign_classes(raw: RawDetections, confidence_threshold: float = 0.25) -> list[Detection]:
    """Pick each candidate's argmax class; drop low-confidence candidates.

    Score ties break toward the lowest class id.
    """
    detections = []
    for bbox, scores in raw.candidates:
        class_id = int(np.argmax(scores))  # argmax returns the first (lowest) index on ties
        confidence = float(scores[class_id])
        if confidence < confidence_threshold:
            continue
        detections.append(Detection(bbox=bbox, class_id=class_id, confidence=confidence))
    return detections


def nms(
    detections: list[Detection],
    iou_threshold: float = 0.45,
    class_agnostic: bool = False,
    max_out: int = 300,
) -> list[Detection]:
    """Greedy hard suppression.

    Detections are visited by descending confidence (ties: lower class id,
    then insertion order); one is kept iff its IoU with every already-kept
    detection — of the same class unless ``class_agnostic`` — stays below
    ``iou_threshold``. Output preserves the kept order, truncated to
    ``max_out``.
    """
    order = sorted(
        range(len(detections)),
        key=lambda i: (-detections[i].confidence, detections[i].class_id, i),
    )
    kept: list[Detection] = []
    for i in order:
        candidate = detections[i]
        suppressed = False
        for keeper in kept:
            if not class_agnostic and keeper.class_id != candidate.class_id:
                continue
            if iou(keeper.bbox, candidate.bbox) >= iou_threshold:
                suppressed = True
                break
        if not suppressed:
            kept.append(candidate)
            if len(kept) >= max_out:
                break
    return kept


def decode_detections(raw: RawDetections, config: PostprocessConfig) -> list[Detection]:
    """Full postprocess: thresholded class assignment followed by NMS."""
    return nms(
        assign_classes(raw, config.confidence_threshold),
        iou_threshold=config.nms_iou_threshold,
        class_agnostic=config.class_agnostic_nms,
        max_out=config.max_detections,
    )
