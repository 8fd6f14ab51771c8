"""Shared fixtures: synthetic datasets and the scripted end-to-end scenario."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

from streetguard.ingest import encode_kitti_depth
from streetguard.types import DepthMap


def write_rgb_png(path: Path, pixels: np.ndarray) -> None:
    Image.fromarray(pixels, mode="RGB").save(path, format="PNG")


def solid_frame(width: int, height: int, value: int) -> np.ndarray:
    return np.full((height, width, 3), value, dtype=np.uint8)


def write_depth_png(path: Path, raw: np.ndarray) -> None:
    depth = raw.astype(np.float64) / 256.0
    path.write_bytes(encode_kitti_depth(DepthMap(depth=depth, valid=raw != 0)))


# --- synthetic evaluation dataset with planted errors -------------------------

@dataclass
class EvalFixture:
    root: Path
    manifest: Path
    image_size: tuple[int, int]
    # Raw tuples for the oracles, exactly as the parsers will reconstruct
    # them: truths are (box, class_id), preds are (box, class_id, conf).
    truths: list[list[tuple]] = field(default_factory=list)
    preds: list[list[tuple]] = field(default_factory=list)
    # Depth arrays exactly as decoded: (estimate, truth, truth_valid).
    depth_pairs: list[tuple[np.ndarray, np.ndarray, np.ndarray]] = field(default_factory=list)


def _corners(cx, cy, w, h, width, height):
    # Mirrors the parser arithmetic exactly so oracle inputs match the
    # module's parsed values bit for bit.
    x_min = max((cx - w / 2.0) * width, 0.0)
    y_min = max((cy - h / 2.0) * height, 0.0)
    x_max = min((cx + w / 2.0) * width, float(width))
    y_max = min((cy + h / 2.0) * height, float(height))
    return (x_min, y_min, max(x_max, x_min), max(y_max, y_min))


def build_eval_fixture(root: Path, n_images: int = 20, seed: int = 7) -> EvalFixture:
    rng = np.random.default_rng(seed)
    width, height = 96, 72
    image_dir = root / "images"
    label_dir = root / "labels"
    pred_dir = root / "predictions"
    truth_depth_dir = root / "depth_truth"
    est_depth_dir = root / "depth_estimates"
    for d in (image_dir, label_dir, pred_dir, truth_depth_dir, est_depth_dir):
        d.mkdir(parents=True, exist_ok=True)

    fixture = EvalFixture(root=root, manifest=root / "manifest.yaml", image_size=(width, height))
    used_confidences: set[float] = set()

    def fresh_confidence(lo: float, hi: float) -> float:
        # Distinct confidences keep threshold-based and rank-based AP
        # integration exactly equal.
        while True:
            c = float(np.round(lo + (hi - lo) * rng.random(), 12))
            if 0.0 < c <= 1.0 and c not in used_confidences:
                used_confidences.add(c)
                return c

    for i in range(n_images):
        stem = f"img{i:03d}"
        write_rgb_png(image_dir / f"{stem}.png", solid_frame(width, height, 128))

        truth_lines = []
        pred_lines = []
        truths = []
        preds = []
        for _ in range(int(rng.integers(1, 4))):
            class_id = int(rng.integers(0, 5))
            cx, cy = (float(v) for v in rng.uniform(0.25, 0.75, 2))
            w, h = (float(v) for v in rng.uniform(0.12, 0.3, 2))
            truths.append((_corners(cx, cy, w, h, width, height), class_id))
            truth_lines.append(f"{class_id} {cx!r} {cy!r} {w!r} {h!r}")

            roll = rng.random()
            if roll < 0.70:  # matched prediction, slightly jittered
                jcx = cx + float(rng.uniform(-0.015, 0.015))
                jcy = cy + float(rng.uniform(-0.015, 0.015))
                jw = w * float(rng.uniform(0.92, 1.08))
                jh = h * float(rng.uniform(0.92, 1.08))
                conf = fresh_confidence(0.5, 1.0)
                preds.append((_corners(jcx, jcy, jw, jh, width, height), class_id, conf))
                pred_lines.append(f"{class_id} {conf!r} {jcx!r} {jcy!r} {jw!r} {jh!r}")
            elif roll < 0.85:  # wrong class on the right box
                wrong = (class_id + 1) % 5
                conf = fresh_confidence(0.3, 0.9)
                preds.append((_corners(cx, cy, w, h, width, height), wrong, conf))
                pred_lines.append(f"{wrong} {conf!r} {cx!r} {cy!r} {w!r} {h!r}")
            # else: planted miss (false negative)

        for _ in range(int(rng.integers(0, 3))):  # spurious predictions
            class_id = int(rng.integers(0, 5))
            cx, cy = (float(v) for v in rng.uniform(0.1, 0.9, 2))
            w, h = (float(v) for v in rng.uniform(0.05, 0.15, 2))
            conf = fresh_confidence(0.05, 0.6)
            preds.append((_corners(cx, cy, w, h, width, height), class_id, conf))
            pred_lines.append(f"{class_id} {conf!r} {cx!r} {cy!r} {w!r} {h!r}")

        (label_dir / f"{stem}.txt").write_text("\n".join(truth_lines) + "\n")
        (pred_dir / f"{stem}.txt").write_text("\n".join(pred_lines) + "\n")
        fixture.truths.append(truths)
        fixture.preds.append(preds)

    for i in range(n_images):
        stem = f"depth{i:03d}"
        truth_raw = rng.integers(256, 16000, size=(24, 32)).astype(np.uint16)
        truth_raw[rng.random((24, 32)) < 0.25] = 0  # holes in the ground truth
        factor = rng.uniform(0.8, 1.2, size=(24, 32))
        est_raw = np.clip(np.rint(truth_raw * factor), 1, 0xFFFF).astype(np.uint16)
        write_depth_png(truth_depth_dir / f"{stem}.png", truth_raw)
        write_depth_png(est_depth_dir / f"{stem}.png", est_raw)
        fixture.depth_pairs.append(
            (est_raw / 256.0, truth_raw / 256.0, truth_raw != 0)
        )

    fixture.manifest.write_text(
        "images: images\n"
        "labels: labels\n"
        "predictions: predictions\n"
        "depth_truth: depth_truth\n"
        "depth_estimates: depth_estimates\n"
    )
    return fixture


@pytest.fixture(scope="session")
def eval_fixture(tmp_path_factory) -> EvalFixture:
    return build_eval_fixture(tmp_path_factory.mktemp("evalset"))


# --- scripted end-to-end scenario ---------------------------------------------

@dataclass
class Scenario:
    root: Path
    config: Path
    frames_dir: Path
    n_frames: int


def build_scenario(
    root: Path,
    n_frames: int = 10,
    truck_frames: tuple[int, ...] = (3, 4, 5),
    debounce: int = 3,
    cooldown_ms: int = 2000,
    fps: float = 30.0,
) -> Scenario:
    """Black replay frames + a scripted truck detection on selected frames.

    Black frames make the stub depth read exactly 1 m everywhere, so any
    scripted detection is a close obstruction.
    """
    frames_dir = root / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    for i in range(n_frames):
        write_rgb_png(frames_dir / f"frame{i:04d}.png", solid_frame(224, 224, 0))

    script_lines = []
    for frame_id in truck_frames:
        script_lines.append(f"{frame_id}:")
        script_lines.append("  - box: [60, 60, 160, 160]")
        script_lines.append("    class: truck")
        script_lines.append("    score: 0.9")
    (root / "detections.yaml").write_text("\n".join(script_lines) + "\n")

    config = root / "config.yaml"
    config.write_text(
        "input:\n"
        "  replay_dir: frames\n"
        f"  fps: {fps}\n"
        "  loop: false\n"
        "  pace: false\n"
        "backends:\n"
        "  detect:\n"
        "    fixture: detections.yaml\n"
        "alert:\n"
        f"  debounce_frames: {debounce}\n"
        f"  cooldown_ms: {cooldown_ms}\n"
        "sinks:\n"
        "  console: false\n"
        "run:\n"
        "  drop_policy: block\n"
    )
    return Scenario(root=root, config=config, frames_dir=frames_dir, n_frames=n_frames)


@pytest.fixture()
def scenario(tmp_path) -> Scenario:
    return build_scenario(tmp_path)
