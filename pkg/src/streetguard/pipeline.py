"""The staged runtime: source -> preprocess -> {depth, detect} -> fuse -> alert.

Stages run on their own threads and hand frames over through bounded
queues. Between source and inference the queue can either block the source
(lock-step, fully deterministic replay) or drop the oldest queued frame so
the alert path always sees the freshest capture; drops are counted, never
silent. The two backends process the same frame concurrently and rendezvous
before fusion, so the fused depth and boxes always describe one instant.
"""

from __future__ import annotations

import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .alert import AlertEngine, AlertPolicy, AlertSink, BoundedSink, SinkStats, deliver_all
from .config import PipelineConfig
from .errors import BackendLoadFailure, ConfigInvalid
from .fusion import FusionConfig, fuse
from .infer import (
    DepthBackend,
    DetectBackend,
    NonNegativeDepthBackend,
    PreprocessSpec,
    ScriptedDetectBackend,
    StubDepthBackend,
    preprocess,
)
from .ingest import ReplaySource, SyntheticSource, list_frame_paths
from .postprocess import PostprocessConfig, decode_detections
from .types import Frame

_SENTINEL = None


@dataclass
class LatencySummary:
    p50_ms: float
    p95_ms: float
    p99_ms: float

    @classmethod
    def from_samples(cls, samples_ns: list[int]) -> "LatencySummary":
        if not samples_ns:
            return cls(0.0, 0.0, 0.0)
        ms = np.asarray(samples_ns, dtype=np.float64) / 1e6
        p50, p95, p99 = np.percentile(ms, [50.0, 95.0, 99.0])
        return cls(float(p50), float(p95), float(p99))

    def as_dict(self) -> dict:
        return {"p50_ms": self.p50_ms, "p95_ms": self.p95_ms, "p99_ms": self.p99_ms}


@dataclass
class RunStats:
    frames_offered: int = 0
    frames_processed: int = 0
    frames_dropped: int = 0
    decode_failures: int = 0
    events_emitted: int = 0
    skipped_boxes: int = 0
    low_validity_hits: int = 0
    wall_time_s: float = 0.0
    fps: float = 0.0
    stage_latency: dict[str, LatencySummary] = field(default_factory=dict)
    sink_stats: dict[str, SinkStats] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "frames_offered": self.frames_offered,
            "frames_processed": self.frames_processed,
            "frames_dropped": self.frames_dropped,
            "decode_failures": self.decode_failures,
            "events_emitted": self.events_emitted,
            "skipped_boxes": self.skipped_boxes,
            "low_validity_hits": self.low_validity_hits,
            "wall_time_s": self.wall_time_s,
            "fps": self.fps,
            "stage_latency": {k: v.as_dict() for k, v in self.stage_latency.items()},
            "sinks": {
                name: {"delivered": s.delivered, "dropped": s.dropped, "failures": s.failures}
                for name, s in self.sink_stats.items()
            },
        }


class HandoffQueue:
    """Bounded FIFO with either blocking or drop-oldest overflow behavior."""

    def __init__(self, capacity: int, drop_oldest: bool):
        self.capacity = capacity
        self.drop_oldest = drop_oldest
        self.dropped = 0
        self._items: list = []
        self._lock = threading.Lock()
        self._not_empty = threading.Condition(self._lock)
        self._not_full = threading.Condition(self._lock)

    def put(self, item) -> None:
        with self._lock:
            if self.drop_oldest:
                if len(self._items) >= self.capacity:
                    self._items.pop(0)
                    self.dropped += 1
            else:
                while len(self._items) >= self.capacity:
                    self._not_full.wait()
            self._items.append(item)
            self._not_empty.notify()

    def get(self):
        with self._lock:
            while not self._items:
                self._not_empty.wait()
            item = self._items.pop(0)
            self._not_full.notify()
            return item


def build_depth_backend(config: PipelineConfig) -> DepthBackend:
    kind = config.depth_backend.kind
    if kind == "stub":
        backend: DepthBackend = StubDepthBackend(
            base_m=config.depth_backend.base_m, gain_m=config.depth_backend.gain_m
        )
    elif kind == "onnx":
        from .infer import OnnxDepthBackend  # deferred: needs onnxruntime

        try:
            backend = OnnxDepthBackend(config.onnx_depth_config())
        except ConfigInvalid:
            raise
        except Exception as exc:
            raise BackendLoadFailure(f"depth backend: {exc}") from exc
    else:
        raise ConfigInvalid(f"unknown depth backend kind {kind!r}")
    return NonNegativeDepthBackend(backend)


def build_detect_backend(config: PipelineConfig) -> DetectBackend:
    kind = config.detect_backend.kind
    if kind == "stub":
        fixture = config.detect_backend.fixture
        if fixture is not None:
            return ScriptedDetectBackend.from_file(
                fixture, classes=config.classes, strict=config.detect_backend.strict
            )
        return ScriptedDetectBackend(
            n_classes=len(config.classes), strict=config.detect_backend.strict
        )
    if kind == "onnx":
        from .infer import OnnxDetectBackend  # deferred: needs onnxruntime

        try:
            return OnnxDetectBackend(
                config.onnx_detect_config(), n_classes=len(config.classes)
            )
        except ConfigInvalid:
            raise
        except Exception as exc:
            raise BackendLoadFailure(f"detect backend: {exc}") from exc
    raise ConfigInvalid(f"unknown detect backend kind {kind!r}")


def build_source(config: PipelineConfig):
    if config.input.replay_dir is None:
        raise ConfigInvalid("input.replay_dir is required to run the pipeline")
    paths = list_frame_paths(config.input.replay_dir)
    return ReplaySource(
        paths, fps=config.input.fps, loop=config.input.loop, pace=config.input.pace
    )


class Pipeline:
    """Wires the stages together and runs a frame source to completion."""

    def __init__(
        self,
        depth_backend: DepthBackend,
        detect_backend: DetectBackend,
        sinks: Iterable[AlertSink] = (),
        preprocess_spec: PreprocessSpec = PreprocessSpec(),
        postprocess_config: PostprocessConfig = PostprocessConfig(),
        fusion_config: FusionConfig = FusionConfig(),
        alert_policy: AlertPolicy = AlertPolicy(),
        queue_depth: int = 8,
        drop_policy: str = "drop_oldest",
        max_frames: int | None = None,
        max_duration_s: float | None = None,
    ):
        self.depth_backend = depth_backend
        self.detect_backend = detect_backend
        self.sinks = list(sinks)
        self.preprocess_spec = preprocess_spec
        self.postprocess_config = postprocess_config
        self.fusion_config = fusion_config
        self.alert_policy = alert_policy
        self.queue_depth = queue_depth
        self.drop_policy = drop_policy
        self.max_frames = max_frames
        self.max_duration_s = max_duration_s

    @classmethod
    def from_config(cls, config: PipelineConfig, sinks: Iterable[AlertSink] = ()) -> "Pipeline":
        return cls(
            depth_backend=build_depth_backend(config),
            detect_backend=build_detect_backend(config),
            sinks=sinks,
            preprocess_spec=config.preprocess,
            postprocess_config=config.postprocess,
            fusion_config=config.fusion,
            alert_policy=config.alert,
            queue_depth=config.run.queue_depth,
            drop_policy=config.run.drop_policy,
            max_frames=config.run.max_frames,
            max_duration_s=config.run.max_duration_s,
        )

    def run(self, source: Iterable[Frame]) -> RunStats:
        stats = RunStats()
        in_queue = HandoffQueue(self.queue_depth, self.drop_policy == "drop_oldest")
        fuse_queue = HandoffQueue(self.queue_depth, drop_oldest=False)
        engine = AlertEngine(self.alert_policy)
        timings: dict[str, list[int]] = {
            "preprocess": [], "depth": [], "detect": [], "fuse_alert": [], "end_to_end": [],
        }
        errors: list[BaseException] = []
        start = time.perf_counter()
        deadline = start + self.max_duration_s if self.max_duration_s else None

        def feed() -> None:
            try:
                for frame in source:
                    stats.frames_offered += 1
                    in_queue.put((frame, time.perf_counter_ns()))
                    if self.max_frames is not None and stats.frames_offered >= self.max_frames:
                        break
                    if deadline is not None and time.perf_counter() > deadline:
                        break
            except BaseException as exc:  # propagated after join
                errors.append(exc)
            finally:
                in_queue.put(_SENTINEL)

        def infer() -> None:
            failed = False
            with ThreadPoolExecutor(max_workers=2) as pool:
                while True:
                    item = in_queue.get()
                    if item is _SENTINEL:
                        break
                    if failed:
                        continue  # drain so the source never blocks
                    try:
                        frame, enqueued_ns = item
                        t0 = time.perf_counter_ns()
                        tensor = preprocess(frame, self.preprocess_spec)
                        t1 = time.perf_counter_ns()
                        # Rendezvous: both backends see the same frame and
                        # the results are joined before fusion.
                        depth_future = pool.submit(
                            self.depth_backend.estimate, tensor, frame.id
                        )
                        detect_future = pool.submit(
                            self.detect_backend.detect, tensor, frame.id
                        )
                        depth_map = depth_future.result()
                        raw = detect_future.result()
                        t2 = time.perf_counter_ns()
                        timings["preprocess"].append(t1 - t0)
                        # The two branches overlap; charge the pair wall time
                        # to both stages' budget line.
                        timings["depth"].append(t2 - t1)
                        timings["detect"].append(t2 - t1)
                        fuse_queue.put((frame, depth_map, raw, enqueued_ns))
                    except BaseException as exc:
                        errors.append(exc)
                        failed = True
            fuse_queue.put(_SENTINEL)

        def fuse_and_alert() -> None:
            failed = False
            while True:
                item = fuse_queue.get()
                if item is _SENTINEL:
                    break
                if failed:
                    continue  # drain so inference never blocks
                try:
                    frame, depth_map, raw, enqueued_ns = item
                    t0 = time.perf_counter_ns()
                    detections = decode_detections(raw, self.postprocess_config)
                    hits, skipped = fuse(depth_map, detections, self.fusion_config)
                    stats.skipped_boxes += skipped
                    stats.low_validity_hits += sum(
                        1
                        for h in hits
                        if h.valid_fraction < self.fusion_config.min_valid_fraction
                    )
                    events = engine.step(frame.id, hits, now_ns=frame.timestamp_ns)
                    sink_stats = deliver_all(events, self.sinks)
                    for name, s in sink_stats.items():
                        agg = stats.sink_stats.setdefault(name, SinkStats())
                        agg.delivered += s.delivered
                        agg.dropped += s.dropped
                        agg.failures += s.failures
                    stats.events_emitted += len(events)
                    t1 = time.perf_counter_ns()
                    timings["fuse_alert"].append(t1 - t0)
                    timings["end_to_end"].append(t1 - enqueued_ns)
                    stats.frames_processed += 1
                except BaseException as exc:
                    errors.append(exc)
                    failed = True

        threads = [
            threading.Thread(target=feed, name="source", daemon=True),
            threading.Thread(target=infer, name="infer", daemon=True),
            threading.Thread(target=fuse_and_alert, name="fuse-alert", daemon=True),
        ]
        stop_flushing = threading.Event()
        buffered = [s for s in self.sinks if isinstance(s, BoundedSink)]

        def flush_sinks() -> None:
            # Sinks advance on their own schedule; the engine only ever
            # enqueues.
            while not stop_flushing.wait(0.005):
                for sink in buffered:
                    sink.flush()

        flusher = threading.Thread(target=flush_sinks, name="sink-flush", daemon=True)
        if buffered:
            flusher.start()
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        stop_flushing.set()
        if buffered:
            flusher.join()
            for sink in buffered:
                sink.flush()  # final drain
                stats.sink_stats[sink.name] = sink.stats
        if errors:
            raise errors[0]

        stats.wall_time_s = time.perf_counter() - start
        stats.frames_dropped = in_queue.dropped
        if hasattr(source, "stats"):
            stats.decode_failures = source.stats.decode_failures
        stats.fps = stats.frames_processed / stats.wall_time_s if stats.wall_time_s > 0 else 0.0
        stats.stage_latency = {
            name: LatencySummary.from_samples(samples) for name, samples in timings.items()
        }
        return stats


def run_from_config(config: PipelineConfig, sinks: Iterable[AlertSink] = ()) -> RunStats:
    pipeline = Pipeline.from_config(config, sinks=sinks)
    return pipeline.run(build_source(config))


def bench_from_config(
    config: PipelineConfig, n_frames: int, width: int = 640, height: int = 480
) -> RunStats:
    """Throughput benchmark: unpaced frames through the full pipeline."""
    from .errors import EmptyBench

    if n_frames < 1:
        raise EmptyBench(f"benchmark needs at least 1 frame, got {n_frames}")
    pipeline = Pipeline.from_config(config, sinks=())
    # Lock-step handoff: blocking queues measure sustained throughput
    # without discarding work.
    pipeline.drop_policy = "block"
    if config.input.replay_dir is not None:
        paths = list_frame_paths(config.input.replay_dir)
        source: Iterable[Frame] = ReplaySource(
            paths, fps=config.input.fps, loop=True, pace=False
        )
        pipeline.max_frames = n_frames
    else:
        source = SyntheticSource(n_frames, width=width, height=height, fps=config.input.fps)
    return pipeline.run(source)
