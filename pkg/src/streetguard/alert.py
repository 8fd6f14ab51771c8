"""Debounced, prioritized alerting over per-frame proximity hits.

The engine is a deterministic state machine: a class must stay close for
``debounce_frames`` consecutive frames before it may fire, repeated alerts
for one class are separated by at least ``cooldown_ms``, and at most
``max_alerts_per_frame`` events fire per frame, picked by class priority
then smallest depth. Replaying a recorded hit sequence reproduces the
identical event trace byte for byte.
"""

from __future__ import annotations

import enum
import sys
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import IO, Iterable, Mapping, Protocol, runtime_checkable

from .errors import NonMonotonicFrameId
from .fusion import ProximityHit
from .types import ClassList, DEFAULT_CLASSES


class Modality(enum.Enum):
    BUZZER = "buzzer"
    SPEECH = "speech"
    VIBRATION = "vibration"


def default_class_priorities() -> dict[int, int]:
    """Collision-severity ordering: heavier/faster vehicles first."""
    classes = DEFAULT_CLASSES
    priorities = {}
    for name in ("truck", "bus", "covered van"):
        priorities[classes.id(name)] = 0
    for name in ("private car", "pickup truck", "auto rickshaw", "human hauler", "micro bus"):
        priorities[classes.id(name)] = 1
    for name in ("motorcycle", "rickshaw", "rickshaw van", "bicycle"):
        priorities[classes.id(name)] = 2
    priorities[classes.id("person")] = 3
    return priorities


@dataclass(frozen=True)
class AlertPolicy:
    debounce_frames: int = 3
    cooldown_ms: int = 2000
    class_priority: Mapping[int, int] = field(default_factory=default_class_priorities)
    max_alerts_per_frame: int = 1
    modality: Modality = Modality.BUZZER

    def __post_init__(self):
        if self.debounce_frames < 1:
            raise ValueError(f"debounce_frames must be >= 1, got {self.debounce_frames}")
        if self.cooldown_ms < 0:
            raise ValueError(f"cooldown_ms must be >= 0, got {self.cooldown_ms}")
        if self.max_alerts_per_frame < 1:
            raise ValueError(f"max_alerts_per_frame must be >= 1, got {self.max_alerts_per_frame}")

    def priority(self, class_id: int) -> int:
        # Classes without an explicit entry (custom class lists) rank after
        # everything configured.
        if class_id in self.class_priority:
            return self.class_priority[class_id]
        return max(self.class_priority.values(), default=0) + 1


@dataclass(frozen=True)
class AlertEvent:
    timestamp_ns: int
    frame_id: int
    class_id: int
    depth_m: float
    confidence: float
    modality: Modality


class AlertEngine:
    """Turns per-frame hits into debounced alert events."""

    def __init__(self, policy: AlertPolicy = AlertPolicy()):
        self.policy = policy
        self._streak: dict[int, int] = {}
        self._last_alert_ns: dict[int, int] = {}
        self._last_frame_id: int | None = None

    def step(
        self, frame_id: int, hits: Iterable[ProximityHit], now_ns: int
    ) -> list[AlertEvent]:
        """Advance one frame; returns the events that fire on this frame."""
        if self._last_frame_id is not None and frame_id <= self._last_frame_id:
            raise NonMonotonicFrameId(
                f"frame id {frame_id} after {self._last_frame_id}"
            )
        self._last_frame_id = frame_id

        # Best (shallowest) close hit per class this frame.
        close: dict[int, ProximityHit] = {}
        for hit in hits:
            if not hit.is_close:
                continue
            best = close.get(hit.detection.class_id)
            if best is None or hit.depth_m < best.depth_m:
                close[hit.detection.class_id] = hit

        for class_id in list(self._streak):
            if class_id not in close:
                del self._streak[class_id]
        for class_id in close:
            self._streak[class_id] = self._streak.get(class_id, 0) + 1

        cooldown_ns = self.policy.cooldown_ms * 1_000_000
        candidates = []
        for class_id, hit in close.items():
            if self._streak[class_id] < self.policy.debounce_frames:
                continue
            last = self._last_alert_ns.get(class_id)
            if last is not None and now_ns - last < cooldown_ns:
                continue
            candidates.append((self.policy.priority(class_id), hit.depth_m, class_id, hit))

        candidates.sort(key=lambda c: c[:3])
        events = []
        for _, depth_m, class_id, hit in candidates[: self.policy.max_alerts_per_frame]:
            self._last_alert_ns[class_id] = now_ns
            events.append(
                AlertEvent(
                    timestamp_ns=now_ns,
                    frame_id=frame_id,
                    class_id=class_id,
                    depth_m=depth_m,
                    confidence=hit.detection.confidence,
                    modality=self.policy.modality,
                )
            )
        return events


# --- sinks -------------------------------------------------------------------

@runtime_checkable
class AlertSink(Protocol):
    """Terminal consumer of alert events (console, trace file, hardware)."""

    name: str

    def deliver(self, event: AlertEvent) -> None: ...


@dataclass
class SinkStats:
    delivered: int = 0
    dropped: int = 0
    failures: int = 0


class CollectingSink:
    """Keeps events in memory; used by tests and the run-stats summary."""

    def __init__(self, name: str = "collect"):
        self.name = name
        self.events: list[AlertEvent] = []

    def deliver(self, event: AlertEvent) -> None:
        self.events.append(event)


class ConsoleSink:
    """Human-readable one-liners, standing in for a speech adapter."""

    def __init__(self, classes: ClassList = DEFAULT_CLASSES, stream: IO[str] | None = None):
        self.name = "console"
        self.classes = classes
        self.stream = stream if stream is not None else sys.stdout

    def deliver(self, event: AlertEvent) -> None:
        print(
            f"[frame {event.frame_id}] {self.classes.name(event.class_id)} "
            f"at {event.depth_m:.2f} m ({event.modality.value})",
            file=self.stream,
        )


def format_trace_line(event: AlertEvent, classes: ClassList) -> str:
    """Tab-separated trace record; formatting is fixed for bit-exact diffs."""
    fields = (
        str(event.timestamp_ns),
        str(event.frame_id),
        classes.name(event.class_id),
        repr(float(event.depth_m)),
        repr(float(event.confidence)),
        event.modality.value,
    )
    return "\t".join(fields)


class TraceSink:
    """Line-delimited structured event stream for trace diffing."""

    def __init__(self, stream: IO[str], classes: ClassList = DEFAULT_CLASSES):
        self.name = "trace"
        self.classes = classes
        self.stream = stream

    def deliver(self, event: AlertEvent) -> None:
        self.stream.write(format_trace_line(event, self.classes) + "\n")


class BoundedSink:
    """Bounded drop-oldest handoff in front of a (possibly slow) sink.

    ``deliver`` never blocks: events queue up to ``capacity`` and the oldest
    is discarded (and counted) on overflow. ``flush`` drains the buffer into
    the wrapped sink — typically from a dedicated flusher thread — isolating
    its failures. FIFO order is preserved.
    """

    def __init__(self, inner: AlertSink, capacity: int = 256):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.inner = inner
        self.name = inner.name
        self.capacity = capacity
        self._buffer: deque[AlertEvent] = deque()
        self._lock = threading.Lock()
        self.stats = SinkStats()

    def deliver(self, event: AlertEvent) -> None:
        with self._lock:
            if len(self._buffer) >= self.capacity:
                self._buffer.popleft()
                self.stats.dropped += 1
            self._buffer.append(event)

    def flush(self) -> None:
        while True:
            with self._lock:
                if not self._buffer:
                    return
                event = self._buffer.popleft()
            try:
                self.inner.deliver(event)
                with self._lock:
                    self.stats.delivered += 1
            except Exception:
                with self._lock:
                    self.stats.failures += 1


def deliver_all(
    events: Iterable[AlertEvent], sinks: Iterable[AlertSink]
) -> dict[str, SinkStats]:
    """Offer every event to every sink; one failing sink never blocks others."""
    sinks = list(sinks)
    stats = {sink.name: SinkStats() for sink in sinks}
    for event in events:
        for sink in sinks:
            try:
                sink.deliver(event)
                stats[sink.name].delivered += 1
            except Exception:
                stats[sink.name].failures += 1
    return stats
