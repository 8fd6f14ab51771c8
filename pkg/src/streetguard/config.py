"""Pipeline configuration: one YAML document, env-var overridable.

Unknown keys are rejected with the offending dotted path named, so typos
fail loudly at load time. Any leaf can be overridden from the environment
with ``SECTION__KEY`` (nested: ``BACKENDS__DEPTH__BASE_M``); values are
parsed as YAML scalars.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .alert import AlertPolicy, Modality, default_class_priorities
from .errors import ConfigInvalid
from .fusion import DepthStatistic, FusionConfig
from .infer import Layout, OnnxBackendConfig, PreprocessSpec
from .postprocess import PostprocessConfig
from .types import ClassList, DEFAULT_CLASSES


@dataclass
class InputConfig:
    replay_dir: Path | None = None
    fps: float = 30.0
    loop: bool = False
    pace: bool = True


@dataclass
class DepthBackendConfig:
    kind: str = "stub"  # stub | onnx
    base_m: float = 1.0
    gain_m: float = 9.0
    model: Path | None = None
    width: int = 224
    height: int = 224
    layout: str = "chw"
    depth_scale: float = 1.0
    depth_shift: float = 0.0
    threads: int = 1


@dataclass
class DetectBackendConfig:
    kind: str = "stub"  # stub | onnx
    fixture: Path | None = None
    strict: bool = False
    model: Path | None = None
    width: int = 224
    height: int = 224
    layout: str = "chw"
    threads: int = 1


@dataclass
class SinksConfig:
    console: bool = True
    trace_path: Path | None = None
    buffer_capacity: int = 256


@dataclass
class RunLimits:
    max_frames: int | None = None
    max_duration_s: float | None = None
    queue_depth: int = 8
    drop_policy: str = "drop_oldest"  # drop_oldest | block
    fps_floor: float = 15.0


@dataclass
class PipelineConfig:
    input: InputConfig = field(default_factory=InputConfig)
    preprocess: PreprocessSpec = field(default_factory=PreprocessSpec)
    depth_backend: DepthBackendConfig = field(default_factory=DepthBackendConfig)
    detect_backend: DetectBackendConfig = field(default_factory=DetectBackendConfig)
    postprocess: PostprocessConfig = field(default_factory=PostprocessConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    alert: AlertPolicy = field(default_factory=AlertPolicy)
    sinks: SinksConfig = field(default_factory=SinksConfig)
    run: RunLimits = field(default_factory=RunLimits)
    classes: ClassList = field(default_factory=lambda: DEFAULT_CLASSES)

    def onnx_depth_config(self) -> OnnxBackendConfig:
        b = self.depth_backend
        if b.model is None:
            raise ConfigInvalid("backends.depth.model is required for kind 'onnx'")
        return OnnxBackendConfig(
            model=b.model, width=b.width, height=b.height,
            layout=_parse_enum(Layout, b.layout, "backends.depth.layout"),
            depth_scale=b.depth_scale, depth_shift=b.depth_shift, threads=b.threads,
        )

    def onnx_detect_config(self) -> OnnxBackendConfig:
        b = self.detect_backend
        if b.model is None:
            raise ConfigInvalid("backends.detect.model is required for kind 'onnx'")
        return OnnxBackendConfig(
            model=b.model, width=b.width, height=b.height,
            layout=_parse_enum(Layout, b.layout, "backends.detect.layout"),
            threads=b.threads,
        )


_ENV_SEPARATOR = "__"

# section -> set of allowed keys (None marks nested sections).
_SCHEMA: dict[str, set[str] | None] = {
    "input": {"replay_dir", "fps", "loop", "pace"},
    "preprocess": {"width", "height", "layout"},
    "backends": None,
    "postprocess": {
        "confidence_threshold", "nms_iou_threshold", "max_detections", "class_agnostic_nms",
    },
    "fusion": {
        "proximity_threshold_m", "depth_statistic", "min_valid_fraction", "box_shrink",
    },
    "alert": {
        "debounce_frames", "cooldown_ms", "class_priority", "max_alerts_per_frame", "modality",
    },
    "sinks": {"console", "trace_path", "buffer_capacity"},
    "run": {"max_frames", "max_duration_s", "queue_depth", "drop_policy", "fps_floor"},
    "classes": None,
}

_BACKEND_KEYS = {
    "depth": {
        "kind", "base_m", "gain_m", "model", "width", "height", "layout",
        "depth_scale", "depth_shift", "threads",
    },
    "detect": {"kind", "fixture", "strict", "model", "width", "height", "layout", "threads"},
}


def _reject_unknown(mapping: dict, allowed: set[str], path: str) -> None:
    for key in mapping:
        if key not in allowed:
            raise ConfigInvalid(f"unknown config key {path}.{key}")


def _coerce(value, target_type, path: str):
    try:
        if target_type is bool:
            if not isinstance(value, bool):
                raise ValueError("expected a boolean")
            return value
        if target_type is int:
            if isinstance(value, bool) or not isinstance(value, int):
                raise ValueError("expected an integer")
            return value
        if target_type is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ValueError("expected a number")
            return float(value)
        if target_type is Path:
            return Path(str(value))
        return value
    except ValueError as exc:
        raise ConfigInvalid(f"{path}: {exc} (got {value!r})") from None


def _get(section: dict, key: str, target_type, default, path: str):
    if key not in section or section[key] is None:
        return default
    return _coerce(section[key], target_type, f"{path}.{key}")


def _parse_enum(enum_type, token: str, path: str):
    try:
        return enum_type(str(token).lower())
    except ValueError:
        choices = ", ".join(m.value for m in enum_type)
        raise ConfigInvalid(f"{path}: {token!r} is not one of: {choices}") from None


def _apply_env_overrides(raw: dict, environ: dict[str, str]) -> None:
    for name, value in environ.items():
        if _ENV_SEPARATOR not in name:
            continue
        parts = [p.lower() for p in name.split(_ENV_SEPARATOR)]
        if parts[0] not in _SCHEMA or not all(parts):
            continue
        try:
            parsed = yaml.safe_load(value)
        except yaml.YAMLError:
            parsed = value
        node = raw
        for part in parts[:-1]:
            nxt = node.get(part)
            if not isinstance(nxt, dict):
                nxt = {}
                node[part] = nxt
            node = nxt
        node[parts[-1]] = parsed


def _build_alert_policy(section: dict, classes: ClassList, path: str) -> AlertPolicy:
    priorities = default_class_priorities()
    overrides = section.get("class_priority") or {}
    if not isinstance(overrides, dict):
        raise ConfigInvalid(f"{path}.class_priority must be a mapping of class name to rank")
    for name, rank in overrides.items():
        priorities[classes.id(str(name))] = _coerce(rank, int, f"{path}.class_priority.{name}")
    try:
        return AlertPolicy(
            debounce_frames=_get(section, "debounce_frames", int, 3, path),
            cooldown_ms=_get(section, "cooldown_ms", int, 2000, path),
            class_priority=priorities,
            max_alerts_per_frame=_get(section, "max_alerts_per_frame", int, 1, path),
            modality=_parse_enum(
                Modality, section.get("modality", "buzzer"), f"{path}.modality"
            ),
        )
    except ValueError as exc:
        raise ConfigInvalid(f"{path}: {exc}") from None


def build_config(raw: dict, base_dir: Path | None = None) -> PipelineConfig:
    """Construct a validated PipelineConfig from a parsed YAML mapping."""
    if not isinstance(raw, dict):
        raise ConfigInvalid("config must be a mapping")
    _reject_unknown(raw, set(_SCHEMA), "config")

    def section(name: str) -> dict:
        value = raw.get(name) or {}
        if not isinstance(value, dict):
            raise ConfigInvalid(f"config.{name} must be a mapping")
        allowed = _SCHEMA[name]
        if allowed is not None:
            _reject_unknown(value, allowed, name)
        return value

    def resolve(p: Path | None) -> Path | None:
        if p is None or base_dir is None or p.is_absolute():
            return p
        return base_dir / p

    classes = DEFAULT_CLASSES
    class_path = raw.get("classes")
    if class_path is not None:
        classes = ClassList.from_file(resolve(Path(str(class_path))))

    inp = section("input")
    pre = section("preprocess")
    backends = section("backends")
    _reject_unknown(backends, set(_BACKEND_KEYS), "backends")
    depth_raw = backends.get("depth") or {}
    detect_raw = backends.get("detect") or {}
    _reject_unknown(depth_raw, _BACKEND_KEYS["depth"], "backends.depth")
    _reject_unknown(detect_raw, _BACKEND_KEYS["detect"], "backends.detect")
    post = section("postprocess")
    fus = section("fusion")
    alert_raw = section("alert")
    sinks = section("sinks")
    run = section("run")

    try:
        config = PipelineConfig(
            input=InputConfig(
                replay_dir=resolve(_get(inp, "replay_dir", Path, None, "input")),
                fps=_get(inp, "fps", float, 30.0, "input"),
                loop=_get(inp, "loop", bool, False, "input"),
                pace=_get(inp, "pace", bool, True, "input"),
            ),
            preprocess=PreprocessSpec(
                width=_get(pre, "width", int, 224, "preprocess"),
                height=_get(pre, "height", int, 224, "preprocess"),
                layout=_parse_enum(
                    Layout, pre.get("layout", "hwc"), "preprocess.layout"
                ),
            ),
            depth_backend=DepthBackendConfig(
                kind=str(_get(depth_raw, "kind", str, "stub", "backends.depth")),
                base_m=_get(depth_raw, "base_m", float, 1.0, "backends.depth"),
                gain_m=_get(depth_raw, "gain_m", float, 9.0, "backends.depth"),
                model=resolve(_get(depth_raw, "model", Path, None, "backends.depth")),
                width=_get(depth_raw, "width", int, 224, "backends.depth"),
                height=_get(depth_raw, "height", int, 224, "backends.depth"),
                layout=str(_get(depth_raw, "layout", str, "chw", "backends.depth")),
                depth_scale=_get(depth_raw, "depth_scale", float, 1.0, "backends.depth"),
                depth_shift=_get(depth_raw, "depth_shift", float, 0.0, "backends.depth"),
                threads=_get(depth_raw, "threads", int, 1, "backends.depth"),
            ),
            detect_backend=DetectBackendConfig(
                kind=str(_get(detect_raw, "kind", str, "stub", "backends.detect")),
                fixture=resolve(_get(detect_raw, "fixture", Path, None, "backends.detect")),
                strict=_get(detect_raw, "strict", bool, False, "backends.detect"),
                model=resolve(_get(detect_raw, "model", Path, None, "backends.detect")),
                width=_get(detect_raw, "width", int, 224, "backends.detect"),
                height=_get(detect_raw, "height", int, 224, "backends.detect"),
                layout=str(_get(detect_raw, "layout", str, "chw", "backends.detect")),
                threads=_get(detect_raw, "threads", int, 1, "backends.detect"),
            ),
            postprocess=PostprocessConfig(
                confidence_threshold=_get(post, "confidence_threshold", float, 0.25, "postprocess"),
                nms_iou_threshold=_get(post, "nms_iou_threshold", float, 0.45, "postprocess"),
                max_detections=_get(post, "max_detections", int, 300, "postprocess"),
                class_agnostic_nms=_get(post, "class_agnostic_nms", bool, False, "postprocess"),
            ),
            fusion=FusionConfig(
                proximity_threshold_m=_get(fus, "proximity_threshold_m", float, 3.0, "fusion"),
                depth_statistic=_parse_enum(
                    DepthStatistic, fus.get("depth_statistic", "median"), "fusion.depth_statistic"
                ),
                min_valid_fraction=_get(fus, "min_valid_fraction", float, 0.2, "fusion"),
                box_shrink=_get(fus, "box_shrink", float, 0.1, "fusion"),
            ),
            alert=_build_alert_policy(alert_raw, classes, "alert"),
            sinks=SinksConfig(
                console=_get(sinks, "console", bool, True, "sinks"),
                trace_path=resolve(_get(sinks, "trace_path", Path, None, "sinks")),
                buffer_capacity=_get(sinks, "buffer_capacity", int, 256, "sinks"),
            ),
            run=RunLimits(
                max_frames=_get(run, "max_frames", int, None, "run"),
                max_duration_s=_get(run, "max_duration_s", float, None, "run"),
                queue_depth=_get(run, "queue_depth", int, 8, "run"),
                drop_policy=str(_get(run, "drop_policy", str, "drop_oldest", "run")),
                fps_floor=_get(run, "fps_floor", float, 15.0, "run"),
            ),
            classes=classes,
        )
    except ValueError as exc:
        raise ConfigInvalid(str(exc)) from None

    if config.run.drop_policy not in ("drop_oldest", "block"):
        raise ConfigInvalid(
            f"run.drop_policy: {config.run.drop_policy!r} is not one of: drop_oldest, block"
        )
    if config.run.queue_depth < 1:
        raise ConfigInvalid(f"run.queue_depth must be >= 1, got {config.run.queue_depth}")
    for name, kind in (("depth", config.depth_backend.kind), ("detect", config.detect_backend.kind)):
        if kind not in ("stub", "onnx"):
            raise ConfigInvalid(f"backends.{name}.kind: {kind!r} is not one of: stub, onnx")
    return config


def load_config(
    path: str | Path | None, environ: dict[str, str] | None = None
) -> PipelineConfig:
    """Load, env-override and validate a pipeline config file.

    ``path=None`` yields the default config (env overrides still apply).
    Relative paths inside the file resolve against the file's directory.
    """
    raw: dict = {}
    base_dir: Path | None = None
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigInvalid(f"config file not found: {path}")
        try:
            loaded = yaml.safe_load(path.read_text(encoding="utf-8"))
        except yaml.YAMLError as exc:
            raise ConfigInvalid(f"{path}: invalid YAML: {exc}") from exc
        if loaded is not None:
            if not isinstance(loaded, dict):
                raise ConfigInvalid(f"{path}: config must be a mapping")
            raw = loaded
        base_dir = path.parent
    _apply_env_overrides(raw, environ if environ is not None else dict(os.environ))
    return build_config(raw, base_dir=base_dir)
