"""Command-line interface.

Commands: ``run`` (replay the pipeline), ``evaluate`` (depth/detection
metrics over a dataset manifest), ``bench`` (throughput measurement) and
``report-models`` (original vs quantized model size comparison). Failures
exit nonzero and print one machine-parsable JSON line on stderr carrying
the error code.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .alert import BoundedSink, CollectingSink, ConsoleSink, TraceSink
from .config import PipelineConfig, load_config
from .errors import (
    BenchFloorNotMet,
    ConfigInvalid,
    EmptyBench,
    StreetGuardError,
)
from .evaluation import (
    EvalReport,
    compare_model_files,
    evaluate_depth,
    evaluate_detection,
    map_sweep,
    model_size_report_as_dict,
    report_as_dict,
    write_report,
)
from .infer import PreprocessSpec
from .ingest import DatasetManifest
from .metrics import MatchConfig
from .postprocess import PostprocessConfig
from .pipeline import bench_from_config, build_depth_backend, build_detect_backend, run_from_config

log = logging.getLogger("streetguard")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_BENCH_FLOOR = 4


def _fail(exc: Exception, exit_code: int) -> int:
    code = getattr(exc, "code", "ERROR")
    print(json.dumps({"error": code, "message": str(exc)}), file=sys.stderr)
    return exit_code


def _config_path(args: argparse.Namespace) -> Path | None:
    # A subcommand-level --config wins over the global one.
    local = getattr(args, "config", None)
    return local if local is not None else args.config_global


def _write_json(payload: dict, path: Path | None) -> None:
    text = json.dumps(payload, indent=2) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")


def cmd_run(args: argparse.Namespace) -> int:
    config = load_config(_config_path(args))
    if args.max_frames is not None:
        config.run.max_frames = args.max_frames
    sinks = []
    trace_handle = None
    if config.sinks.console:
        sinks.append(BoundedSink(ConsoleSink(config.classes), config.sinks.buffer_capacity))
    trace_path = args.trace if args.trace is not None else config.sinks.trace_path
    if trace_path is not None:
        Path(trace_path).parent.mkdir(parents=True, exist_ok=True)
        trace_handle = open(trace_path, "w", encoding="utf-8", newline="\n")
        sinks.append(
            BoundedSink(TraceSink(trace_handle, config.classes), config.sinks.buffer_capacity)
        )
    collector = CollectingSink()
    sinks.append(collector)
    try:
        stats = run_from_config(config, sinks=sinks)
    finally:
        for sink in sinks:
            if isinstance(sink, BoundedSink):
                sink.flush()
        if trace_handle is not None:
            trace_handle.close()
    _write_json(stats.as_dict(), args.stats_out)
    log.info("processed %d frames, %d events", stats.frames_processed, stats.events_emitted)
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    manifest = DatasetManifest.load(args.manifest)
    config: PipelineConfig | None = None
    if args.use_backends:
        config = load_config(_config_path(args))
    pre = config.preprocess if config is not None else PreprocessSpec()
    post = config.postprocess if config is not None else PostprocessConfig()

    report = EvalReport()
    if args.mode in ("detection", "all") and manifest.label_dir is not None and (
        manifest.prediction_dir is not None or config is not None
    ):
        report.detection = evaluate_detection(
            manifest,
            match_config=MatchConfig(iou_threshold=args.iou),
            n_curve_points=args.curve_points,
            backend=build_detect_backend(config) if config is not None else None,
            preprocess_spec=pre,
            postprocess_config=post,
        )
    if args.mode in ("depth", "all") and manifest.depth_truth_dir is not None and (
        manifest.depth_estimate_dir is not None or config is not None
    ):
        report.depth = evaluate_depth(
            manifest,
            backend=build_depth_backend(config) if config is not None else None,
            preprocess_spec=pre,
        )
    if args.map50_95 and report.detection is not None:
        report.detection.map50_95 = map_sweep(
            manifest,
            backend=build_detect_backend(config) if config is not None else None,
            preprocess_spec=pre,
            postprocess_config=post,
        )
    if args.model_original is not None and args.model_quantized is not None:
        report.model_sizes = compare_model_files(args.model_original, args.model_quantized)
    if report.detection is None and report.depth is None and report.model_sizes is None:
        raise ConfigInvalid(
            "nothing to evaluate: the manifest provides neither detection inputs "
            "(labels + predictions) nor depth inputs (truth + estimates); "
            "pass --use-backends to run the configured models instead"
        )
    if args.out is not None:
        write_report(report, args.out, manifest.classes)
        log.info("report written to %s", args.out)
    _write_json(report_as_dict(report, manifest.classes), None)
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    config = load_config(_config_path(args))
    if args.fps_floor is not None:
        config.run.fps_floor = args.fps_floor
    stats = bench_from_config(config, args.frames, width=args.width, height=args.height)
    payload = stats.as_dict()
    payload["fps_floor"] = config.run.fps_floor
    _write_json(payload, args.stats_out)
    if stats.fps < config.run.fps_floor:
        raise BenchFloorNotMet(
            f"sustained {stats.fps:.1f} fps < floor {config.run.fps_floor:.1f} fps"
        )
    return EXIT_OK


def cmd_report_models(args: argparse.Namespace) -> int:
    report = compare_model_files(args.original, args.quantized)
    _write_json(model_size_report_as_dict(report), args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streetguard",
        description="Proximity alerts from monocular depth + street-object detection.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument(
        "--config", type=Path, default=None, dest="config_global",
        help="pipeline YAML config (subcommand --config overrides)",
    )
    parser.add_argument(
        "--log-level",
        default="warning",
        choices=["debug", "info", "warning", "error"],
        help="log verbosity (default: warning)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run the pipeline over a replay directory")
    p_run.add_argument("--config", type=Path, default=None, help="pipeline YAML config")
    p_run.add_argument("--max-frames", type=int, default=None)
    p_run.add_argument("--trace", type=Path, default=None, help="override the event trace path")
    p_run.add_argument("--stats-out", type=Path, default=None, help="write run stats JSON here")
    p_run.set_defaults(func=cmd_run)

    p_eval = sub.add_parser("evaluate", help="compute metrics over a dataset manifest")
    p_eval.add_argument("--manifest", type=Path, required=True, help="dataset manifest YAML")
    p_eval.add_argument("--mode", choices=["all", "detection", "depth"], default="all")
    p_eval.add_argument("--iou", type=float, default=0.5, help="matching IoU threshold")
    p_eval.add_argument("--curve-points", type=int, default=101)
    p_eval.add_argument("--map50-95", action="store_true", dest="map50_95",
                        help="also sweep matching thresholds 0.50:0.05:0.95")
    p_eval.add_argument(
        "--use-backends",
        action="store_true",
        help="run the configured model backends instead of reading prediction/estimate files",
    )
    p_eval.add_argument("--config", type=Path, default=None, help="pipeline config for --use-backends")
    p_eval.add_argument("--out", type=Path, default=None, help="directory for report files")
    p_eval.add_argument(
        "--model-original", type=Path, default=None,
        help="with --model-quantized: fold a size comparison into the report",
    )
    p_eval.add_argument("--model-quantized", type=Path, default=None)
    p_eval.set_defaults(func=cmd_evaluate)

    p_bench = sub.add_parser("bench", help="measure pipeline throughput")
    p_bench.add_argument("--config", type=Path, default=None, help="pipeline YAML config")
    p_bench.add_argument("--frames", type=int, default=100)
    p_bench.add_argument("--width", type=int, default=640, help="synthetic frame width")
    p_bench.add_argument("--height", type=int, default=480, help="synthetic frame height")
    p_bench.add_argument("--fps-floor", type=float, default=None)
    p_bench.add_argument("--stats-out", type=Path, default=None)
    p_bench.set_defaults(func=cmd_bench)

    p_models = sub.add_parser(
        "report-models", help="compare original vs quantized model file sizes"
    )
    p_models.add_argument("original", type=Path)
    p_models.add_argument("quantized", type=Path)
    p_models.add_argument("--out", type=Path, default=None)
    p_models.set_defaults(func=cmd_report_models)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper())
    try:
        return args.func(args)
    except ConfigInvalid as exc:
        return _fail(exc, EXIT_CONFIG)
    except (EmptyBench, BenchFloorNotMet) as exc:
        return _fail(exc, EXIT_BENCH_FLOOR)
    except FileNotFoundError as exc:
        exc.code = "FILE_MISSING"  # type: ignore[attr-defined]
        return _fail(exc, EXIT_DATA)
    except StreetGuardError as exc:
        return _fail(exc, EXIT_DATA)


if __name__ == "__main__":
    sys.exit(main())
