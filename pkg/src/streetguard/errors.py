"""Exception hierarchy for the pipeline and evaluation toolkit.

Every error carries a stable ``code`` string so the CLI can emit
machine-parsable failures on stderr.
"""

from __future__ import annotations


class StreetGuardError(Exception):
    """Base class for all package errors."""

    code = "ERROR"


# --- ingest ---------------------------------------------------------------

class MalformedPng(StreetGuardError):
    code = "MALFORMED_PNG"


class WrongBitDepth(StreetGuardError):
    """Depth PNG is not 16-bit single-channel."""

    code = "WRONG_BIT_DEPTH"


class LabelError(StreetGuardError):
    code = "LABEL_ERROR"


class BadClassId(LabelError):
    code = "BAD_CLASS_ID"


class BadCoordinate(LabelError):
    code = "BAD_COORDINATE"


class BadFieldCount(LabelError):
    code = "BAD_FIELD_COUNT"


class MalformedImage(StreetGuardError):
    code = "MALFORMED_IMAGE"


# --- inference ------------------------------------------------------------

class ZeroSizedFrame(StreetGuardError):
    code = "ZERO_SIZED_FRAME"


class MissingFixtureEntry(StreetGuardError):
    """Scripted detector has no entry for the requested frame id."""

    code = "MISSING_FIXTURE_ENTRY"


class ModelLoadFailure(StreetGuardError):
    code = "MODEL_LOAD_FAILURE"


class ShapeMismatch(StreetGuardError):
    code = "SHAPE_MISMATCH"


class RuntimeUnavailable(StreetGuardError):
    """onnxruntime is not installed; stub backends remain usable."""

    code = "RUNTIME_UNAVAILABLE"


class BackendLoadFailure(StreetGuardError):
    code = "BACKEND_LOAD_FAILURE"


# --- fusion / alert -------------------------------------------------------

class BoxOutsideImage(StreetGuardError):
    """Detection box does not overlap the depth map at all."""

    code = "BOX_OUTSIDE_IMAGE"


class NonMonotonicFrameId(StreetGuardError):
    code = "NON_MONOTONIC_FRAME_ID"


# --- metrics / evaluation -------------------------------------------------

class NoValidPixels(StreetGuardError):
    code = "NO_VALID_PIXELS"


class NoDefinedClasses(StreetGuardError):
    """Every class has zero ground truth, so mAP is undefined."""

    code = "NO_DEFINED_CLASSES"


class EmptyDataset(StreetGuardError):
    code = "EMPTY_DATASET"


class MixedImageSizes(StreetGuardError):
    """Paired buffers disagree in size where identical dims are assumed."""

    code = "MIXED_IMAGE_SIZES"


# --- cli ------------------------------------------------------------------

class ConfigInvalid(StreetGuardError):
    code = "CONFIG_INVALID"


class EmptyBench(StreetGuardError):
    code = "EMPTY_BENCH"


class BenchFloorNotMet(StreetGuardError):
    """Measured throughput fell below the configured fps floor."""

    code = "BENCH_FLOOR_NOT_MET"
