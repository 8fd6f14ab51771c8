import numpy as np
import pytest

from streetguard.errors import (
    ConfigInvalid,
    MissingFixtureEntry,
    ModelLoadFailure,
    RuntimeUnavailable,
    ShapeMismatch,
    ZeroSizedFrame,
)
from streetguard.infer import (
    Layout,
    NonNegativeDepthBackend,
    OnnxBackendConfig,
    OnnxDepthBackend,
    PreprocessSpec,
    ScriptedDetectBackend,
    StubDepthBackend,
    clamp_depth_non_negative,
    decode_detector_output,
    preprocess,
)
from streetguard.types import BBox, DepthMap, Frame

from conftest import solid_frame


def frame_of(pixels: np.ndarray, frame_id: int = 0) -> Frame:
    return Frame(id=frame_id, timestamp_ns=0, pixels=pixels)


class TestPreprocess:
    def test_white_frame_maps_to_ones(self):
        out = preprocess(frame_of(solid_frame(224, 224, 255)), PreprocessSpec())
        assert out.shape == (224, 224, 3)
        assert out.dtype == np.float32
        assert (out == 1.0).all()

    def test_downscale_to_target_dims(self):
        out = preprocess(frame_of(solid_frame(448, 448, 60)), PreprocessSpec())
        assert out.shape == (224, 224, 3)

    def test_bilinear_midpoint(self):
        px = np.zeros((1, 2, 3), dtype=np.uint8)
        px[0, 1, :] = 255
        out = preprocess(frame_of(px), PreprocessSpec(width=1, height=1))
        assert out.ravel() == pytest.approx([0.5, 0.5, 0.5])

    def test_output_in_unit_range_for_random_frames(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            h, w = rng.integers(1, 64, 2)
            px = rng.integers(0, 256, size=(h, w, 3)).astype(np.uint8)
            out = preprocess(frame_of(px), PreprocessSpec(width=17, height=13))
            assert out.min() >= 0.0 and out.max() <= 1.0

    def test_planar_layout(self):
        out = preprocess(frame_of(solid_frame(32, 16, 7)), PreprocessSpec(8, 8, Layout.CHW))
        assert out.shape == (3, 8, 8)

    def test_deterministic(self):
        rng = np.random.default_rng(11)
        px = rng.integers(0, 256, size=(37, 53, 3)).astype(np.uint8)
        a = preprocess(frame_of(px), PreprocessSpec())
        b = preprocess(frame_of(px.copy()), PreprocessSpec())
        assert a.tobytes() == b.tobytes()

    def test_zero_sized_frame_rejected(self):
        f = Frame(id=0, timestamp_ns=0, pixels=np.zeros((0, 4, 3), dtype=np.uint8))
        with pytest.raises(ZeroSizedFrame):
            preprocess(f, PreprocessSpec())

    def test_bad_spec_rejected(self):
        with pytest.raises(ValueError):
            PreprocessSpec(width=0, height=10)


class TestStubDepth:
    def test_black_reads_base(self):
        img = preprocess(frame_of(solid_frame(8, 8, 0)), PreprocessSpec(8, 8))
        dm = StubDepthBackend().estimate(img)
        assert (dm.depth == 1.0).all()
        assert dm.valid.all()

    def test_white_reads_base_plus_gain(self):
        img = preprocess(frame_of(solid_frame(8, 8, 255)), PreprocessSpec(8, 8))
        dm = StubDepthBackend().estimate(img)
        assert (dm.depth == 10.0).all()

    def test_split_frame_is_per_pixel(self):
        px = solid_frame(8, 8, 0)
        px[:, 4:, :] = 255
        dm = StubDepthBackend().estimate(preprocess(frame_of(px), PreprocessSpec(8, 8)))
        assert (dm.depth[:, :4] == 1.0).all()
        assert (dm.depth[:, 4:] == 10.0).all()

    def test_deterministic_across_runs(self):
        rng = np.random.default_rng(2)
        px = rng.integers(0, 256, size=(16, 16, 3)).astype(np.uint8)
        img = preprocess(frame_of(px), PreprocessSpec(16, 16))
        a = StubDepthBackend().estimate(img)
        b = StubDepthBackend().estimate(img)
        assert a.depth.tobytes() == b.depth.tobytes()

    def test_accepts_planar_layout(self):
        img = preprocess(frame_of(solid_frame(8, 8, 255)), PreprocessSpec(8, 8, Layout.CHW))
        assert (StubDepthBackend().estimate(img).depth == 10.0).all()


class TestScriptedDetect:
    def test_echoes_fixture_entry(self):
        backend = ScriptedDetectBackend.single_class_script(
            {0: [((10, 10, 50, 50), 0, 0.9)]}
        )
        raw = backend.detect(np.zeros((8, 8, 3), dtype=np.float32), frame_id=0)
        assert len(raw) == 1
        box, scores = raw.candidates[0]
        assert box == BBox(10, 10, 50, 50)
        assert scores[0] == 0.9
        assert scores[1:].sum() == 0.0

    def test_missing_entry_permissive(self):
        backend = ScriptedDetectBackend.single_class_script({0: []})
        assert len(backend.detect(np.zeros((8, 8, 3), np.float32), frame_id=7)) == 0

    def test_missing_entry_strict(self):
        backend = ScriptedDetectBackend.single_class_script({0: []}, strict=True)
        with pytest.raises(MissingFixtureEntry):
            backend.detect(np.zeros((8, 8, 3), np.float32), frame_id=7)

    def test_overlapping_boxes_pass_through(self):
        backend = ScriptedDetectBackend.single_class_script(
            {3: [((0, 0, 10, 10), 1, 0.9), ((1, 1, 11, 11), 1, 0.8)]}
        )
        raw = backend.detect(np.zeros((8, 8, 3), np.float32), frame_id=3)
        assert len(raw) == 2  # suppression happens downstream

    def test_from_file(self, tmp_path):
        path = tmp_path / "script.yaml"
        path.write_text(
            "0:\n"
            "  - box: [10, 10, 50, 50]\n"
            "    class: truck\n"
            "    score: 0.9\n"
            "2:\n"
            "  - box: [1, 2, 3, 4]\n"
            "    class: 0\n"
        )
        backend = ScriptedDetectBackend.from_file(path)
        raw = backend.detect(np.zeros((8, 8, 3), np.float32), frame_id=0)
        box, scores = raw.candidates[0]
        assert scores[4] == 0.9  # truck
        raw2 = backend.detect(np.zeros((8, 8, 3), np.float32), frame_id=2)
        assert raw2.candidates[0][1][0] == 1.0  # default score

    def test_from_file_rejects_unknown_key(self, tmp_path):
        path = tmp_path / "script.yaml"
        path.write_text("0:\n  - box: [1, 2, 3, 4]\n    klass: person\n")
        with pytest.raises(ConfigInvalid):
            ScriptedDetectBackend.from_file(path)


class _NegativeDepthBackend:
    shareable = True

    def estimate(self, image, frame_id=-1):
        depth = np.full((4, 4), -1.0)
        return DepthMap(depth=depth)


class TestNonNegativeWrapper:
    def test_clamps_adversarial_backend(self):
        wrapped = NonNegativeDepthBackend(_NegativeDepthBackend())
        dm = wrapped.estimate(np.zeros((4, 4, 3), np.float32))
        assert (dm.depth == 0.0).all()
        assert dm.valid.all()

    def test_no_copy_when_already_valid(self):
        dm = DepthMap(depth=np.ones((2, 2)))
        assert clamp_depth_non_negative(dm) is dm


class TestDetectorOutputDecode:
    def test_rows_layout(self):
        # (1, N, 4+C) with C=2
        out = np.array([[[10, 10, 4, 4, 0.9, 0.1], [5, 5, 2, 2, 0.2, 0.7]]])
        raw = decode_detector_output(out, n_classes=2, width=32, height=32)
        assert len(raw) == 2
        box, scores = raw.candidates[0]
        assert box == BBox(8, 8, 12, 12)
        assert list(scores) == [0.9, 0.1]

    def test_columns_layout(self):
        out = np.array([[[10.0], [10.0], [4.0], [4.0], [0.9], [0.1]]])  # (1, 4+C, N)
        raw = decode_detector_output(out, n_classes=2, width=32, height=32)
        assert raw.candidates[0][0] == BBox(8, 8, 12, 12)

    def test_boxes_clamped_to_bounds(self):
        out = np.array([[[1, 1, 10, 10, 1.0]]])
        raw = decode_detector_output(out, n_classes=1, width=8, height=8)
        box, _ = raw.candidates[0]
        assert box == BBox(0, 0, 6, 6)

    def test_scores_clipped(self):
        out = np.array([[[4, 4, 2, 2, 1.7, -0.3]]])
        raw = decode_detector_output(out, n_classes=2, width=8, height=8)
        assert list(raw.candidates[0][1]) == [1.0, 0.0]

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            decode_detector_output(np.zeros((1, 7, 7)), n_classes=13, width=8, height=8)
        with pytest.raises(ShapeMismatch):
            decode_detector_output(np.zeros((2, 6, 1)), n_classes=2, width=8, height=8)


class TestOnnxAdapter:
    def test_runtime_unavailable_or_load_failure(self, tmp_path):
        # Without onnxruntime installed the adapter must fail soft with
        # RuntimeUnavailable; with it installed, a missing file is a load
        # failure. Stub backends keep the rest of the suite independent.
        config = OnnxBackendConfig(model=tmp_path / "missing.onnx")
        try:
            import onnxruntime  # noqa: F401

            with pytest.raises(ModelLoadFailure):
                OnnxDepthBackend(config)
        except ImportError:
            with pytest.raises(RuntimeUnavailable):
                OnnxDepthBackend(config)
