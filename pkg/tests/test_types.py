import numpy as np
import pytest

from streetguard.errors import BadClassId
from streetguard.types import (
    BBox,
    ClassList,
    DEFAULT_CLASSES,
    DepthMap,
    Detection,
    Frame,
    box_area,
    iou,
)


class TestBBox:
    def test_area_examples(self):
        assert box_area(BBox(0, 0, 10, 10)) == 100
        assert box_area(BBox(3, 3, 3, 9)) == 0  # degenerate width
        assert box_area(BBox(1.5, 2.0, 4.0, 6.0)) == pytest.approx(10.0)  # 2.5 * 4.0

    def test_inverted_box_rejected(self):
        with pytest.raises(ValueError):
            BBox(10, 0, 0, 10)
        with pytest.raises(ValueError):
            BBox(0, 10, 10, 0)

    def test_degenerate_box_allowed(self):
        assert BBox(5, 5, 5, 5).area == 0


class TestIou:
    def test_identical_boxes(self):
        b = BBox(0, 0, 10, 10)
        assert iou(b, b) == 1.0

    def test_disjoint_boxes(self):
        assert iou(BBox(0, 0, 10, 10), BBox(20, 20, 30, 30)) == 0.0

    def test_half_overlap(self):
        # intersection 50, union 150
        assert iou(BBox(0, 0, 10, 10), BBox(5, 0, 15, 10)) == pytest.approx(50 / 150)

    def test_degenerate_pair_is_zero(self):
        assert iou(BBox(1, 1, 1, 1), BBox(1, 1, 1, 1)) == 0.0

    def test_symmetry_bounds_and_translation_invariance(self):
        rng = np.random.default_rng(42)
        for _ in range(500):
            x1, y1, x2, y2 = rng.uniform(0, 100, 4)
            a = BBox(min(x1, x2), min(y1, y2), max(x1, x2), max(y1, y2))
            x1, y1, x2, y2 = rng.uniform(0, 100, 4)
            b = BBox(min(x1, x2), min(y1, y2), max(x1, x2), max(y1, y2))
            v = iou(a, b)
            assert 0.0 <= v <= 1.0
            assert v == iou(b, a)
            dx, dy = rng.uniform(-50, 50, 2)
            assert iou(a.translate(dx, dy), b.translate(dx, dy)) == pytest.approx(v, abs=1e-9)

    def test_self_iou_of_nondegenerate_box(self):
        rng = np.random.default_rng(1)
        for _ in range(100):
            x1, y1 = rng.uniform(0, 50, 2)
            w, h = rng.uniform(0.1, 50, 2)
            assert iou(BBox(x1, y1, x1 + w, y1 + h), BBox(x1, y1, x1 + w, y1 + h)) == 1.0


class TestClassList:
    def test_default_has_13_classes(self):
        assert len(DEFAULT_CLASSES) == 13
        assert DEFAULT_CLASSES.name(0) == "person"
        assert DEFAULT_CLASSES.name(12) == "human hauler"
        assert DEFAULT_CLASSES.id("truck") == 4

    def test_unknown_id_rejected(self):
        with pytest.raises(BadClassId):
            DEFAULT_CLASSES.name(13)
        with pytest.raises(BadClassId):
            DEFAULT_CLASSES.name(-1)
        with pytest.raises(BadClassId):
            DEFAULT_CLASSES.id("llama")

    def test_from_file_roundtrip(self, tmp_path):
        path = tmp_path / "classes.txt"
        path.write_text("\n".join(DEFAULT_CLASSES.names) + "\n")
        loaded = ClassList.from_file(path)
        assert loaded == DEFAULT_CLASSES

    def test_duplicates_rejected(self):
        with pytest.raises(ValueError):
            ClassList(("a", "a"))


class TestDetection:
    def test_confidence_bounds(self):
        b = BBox(0, 0, 1, 1)
        Detection(b, 0, 0.0)
        Detection(b, 0, 1.0)
        with pytest.raises(ValueError):
            Detection(b, 0, 1.5)
        with pytest.raises(ValueError):
            Detection(b, 0, -0.1)


class TestFrame:
    def test_dimensions(self):
        f = Frame(id=0, timestamp_ns=0, pixels=np.zeros((4, 6, 3), dtype=np.uint8))
        assert (f.width, f.height) == (6, 4)

    def test_shape_and_dtype_validated(self):
        with pytest.raises(ValueError):
            Frame(id=0, timestamp_ns=0, pixels=np.zeros((4, 6), dtype=np.uint8))
        with pytest.raises(ValueError):
            Frame(id=0, timestamp_ns=0, pixels=np.zeros((4, 6, 3), dtype=np.float32))


class TestDepthMap:
    def test_shape_agreement_enforced(self):
        with pytest.raises(ValueError):
            DepthMap(depth=np.zeros((4, 4)), valid=np.ones((3, 4), dtype=bool))
        with pytest.raises(ValueError):
            DepthMap(depth=np.zeros((4, 4)), valid=np.ones((4, 4), dtype=np.uint8))

    def test_default_mask_is_all_valid(self):
        dm = DepthMap(depth=np.ones((2, 3)))
        assert dm.valid.all() and dm.valid.shape == (2, 3)
        assert (dm.width, dm.height) == (3, 2)
