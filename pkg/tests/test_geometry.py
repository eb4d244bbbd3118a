"""Tests for boxes, NMS, trajectories and vIoU."""

import itertools

import numpy as np
import pytest
from pydantic import ValidationError

from vidsgg.errors import PreconditionError
from vidsgg.geometry import BoundingBox, Detection, Trajectory, intersection_area, iou, per_class_nms, union_box, union_of, viou


def box(x1: float, y1: float, x2: float, y2: float) -> BoundingBox:
    return BoundingBox(x1=x1, y1=y1, x2=x2, y2=y2)


class TestBoundingBox:
    """Tests for the box model and its arithmetic."""

    def test_corners_out_of_order_rejected(self) -> None:
        """Test that x1 > x2 fails validation."""
        with pytest.raises(ValidationError):
            box(5, 0, 1, 1)

    def test_zero_area_box_allowed(self) -> None:
        """Test that a degenerate box is valid with zero area."""
        assert box(1, 1, 1, 4).area == 0.0

    def test_scaled(self) -> None:
        """Test mapping into grid coordinates."""
        assert box(8, 16, 24, 32).scaled(8).as_tuple() == (1.0, 2.0, 3.0, 4.0)

    def test_iou_identical(self) -> None:
        """Test IoU of a box with itself."""
        assert iou(box(0, 0, 4, 4), box(0, 0, 4, 4)) == 1.0

    def test_iou_disjoint(self) -> None:
        """Test IoU of separated boxes."""
        assert iou(box(0, 0, 1, 1), box(2, 2, 3, 3)) == 0.0

    def test_iou_partial(self) -> None:
        """Test IoU of half-overlapping boxes."""
        assert iou(box(0, 0, 2, 2), box(1, 0, 3, 2)) == pytest.approx(1 / 3)

    def test_iou_of_empty_boxes(self) -> None:
        """Test that two zero-area boxes give 0 instead of dividing by zero."""
        assert iou(box(1, 1, 1, 1), box(1, 1, 1, 1)) == 0.0

    def test_touching_boxes_do_not_intersect(self) -> None:
        """Test that shared edges have zero intersection."""
        assert intersection_area(box(0, 0, 1, 1), box(1, 0, 2, 1)) == 0.0

    def test_union_box_covers_both(self) -> None:
        """Test the covering box and its symmetry."""
        a, b = box(0, 2, 3, 5), box(1, 0, 6, 4)
        u = union_box(a, b)

        assert u.as_tuple() == (0, 0, 6, 5)
        assert u == union_box(b, a)
        assert u.contains(a) and u.contains(b)

    def test_union_of_empty_raises(self) -> None:
        """Test that the union of no boxes is an error."""
        with pytest.raises(PreconditionError):
            union_of([])


class TestDetection:
    """Tests for the detection model."""

    def test_scores_must_sum_to_one(self) -> None:
        """Test that unnormalized class scores fail."""
        with pytest.raises(ValidationError):
            Detection(box=box(0, 0, 1, 1), class_scores=(0.5, 0.6), feature_ref="a")

    def test_label_ties_take_first_class(self) -> None:
        """Test argmax tie-breaking."""
        det = Detection(box=box(0, 0, 1, 1), class_scores=(0.4, 0.4, 0.2), feature_ref="a")
        assert det.label == 0
        assert det.score == 0.4


class TestPerClassNMS:
    """Tests for per-class non-maximal suppression."""

    def test_same_class_overlap_suppressed(self, make_detection) -> None:
        """Test that the lower-scoring overlapping detection is dropped."""
        hi = make_detection((0, 0, 10, 10), label=1, confidence=0.9, ref="hi")
        lo = make_detection((1, 1, 10, 10), label=1, confidence=0.8, ref="lo")

        kept = per_class_nms([lo, hi], 0.5, 100)

        assert [d.feature_ref for d in kept] == ["hi"]

    def test_different_classes_kept(self, make_detection) -> None:
        """Test that suppression never crosses classes."""
        a = make_detection((0, 0, 10, 10), label=0, confidence=0.9, ref="a")
        b = make_detection((0, 0, 10, 10), label=1, confidence=0.8, ref="b")

        assert [d.feature_ref for d in per_class_nms([a, b], 0.5, 100)] == ["a", "b"]

    def test_overlap_equal_to_threshold_kept(self, make_detection) -> None:
        """Test that only overlaps strictly above the threshold suppress."""
        a = make_detection((0, 0, 3, 1), confidence=0.9, ref="a")
        b = make_detection((1, 0, 4, 1), confidence=0.8, ref="b")
        assert iou(a.box, b.box) == 0.5

        assert len(per_class_nms([a, b], 0.5, 100)) == 2

    def test_max_kept_truncates_by_score(self, make_detection) -> None:
        """Test the proposal cap and output order."""
        dets = [make_detection((20 * i, 0, 20 * i + 10, 10), confidence=0.5 + 0.1 * i, ref=str(i)) for i in range(4)]

        kept = per_class_nms(dets, 0.5, 2)

        assert [d.feature_ref for d in kept] == ["3", "2"]

    def test_equal_scores_keep_input_order(self, make_detection) -> None:
        """Test tie-breaking by input index."""
        dets = [make_detection((20 * i, 0, 20 * i + 10, 10), confidence=0.7, ref=str(i)) for i in range(3)]
        assert [d.feature_ref for d in per_class_nms(dets, 0.5, 10)] == ["0", "1", "2"]

    def test_empty_input(self) -> None:
        """Test that no detections give no survivors."""
        assert per_class_nms([], 0.5, 10) == []

    def test_invalid_threshold(self, make_detection) -> None:
        """Test that the threshold must lie in (0, 1]."""
        with pytest.raises(PreconditionError):
            per_class_nms([make_detection((0, 0, 1, 1))], 0.0, 10)

    def test_matches_exhaustive_oracle(self, make_detection, rng: np.random.Generator) -> None:
        """Test 5 random boxes against the one subset that greedy suppression can produce."""
        for _ in range(50):
            dets = []
            for i in range(5):
                x, y = rng.uniform(0, 20, size=2)
                w, h = rng.uniform(8, 20, size=2)
                dets.append(
                    make_detection(
                        (x, y, x + w, y + h), label=int(rng.integers(0, 2)), confidence=float(rng.choice([0.5, 0.7, 0.9])), ref=str(i)
                    )
                )
            rank = sorted(range(5), key=lambda i: (-dets[i].score, i))

            def suppressed(i: int, kept: tuple[int, ...]) -> bool:
                return any(
                    rank.index(k) < rank.index(i) and dets[k].label == dets[i].label and iou(dets[k].box, dets[i].box) > 0.5 for k in kept
                )

            consistent = [
                subset
                for r in range(6)
                for subset in itertools.combinations(range(5), r)
                if all(not suppressed(i, subset) for i in subset) and all(suppressed(i, subset) for i in range(5) if i not in subset)
            ]
            assert len(consistent) == 1
            expected = sorted(consistent[0], key=lambda i: (-dets[i].score, i))

            assert [d.feature_ref for d in per_class_nms(dets, 0.5, 100)] == [str(i) for i in expected]

    def test_kept_boxes_do_not_overlap_above_threshold(self, random_detections) -> None:
        """Test that no two survivors of one class exceed the threshold."""
        for _ in range(30):
            kept = per_class_nms(random_detections(12), 0.4, 100)
            for a, b in itertools.combinations(kept, 2):
                if a.label == b.label:
                    assert iou(a.box, b.box) <= 0.4


class TestTrajectory:
    """Tests for trajectories and volumetric IoU."""

    def test_extent_and_lookup(self) -> None:
        """Test end frame, coverage and box lookup."""
        traj = Trajectory(start_frame=3, boxes=(box(0, 0, 1, 1), box(1, 1, 2, 2)))

        assert traj.end_frame == 4
        assert traj.box_at(4) == box(1, 1, 2, 2)
        assert traj.box_at(5) is None

    def test_clip(self) -> None:
        """Test restriction to a half-open window."""
        traj = Trajectory(start_frame=0, boxes=tuple(box(i, 0, i + 1, 1) for i in range(10)))
        clipped = traj.clip(4, 7)

        assert clipped is not None
        assert clipped.start_frame == 4
        assert len(clipped.boxes) == 3
        assert traj.clip(10, 20) is None

    def test_viou_identical(self) -> None:
        """Test vIoU of a trajectory with itself."""
        traj = Trajectory(start_frame=2, boxes=(box(0, 0, 2, 2),) * 3)
        assert viou(traj, traj) == 1.0

    def test_viou_disjoint_in_time(self) -> None:
        """Test that non-overlapping extents give 0."""
        a = Trajectory(start_frame=0, boxes=(box(0, 0, 2, 2),) * 2)
        b = Trajectory(start_frame=5, boxes=(box(0, 0, 2, 2),) * 2)
        assert viou(a, b) == 0.0

    def test_viou_counts_unshared_frames(self) -> None:
        """Test that frames covered by only one trajectory enlarge the union."""
        a = Trajectory(start_frame=0, boxes=(box(0, 0, 2, 2),) * 2)
        b = Trajectory(start_frame=1, boxes=(box(0, 0, 2, 2),) * 2)
        assert viou(a, b) == pytest.approx(1 / 3)

    def test_viou_symmetric(self) -> None:
        """Test argument order does not matter."""
        a = Trajectory(start_frame=0, boxes=(box(0, 0, 2, 2), box(1, 0, 3, 2)))
        b = Trajectory(start_frame=1, boxes=(box(0, 0, 2, 2), box(0, 0, 1, 1)))
        assert viou(a, b) == viou(b, a)

    def test_viou_partial_overlap(self) -> None:
        """Test frames 0-3 against frames 2-5 with equal boxes on the shared frames."""
        small, large, tiny = box(0, 0, 2, 2), box(0, 0, 4, 4), box(0, 0, 1, 1)
        a = Trajectory(start_frame=0, boxes=(small, small, large, large))
        b = Trajectory(start_frame=2, boxes=(large, large, tiny, tiny))

        inter = sum(intersection_area(a.boxes[f], b.boxes[f - 2]) for f in (2, 3))
        union = a.volume() + b.volume() - inter
        assert viou(a, b) == pytest.approx(inter / union)
        assert viou(a, b) == pytest.approx(32 / 42)

    def test_viou_shift_invariant(self, rng: np.random.Generator) -> None:
        """Test that moving both trajectories by one frame offset or one pixel offset keeps vIoU."""

        def moved(t: Trajectory) -> Trajectory:
            return Trajectory(start_frame=t.start_frame, boxes=tuple(bx.shifted(7.0, -2.0) for bx in t.boxes))

        for _ in range(20):
            a = Trajectory(start_frame=int(rng.integers(0, 5)), boxes=tuple(box(x, 0, x + 5, 5) for x in rng.uniform(0, 4, size=6)))
            b = Trajectory(start_frame=int(rng.integers(0, 5)), boxes=tuple(box(x, 1, x + 4, 6) for x in rng.uniform(0, 4, size=4)))
            offset = int(rng.integers(1, 30))

            assert viou(a.shifted(offset), b.shifted(offset)) == pytest.approx(viou(a, b))
            assert viou(moved(a), moved(b)) == pytest.approx(viou(a, b))
