"""Tests for frame-level and video-level evaluation."""

from collections import defaultdict

import numpy as np
import pytest

from vidsgg.constants import CONSTANTS
from vidsgg.geometry import BoundingBox, Detection, Trajectory
from vidsgg.linking import VideoRelation
from vidsgg.metrics import (
    FrameRelation,
    MetricReport,
    VideoGroundTruth,
    ap_suite,
    average_precision,
    capped_triplets,
    frame_level_report,
    match_frame,
    recall_suite,
    tagging_precision,
    video_detection_eval,
    video_level_report,
)
from vidsgg.pipeline import SceneGraph, TripletPrediction


def box(x: float, width: float = 10.0) -> BoundingBox:
    return BoundingBox(x1=x, y1=0.0, x2=x + width, y2=10.0)


def detections(*xs: float) -> tuple[Detection, ...]:
    return tuple(Detection(box=box(x), class_scores=(1.0, 0.0), feature_ref=f"d{i}") for i, x in enumerate(xs))


def pred(s: int, o: int, rel: int, score: float) -> TripletPrediction:
    return TripletPrediction(subj_idx=s, obj_idx=o, subj_class=0, obj_class=0, rel_class=rel, score=score)


def graph(frame_id: str, dets: tuple[Detection, ...], *triplets: TripletPrediction, video_id: str = "v") -> SceneGraph:
    ordered = tuple(sorted(triplets, key=TripletPrediction.sort_key))
    return SceneGraph(frame_id=frame_id, video_id=video_id, detections=dets, triplets=ordered)


def truth(frame_id: str, s_box: BoundingBox, o_box: BoundingBox, rel: int, s: int = 0, o: int = 1, video_id: str = "v") -> FrameRelation:
    return FrameRelation(
        frame_id=frame_id, video_id=video_id, subj_idx=s, obj_idx=o, subj_box=s_box, obj_box=o_box, subj_class=0, obj_class=0, rel_class=rel
    )


def steady(start: int, length: int, x: float) -> Trajectory:
    return Trajectory(start_frame=start, boxes=(box(x),) * length)


def video_pred(rel: int, score: float, subj_x: float = 0.0, video_id: str = "v") -> VideoRelation:
    return VideoRelation(
        video_id=video_id,
        subj_traj=steady(0, 10, subj_x),
        obj_traj=steady(0, 10, 50.0),
        subj_class=0,
        obj_class=0,
        rel_class=rel,
        video_score=score,
        members=((0, 0),),
    )


def video_truth(rel: int, video_id: str = "v") -> VideoGroundTruth:
    return VideoGroundTruth(video_id=video_id, subj_traj=steady(0, 10, 0.0), obj_traj=steady(0, 10, 50.0), subj_class=0, obj_class=0, rel_class=rel)


def box_iou(a: BoundingBox, b: BoundingBox) -> float:
    iw = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    ih = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = iw * ih
    union = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter
    return inter / union if union > 0 else 0.0


def brute_capped(g: SceneGraph, k_per_pair: int, frame_limit: int) -> list[TripletPrediction]:
    """Keep a triplet when fewer than k better-ranked triplets share its pair."""
    ordered = sorted(g.triplets, key=TripletPrediction.sort_key)
    kept = [
        t
        for n, t in enumerate(ordered)
        if sum(1 for u in ordered[:n] if (u.subj_idx, u.obj_idx) == (t.subj_idx, t.obj_idx)) < k_per_pair
    ]
    return kept[:frame_limit]


def brute_hit(g: SceneGraph, t: TripletPrediction, gt: FrameRelation, hit_iou: float) -> bool:
    return (
        (t.subj_class, t.rel_class, t.obj_class) == (gt.subj_class, gt.rel_class, gt.obj_class)
        and box_iou(g.detections[t.subj_idx].box, gt.subj_box) >= hit_iou
        and box_iou(g.detections[t.obj_idx].box, gt.obj_box) >= hit_iou
    )


def brute_match(g: SceneGraph, ranked: list[TripletPrediction], gts: list[FrameRelation], hit_iou: float) -> list[int]:
    taken: set[int] = set()
    out = []
    for t in ranked:
        free = [n for n, gt in enumerate(gts) if n not in taken and brute_hit(g, t, gt, hit_iou)]
        if free:
            taken.add(free[0])
        out.append(free[0] if free else -1)
    return out


def brute_ap(hits: list[bool], num_gt: int) -> float:
    """Sum over hits of the best precision at that rank or deeper, per ground truth."""
    if num_gt == 0 or not hits:
        return 0.0
    precision = [sum(hits[: n + 1]) / (n + 1) for n in range(len(hits))]
    return sum(max(precision[n:]) for n, hit in enumerate(hits) if hit) / num_gt


def random_instance(rng: np.random.Generator) -> tuple[list[SceneGraph], list[FrameRelation]]:
    """At most 4 frames and 6 annotations; offsets of 3 hit at IoU 0.5, offsets of 6 miss."""
    graphs, gt = [], []
    for f in range(int(rng.integers(1, 5))):
        frame_id = f"f{f}"
        dets = detections(*(3.0 * float(rng.integers(0, 4)) for _ in range(3)))
        triplets = []
        for _ in range(int(rng.integers(0, 7))):
            s, o = (int(v) for v in rng.choice(3, size=2, replace=False))
            triplets.append(pred(s, o, int(rng.integers(0, 3)), float(rng.choice([0.2, 0.5, 0.8]))))
        graphs.append(graph(frame_id, dets, *triplets))
        for _ in range(min(6 - len(gt), int(rng.integers(0, 3)))):
            gt.append(truth(frame_id, box(3.0 * float(rng.integers(0, 4))), box(3.0 * float(rng.integers(0, 4))), int(rng.integers(0, 3))))
    return graphs, gt


class TestAveragePrecision:
    """Tests for all-points interpolated AP."""

    def test_hit_miss_hit(self) -> None:
        """Test ranking [hit, miss, hit] against two ground truths."""
        assert average_precision([True, False, True], 2) == pytest.approx(0.8333333, abs=1e-6)

    def test_all_hits(self) -> None:
        """Test that a perfect ranking scores 1."""
        assert average_precision([True, True], 2) == 1.0

    def test_alternating(self) -> None:
        """Test that precision 1/2 at every recall step gives 0.5."""
        assert average_precision([False, True, False, True, False, True], 3) == pytest.approx(0.5)

    def test_empty(self) -> None:
        """Test that no predictions or no ground truth give 0."""
        assert average_precision([], 3) == 0.0
        assert average_precision([True], 0) == 0.0


class TestCappedTriplets:
    """Tests for the per-pair and per-frame caps."""

    def test_per_pair_cap(self) -> None:
        """Test that each pair keeps its k best predictions."""
        g = graph("f", detections(0, 50), pred(0, 1, 0, 0.9), pred(0, 1, 1, 0.8), pred(0, 1, 2, 0.7), pred(1, 0, 0, 0.6))
        kept = capped_triplets(g, 2, 50)
        assert [(t.subj_idx, t.rel_class) for t in kept] == [(0, 0), (0, 1), (1, 0)]

    def test_frame_limit(self) -> None:
        """Test the per-frame cap after the per-pair cap."""
        g = graph("f", detections(0, 50), pred(0, 1, 0, 0.9), pred(0, 1, 1, 0.8), pred(1, 0, 0, 0.6))
        assert len(capped_triplets(g, 6, 2)) == 2

    def test_matches_rank_count_oracle(self, rng: np.random.Generator) -> None:
        """Test the 6, 7 and 20 per-pair caps under the 50-triplet frame limit."""
        differ = 0
        for _ in range(30):
            triplets = [
                pred(i, j, rel, round(float(rng.uniform(0.0, 1.0)), 1))
                for i in range(4)
                for j in range(4)
                if i != j
                for rel in range(10)
                if rng.random() < 0.8
            ]
            g = graph("f", detections(0, 20, 40, 60), *triplets)

            limit = CONSTANTS.frame_limit
            for k_per_pair in (*CONSTANTS.k_per_pair_ag, CONSTANTS.k_per_pair_vidvrd):
                assert capped_triplets(g, k_per_pair, limit) == brute_capped(g, k_per_pair, limit)
            differ += capped_triplets(g, 6, limit) != capped_triplets(g, 7, limit)
        assert differ > 0


class TestRecallSuite:
    """Tests for Recall@K and mean Recall@K."""

    def test_perfect_predictions(self) -> None:
        """Test that predicting the ground truth gives full recall."""
        gt = [truth("f", box(0), box(50), 0), truth("f", box(0), box(50), 1)]
        g = graph("f", detections(0, 50), pred(0, 1, 0, 0.9), pred(0, 1, 1, 0.8))

        report = recall_suite([g], gt, [1, 2], 6, 50, 0.5)

        assert report["R@1"] == 0.5
        assert report["R@2"] == 1.0
        assert report["mR@2"] == 1.0
        assert report.per_class["mR@1"] == {0: 1.0, 1: 0.0}

    def test_empty_predictions(self) -> None:
        """Test that a frame without predictions scores 0."""
        report = recall_suite([], [truth("f", box(0), box(50), 0)], [20], 6, 50, 0.5)
        assert report["R@20"] == 0.0

    def test_near_miss_iou(self) -> None:
        """Test the hit threshold on both sides of 0.5."""
        gt = [truth("f", box(0), box(50), 0)]
        # heights chosen so the IoU with the ground-truth box is 0.49 and 0.51
        miss = Detection(box=BoundingBox(x1=0, y1=0, x2=10, y2=10 / 0.49), class_scores=(1.0, 0.0), feature_ref="m")
        hit = Detection(box=BoundingBox(x1=0, y1=0, x2=10, y2=10 / 0.51), class_scores=(1.0, 0.0), feature_ref="h")
        obj = detections(50)[0]

        assert recall_suite([graph("f", (miss, obj), pred(0, 1, 0, 0.9))], gt, [1], 6, 50, 0.5)["R@1"] == 0.0
        assert recall_suite([graph("f", (hit, obj), pred(0, 1, 0, 0.9))], gt, [1], 6, 50, 0.5)["R@1"] == 1.0

    def test_duplicates_match_once(self) -> None:
        """Test that repeated predictions do not raise recall above the ground-truth count."""
        gt = [truth("f", box(0), box(50), 0), truth("f", box(0), box(50), 1)]
        g = graph("f", detections(0, 50, 1), pred(0, 1, 0, 0.9), pred(2, 1, 0, 0.8))

        assert recall_suite([g], gt, [5], 6, 50, 0.5)["R@5"] == 0.5

    def test_recall_monotone_in_k(self) -> None:
        """Test that larger K never lowers recall."""
        gt = [truth("f", box(0), box(50), r) for r in range(3)]
        g = graph("f", detections(0, 50), pred(0, 1, 5, 0.99), pred(0, 1, 0, 0.9), pred(0, 1, 1, 0.5), pred(0, 1, 2, 0.1))
        report = recall_suite([g], gt, [1, 2, 3, 4], 6, 50, 0.5)
        values = [report[f"R@{k}"] for k in (1, 2, 3, 4)]

        assert values == sorted(values)
        assert values[-1] == 1.0

    def test_per_pair_cap_applies(self) -> None:
        """Test that predictions beyond k per pair are not counted."""
        gt = [truth("f", box(0), box(50), 2)]
        g = graph("f", detections(0, 50), pred(0, 1, 0, 0.9), pred(0, 1, 1, 0.8), pred(0, 1, 2, 0.7))

        assert recall_suite([g], gt, [50], 2, 50, 0.5)["R@50"] == 0.0
        assert recall_suite([g], gt, [50], 3, 50, 0.5)["R@50"] == 1.0

    def test_frames_without_truth_excluded(self) -> None:
        """Test that frames without annotations do not dilute the mean."""
        gt = [truth("a", box(0), box(50), 0)]
        graphs = [graph("a", detections(0, 50), pred(0, 1, 0, 0.9)), graph("b", detections(0, 50), pred(0, 1, 0, 0.9))]
        assert recall_suite(graphs, gt, [1], 6, 50, 0.5)["R@1"] == 1.0

    def test_per_video_macro(self) -> None:
        """Test the video macro average against the frame macro average."""
        gt = [truth("a", box(0), box(50), 0, video_id="v1"), truth("b", box(0), box(50), 0, video_id="v1"), truth("c", box(0), box(50), 0, video_id="v2")]
        graphs = [graph("a", detections(0, 50), pred(0, 1, 0, 0.9), video_id="v1"), graph("c", detections(0, 50), pred(0, 1, 0, 0.9), video_id="v2")]
        report = recall_suite(graphs, gt, [1], 6, 50, 0.5)

        assert report["R@1"] == pytest.approx(2 / 3)
        assert report["R@1/per-video"] == pytest.approx(0.75)


class TestAPSuite:
    """Tests for relation-class AP."""

    def test_perfect(self) -> None:
        """Test that exact predictions give mAP 1."""
        gt = [truth("f", box(0), box(50), 0)]
        report = ap_suite([graph("f", detections(0, 50), pred(0, 1, 0, 0.9))], gt, 6, 50, 0.5)

        assert report["mAP_rel"] == 1.0
        assert report["wmAP_rel"] == 1.0

    def test_mean_and_weighted_mean(self) -> None:
        """Test classes with AP 1 (one truth) and 0.5 (three truths)."""
        dets = detections(0, 50, 100, 150, 200, 250)
        gt = [
            truth("f", box(50), box(0), 0, s=1, o=0),
            truth("f", box(0), box(50), 1, s=0, o=1),
            truth("f", box(50), box(100), 1, s=1, o=2),
            truth("f", box(0), box(100), 1, s=0, o=2),
        ]
        g = graph(
            "f",
            dets,
            pred(1, 0, 0, 0.95),
            pred(3, 4, 1, 0.9),
            pred(0, 1, 1, 0.8),
            pred(4, 5, 1, 0.7),
            pred(1, 2, 1, 0.6),
            pred(3, 5, 1, 0.5),
            pred(0, 2, 1, 0.4),
        )

        report = ap_suite([g], gt, 6, 50, 0.5)

        assert report.per_class["AP_rel"] == {0: 1.0, 1: pytest.approx(0.5)}
        assert report["mAP_rel"] == pytest.approx(0.75)
        assert report["wmAP_rel"] == pytest.approx(0.625)

    def test_no_truth(self) -> None:
        """Test that no annotations give zeros."""
        report = ap_suite([graph("f", detections(0, 50), pred(0, 1, 0, 0.9))], [], 6, 50, 0.5)
        assert report["mAP_rel"] == 0.0

    def test_frame_report_merges_both(self) -> None:
        """Test that the frame report carries recall and AP keys."""
        gt = [truth("f", box(0), box(50), 0)]
        report = frame_level_report([graph("f", detections(0, 50), pred(0, 1, 0, 0.9))], gt, [10, 20], 6, 50, 0.5)

        assert {"R@10", "R@20", "mR@10", "mAP_rel", "wmAP_rel"} <= set(report.values)
        assert report.as_percentages()["R@20"] == 100.0


class TestBruteForceAgreement:
    """Frame metrics against direct recomputation on 100 random tiny instances."""

    def test_match_frame(self, rng: np.random.Generator) -> None:
        """Test the greedy matcher frame by frame."""
        for _ in range(100):
            graphs, gt = random_instance(rng)
            for g in graphs:
                gts = [r for r in gt if r.frame_id == g.frame_id]
                ranked = capped_triplets(g, 6, 50)
                assert match_frame(g, ranked, gts, 0.5) == brute_match(g, ranked, gts, 0.5)

    def test_recall_suite(self, rng: np.random.Generator) -> None:
        """Test R@K as the mean over annotated frames of the matched fraction."""
        for _ in range(100):
            graphs, gt = random_instance(rng)
            report = recall_suite(graphs, gt, [1, 3, 20], 2, 50, 0.5)
            for k in (1, 3, 20):
                recalls = []
                for g in graphs:
                    gts = [r for r in gt if r.frame_id == g.frame_id]
                    if gts:
                        matched = brute_match(g, brute_capped(g, 2, 50)[:k], gts, 0.5)
                        recalls.append(len([m for m in matched if m >= 0]) / len(gts))
                assert report[f"R@{k}"] == pytest.approx(float(np.mean(recalls)) if recalls else 0.0)

    def test_ap_suite(self, rng: np.random.Generator) -> None:
        """Test mAP_rel and wmAP_rel from pooled, ranked predictions per relation class."""
        for _ in range(100):
            graphs, gt = random_instance(rng)
            by_id = {g.frame_id: g for g in graphs}
            counts = defaultdict(int)
            for r in gt:
                counts[r.rel_class] += 1

            table = {}
            for rel in sorted(counts):
                pooled = [(fid, t) for fid in sorted(by_id) for t in brute_capped(by_id[fid], 6, 50) if t.rel_class == rel]
                pooled.sort(key=lambda item: (-item[1].score, item[0], item[1].subj_idx, item[1].obj_idx))
                taken: set[int] = set()
                hits = []
                for fid, t in pooled:
                    free = [n for n, r in enumerate(gt) if n not in taken and r.frame_id == fid and brute_hit(by_id[fid], t, r, 0.5)]
                    if free:
                        taken.add(free[0])
                    hits.append(bool(free))
                table[rel] = brute_ap(hits, counts[rel])

            report = ap_suite(graphs, gt, 6, 50, 0.5)
            assert report["mAP_rel"] == pytest.approx(float(np.mean(list(table.values()))) if table else 0.0)
            total = sum(counts.values())
            assert report["wmAP_rel"] == pytest.approx(sum(counts[c] * ap for c, ap in table.items()) / total if total else 0.0)


class TestVideoDetection:
    """Tests for video relation detection."""

    def test_perfect(self) -> None:
        """Test that copying the ground truth scores 1."""
        gt = [video_truth(0), video_truth(1)]
        preds = {"v": [video_pred(0, 0.9), video_pred(1, 0.8)]}
        report = video_detection_eval(preds, gt, 0.5, [50, 100])

        assert report["mAP"] == 1.0
        assert report["R@50"] == 1.0

    def test_hit_miss_hit(self) -> None:
        """Test AP of a ranking with one wrong trajectory in the middle."""
        gt = [video_truth(0), video_truth(1)]
        preds = {"v": [video_pred(0, 0.9), video_pred(1, 0.8, subj_x=8.0), video_pred(1, 0.7)]}
        assert video_detection_eval(preds, gt, 0.5, [50])["mAP"] == pytest.approx(0.8333333, abs=1e-6)

    def test_mean_over_videos(self) -> None:
        """Test macro averaging of per-video AP."""
        gt = [video_truth(0, "a"), video_truth(0, "b")]
        preds = {"a": [video_pred(0, 0.9, video_id="a")], "b": [video_pred(0, 0.9, subj_x=8.0, video_id="b"), video_pred(0, 0.5, video_id="b")]}
        assert video_detection_eval(preds, gt, 0.5, [50])["mAP"] == pytest.approx(0.75)

    def test_each_truth_matched_once(self) -> None:
        """Test that a duplicate prediction is a false positive."""
        gt = [video_truth(0)]
        preds = {"v": [video_pred(0, 0.9), video_pred(0, 0.8)]}
        report = video_detection_eval(preds, gt, 0.5, [1, 2])

        assert report["mAP"] == 1.0
        assert report["R@1"] == 1.0

    def test_no_predictions(self) -> None:
        """Test that missing predictions score 0."""
        assert video_detection_eval({}, [video_truth(0)], 0.5, [50])["mAP"] == 0.0


class TestTagging:
    """Tests for relation tagging precision."""

    def test_truth_in_top_k(self) -> None:
        """Test that the top category counts when annotated."""
        report = tagging_precision({"v": [video_pred(0, 0.9), video_pred(3, 0.5)]}, [video_truth(0)], [1, 5])

        assert report["P@1"] == 1.0
        assert report["P@5"] == pytest.approx(1 / 5)

    def test_no_overlap(self) -> None:
        """Test that wrong categories score 0."""
        assert tagging_precision({"v": [video_pred(2, 0.9)]}, [video_truth(0)], [1])["P@1"] == 0.0

    def test_matches_set_intersection(self) -> None:
        """Test ten ranked categories against a set oracle."""
        preds = {"v": [video_pred(r, 1.0 - r / 20) for r in range(10)]}
        gt = [video_truth(r) for r in (0, 2, 4, 11)]
        report = tagging_precision(preds, gt, [1, 5, 10])
        for k in (1, 5, 10):
            ranked = list(range(10))[:k]
            assert report[f"P@{k}"] == pytest.approx(len(set(ranked) & {0, 2, 4, 11}) / k)

    def test_duplicates_collapse(self) -> None:
        """Test that a category counts once at its best score."""
        preds = {"v": [video_pred(1, 0.9), video_pred(1, 0.8), video_pred(0, 0.7)]}
        assert tagging_precision(preds, [video_truth(0)], [2])["P@2"] == 0.5


class TestReports:
    """Tests for report assembly."""

    def test_video_keys_prefixed(self) -> None:
        """Test that video metrics do not collide with frame metrics."""
        report = video_level_report({"v": [video_pred(0, 0.9)]}, [video_truth(0)], 0.5, [50, 100], [1, 5, 10])
        assert set(report.values) == {"vid/mAP", "vid/R@50", "vid/R@100", "vid/P@1", "vid/P@5", "vid/P@10"}

    def test_percentages(self) -> None:
        """Test conversion to percentages."""
        assert MetricReport(values={"b": 0.5, "a": 0.25}).as_percentages() == {"a": 25.0, "b": 50.0}
