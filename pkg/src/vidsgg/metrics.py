"""Frame-level and video-level evaluation.

Frame level: Recall@K and mean Recall@K under per-pair and per-frame caps,
plus per-relation-class AP (mAP_rel, wmAP_rel). Video level: relation
detection mAP and R@K with trajectory vIoU matching, and relation tagging
precision.

Every matcher is greedy in descending score order and lets each ground-truth
triplet be matched at most once.
"""

import logging
from collections import defaultdict
from collections.abc import Iterable, Mapping, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .geometry import BoundingBox, Trajectory, iou, viou
from .linking import VideoRelation
from .pipeline import SceneGraph, TripletPrediction

logger = logging.getLogger(__name__)

Categories = tuple[int, int, int]


class FrameRelation(BaseModel):
    """Annotated relation in one frame; indices point into the frame's ground-truth objects."""

    model_config = ConfigDict(frozen=True)

    frame_id: str
    video_id: str
    subj_idx: int = Field(ge=0)
    obj_idx: int = Field(ge=0)
    subj_box: BoundingBox
    obj_box: BoundingBox
    subj_class: int = Field(ge=0)
    obj_class: int = Field(ge=0)
    rel_class: int = Field(ge=0)

    @property
    def categories(self) -> Categories:
        return (self.subj_class, self.rel_class, self.obj_class)


class VideoGroundTruth(BaseModel):
    """Annotated spatio-temporal relation of one video."""

    model_config = ConfigDict(frozen=True)

    video_id: str
    subj_traj: Trajectory
    obj_traj: Trajectory
    subj_class: int = Field(ge=0)
    obj_class: int = Field(ge=0)
    rel_class: int = Field(ge=0)

    @property
    def categories(self) -> Categories:
        return (self.subj_class, self.rel_class, self.obj_class)


class MetricReport(BaseModel):
    """Named metric values in [0, 1] and per-class breakdown tables."""

    model_config = ConfigDict(frozen=True)

    values: dict[str, float] = Field(default_factory=dict)
    per_class: dict[str, dict[int, float]] = Field(default_factory=dict)

    def __getitem__(self, name: str) -> float:
        return self.values[name]

    def merged(self, other: "MetricReport") -> "MetricReport":
        return MetricReport(values={**self.values, **other.values}, per_class={**self.per_class, **other.per_class})

    def as_percentages(self) -> dict[str, float]:
        return {name: round(100.0 * value, 4) for name, value in sorted(self.values.items())}


def average_precision(hits: Sequence[bool], num_gt: int) -> float:
    """All-points interpolated AP of a ranked hit list against ``num_gt`` ground truths."""
    if num_gt <= 0 or not hits:
        return 0.0
    tp = np.asarray(hits, dtype=bool)
    cum_tp = np.cumsum(tp).astype(np.float64)
    cum_fp = np.cumsum(~tp).astype(np.float64)
    rec = cum_tp / num_gt
    prec = cum_tp / (cum_tp + cum_fp)

    mrec = np.concatenate(([0.0], rec, [1.0]))
    mpre = np.concatenate(([0.0], prec, [0.0]))
    # precision envelope
    for i in range(mpre.size - 1, 0, -1):
        mpre[i - 1] = max(mpre[i - 1], mpre[i])
    steps = np.where(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


def capped_triplets(graph: SceneGraph, k_per_pair: int, frame_limit: int) -> list[TripletPrediction]:
    """Top ``k_per_pair`` predictions per ordered pair, then the top ``frame_limit`` of the frame."""
    per_pair: dict[tuple[int, int], list[TripletPrediction]] = defaultdict(list)
    for t in sorted(graph.triplets, key=TripletPrediction.sort_key):
        bucket = per_pair[(t.subj_idx, t.obj_idx)]
        if len(bucket) < k_per_pair:
            bucket.append(t)
    kept = sorted((t for bucket in per_pair.values() for t in bucket), key=TripletPrediction.sort_key)
    return kept[:frame_limit]


def _is_hit(graph: SceneGraph, t: TripletPrediction, gt: FrameRelation, hit_iou: float) -> bool:
    if (t.subj_class, t.rel_class, t.obj_class) != gt.categories:
        return False
    return iou(graph.detections[t.subj_idx].box, gt.subj_box) >= hit_iou and iou(graph.detections[t.obj_idx].box, gt.obj_box) >= hit_iou


def match_frame(graph: SceneGraph, ranked: Sequence[TripletPrediction], gts: Sequence[FrameRelation], hit_iou: float) -> list[int]:
    """For each prediction in rank order, the index of the ground truth it matched (-1 for a miss)."""
    taken = [False] * len(gts)
    out = []
    for t in ranked:
        match = -1
        for g, gt in enumerate(gts):
            if not taken[g] and _is_hit(graph, t, gt, hit_iou):
                taken[g] = True
                match = g
                break
        out.append(match)
    return out


def _group_frames(gt: Iterable[FrameRelation]) -> dict[str, list[FrameRelation]]:
    frames: dict[str, list[FrameRelation]] = defaultdict(list)
    for rel in gt:
        frames[rel.frame_id].append(rel)
    return frames


def _empty_graph(frame_id: str, video_id: str) -> SceneGraph:
    return SceneGraph(frame_id=frame_id, video_id=video_id)


def recall_suite(
    preds: Sequence[SceneGraph],
    gt: Sequence[FrameRelation],
    ks: Sequence[int] | int,
    k_per_pair: int,
    frame_limit: int,
    hit_iou: float,
) -> MetricReport:
    """Recall@K ("image" macro over frames and "video" macro over per-video means) and mean Recall@K.

    Frames without ground truth are left out of every average.
    """
    ks = [ks] if isinstance(ks, int) else list(ks)
    graphs = {g.frame_id: g for g in preds}
    frames = _group_frames(gt)

    values: dict[str, float] = {}
    per_class: dict[str, dict[int, float]] = {}
    for k in ks:
        frame_recall: dict[str, float] = {}
        video_of: dict[str, str] = {}
        class_recalls: dict[int, list[float]] = defaultdict(list)
        for frame_id in sorted(frames):
            gts = frames[frame_id]
            graph = graphs.get(frame_id) or _empty_graph(frame_id, gts[0].video_id)
            ranked = capped_triplets(graph, k_per_pair, frame_limit)[:k]
            matches = match_frame(graph, ranked, gts, hit_iou)
            matched = {m for m in matches if m >= 0}
            frame_recall[frame_id] = len(matched) / len(gts)
            video_of[frame_id] = gts[0].video_id

            totals: dict[int, int] = defaultdict(int)
            hits: dict[int, int] = defaultdict(int)
            for g, rel in enumerate(gts):
                totals[rel.rel_class] += 1
                if g in matched:
                    hits[rel.rel_class] += 1
            for rel_class, total in totals.items():
                class_recalls[rel_class].append(hits[rel_class] / total)

        by_video: dict[str, list[float]] = defaultdict(list)
        for frame_id, recall in frame_recall.items():
            by_video[video_of[frame_id]].append(recall)

        values[f"R@{k}"] = float(np.mean(list(frame_recall.values()))) if frame_recall else 0.0
        values[f"R@{k}/per-video"] = float(np.mean([np.mean(v) for v in by_video.values()])) if by_video else 0.0
        table = {c: float(np.mean(r)) for c, r in sorted(class_recalls.items())}
        values[f"mR@{k}"] = float(np.mean(list(table.values()))) if table else 0.0
        per_class[f"mR@{k}"] = table
    return MetricReport(values=values, per_class=per_class)


def ap_suite(
    preds: Sequence[SceneGraph],
    gt: Sequence[FrameRelation],
    k_per_pair: int,
    frame_limit: int,
    hit_iou: float,
) -> MetricReport:
    """mAP_rel (mean over relation classes) and wmAP_rel (weighted by ground-truth count)."""
    graphs = {g.frame_id: g for g in preds}
    frames = _group_frames(gt)
    frame_order = {frame_id: n for n, frame_id in enumerate(sorted(set(frames) | set(graphs)))}

    gt_count: dict[int, int] = defaultdict(int)
    for rel in gt:
        gt_count[rel.rel_class] += 1

    pooled: dict[int, list[tuple[tuple[float, int, int, int, int], str, TripletPrediction]]] = defaultdict(list)
    for frame_id, graph in graphs.items():
        for t in capped_triplets(graph, k_per_pair, frame_limit):
            if t.rel_class in gt_count:
                pooled[t.rel_class].append(((-t.score, frame_order[frame_id], t.subj_idx, t.obj_idx, t.rel_class), frame_id, t))

    table: dict[int, float] = {}
    for rel_class in sorted(gt_count):
        taken: dict[str, list[bool]] = {}
        hits: list[bool] = []
        for _, frame_id, t in sorted(pooled[rel_class], key=lambda item: item[0]):
            gts = frames.get(frame_id, [])
            flags = taken.setdefault(frame_id, [False] * len(gts))
            hit = False
            for g, rel in enumerate(gts):
                if not flags[g] and _is_hit(graphs[frame_id], t, rel, hit_iou):
                    flags[g] = True
                    hit = True
                    break
            hits.append(hit)
        table[rel_class] = average_precision(hits, gt_count[rel_class])

    total = sum(gt_count.values())
    values = {
        "mAP_rel": float(np.mean(list(table.values()))) if table else 0.0,
        "wmAP_rel": sum(gt_count[c] * ap for c, ap in table.items()) / total if total else 0.0,
    }
    return MetricReport(values=values, per_class={"AP_rel": table})


def _video_hits(preds: Sequence[VideoRelation], gts: Sequence[VideoGroundTruth], viou_threshold: float) -> list[bool]:
    """Hit flags of the ranked predictions; each prediction takes the unmatched GT with the best overlap."""
    detected = [False] * len(gts)
    hits = []
    for pred in preds:
        best, best_overlap = -1, -1.0
        for g, rel in enumerate(gts):
            if detected[g] or rel.categories != pred.categories:
                continue
            overlap = min(viou(pred.subj_traj, rel.subj_traj), viou(pred.obj_traj, rel.obj_traj))
            if overlap >= viou_threshold and overlap > best_overlap:
                best, best_overlap = g, overlap
        if best >= 0:
            detected[best] = True
        hits.append(best >= 0)
    return hits


def _rank_video_relations(preds: Iterable[VideoRelation]) -> list[VideoRelation]:
    return sorted(
        preds,
        key=lambda r: (-r.video_score, r.subj_class, r.rel_class, r.obj_class, r.subj_traj.start_frame, r.obj_traj.start_frame),
    )


def video_detection_eval(
    preds: Mapping[str, Sequence[VideoRelation]],
    gt: Sequence[VideoGroundTruth],
    viou_threshold: float,
    ks: Sequence[int],
) -> MetricReport:
    """Relation detection mAP and R@K, macro-averaged over videos that have ground truth."""
    by_video: dict[str, list[VideoGroundTruth]] = defaultdict(list)
    for rel in gt:
        by_video[rel.video_id].append(rel)

    aps: dict[str, float] = {}
    recalls: dict[int, list[float]] = {k: [] for k in ks}
    for video_id in sorted(by_video):
        gts = by_video[video_id]
        ranked = _rank_video_relations(preds.get(video_id, []))
        hits = _video_hits(ranked, gts, viou_threshold)
        aps[video_id] = average_precision(hits, len(gts))
        for k in ks:
            recalls[k].append(sum(hits[:k]) / len(gts))

    values = {"mAP": float(np.mean(list(aps.values()))) if aps else 0.0}
    for k in ks:
        values[f"R@{k}"] = float(np.mean(recalls[k])) if recalls[k] else 0.0
    return MetricReport(values=values)


def tagging_precision(
    preds: Mapping[str, Sequence[VideoRelation]],
    gt: Sequence[VideoGroundTruth],
    ks: Sequence[int],
) -> MetricReport:
    """P@K over distinct predicted categories ranked by their best score; always divides by K."""
    gt_sets: dict[str, set[Categories]] = defaultdict(set)
    for rel in gt:
        gt_sets[rel.video_id].add(rel.categories)

    precisions: dict[int, list[float]] = {k: [] for k in ks}
    for video_id in sorted(gt_sets):
        best: dict[Categories, float] = {}
        for pred in preds.get(video_id, []):
            best[pred.categories] = max(best.get(pred.categories, pred.video_score), pred.video_score)
        ranked = [cat for cat, _ in sorted(best.items(), key=lambda item: (-item[1], item[0]))]
        for k in ks:
            precisions[k].append(len(set(ranked[:k]) & gt_sets[video_id]) / k)

    return MetricReport(values={f"P@{k}": float(np.mean(precisions[k])) if precisions[k] else 0.0 for k in ks})


def frame_level_report(
    preds: Sequence[SceneGraph],
    gt: Sequence[FrameRelation],
    ks: Sequence[int],
    k_per_pair: int,
    frame_limit: int,
    hit_iou: float,
) -> MetricReport:
    report = recall_suite(preds, gt, ks, k_per_pair, frame_limit, hit_iou).merged(ap_suite(preds, gt, k_per_pair, frame_limit, hit_iou))
    logger.info(f"Evaluated {len(preds)} frame graphs against {len(gt)} annotations", extra={"stage": "eval", "count": len(gt)})
    return report


def video_level_report(
    preds: Mapping[str, Sequence[VideoRelation]],
    gt: Sequence[VideoGroundTruth],
    viou_threshold: float,
    recall_ks: Sequence[int],
    tagging_ks: Sequence[int],
) -> MetricReport:
    detection = video_detection_eval(preds, gt, viou_threshold, recall_ks)
    tagging = tagging_precision(preds, gt, tagging_ks)
    renamed = MetricReport(values={f"vid/{name}": value for name, value in detection.merged(tagging).values.items()})
    logger.info(f"Evaluated {sum(len(v) for v in preds.values())} video relations", extra={"stage": "eval"})
    return renamed
