"""Temporal linking of frame-level scene graphs into video-level relations.

A video is cut into overlapping segments. Within a segment, triplets of the
sampled frames are merged onto object trajectories. Across adjacent segments,
triplets with equal categories whose subject and object trajectories agree on
the shared frames are chained greedily, highest score first.
"""

import logging
from collections import defaultdict
from collections.abc import Mapping, Sequence
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from .config import PipelineConfig
from .errors import PreconditionError
from .geometry import BoundingBox, Trajectory, viou
from .pipeline import SceneGraph

logger = logging.getLogger(__name__)

ScoreMode = Literal["average", "maximum"]
Window = tuple[int, int]
TrackAssignments = Mapping[str, Mapping[str, int]]
"""frame_id -> feature_ref -> trajectory id"""


class SegmentTriplet(BaseModel):
    """A triplet merged over the sampled frames of one segment."""

    model_config = ConfigDict(frozen=True)

    segment_id: int = Field(ge=0)
    window: Window
    subj_traj_id: int
    obj_traj_id: int
    subj_traj: Trajectory
    obj_traj: Trajectory
    subj_class: int = Field(ge=0)
    obj_class: int = Field(ge=0)
    rel_class: int = Field(ge=0)
    score: float = Field(ge=0.0)
    support: int = Field(ge=1)

    @property
    def categories(self) -> tuple[int, int, int]:
        return (self.subj_class, self.rel_class, self.obj_class)

    def order_key(self) -> tuple[float, int, int, int, int, int, int]:
        return (-self.score, self.segment_id, self.subj_traj_id, self.obj_traj_id, self.subj_class, self.obj_class, self.rel_class)


class VideoRelation(BaseModel):
    """A chain of segment triplets with concatenated trajectories."""

    model_config = ConfigDict(frozen=True)

    video_id: str
    subj_traj: Trajectory
    obj_traj: Trajectory
    subj_class: int = Field(ge=0)
    obj_class: int = Field(ge=0)
    rel_class: int = Field(ge=0)
    video_score: float = Field(ge=0.0)
    members: tuple[tuple[int, int], ...] = Field(min_length=1)
    """(segment position, index within that segment) of every chained triplet"""

    @model_validator(mode="after")
    def _members_in_time_order(self) -> "VideoRelation":
        positions = [seg for seg, _ in self.members]
        if positions != sorted(positions):
            raise ValueError("chain members must be ordered by segment")
        return self

    @property
    def categories(self) -> tuple[int, int, int]:
        return (self.subj_class, self.rel_class, self.obj_class)


def segment_windows(num_frames: int, seg_len: int, interval: int) -> list[Window]:
    """Half-open windows of ``seg_len`` frames starting every ``interval`` frames.

    The last window is cut at the end of the video; no window lies entirely
    inside its predecessor.
    """
    if seg_len < 1 or interval < 1:
        raise PreconditionError(f"segment length and interval must be positive, got {seg_len} and {interval}")
    windows: list[Window] = []
    start = 0
    while start < num_frames:
        windows.append((start, min(start + seg_len, num_frames)))
        if start + seg_len >= num_frames:
            break
        start += interval
    return windows


def quarter_sample(start: int, end: int, stride: int) -> list[int]:
    """Every ``stride``-th frame of ``[start, end)``, beginning with ``start``."""
    return list(range(start, end, stride))


def merge_segment_triplets(
    segment_id: int,
    window: Window,
    frame_graphs: Sequence[SceneGraph],
    trajs: Mapping[int, Trajectory],
    det_to_traj: TrackAssignments,
) -> list[SegmentTriplet]:
    """Group the sampled frames' triplets by trajectories and categories.

    A group seen in several frames is counted once with the summed score;
    ``support`` is the number of frames that contributed. Within one frame a
    group contributes only its best score.
    """
    scores: dict[tuple[int, int, int, int, int], float] = defaultdict(float)
    frames: dict[tuple[int, int, int, int, int], set[str]] = defaultdict(set)
    dropped = 0
    for graph in frame_graphs:
        assignment = det_to_traj.get(graph.frame_id, {})
        best: dict[tuple[int, int, int, int, int], float] = {}
        for t in graph.triplets:
            sid = assignment.get(graph.detections[t.subj_idx].feature_ref)
            oid = assignment.get(graph.detections[t.obj_idx].feature_ref)
            if sid is None or oid is None or sid not in trajs or oid not in trajs:
                dropped += 1
                continue
            key = (sid, oid, t.subj_class, t.obj_class, t.rel_class)
            best[key] = max(best.get(key, 0.0), t.score)
        for key, score in best.items():
            scores[key] += score
            frames[key].add(graph.frame_id)

    if dropped:
        logger.warning(
            f"Segment {segment_id}: dropped {dropped} triplets whose detections have no trajectory",
            extra={"stage": "link", "count": dropped},
        )

    merged: list[SegmentTriplet] = []
    for key in sorted(scores):
        sid, oid, s, o, r = key
        subj = trajs[sid].clip(*window)
        obj = trajs[oid].clip(*window)
        if subj is None or obj is None:
            logger.warning(f"Segment {segment_id}: trajectory {sid if subj is None else oid} does not reach window {window}")
            continue
        merged.append(
            SegmentTriplet(
                segment_id=segment_id,
                window=window,
                subj_traj_id=sid,
                obj_traj_id=oid,
                subj_traj=subj,
                obj_traj=obj,
                subj_class=s,
                obj_class=o,
                rel_class=r,
                score=scores[key],
                support=len(frames[key]),
            )
        )
    return merged


def _overlap_viou(a: Trajectory, b: Trajectory, window: Window) -> float:
    ca = a.clip(*window)
    cb = b.clip(*window)
    if ca is None or cb is None:
        return 0.0
    return viou(ca, cb)


def _compatible(current: SegmentTriplet, candidate: SegmentTriplet, viou_threshold: float) -> bool:
    if candidate.categories != current.categories:
        return False
    window = (candidate.window[0], current.window[1])
    if window[0] >= window[1]:
        return False
    return (
        _overlap_viou(current.subj_traj, candidate.subj_traj, window) >= viou_threshold
        and _overlap_viou(current.obj_traj, candidate.obj_traj, window) >= viou_threshold
    )


def concat_trajectories(parts: Sequence[Trajectory]) -> Trajectory:
    """Join time-ordered trajectories; earlier boxes win on shared frames and gaps repeat the last box."""
    if not parts:
        raise PreconditionError("concat_trajectories needs at least one trajectory")
    boxes: list[BoundingBox] = list(parts[0].boxes)
    start = parts[0].start_frame
    for part in parts[1:]:
        end = start + len(boxes)
        if part.start_frame > end:
            boxes.extend([boxes[-1]] * (part.start_frame - end))
            end = part.start_frame
        if part.end_frame >= end:
            boxes.extend(part.boxes[end - part.start_frame :])
    return Trajectory(start_frame=start, boxes=tuple(boxes))


def associate_segments(
    segments: Sequence[Sequence[SegmentTriplet]],
    viou_threshold: float,
    score_mode: ScoreMode,
    video_id: str = "",
) -> list[VideoRelation]:
    """Greedy association of segment triplets across adjacent segments.

    All triplets are visited once in global descending score order (ties by
    segment, trajectory ids, then classes). Each unconsumed triplet seeds a
    chain that is extended into the next segment by the best compatible
    unconsumed triplet, as long as one exists.
    """
    if not 0.0 < viou_threshold <= 1.0:
        raise PreconditionError(f"viou_threshold must be in (0, 1], got {viou_threshold}")

    order = sorted(
        ((pos, idx) for pos, seg in enumerate(segments) for idx in range(len(seg))),
        key=lambda m: (segments[m[0]][m[1]].order_key(), m),
    )
    consumed: set[tuple[int, int]] = set()
    relations: list[VideoRelation] = []
    for seed in order:
        if seed in consumed:
            continue
        consumed.add(seed)
        chain = [seed]
        pos, idx = seed
        while pos + 1 < len(segments):
            current = segments[pos][idx]
            candidates = [
                (pos + 1, j)
                for j, cand in enumerate(segments[pos + 1])
                if (pos + 1, j) not in consumed and _compatible(current, cand, viou_threshold)
            ]
            if not candidates:
                break
            best = min(candidates, key=lambda m: (segments[m[0]][m[1]].order_key(), m))
            consumed.add(best)
            chain.append(best)
            pos, idx = best

        members = [segments[p][i] for p, i in chain]
        member_scores = [m.score for m in members]
        video_score = max(member_scores) if score_mode == "maximum" else sum(member_scores) / len(member_scores)
        head = members[0]
        relations.append(
            VideoRelation(
                video_id=video_id,
                subj_traj=concat_trajectories([m.subj_traj for m in members]),
                obj_traj=concat_trajectories([m.obj_traj for m in members]),
                subj_class=head.subj_class,
                obj_class=head.obj_class,
                rel_class=head.rel_class,
                video_score=video_score,
                members=tuple(chain),
            )
        )
    return relations


def link_video(
    video_id: str,
    frame_graphs: Sequence[SceneGraph],
    trajs: Mapping[int, Trajectory],
    det_to_traj: TrackAssignments,
    config: PipelineConfig,
    num_frames: Optional[int] = None,
) -> list[VideoRelation]:
    """Segment, sample, merge and associate the frame graphs of one video."""
    by_index = {g.frame_index: g for g in frame_graphs if g.video_id == video_id}
    if num_frames is None:
        num_frames = max(by_index, default=-1) + 1
    windows = segment_windows(num_frames, config.seg_len, config.seg_interval)
    segments = []
    for seg_id, window in enumerate(windows):
        sampled = [by_index[f] for f in quarter_sample(*window, config.sample_stride) if f in by_index]
        segments.append(merge_segment_triplets(seg_id, window, sampled, trajs, det_to_traj))
    relations = associate_segments(segments, config.viou_threshold, config.score_mode, video_id)
    logger.info(
        f"Linked video {video_id}: {len(windows)} segments, {len(relations)} relations",
        extra={"video_id": video_id, "stage": "link", "count": len(relations)},
    )
    return relations
