"""Deterministic synthetic scenes with planted relations.

Object 0 is a "person". The next objects (up to ``MAX_HELD``) are held: their
boxes ride inside the person's box for the whole clip. Every remaining object
moves in its own lane below and overlaps nothing. A rule maps each
(person, held object) class pair to one or two relation classes, and a
relation is annotated in every frame where the rule's boxes overlap.

The planted weights run real random hidden layers but zero the read-out of
the visual, fusion and subject/object branches, so the frequency prior tallied
from the annotations decides the ranking.
"""

import logging
import math
from collections.abc import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .constants import CONSTANTS
from .errors import ConfigurationError
from .geometry import BoundingBox, Detection, Trajectory, intersection_area
from .metrics import FrameRelation, VideoGroundTruth
from .numkernel import WeightStore
from .pipeline import LabeledObject
from .relhead import EmbeddingTable, build_frequency_table
from .storage.bundle import DatasetBundle, feature_key, grid_key, volume_key
from .storage.models import BundleHeader, FrameRecord, TrackRecord, TrajectoryRecord

logger = logging.getLogger(__name__)

FRAME_HEIGHT = 128
MIN_FRAME_WIDTH = 128
GRID_STRIDE = 8
FEATURE_DIM = 16
GRID_CHANNELS = 8
NODE_DIM = 16
ATTENTION_DIM = 16
EMBED_DIM = 8
REDUCED_DIM = 8
HIDDEN_DIM = 16
MAX_HELD = 2
LANE_WIDTH = 24
TRUE_CLASS_SCORE = 0.9
WEIGHT_SCALE = 0.3


class RelationRule(BaseModel):
    """Relations annotated between two object classes whenever their boxes overlap."""

    model_config = ConfigDict(frozen=True)

    subj_class: int = Field(ge=0)
    obj_class: int = Field(ge=0)
    rel_classes: tuple[int, ...] = Field(min_length=1)


class SceneSpec(BaseModel):
    """Knobs of a synthetic scene."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    objects: int = Field(5, ge=0)
    frames: int = Field(60, ge=1)
    videos: int = Field(1, ge=1)
    seed: int = 0
    num_relation_classes: int = Field(4, ge=4)
    T: int = Field(CONSTANTS.T, ge=1)
    stride_v: int = Field(CONSTANTS.v, ge=1)
    groups: int = Field(CONSTANTS.default_groups, ge=1)

    @property
    def num_object_classes(self) -> int:
        return max(self.objects, 2)

    @property
    def held(self) -> int:
        return min(MAX_HELD, max(0, self.objects - 1))

    @property
    def free(self) -> int:
        return max(0, self.objects - 1 - self.held)

    @property
    def frame_size(self) -> tuple[float, float]:
        width = max(MIN_FRAME_WIDTH, LANE_WIDTH * self.free + 2 * GRID_STRIDE)
        width = GRID_STRIDE * math.ceil(width / GRID_STRIDE)
        return (float(width), float(FRAME_HEIGHT))


def relation_rules(spec: SceneSpec) -> list[RelationRule]:
    """Person -> held object rules; odd held objects carry two relations, even ones a single relation."""
    n_rel = spec.num_relation_classes
    rules = []
    for k in range(1, spec.held + 1):
        rels = ((k - 1) % n_rel, k % n_rel) if k % 2 else (k % n_rel,)
        rules.append(RelationRule(subj_class=0, obj_class=k, rel_classes=rels))
    return rules


def _f32(values: np.ndarray | float) -> np.ndarray:
    return np.asarray(values, dtype=np.float32).astype(np.float64)


def object_boxes(spec: SceneSpec, rng: np.random.Generator) -> list[list[BoundingBox]]:
    """Per object, its box in every frame."""
    n = spec.frames
    person_x0 = float(rng.uniform(4.0, 12.0))
    phases = rng.uniform(0.0, 2.0 * math.pi, size=spec.free)
    progress = [t / max(1, n - 1) for t in range(n)]

    def box(x1: float, y1: float, x2: float, y2: float) -> BoundingBox:
        return BoundingBox(x1=round(x1, 4), y1=round(y1, 4), x2=round(x2, 4), y2=round(y2, 4))

    tracks: list[list[BoundingBox]] = []
    if spec.objects == 0:
        return tracks
    person_x = [person_x0 + 16.0 * p for p in progress]
    tracks.append([box(x, 8.0, x + 56.0, 64.0) for x in person_x])
    held_offsets = [(4.0, 12.0, 24.0, 32.0), (30.0, 38.0, 50.0, 58.0)]
    for k in range(spec.held):
        dx1, y1, dx2, y2 = held_offsets[k]
        tracks.append([box(x + dx1, y1, x + dx2, y2) for x in person_x])
    for j in range(spec.free):
        base = GRID_STRIDE + LANE_WIDTH * j
        lane = []
        for t in range(n):
            drift = 3.0 * math.sin(2.0 * math.pi * t / n + float(phases[j]))
            lane.append(box(base + 4.0 + drift, 80.0, base + 20.0 + drift, 96.0))
        tracks.append(lane)
    return tracks


def class_scores(label: int, num_classes: int) -> tuple[float, ...]:
    rest = (1.0 - TRUE_CLASS_SCORE) / (num_classes - 1)
    return tuple(TRUE_CLASS_SCORE if c == label else rest for c in range(num_classes))


def render_grid(boxes: Sequence[tuple[BoundingBox, int]], frame_size: tuple[float, float]) -> np.ndarray:
    """Paint each box into its class channel (cells whose center lies inside the box)."""
    width, height = frame_size
    rows, cols = int(height) // GRID_STRIDE, int(width) // GRID_STRIDE
    grid = np.zeros((GRID_CHANNELS, rows, cols))
    cy = (np.arange(rows) + 0.5) * GRID_STRIDE
    cx = (np.arange(cols) + 0.5) * GRID_STRIDE
    for b, label in boxes:
        inside = ((cy >= b.y1) & (cy < b.y2))[:, None] & ((cx >= b.x1) & (cx < b.x2))[None, :]
        grid[label % GRID_CHANNELS][inside] = 1.0
    return grid


def detection_feature(b: BoundingBox, label: int, frame_size: tuple[float, float]) -> np.ndarray:
    width, height = frame_size
    feat = np.zeros(FEATURE_DIM)
    feat[label % (FEATURE_DIM - 4)] = 1.0
    feat[-4:] = (b.x1 / width, b.y1 / height, b.x2 / width, b.y2 / height)
    return _f32(feat)


def planted_weights(rng: np.random.Generator, groups: int, num_relation_classes: int) -> WeightStore:
    """Random hidden layers, zero read-outs for the learned branches."""
    if NODE_DIM % groups:
        raise ConfigurationError(f"node dimension {NODE_DIM} is not divisible into {groups} groups")

    def rand(*shape: int) -> np.ndarray:
        return _f32(rng.normal(0.0, WEIGHT_SCALE, size=shape))

    def zeros(*shape: int) -> np.ndarray:
        return np.zeros(shape)

    params: dict[str, np.ndarray] = {
        "node.leaf_proj.weight": rand(NODE_DIM, FEATURE_DIM),
        "node.union_proj.weight": rand(NODE_DIM, GRID_CHANNELS),
        "temporal.attn.Wq": rand(ATTENTION_DIM, NODE_DIM),
        "temporal.attn.Wk": rand(ATTENTION_DIM, GRID_CHANNELS),
        "temporal.attn.Wv": rand(ATTENTION_DIM, GRID_CHANNELS),
        "temporal.attn.Wo": rand(NODE_DIM, ATTENTION_DIM),
        "temporal.diff.weight": rand(NODE_DIM, GRID_CHANNELS),
        "propagate.mlp.0.weight": rand(NODE_DIM, 2 * NODE_DIM),
        "propagate.mlp.0.bias": rand(NODE_DIM),
        "propagate.mlp.1.weight": rand(NODE_DIM, NODE_DIM),
        "propagate.mlp.1.bias": rand(NODE_DIM),
        "visual.reduce.weight": rand(REDUCED_DIM, GRID_CHANNELS),
        "visual.subj_proj.weight": rand(REDUCED_DIM, NODE_DIM),
        "visual.obj_proj.weight": rand(REDUCED_DIM, NODE_DIM),
        "visual.mlp.0.weight": rand(HIDDEN_DIM, 3 * GRID_CHANNELS),
        "visual.mlp.0.bias": rand(HIDDEN_DIM),
        "visual.mlp.1.weight": zeros(num_relation_classes, HIDDEN_DIM),
        "visual.mlp.1.bias": zeros(num_relation_classes),
        "fusion.mlp.0.weight": rand(HIDDEN_DIM, 2 * EMBED_DIM + NODE_DIM),
        "fusion.mlp.0.bias": rand(HIDDEN_DIM),
        "fusion.mlp.1.weight": zeros(num_relation_classes, HIDDEN_DIM),
        "fusion.mlp.1.bias": zeros(num_relation_classes),
    }
    for side in ("subj", "obj"):
        params[f"subjobj.{side}.0.weight"] = rand(HIDDEN_DIM, NODE_DIM)
        params[f"subjobj.{side}.0.bias"] = rand(HIDDEN_DIM)
        params[f"subjobj.{side}.1.weight"] = zeros(num_relation_classes, HIDDEN_DIM)
        params[f"subjobj.{side}.1.bias"] = zeros(num_relation_classes)
    size = NODE_DIM // groups
    for g in range(groups):
        for direction in ("up", "down"):
            prefix = f"propagate.group{g}.{direction}"
            for gate in ("z", "r", "h"):
                params[f"{prefix}.W{gate}"] = rand(size, size)
                params[f"{prefix}.U{gate}"] = rand(size, size)
                params[f"{prefix}.b{gate}"] = rand(size)
    return WeightStore(params)


def _overlap_runs(a: Sequence[BoundingBox], b: Sequence[BoundingBox]) -> list[tuple[int, int]]:
    """Maximal half-open frame ranges where the two boxes overlap."""
    runs: list[tuple[int, int]] = []
    start = None
    for t, (ba, bb) in enumerate(zip(a, b)):
        if intersection_area(ba, bb) > 0.0:
            if start is None:
                start = t
        elif start is not None:
            runs.append((start, t))
            start = None
    if start is not None:
        runs.append((start, len(a)))
    return runs


def generate_synthetic_scene(spec: SceneSpec) -> DatasetBundle:
    """Build a complete, validated bundle for ``spec``; equal specs give byte-identical bundles."""
    n_obj = spec.num_object_classes
    n_rel = spec.num_relation_classes
    frame_size = spec.frame_size
    rules = relation_rules(spec)
    rule_map = {(r.subj_class, r.obj_class): r.rel_classes for r in rules}

    frames: list[FrameRecord] = []
    features: dict[str, np.ndarray] = {}
    trajectories: list[TrajectoryRecord] = []
    tracks: list[TrackRecord] = []
    frame_truth: list[FrameRelation] = []
    video_truth: list[VideoGroundTruth] = []
    videos: dict[str, int] = {}

    for v in range(spec.videos):
        video_id = f"vid{v:04d}"
        videos[video_id] = spec.frames
        boxes = object_boxes(spec, np.random.default_rng([spec.seed, v + 1]))
        labels = list(range(len(boxes)))
        grids = [render_grid([(boxes[k][t], labels[k]) for k in range(len(boxes))], frame_size) for t in range(spec.frames)]

        for k, track in enumerate(boxes):
            trajectories.append(TrajectoryRecord(video_id=video_id, traj_id=k, start_frame=0, boxes=tuple(track)))

        for t in range(spec.frames):
            frame_id = f"{video_id}/{t:06d}"
            objects = []
            detections = []
            assignments = {}
            for k, track in enumerate(boxes):
                ref = f"{frame_id}/obj{k}"
                scores = class_scores(labels[k], n_obj)
                objects.append(LabeledObject(box=track[t], label=labels[k], class_scores=scores, feature_ref=ref))
                detections.append(Detection(box=track[t], class_scores=scores, feature_ref=ref))
                features[feature_key(ref)] = detection_feature(track[t], labels[k], frame_size)
                assignments[ref] = k

            pairs = []
            for (s, o), rels in rule_map.items():
                if intersection_area(boxes[s][t], boxes[o][t]) <= 0.0:
                    continue
                pairs.append((s, o))
                for r in rels:
                    frame_truth.append(
                        FrameRelation(
                            frame_id=frame_id,
                            video_id=video_id,
                            subj_idx=s,
                            obj_idx=o,
                            subj_box=boxes[s][t],
                            obj_box=boxes[o][t],
                            subj_class=labels[s],
                            obj_class=labels[o],
                            rel_class=r,
                        )
                    )

            clip = [min(max(t + (i - spec.T // 2) * spec.stride_v, 0), spec.frames - 1) for i in range(spec.T)]
            features[grid_key(frame_id)] = grids[t]
            features[volume_key(frame_id)] = np.stack([grids[c] for c in clip])
            frames.append(
                FrameRecord(
                    video_id=video_id,
                    frame_index=t,
                    frame_id=frame_id,
                    detections=tuple(detections),
                    gt_objects=tuple(objects),
                    gt_pairs=tuple(sorted(pairs)),
                )
            )
            tracks.append(TrackRecord(frame_id=frame_id, assignments=assignments))

        for (s, o), rels in rule_map.items():
            for start, stop in _overlap_runs(boxes[s], boxes[o]):
                subj = Trajectory(start_frame=start, boxes=tuple(boxes[s][start:stop]))
                obj = Trajectory(start_frame=start, boxes=tuple(boxes[o][start:stop]))
                for r in rels:
                    video_truth.append(
                        VideoGroundTruth(
                            video_id=video_id, subj_traj=subj, obj_traj=obj, subj_class=labels[s], obj_class=labels[o], rel_class=r
                        )
                    )

    header = BundleHeader(
        object_classes=("person",) + tuple(f"object{k}" for k in range(1, n_obj)),
        relation_classes=tuple(f"rel{r}" for r in range(n_rel)),
        frame_size=frame_size,
        grid_stride=float(GRID_STRIDE),
        clip_T=spec.T,
        clip_stride=spec.stride_v,
        videos=videos,
    )
    weight_rng = np.random.default_rng([spec.seed, 0])
    weights = planted_weights(weight_rng, spec.groups, n_rel)
    embeddings = EmbeddingTable(matrix=_f32(weight_rng.normal(0.0, 1.0, size=(n_obj, EMBED_DIM))))
    bundle = DatasetBundle(
        header=header,
        frames=tuple(frames),
        features=features,
        weights=weights,
        embeddings=embeddings,
        frequency=build_frequency_table(frame_truth, n_obj, n_rel, source="synthetic"),
        trajectories=tuple(trajectories),
        tracks=tuple(tracks),
        frame_truth=tuple(frame_truth),
        video_truth=tuple(video_truth),
    )
    bundle.validate_references()
    logger.info(
        f"Generated synthetic scene: {spec.videos} videos, {spec.objects} objects, {spec.frames} frames, {len(frame_truth)} relations",
        extra={"stage": "synth", "count": len(frame_truth)},
    )
    return bundle
