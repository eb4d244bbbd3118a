"""Per-frame orchestration: detections in, frame-level scene graph out."""

import logging
import time
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from typing import TYPE_CHECKING, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .config import PipelineConfig
from .contextagg import FeatureGrid, FeatureVolume, NodeFeatures, node_input_features, spatial_propagate
from .errors import ConfigurationError, PreconditionError
from .geometry import BoundingBox, Detection, intersection_area, per_class_nms, union_box
from .hrtree import HRTree, build_hrtree, lca
from .numkernel import WeightStore, linear, roi_align
from .relhead import (
    BranchLogits,
    EmbeddingTable,
    FrequencyTable,
    fuse_scores,
    fusion_branch,
    prior_branch,
    subject_object_branch,
    visual_branch,
)

if TYPE_CHECKING:
    from .metrics import FrameRelation

logger = logging.getLogger(__name__)

Pair = tuple[int, int]


class TripletPrediction(BaseModel):
    """One scored (subject, relation, object) prediction inside a frame."""

    model_config = ConfigDict(frozen=True)

    subj_idx: int = Field(ge=0)
    obj_idx: int = Field(ge=0)
    subj_class: int = Field(ge=0)
    obj_class: int = Field(ge=0)
    rel_class: int = Field(ge=0)
    score: float = Field(ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _distinct_objects(self) -> "TripletPrediction":
        if self.subj_idx == self.obj_idx:
            raise ValueError(f"subject and object must differ, got index {self.subj_idx} twice")
        return self

    def sort_key(self) -> tuple[float, int, int, int]:
        return (-self.score, self.subj_idx, self.obj_idx, self.rel_class)


class SceneGraph(BaseModel):
    """Frame-level scene graph: the kept detections and their scored triplets."""

    model_config = ConfigDict(frozen=True)

    frame_id: str
    video_id: str
    frame_index: int = Field(0, ge=0)
    detections: tuple[Detection, ...] = ()
    triplets: tuple[TripletPrediction, ...] = ()

    @model_validator(mode="after")
    def _sorted_and_resolved(self) -> "SceneGraph":
        n = len(self.detections)
        for t in self.triplets:
            if t.subj_idx >= n or t.obj_idx >= n:
                raise ValueError(f"triplet references detection {max(t.subj_idx, t.obj_idx)} of {n}")
        keys = [t.sort_key() for t in self.triplets]
        if keys != sorted(keys):
            raise ValueError("triplets must be sorted by descending score")
        return self


class LabeledObject(BaseModel):
    """Ground-truth object of a frame: box, annotated class and the classifier's scores."""

    model_config = ConfigDict(frozen=True)

    box: BoundingBox
    label: int = Field(ge=0)
    class_scores: tuple[float, ...]
    feature_ref: str

    def as_detection(self, one_hot: bool = False) -> Detection:
        scores = self.class_scores
        if one_hot:
            scores = tuple(1.0 if c == self.label else 0.0 for c in range(len(self.class_scores)))
        return Detection(box=self.box, class_scores=scores, feature_ref=self.feature_ref)


class FrameInput(BaseModel):
    """Everything the model needs for one frame."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    frame_id: str
    video_id: str
    frame_index: int = Field(ge=0)
    frame_size: tuple[float, float]
    detections: tuple[Detection, ...] = ()
    gt_objects: tuple[LabeledObject, ...] = ()
    gt_pairs: tuple[Pair, ...] = ()
    features: dict[str, np.ndarray] = Field(default_factory=dict)
    grid: FeatureGrid
    volume: FeatureVolume

    @field_validator("gt_pairs")
    @classmethod
    def _ordered_pairs(cls, value: tuple[Pair, ...]) -> tuple[Pair, ...]:
        for s, o in value:
            if s == o:
                raise ValueError(f"ground-truth pair ({s}, {o}) relates an object to itself")
        return value


class SceneGraphModel(BaseModel):
    """Read-only parameters shared by every frame: weights, embeddings and the frequency prior."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    weights: WeightStore
    embeddings: EmbeddingTable
    frequency: FrequencyTable

    def required_parameters(self, config: PipelineConfig) -> list[str]:
        """Parameter names (MLPs by their first layer) the configured pipeline reads."""
        names = ["node.leaf_proj.weight", "node.union_proj.weight"]
        if config.temporal_mode == "attention":
            names += [f"temporal.attn.{p}" for p in ("Wq", "Wk", "Wv", "Wo")]
        elif config.temporal_mode == "difference":
            names.append("temporal.diff.weight")
        if config.context_aggregation:
            for g in range(config.groups):
                for direction in ("up", "down"):
                    names += [f"propagate.group{g}.{direction}.{p}{gate}" for p in ("W", "U", "b") for gate in ("z", "r", "h")]
            names.append("propagate.mlp.0.weight")
        if "visual" in config.branches:
            names += ["visual.reduce.weight", "visual.subj_proj.weight", "visual.obj_proj.weight", "visual.mlp.0.weight"]
        if "fusion" in config.branches:
            names.append("fusion.mlp.0.weight")
        if "subject_object" in config.branches:
            names += ["subjobj.subj.0.weight", "subjobj.obj.0.weight"]
        return names

    def validate_for(self, config: PipelineConfig, volume_steps: Optional[int] = None) -> None:
        """Fail before any frame runs when parameters or tables cannot serve ``config``."""
        missing = [name for name in self.required_parameters(config) if name not in self.weights]
        if missing:
            raise ConfigurationError(f"missing parameter: {missing[0]} ({len(missing)} missing in total)")
        if self.embeddings.num_classes != self.frequency.num_object_classes:
            raise ConfigurationError(
                f"embedding table has {self.embeddings.num_classes} classes, frequency table has {self.frequency.num_object_classes}"
            )
        if config.temporal_mode == "difference" and volume_steps is not None and volume_steps < 2:
            raise ConfigurationError("temporal difference fusion needs feature volumes with at least 2 time steps")


def enumerate_pairs(dets: Sequence[Detection], overlap_only: bool = False) -> list[Pair]:
    """All ordered pairs (i, j), i != j; with ``overlap_only`` only pairs whose boxes intersect."""
    pairs = []
    for i, a in enumerate(dets):
        for j, b in enumerate(dets):
            if i == j:
                continue
            if overlap_only and intersection_area(a.box, b.box) <= 0.0:
                continue
            pairs.append((i, j))
    return pairs


def frame_detections(frame: FrameInput, config: PipelineConfig) -> tuple[list[Detection], list[Pair]]:
    """The detections and pairs the configured evaluation mode trusts."""
    if config.mode == "sgdet":
        dets = per_class_nms(frame.detections, config.nms_iou, config.top_proposals)
        return dets, enumerate_pairs(dets, config.overlap_only)
    if config.mode == "sgcls":
        dets = [obj.as_detection() for obj in frame.gt_objects]
        return dets, enumerate_pairs(dets, config.overlap_only)
    dets = [obj.as_detection(one_hot=True) for obj in frame.gt_objects]
    for s, o in frame.gt_pairs:
        if not (0 <= s < len(dets) and 0 <= o < len(dets)):
            raise PreconditionError(f"frame {frame.frame_id}: ground-truth pair ({s}, {o}) outside {len(dets)} objects")
    return dets, sorted(set(frame.gt_pairs))


def contextual_features(
    tree: HRTree,
    dets: Sequence[Detection],
    frame: FrameInput,
    weights: WeightStore,
    config: PipelineConfig,
) -> NodeFeatures:
    """Input features of every node, propagated over the tree when context aggregation is on."""
    try:
        det_features = [frame.features[d.feature_ref] for d in dets]
    except KeyError as exc:
        raise PreconditionError(f"frame {frame.frame_id}: no feature for detection {exc.args[0]}") from None
    pool = (config.pool_size, config.pool_size)
    feats = node_input_features(
        tree, det_features, frame.grid, frame.volume, weights, temporal_mode=config.temporal_mode, heads=config.heads, pool=pool
    )
    if not config.context_aggregation:
        return feats
    return spatial_propagate(tree, feats, weights, config.groups, topdown_input=config.topdown_input)


def pair_branches(
    i: int,
    j: int,
    dets: Sequence[Detection],
    tree: HRTree,
    ctx: NodeFeatures,
    frame: FrameInput,
    model: SceneGraphModel,
    config: PipelineConfig,
) -> list[BranchLogits]:
    """Logits of every enabled classifier branch for the ordered pair (i, j)."""
    w = model.weights
    out: list[BranchLogits] = []
    if "visual" in config.branches:
        union = union_box(dets[i].box, dets[j].box).scaled(frame.grid.stride)
        rel_map = roi_align(frame.grid.tensor, union, config.pool_size, config.pool_size)
        subj_vec = linear(ctx[i], w, "visual.subj_proj")
        obj_vec = linear(ctx[j], w, "visual.obj_proj")
        out.append(visual_branch(rel_map, subj_vec, obj_vec, w))
    if "fusion" in config.branches:
        out.append(fusion_branch(dets[i].class_scores, dets[j].class_scores, model.embeddings, ctx[lca(tree, i, j)], w))
    if "subject_object" in config.branches:
        out.append(subject_object_branch(ctx[i], ctx[j], w))
    if "prior" in config.branches:
        out.append(prior_branch(dets[i].label, dets[j].label, model.frequency, config.prior_alpha))
    return out


def top_k_relations(scores: np.ndarray, k: int) -> list[tuple[int, float]]:
    """The k best relation classes by descending score, ties by class id."""
    order = np.lexsort((np.arange(scores.shape[0]), -scores))[:k]
    return [(int(r), float(scores[r])) for r in order]


def generate_frame_graph(frame: FrameInput, model: SceneGraphModel, config: PipelineConfig) -> SceneGraph:
    """Run tree construction, context aggregation and the classifier on one frame."""
    dets, pairs = frame_detections(frame, config)
    if not dets:
        return SceneGraph(frame_id=frame.frame_id, video_id=frame.video_id, frame_index=frame.frame_index)

    tree = build_hrtree(dets, frame.frame_size, config.scheme)
    ctx = contextual_features(tree, dets, frame, model.weights, config)

    triplets: list[TripletPrediction] = []
    for i, j in pairs:
        scores = fuse_scores(pair_branches(i, j, dets, tree, ctx, frame, model, config))
        for rel, score in top_k_relations(scores, config.k_per_pair):
            triplets.append(
                TripletPrediction(
                    subj_idx=i, obj_idx=j, subj_class=dets[i].label, obj_class=dets[j].label, rel_class=rel, score=score
                )
            )
    triplets.sort(key=TripletPrediction.sort_key)
    logger.debug(
        f"Frame {frame.frame_id}: {len(dets)} detections, {tree.candidate_count()} candidates, {len(triplets)} triplets",
        extra={"frame_id": frame.frame_id, "video_id": frame.video_id, "count": len(triplets)},
    )
    return SceneGraph(
        frame_id=frame.frame_id, video_id=frame.video_id, frame_index=frame.frame_index, detections=tuple(dets), triplets=tuple(triplets)
    )


def generate_video_graphs(frames: Sequence[FrameInput], model: SceneGraphModel, config: PipelineConfig) -> list[SceneGraph]:
    """Scene graphs for a batch of frames, in input order.

    Parameters are validated once up front; frames run on a thread pool when
    ``config.workers > 1``.
    """
    steps = min((f.volume.T for f in frames), default=None)
    model.validate_for(config, steps)
    started = time.perf_counter()
    if config.workers > 1 and len(frames) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            graphs = list(pool.map(lambda f: generate_frame_graph(f, model, config), frames))
    else:
        graphs = [generate_frame_graph(f, model, config) for f in frames]
    elapsed_ms = (time.perf_counter() - started) * 1000.0
    logger.info(
        f"Inferred {len(graphs)} frames",
        extra={"stage": "infer", "count": len(graphs), "duration_ms": round(elapsed_ms, 3)},
    )
    return graphs


def oracle_scene_graph(frame: FrameInput, relations: Sequence["FrameRelation"]) -> SceneGraph:
    """Scene graph that predicts exactly the annotated relations of a frame, each with score 1."""
    dets = [obj.as_detection() for obj in frame.gt_objects]
    triplets = {
        (r.subj_idx, r.obj_idx, r.rel_class): TripletPrediction(
            subj_idx=r.subj_idx, obj_idx=r.obj_idx, subj_class=r.subj_class, obj_class=r.obj_class, rel_class=r.rel_class, score=1.0
        )
        for r in relations
        if r.frame_id == frame.frame_id
    }
    ordered = sorted(triplets.values(), key=TripletPrediction.sort_key)
    return SceneGraph(
        frame_id=frame.frame_id, video_id=frame.video_id, frame_index=frame.frame_index, detections=tuple(dets), triplets=tuple(ordered)
    )
