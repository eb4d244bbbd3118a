"""Target-adaptive context aggregation.

Every tree node gets an input feature (leaves from their detection feature,
relation candidates from the 2D grid over their union box, optionally fused
with the clip's temporal features). A group tree-GRU then propagates context
bottom-up and top-down, and an MLP maps the concatenated states back to the
node dimension.
"""

import logging
from collections.abc import Mapping, Sequence
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from .errors import ConfigurationError, PreconditionError
from .geometry import BoundingBox
from .hrtree import HRTree
from .numkernel import WeightStore, gru_cell, linear, mlp_forward, multi_head_attention, roi_align

logger = logging.getLogger(__name__)

NodeFeatures = dict[int, np.ndarray]
TemporalMode = Literal["attention", "difference", "none"]
TopDownInput = Literal["feature", "hidden"]


def _readonly(arr: np.ndarray) -> np.ndarray:
    out = np.array(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


class FeatureGrid(BaseModel):
    """2D feature map of the center frame (C x H x W)."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    tensor: np.ndarray
    stride: float

    @field_validator("tensor")
    @classmethod
    def _three_dims(cls, value: np.ndarray) -> np.ndarray:
        if value.ndim != 3:
            raise ValueError(f"feature grid must be C x H x W, got shape {value.shape}")
        return _readonly(value)

    @field_validator("stride")
    @classmethod
    def _positive_stride(cls, value: float) -> float:
        if value <= 0:
            raise ValueError("stride must be positive")
        return value

    def pooled(self, box: BoundingBox, pool: tuple[int, int]) -> np.ndarray:
        """RoI-align the pixel box and average-pool it to a C-vector."""
        return roi_align(self.tensor, box.scaled(self.stride), *pool).mean(axis=(1, 2))


class FeatureVolume(BaseModel):
    """Spatio-temporal feature volume of a clip (T x C x H x W)."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    tensor: np.ndarray
    frame_stride: float

    @field_validator("tensor")
    @classmethod
    def _four_dims(cls, value: np.ndarray) -> np.ndarray:
        if value.ndim != 4 or value.shape[0] < 1:
            raise ValueError(f"feature volume must be T x C x H x W with T >= 1, got shape {value.shape}")
        return _readonly(value)

    @field_validator("frame_stride")
    @classmethod
    def _positive_stride(cls, value: float) -> float:
        if value <= 0:
            raise ValueError("frame_stride must be positive")
        return value

    @property
    def T(self) -> int:
        return int(self.tensor.shape[0])


def extract_tube_features(vol: FeatureVolume, box: BoundingBox, pool: tuple[int, int]) -> np.ndarray:
    """Repeat the box along time and RoI-align it on every slice; returns T x C."""
    scaled = box.scaled(vol.frame_stride)
    return np.stack([roi_align(vol.tensor[t], scaled, *pool).mean(axis=(1, 2)) for t in range(vol.T)])


def temporal_fuse_attention(
    spatial: np.ndarray,
    tube: Sequence[np.ndarray] | np.ndarray,
    w: WeightStore,
    heads: int,
    prefix: str = "temporal.attn",
) -> np.ndarray:
    """Attend over the tube with the spatial feature as query and add the result back."""
    spatial = np.asarray(spatial, dtype=np.float64)
    if len(tube) == 0:
        raise PreconditionError("temporal attention needs a non-empty tube")
    attended = multi_head_attention(spatial, tube, tube, w, heads, prefix)
    if attended.shape != spatial.shape:
        raise ConfigurationError(f"parameter {prefix}.Wo maps to {attended.shape[0]} dims, spatial feature has {spatial.shape[0]}")
    return spatial + attended


def temporal_fuse_difference(
    vol: FeatureVolume,
    spatial: np.ndarray,
    box: BoundingBox,
    w: WeightStore,
    pool: tuple[int, int],
    prefix: str = "temporal.diff",
) -> np.ndarray:
    """Average the slice-to-slice differences, pool them over the box and add the projection."""
    if vol.T < 2:
        raise PreconditionError("temporal difference fusion needs at least 2 time steps")
    spatial = np.asarray(spatial, dtype=np.float64)
    motion_map = np.diff(vol.tensor, axis=0).mean(axis=0)
    motion = roi_align(motion_map, box.scaled(vol.frame_stride), *pool).mean(axis=(1, 2))
    projected = linear(motion, w, prefix)
    if projected.shape != spatial.shape:
        raise ConfigurationError(f"parameter {prefix}.weight maps to {projected.shape[0]} dims, spatial feature has {spatial.shape[0]}")
    return spatial + projected


def node_input_features(
    tree: HRTree,
    det_features: Sequence[np.ndarray],
    grid: FeatureGrid,
    vol: FeatureVolume,
    w: WeightStore,
    *,
    temporal_mode: TemporalMode,
    heads: int,
    pool: tuple[int, int],
) -> NodeFeatures:
    """Input feature of every node before spatial propagation."""
    feats: NodeFeatures = {}
    for node_id, node in tree.nodes.items():
        if node.is_leaf:
            feats[node_id] = linear(det_features[node_id], w, "node.leaf_proj")
            continue
        spatial = linear(grid.pooled(node.box, pool), w, "node.union_proj")
        if temporal_mode == "attention":
            tube = extract_tube_features(vol, node.box, pool)
            spatial = temporal_fuse_attention(spatial, tube, w, heads)
        elif temporal_mode == "difference":
            spatial = temporal_fuse_difference(vol, spatial, node.box, w, pool)
        feats[node_id] = spatial
    return feats


def bottom_up_states(tree: HRTree, xs: Mapping[int, np.ndarray], w: WeightStore, prefix: str) -> NodeFeatures:
    """h_v = GRU(x_v, sum of the children's states); leaves start from zero."""
    hidden = w[f"{prefix}.Uz"].shape[0]
    states: NodeFeatures = {}
    for node_id in tree.postorder():
        child_sum = np.zeros(hidden)
        for child in tree.nodes[node_id].children:
            child_sum = child_sum + states[child]
        states[node_id] = gru_cell(xs[node_id], child_sum, w, prefix)
    return states


def top_down_states(
    tree: HRTree,
    xs: Mapping[int, np.ndarray],
    up: Mapping[int, np.ndarray],
    w: WeightStore,
    prefix: str,
    topdown_input: TopDownInput = "feature",
) -> NodeFeatures:
    """h'_v = GRU(input_v, h'_parent); the root starts from zero."""
    hidden = w[f"{prefix}.Uz"].shape[0]
    states: NodeFeatures = {}
    for node_id in tree.preorder():
        parent = tree.nodes[node_id].parent
        prev = states[parent] if parent is not None else np.zeros(hidden)
        inp = xs[node_id] if topdown_input == "feature" else up[node_id]
        states[node_id] = gru_cell(inp, prev, w, prefix)
    return states


def propagate_states(
    tree: HRTree,
    feats: Mapping[int, np.ndarray],
    w: WeightStore,
    groups: int,
    prefix: str = "propagate",
    topdown_input: TopDownInput = "feature",
) -> NodeFeatures:
    """Per node, the concatenation [h_up; h_down] over all groups (group-major)."""
    if tree.is_empty:
        raise PreconditionError("spatial propagation needs a non-empty tree")
    missing = set(tree.nodes) - set(feats)
    if missing:
        raise PreconditionError(f"no input feature for nodes {sorted(missing)}")
    dims = {np.asarray(feats[n]).shape[0] for n in tree.nodes}
    if len(dims) != 1:
        raise PreconditionError(f"node features have mixed dimensions {sorted(dims)}")
    dim = dims.pop()
    if groups < 1 or dim % groups != 0:
        raise ConfigurationError(f"feature dimension {dim} is not divisible into {groups} groups")

    size = dim // groups
    parts: dict[int, list[np.ndarray]] = {n: [] for n in tree.nodes}
    for g in range(groups):
        xs = {n: np.asarray(feats[n], dtype=np.float64)[g * size : (g + 1) * size] for n in tree.nodes}
        up = bottom_up_states(tree, xs, w, f"{prefix}.group{g}.up")
        down = top_down_states(tree, xs, up, w, f"{prefix}.group{g}.down", topdown_input)
        for n in tree.nodes:
            parts[n].extend((up[n], down[n]))
    return {n: np.concatenate(parts[n]) for n in sorted(tree.nodes)}


def spatial_propagate(
    tree: HRTree,
    feats: Mapping[int, np.ndarray],
    w: WeightStore,
    groups: int,
    prefix: str = "propagate",
    topdown_input: TopDownInput = "feature",
) -> NodeFeatures:
    """Group tree-GRU propagation followed by the MLP read-out."""
    states = propagate_states(tree, feats, w, groups, prefix, topdown_input)
    return {n: mlp_forward(vec, w, f"{prefix}.mlp") for n, vec in states.items()}
