"""Four-branch relation classifier.

Each branch produces one logit per relation class; the final score of a class
is the sigmoid of the summed branch logits, independently per class.
"""

import logging
from collections.abc import Iterable, Sequence
from typing import Optional, Protocol

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator

from .errors import ConfigurationError, IngestionError, PreconditionError
from .numkernel import WeightStore, mlp_forward, sigmoid, softmax

logger = logging.getLogger(__name__)


class EmbeddingTable(BaseModel):
    """Word embedding per object class (rows)."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    matrix: np.ndarray

    @field_validator("matrix")
    @classmethod
    def _two_dims(cls, value: np.ndarray) -> np.ndarray:
        if value.ndim != 2:
            raise ValueError(f"embedding table must be 2D, got shape {value.shape}")
        out = np.array(value, dtype=np.float64)
        out.setflags(write=False)
        return out

    @property
    def num_classes(self) -> int:
        return int(self.matrix.shape[0])

    @property
    def dim(self) -> int:
        return int(self.matrix.shape[1])


class FrequencyTable(BaseModel):
    """Subject x object x relation co-occurrence counts."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    counts: np.ndarray

    @field_validator("counts")
    @classmethod
    def _non_negative(cls, value: np.ndarray) -> np.ndarray:
        if value.ndim != 3:
            raise ValueError(f"frequency table must be 3D, got shape {value.shape}")
        if np.any(value < 0):
            raise ValueError("frequency counts must be non-negative")
        out = np.array(value, dtype=np.int64)
        out.setflags(write=False)
        return out

    @classmethod
    def zeros(cls, num_object_classes: int, num_relation_classes: int) -> "FrequencyTable":
        return cls(counts=np.zeros((num_object_classes, num_object_classes, num_relation_classes), dtype=np.int64))

    @property
    def num_object_classes(self) -> int:
        return int(self.counts.shape[0])

    @property
    def num_relation_classes(self) -> int:
        return int(self.counts.shape[2])


class BranchLogits(BaseModel):
    """Relation logits produced by one branch."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    branch: str
    logits: np.ndarray

    @field_validator("logits")
    @classmethod
    def _finite_vector(cls, value: np.ndarray) -> np.ndarray:
        out = np.array(value, dtype=np.float64)
        if out.ndim != 1 or not np.all(np.isfinite(out)):
            raise ValueError("branch logits must be a finite vector")
        out.setflags(write=False)
        return out


def _cosine_map(reduced: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """Cosine similarity of every pixel vector (columns of ``reduced``) with ``vec``; 0 on zero norms."""
    dots = reduced.T @ vec
    norms = np.linalg.norm(reduced, axis=0) * np.linalg.norm(vec)
    return np.divide(dots, norms, out=np.zeros_like(dots), where=norms > 0.0)


def visual_attention_maps(
    rel_map: np.ndarray,
    subj_vec: np.ndarray,
    obj_vec: np.ndarray,
    w: WeightStore,
    prefix: str = "visual",
) -> tuple[np.ndarray, np.ndarray]:
    """Post-softmax subject and object score maps over the h*w pixels."""
    rel_map = np.asarray(rel_map, dtype=np.float64)
    channels = rel_map.shape[0]
    reduce = w.require(f"{prefix}.reduce.weight", (None, channels))
    subj_vec = np.asarray(subj_vec, dtype=np.float64)
    obj_vec = np.asarray(obj_vec, dtype=np.float64)
    if subj_vec.shape != (reduce.shape[0],) or obj_vec.shape != (reduce.shape[0],):
        raise ConfigurationError(f"parameter {prefix}.reduce.weight reduces to {reduce.shape[0]} dims, subject/object vectors do not match")
    reduced = reduce @ rel_map.reshape(channels, -1)
    return softmax(_cosine_map(reduced, subj_vec)), softmax(_cosine_map(reduced, obj_vec))


def visual_branch(
    rel_map: np.ndarray,
    subj_vec: np.ndarray,
    obj_vec: np.ndarray,
    w: WeightStore,
    prefix: str = "visual",
) -> BranchLogits:
    """Subject/object attention over the union-box relation map.

    The pooled attention feature is the attention-weighted sum of pixel
    vectors, so uniform attention reproduces the average-pooled map.
    """
    rel_map = np.asarray(rel_map, dtype=np.float64)
    att_s, att_o = visual_attention_maps(rel_map, subj_vec, obj_vec, w, prefix)
    flat = rel_map.reshape(rel_map.shape[0], -1)
    pooled = np.concatenate([flat @ att_s, flat @ att_o, flat.mean(axis=1)])
    return BranchLogits(branch="visual", logits=mlp_forward(pooled, w, f"{prefix}.mlp"))


def soft_embedding(scores: np.ndarray | Sequence[float], emb: EmbeddingTable) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.shape != (emb.num_classes,):
        raise ConfigurationError(f"class score vector has {scores.shape[0]} entries, embedding table has {emb.num_classes} rows")
    return scores @ emb.matrix


def fusion_branch(
    subj_scores: np.ndarray | Sequence[float],
    obj_scores: np.ndarray | Sequence[float],
    emb: EmbeddingTable,
    ctx_feat: np.ndarray,
    w: WeightStore,
    prefix: str = "fusion",
) -> BranchLogits:
    """Soft class embeddings of subject and object next to the LCA context feature."""
    x = np.concatenate([soft_embedding(subj_scores, emb), soft_embedding(obj_scores, emb), np.asarray(ctx_feat, dtype=np.float64)])
    return BranchLogits(branch="fusion", logits=mlp_forward(x, w, f"{prefix}.mlp"))


def subject_object_branch(subj_feat: np.ndarray, obj_feat: np.ndarray, w: WeightStore, prefix: str = "subjobj") -> BranchLogits:
    """Independent subject and object MLPs with summed logits."""
    subj = mlp_forward(subj_feat, w, f"{prefix}.subj")
    obj = mlp_forward(obj_feat, w, f"{prefix}.obj")
    if subj.shape != obj.shape:
        raise ConfigurationError(f"{prefix}.subj and {prefix}.obj produce {subj.shape[0]} and {obj.shape[0]} logits")
    return BranchLogits(branch="subject_object", logits=subj + obj)


def prior_branch(subj_class: int, obj_class: int, table: FrequencyTable, alpha: float) -> BranchLogits:
    """Laplace-smoothed log-probabilities of each relation given the class pair."""
    if alpha <= 0:
        raise PreconditionError(f"smoothing alpha must be positive, got {alpha}")
    n_obj = table.num_object_classes
    if not (0 <= subj_class < n_obj and 0 <= obj_class < n_obj):
        raise PreconditionError(f"class pair ({subj_class}, {obj_class}) outside {n_obj} object classes")
    row = table.counts[subj_class, obj_class].astype(np.float64)
    logits = np.log(row + alpha) - np.log(row.sum() + alpha * row.shape[0])
    return BranchLogits(branch="prior", logits=logits)


def fuse_logits(branches: Sequence[BranchLogits]) -> np.ndarray:
    """Elementwise sum of the branch logits (pre-sigmoid)."""
    if not branches:
        raise PreconditionError("score fusion needs at least one branch")
    lengths = {b.logits.shape[0] for b in branches}
    if len(lengths) != 1:
        raise PreconditionError(f"branches disagree on the number of relation classes: {sorted(lengths)}")
    return np.sum([b.logits for b in branches], axis=0)


def fuse_scores(branches: Sequence[BranchLogits]) -> np.ndarray:
    """Independent per-class probabilities: sigmoid of the summed logits."""
    return sigmoid(fuse_logits(branches))


class TripletClasses(Protocol):
    subj_class: int
    obj_class: int
    rel_class: int


def build_frequency_table(
    annotations: Iterable[TripletClasses],
    num_object_classes: int,
    num_relation_classes: int,
    source: Optional[str] = None,
) -> FrequencyTable:
    """Tally annotated (subject, object, relation) instances."""
    counts = np.zeros((num_object_classes, num_object_classes, num_relation_classes), dtype=np.int64)
    total = 0
    for index, ann in enumerate(annotations):
        s, o, r = ann.subj_class, ann.obj_class, ann.rel_class
        if not (0 <= s < num_object_classes and 0 <= o < num_object_classes and 0 <= r < num_relation_classes):
            locator = getattr(ann, "record_key", None) or f"record {index}"
            raise IngestionError(f"class ids ({s}, {o}, {r}) out of range", source=source, locator=locator)
        counts[s, o, r] += 1
        total += 1
    logger.info(f"Tallied {total} relation annotations into the frequency table")
    return FrequencyTable(counts=counts)
