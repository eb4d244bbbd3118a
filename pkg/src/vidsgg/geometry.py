"""Box arithmetic, non-maximal suppression, trajectories and volumetric IoU."""

import logging
from collections.abc import Sequence
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .errors import PreconditionError

logger = logging.getLogger(__name__)

CLASS_SCORE_TOLERANCE = 1e-6


class BoundingBox(BaseModel):
    """Axis-aligned box in continuous pixel corner coordinates."""

    model_config = ConfigDict(frozen=True)

    x1: float
    y1: float
    x2: float
    y2: float

    @model_validator(mode="after")
    def _ordered_corners(self) -> "BoundingBox":
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError(f"box corners out of order: {self.as_tuple()}")
        return self

    @classmethod
    def from_xyxy(cls, coords: Sequence[float]) -> "BoundingBox":
        x1, y1, x2, y2 = (float(c) for c in coords)
        return cls(x1=x1, y1=y1, x2=x2, y2=y2)

    @property
    def width(self) -> float:
        return max(0.0, self.x2 - self.x1)

    @property
    def height(self) -> float:
        return max(0.0, self.y2 - self.y1)

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def scaled(self, stride: float) -> "BoundingBox":
        """Map pixel coordinates into a feature grid with the given stride."""
        return BoundingBox(x1=self.x1 / stride, y1=self.y1 / stride, x2=self.x2 / stride, y2=self.y2 / stride)

    def shifted(self, dx: float, dy: float) -> "BoundingBox":
        return BoundingBox(x1=self.x1 + dx, y1=self.y1 + dy, x2=self.x2 + dx, y2=self.y2 + dy)

    def contains(self, other: "BoundingBox") -> bool:
        return self.x1 <= other.x1 and self.y1 <= other.y1 and self.x2 >= other.x2 and self.y2 >= other.y2


def intersection_area(a: BoundingBox, b: BoundingBox) -> float:
    w = min(a.x2, b.x2) - max(a.x1, b.x1)
    h = min(a.y2, b.y2) - max(a.y1, b.y1)
    return max(0.0, w) * max(0.0, h)


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0 when the union is empty."""
    inter = intersection_area(a, b)
    union = a.area + b.area - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def union_box(a: BoundingBox, b: BoundingBox) -> BoundingBox:
    """Smallest axis-aligned box covering both inputs."""
    return BoundingBox(x1=min(a.x1, b.x1), y1=min(a.y1, b.y1), x2=max(a.x2, b.x2), y2=max(a.y2, b.y2))


def union_of(boxes: Sequence[BoundingBox]) -> BoundingBox:
    if not boxes:
        raise PreconditionError("union_of needs at least one box")
    out = boxes[0]
    for box in boxes[1:]:
        out = union_box(out, box)
    return out


class Detection(BaseModel):
    """One detected object: box, class distribution and a feature reference."""

    model_config = ConfigDict(frozen=True)

    box: BoundingBox
    class_scores: tuple[float, ...] = Field(min_length=1)
    feature_ref: str

    @field_validator("class_scores")
    @classmethod
    def _probability_vector(cls, value: tuple[float, ...]) -> tuple[float, ...]:
        if any(s < 0.0 or s > 1.0 for s in value):
            raise ValueError("class scores must lie in [0, 1]")
        if abs(sum(value) - 1.0) > CLASS_SCORE_TOLERANCE:
            raise ValueError(f"class scores must sum to 1 (got {sum(value):.8f})")
        return value

    @property
    def label(self) -> int:
        """Argmax class (first index on ties)."""
        return int(np.argmax(self.class_scores))

    @property
    def score(self) -> float:
        return float(max(self.class_scores))


def _pairwise_iou(boxes: np.ndarray, i: int, others: np.ndarray) -> np.ndarray:
    x1 = np.maximum(boxes[i, 0], boxes[others, 0])
    y1 = np.maximum(boxes[i, 1], boxes[others, 1])
    x2 = np.minimum(boxes[i, 2], boxes[others, 2])
    y2 = np.minimum(boxes[i, 3], boxes[others, 3])
    inter = np.maximum(0.0, x2 - x1) * np.maximum(0.0, y2 - y1)
    areas = np.maximum(0.0, boxes[:, 2] - boxes[:, 0]) * np.maximum(0.0, boxes[:, 3] - boxes[:, 1])
    union = areas[i] + areas[others] - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0.0)


def per_class_nms(dets: Sequence[Detection], iou_threshold: float, max_kept: int) -> list[Detection]:
    """Greedy per-class non-maximal suppression.

    The class of a detection is the argmax of its class scores. Within a class
    the highest-scoring detection suppresses every other one overlapping it by
    more than ``iou_threshold``. At most ``max_kept`` survivors are returned,
    ordered by descending score with ties broken by input index.
    """
    if not 0.0 < iou_threshold <= 1.0:
        raise PreconditionError(f"iou_threshold must be in (0, 1], got {iou_threshold}")
    if not dets:
        return []

    boxes = np.array([d.box.as_tuple() for d in dets], dtype=np.float64)
    scores = np.array([d.score for d in dets], dtype=np.float64)
    labels = np.array([d.label for d in dets], dtype=np.int64)
    index = np.arange(len(dets))

    keep: list[int] = []
    for cls_id in np.unique(labels):
        members = index[labels == cls_id]
        order = members[np.lexsort((members, -scores[members]))]
        while order.size > 0:
            i = int(order[0])
            keep.append(i)
            ovr = _pairwise_iou(boxes, i, order[1:])
            order = order[1:][ovr <= iou_threshold]

    kept = np.array(keep, dtype=np.int64)
    kept = kept[np.lexsort((kept, -scores[kept]))][:max_kept]
    logger.debug("NMS kept %d of %d detections", kept.size, len(dets))
    return [dets[int(i)] for i in kept]


class Trajectory(BaseModel):
    """Time-indexed box sequence covering contiguous frames."""

    model_config = ConfigDict(frozen=True)

    start_frame: int
    boxes: tuple[BoundingBox, ...] = Field(min_length=1)

    @property
    def end_frame(self) -> int:
        """Last covered frame (inclusive)."""
        return self.start_frame + len(self.boxes) - 1

    def covers(self, frame: int) -> bool:
        return self.start_frame <= frame <= self.end_frame

    def box_at(self, frame: int) -> Optional[BoundingBox]:
        if not self.covers(frame):
            return None
        return self.boxes[frame - self.start_frame]

    def clip(self, start: int, stop: int) -> Optional["Trajectory"]:
        """Restrict to frames in ``[start, stop)``; None when nothing is left."""
        lo = max(start, self.start_frame)
        hi = min(stop, self.end_frame + 1)
        if lo >= hi:
            return None
        return Trajectory(start_frame=lo, boxes=self.boxes[lo - self.start_frame : hi - self.start_frame])

    def shifted(self, offset: int) -> "Trajectory":
        return Trajectory(start_frame=self.start_frame + offset, boxes=self.boxes)

    def volume(self) -> float:
        return sum(b.area for b in self.boxes)


def viou(t1: Trajectory, t2: Trajectory) -> float:
    """Volumetric IoU over the union of both temporal extents.

    A trajectory contributes an empty box on frames outside its extent, so the
    denominator counts the full volume of both trajectories.
    """
    lo = max(t1.start_frame, t2.start_frame)
    hi = min(t1.end_frame, t2.end_frame)
    inter = 0.0
    for frame in range(lo, hi + 1):
        a = t1.boxes[frame - t1.start_frame]
        b = t2.boxes[frame - t2.start_frame]
        inter += intersection_area(a, b)
    union = t1.volume() + t2.volume() - inter
    if union <= 0.0:
        return 0.0
    return inter / union
