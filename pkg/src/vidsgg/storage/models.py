"""Line records of the bundle files."""

from typing import Annotated, Literal, Union

from pydantic import BaseModel, ConfigDict, Field

from ..geometry import BoundingBox, Detection, Trajectory
from ..metrics import FrameRelation, VideoGroundTruth
from ..pipeline import LabeledObject

BUNDLE_VERSION = 1


class BundleHeader(BaseModel):
    """Contents of ``bundle.json``: vocabularies, frame geometry and clip sampling."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    version: int = BUNDLE_VERSION
    object_classes: tuple[str, ...] = Field(min_length=1)
    relation_classes: tuple[str, ...] = Field(min_length=1)
    frame_size: tuple[float, float]
    grid_stride: float = Field(gt=0)
    clip_T: int = Field(ge=1)
    clip_stride: int = Field(ge=1)
    videos: dict[str, int] = Field(default_factory=dict)
    """video id -> frame count"""

    @property
    def num_object_classes(self) -> int:
        return len(self.object_classes)

    @property
    def num_relation_classes(self) -> int:
        return len(self.relation_classes)


class FrameRecord(BaseModel):
    """One line of ``frames.jsonl``."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    video_id: str
    frame_index: int = Field(ge=0)
    frame_id: str
    detections: tuple[Detection, ...] = ()
    gt_objects: tuple[LabeledObject, ...] = ()
    gt_pairs: tuple[tuple[int, int], ...] = ()


class TrajectoryRecord(BaseModel):
    """One line of ``trajectories.jsonl``."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    video_id: str
    traj_id: int
    start_frame: int = Field(ge=0)
    boxes: tuple[BoundingBox, ...] = Field(min_length=1)

    def trajectory(self) -> Trajectory:
        return Trajectory(start_frame=self.start_frame, boxes=self.boxes)


class TrackRecord(BaseModel):
    """One line of ``det_tracks.jsonl``: detection feature_ref -> trajectory id for one frame."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    frame_id: str
    assignments: dict[str, int] = Field(default_factory=dict)


class WeightEntry(BaseModel):
    """One line of ``weights.jsonl``."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str
    shape: tuple[int, ...]


class FrameTruth(FrameRelation):
    kind: Literal["frame"] = "frame"


class VideoTruth(VideoGroundTruth):
    kind: Literal["video"] = "video"


TruthRecord = Annotated[Union[FrameTruth, VideoTruth], Field(discriminator="kind")]
