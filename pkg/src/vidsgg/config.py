"""Configuration: environment settings and the pipeline configuration model."""

import json
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .constants import CONSTANTS

Branch = Literal["visual", "fusion", "subject_object", "prior"]
ALL_BRANCHES: tuple[Branch, ...] = ("visual", "fusion", "subject_object", "prior")


class Settings(BaseSettings):
    """Process settings loaded from environment variables (log verbosity only)."""

    model_config = SettingsConfigDict(
        env_prefix="VIDSGG_",
        env_file=".env",
        env_file_encoding="utf-8",
        case_sensitive=False,
        extra="ignore",
    )

    log_level: str = "INFO"
    log_format: Literal["text", "json"] = "text"


class PipelineConfig(BaseModel):
    """Resolved configuration of one pipeline run.

    Defaults come from the protocol constant table; the CLI overrides them
    flag by flag.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    # Tree construction and context aggregation
    scheme: Literal[1, 2] = 1
    groups: int = Field(CONSTANTS.default_groups, ge=1)
    heads: int = Field(CONSTANTS.heads, ge=1)
    temporal_mode: Literal["attention", "difference", "none"] = "attention"
    context_aggregation: bool = True
    topdown_input: Literal["feature", "hidden"] = "feature"
    pool_size: int = Field(CONSTANTS.roi_pool, ge=1)

    # Clip sampling
    T: int = Field(CONSTANTS.T, ge=1)
    stride_v: int = Field(CONSTANTS.v, ge=1)

    # Inference
    mode: Literal["sgdet", "sgcls", "predcls"] = "sgdet"
    overlap_only: bool = False
    branches: tuple[Branch, ...] = ALL_BRANCHES
    prior_alpha: float = Field(CONSTANTS.prior_alpha, gt=0)
    nms_iou: float = Field(CONSTANTS.nms_iou, gt=0, le=1)
    top_proposals: int = Field(CONSTANTS.top_proposals, ge=1)
    k_per_pair: int = Field(CONSTANTS.k_per_pair_ag[0], ge=1)
    workers: int = Field(1, ge=1)

    # Linking
    seg_len: int = Field(CONSTANTS.seg_len, ge=1)
    seg_interval: int = Field(CONSTANTS.seg_interval, ge=1)
    sample_stride: int = Field(CONSTANTS.sample_stride, ge=1)
    viou_threshold: float = Field(CONSTANTS.viou, gt=0, le=1)
    score_mode: Literal["average", "maximum"] = "average"

    # Evaluation
    hit_iou: float = Field(CONSTANTS.hit_iou, gt=0, le=1)
    frame_limit: int = Field(CONSTANTS.frame_limit, ge=1)
    recall_ks: tuple[int, ...] = CONSTANTS.recall_ks
    video_recall_ks: tuple[int, ...] = CONSTANTS.video_recall_ks
    tagging_ks: tuple[int, ...] = CONSTANTS.tagging_ks

    seed: int = 0

    @field_validator("recall_ks", "video_recall_ks", "tagging_ks")
    @classmethod
    def _positive_counts(cls, value: tuple[int, ...]) -> tuple[int, ...]:
        if not value or any(k < 1 for k in value):
            raise ValueError("cut-off lists must be non-empty and every K must be >= 1")
        return tuple(sorted(set(value)))

    @field_validator("branches")
    @classmethod
    def _known_branches(cls, value: tuple[Branch, ...]) -> tuple[Branch, ...]:
        if not value:
            raise ValueError("at least one classifier branch must be enabled")
        # canonical order keeps the resolved config stable
        return tuple(b for b in ALL_BRANCHES if b in value)

    def resolved(self) -> str:
        """Canonical JSON dump used for the run echo and the content hash."""
        return json.dumps(self.model_dump(mode="json"), sort_keys=True)
