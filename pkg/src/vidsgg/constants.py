"""Protocol constants shared by every stage of the pipeline.

Each value carries a short provenance note (the field description). Call sites
never hard-code these numbers: they read them from ``CONSTANTS`` or from a
``PipelineConfig`` built on top of it.
"""

from pydantic import BaseModel, ConfigDict, Field


class ProtocolConstants(BaseModel):
    """Immutable table of protocol constants with provenance notes."""

    model_config = ConfigDict(frozen=True)

    # Clip sampling
    T: int = Field(8, description="clip of T=8 neighboring frames around the center frame")
    v: int = Field(4, description="temporal stride v=4 between clip frames")

    # Detection post-processing
    top_proposals: int = Field(100, description="top 100 object proposals are kept")
    nms_iou: float = Field(0.5, description="per-class non-maximal suppression overlap threshold")

    # Matching
    hit_iou: float = Field(0.5, description="a predicted box is a hit at IoU >= 0.5 on both boxes")
    viou: float = Field(0.5, description="trajectories associate / match at vIoU >= 0.5")

    # Temporal linking
    seg_len: int = Field(30, description="30 frames for one segment")
    seg_interval: int = Field(15, description="15 frames for the interval between segment starts")
    sample_stride: int = Field(4, description="a quarter of each segment's frames is sampled for linking")

    # Evaluation caps
    k_per_pair_ag: tuple[int, ...] = Field((6, 7), description="k predictions kept per object pair, k is 6 or 7")
    k_per_pair_vidvrd: int = Field(20, description="top 20 predicted relations for each pair")
    frame_limit: int = Field(50, description="number of triplets per frame limited to 50")
    recall_ks: tuple[int, ...] = Field((10, 20, 50, 100), description="Recall@K cut-offs for frame-level evaluation")
    video_recall_ks: tuple[int, ...] = Field((50, 100), description="R@50 / R@100 of video relation detection")
    tagging_ks: tuple[int, ...] = Field((1, 5, 10), description="relation tagging P@1 / P@5 / P@10")

    # Context aggregation and classification head
    groups: tuple[int, ...] = Field((2, 4), description="group tree-GRU group numbers studied (default 4)")
    default_groups: int = Field(4, description="default group number of the spatial propagation module")
    heads: int = Field(8, description="attention heads of the temporal fusion module")
    roi_pool: int = Field(7, description="RoI Align output side length")
    prior_alpha: float = Field(1.0, description="Laplace smoothing of the statistical prior")

    def citation(self, name: str) -> str:
        """Return the provenance note attached to a constant."""
        field = type(self).model_fields.get(name)
        if field is None:
            raise KeyError(f"Unknown constant: {name}")
        return field.description or ""


CONSTANTS = ProtocolConstants()


def constants() -> ProtocolConstants:
    """Return the fixed protocol constant table."""
    return CONSTANTS
