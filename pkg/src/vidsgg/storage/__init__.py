"""Storage package: record models, tensor blobs and the dataset bundle."""

from .bundle import BUNDLE_FILES, DatasetBundle, content_hash, decode_bundle, load_bundle, save_bundle
from .codec import decode_tensors, encode_tensors, read_tensors, write_tensors
from .jsonl import read_jsonl, write_jsonl
from .models import BundleHeader, FrameRecord, TrackRecord, TrajectoryRecord, WeightEntry
from .results import read_relations, read_scene_graphs, write_relations, write_report, write_scene_graphs

__all__ = [
    # Bundle
    "BUNDLE_FILES",
    "DatasetBundle",
    "content_hash",
    "decode_bundle",
    "load_bundle",
    "save_bundle",
    # Records
    "BundleHeader",
    "FrameRecord",
    "TrackRecord",
    "TrajectoryRecord",
    "WeightEntry",
    "read_jsonl",
    "write_jsonl",
    # Tensor blobs
    "decode_tensors",
    "encode_tensors",
    "read_tensors",
    "write_tensors",
    # Results
    "read_relations",
    "read_scene_graphs",
    "write_relations",
    "write_report",
    "write_scene_graphs",
]
