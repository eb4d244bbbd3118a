"""Dataset bundle: a directory of record files and tensor blobs, loaded and validated as one unit."""

import hashlib
import logging
from collections import defaultdict
from pathlib import Path
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from ..contextagg import FeatureGrid, FeatureVolume
from ..errors import IngestionError
from ..geometry import Trajectory
from ..metrics import FrameRelation, VideoGroundTruth
from ..numkernel import WeightStore
from ..pipeline import FrameInput, SceneGraphModel
from ..relhead import EmbeddingTable, FrequencyTable
from .codec import decode_tensors, encode_tensors
from .jsonl import decode_jsonl, encode_jsonl
from .models import BundleHeader, FrameRecord, FrameTruth, TrackRecord, TrajectoryRecord, TruthRecord, VideoTruth, WeightEntry

logger = logging.getLogger(__name__)

HEADER_FILE = "bundle.json"
FRAMES_FILE = "frames.jsonl"
FEATURES_FILE = "features.trce"
WEIGHTS_FILE = "weights.trce"
WEIGHT_MANIFEST_FILE = "weights.jsonl"
EMBEDDINGS_FILE = "embeddings.trce"
FREQUENCY_FILE = "frequency.trce"
TRAJECTORIES_FILE = "trajectories.jsonl"
TRACKS_FILE = "det_tracks.jsonl"
TRUTH_FILE = "ground_truth.jsonl"

BUNDLE_FILES = (
    HEADER_FILE,
    FRAMES_FILE,
    FEATURES_FILE,
    WEIGHTS_FILE,
    WEIGHT_MANIFEST_FILE,
    EMBEDDINGS_FILE,
    FREQUENCY_FILE,
    TRAJECTORIES_FILE,
    TRACKS_FILE,
    TRUTH_FILE,
)


def feature_key(feature_ref: str) -> str:
    return f"feat/{feature_ref}"


def grid_key(frame_id: str) -> str:
    return f"grid/{frame_id}"


def volume_key(frame_id: str) -> str:
    return f"volume/{frame_id}"


class DatasetBundle(BaseModel):
    """Immutable in-memory bundle; every cross-file reference is checked by ``validate_references``."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    header: BundleHeader
    frames: tuple[FrameRecord, ...] = ()
    features: dict[str, np.ndarray]
    weights: WeightStore
    embeddings: EmbeddingTable
    frequency: FrequencyTable
    trajectories: tuple[TrajectoryRecord, ...] = ()
    tracks: tuple[TrackRecord, ...] = ()
    frame_truth: tuple[FrameRelation, ...] = ()
    video_truth: tuple[VideoGroundTruth, ...] = ()

    # ----- validation -----

    def validate_references(self) -> None:
        """Raise IngestionError naming the file and record for the first broken reference."""
        n_obj = self.header.num_object_classes
        n_rel = self.header.num_relation_classes
        frames: dict[str, FrameRecord] = {}
        for rec in self.frames:
            key = rec.frame_id
            if key in frames:
                raise IngestionError("duplicate frame id", source=FRAMES_FILE, locator=key)
            frames[key] = rec
            if rec.video_id not in self.header.videos:
                raise IngestionError(f"unknown video {rec.video_id}", source=FRAMES_FILE, locator=key)
            if rec.frame_index >= self.header.videos[rec.video_id]:
                raise IngestionError(f"frame index {rec.frame_index} beyond video length", source=FRAMES_FILE, locator=key)
            for name, ndim in ((grid_key(key), 3), (volume_key(key), 4)):
                arr = self.features.get(name)
                if arr is None:
                    raise IngestionError(f"missing tensor {name}", source=FEATURES_FILE, locator=key)
                if arr.ndim != ndim:
                    raise IngestionError(f"tensor {name} has rank {arr.ndim}, expected {ndim}", source=FEATURES_FILE, locator=key)
            objects = [("detection", d.feature_ref, d.class_scores) for d in rec.detections]
            objects += [("gt_object", o.feature_ref, o.class_scores) for o in rec.gt_objects]
            for kind, ref, scores in objects:
                if len(scores) != n_obj:
                    raise IngestionError(f"{kind} {ref} has {len(scores)} class scores, expected {n_obj}", source=FRAMES_FILE, locator=key)
                if feature_key(ref) not in self.features:
                    raise IngestionError(f"{kind} references missing feature {ref}", source=FRAMES_FILE, locator=key)
            for obj in rec.gt_objects:
                if obj.label >= n_obj:
                    raise IngestionError(f"gt_object {obj.feature_ref} label {obj.label} out of range", source=FRAMES_FILE, locator=key)
            for s, o in rec.gt_pairs:
                if s >= len(rec.gt_objects) or o >= len(rec.gt_objects) or s == o:
                    raise IngestionError(f"gt pair ({s}, {o}) does not name two ground-truth objects", source=FRAMES_FILE, locator=key)

        if self.embeddings.num_classes != n_obj:
            raise IngestionError(f"{self.embeddings.num_classes} embedding rows for {n_obj} object classes", source=EMBEDDINGS_FILE)
        if self.frequency.counts.shape != (n_obj, n_obj, n_rel):
            raise IngestionError(f"frequency table has shape {self.frequency.counts.shape}", source=FREQUENCY_FILE)

        trajs: dict[str, set[int]] = defaultdict(set)
        for rec in self.trajectories:
            key = f"{rec.video_id}/{rec.traj_id}"
            if rec.video_id not in self.header.videos:
                raise IngestionError(f"unknown video {rec.video_id}", source=TRAJECTORIES_FILE, locator=key)
            if rec.traj_id in trajs[rec.video_id]:
                raise IngestionError("duplicate trajectory id", source=TRAJECTORIES_FILE, locator=key)
            trajs[rec.video_id].add(rec.traj_id)

        for track in self.tracks:
            frame = frames.get(track.frame_id)
            if frame is None:
                raise IngestionError("unknown frame", source=TRACKS_FILE, locator=track.frame_id)
            refs = {d.feature_ref for d in frame.detections} | {o.feature_ref for o in frame.gt_objects}
            for ref, traj_id in track.assignments.items():
                if ref not in refs:
                    raise IngestionError(f"unknown detection {ref}", source=TRACKS_FILE, locator=track.frame_id)
                if traj_id not in trajs[frame.video_id]:
                    raise IngestionError(f"unknown trajectory {traj_id}", source=TRACKS_FILE, locator=track.frame_id)

        for rel in self.frame_truth:
            frame = frames.get(rel.frame_id)
            if frame is None or frame.video_id != rel.video_id:
                raise IngestionError("unknown frame", source=TRUTH_FILE, locator=rel.frame_id)
            if rel.subj_idx >= len(frame.gt_objects) or rel.obj_idx >= len(frame.gt_objects):
                raise IngestionError("relation indexes a missing ground-truth object", source=TRUTH_FILE, locator=rel.frame_id)
            _check_classes(rel.subj_class, rel.obj_class, rel.rel_class, n_obj, n_rel, rel.frame_id)
        for vrel in self.video_truth:
            if vrel.video_id not in self.header.videos:
                raise IngestionError("unknown video", source=TRUTH_FILE, locator=vrel.video_id)
            _check_classes(vrel.subj_class, vrel.obj_class, vrel.rel_class, n_obj, n_rel, vrel.video_id)

    # ----- views -----

    def frame_input(self, rec: FrameRecord) -> FrameInput:
        refs = [d.feature_ref for d in rec.detections] + [o.feature_ref for o in rec.gt_objects]
        stride = self.header.grid_stride
        return FrameInput(
            frame_id=rec.frame_id,
            video_id=rec.video_id,
            frame_index=rec.frame_index,
            frame_size=self.header.frame_size,
            detections=rec.detections,
            gt_objects=rec.gt_objects,
            gt_pairs=rec.gt_pairs,
            features={ref: self.features[feature_key(ref)] for ref in refs},
            grid=FeatureGrid(tensor=self.features[grid_key(rec.frame_id)], stride=stride),
            volume=FeatureVolume(tensor=self.features[volume_key(rec.frame_id)], frame_stride=stride),
        )

    def frame_inputs(self, video_id: Optional[str] = None) -> list[FrameInput]:
        return [self.frame_input(rec) for rec in self.frames if video_id is None or rec.video_id == video_id]

    def model(self) -> SceneGraphModel:
        return SceneGraphModel(weights=self.weights, embeddings=self.embeddings, frequency=self.frequency)

    def video_ids(self) -> list[str]:
        return sorted(self.header.videos)

    def trajectories_of(self, video_id: str) -> dict[int, Trajectory]:
        return {rec.traj_id: rec.trajectory() for rec in self.trajectories if rec.video_id == video_id}

    def track_map(self) -> dict[str, dict[str, int]]:
        return {track.frame_id: dict(track.assignments) for track in self.tracks}

    def counts(self) -> dict[str, int]:
        return {
            "videos": len(self.header.videos),
            "frames": len(self.frames),
            "detections": sum(len(f.detections) for f in self.frames),
            "trajectories": len(self.trajectories),
            "frame_relations": len(self.frame_truth),
            "video_relations": len(self.video_truth),
            "parameters": len(self.weights),
        }

    # ----- serialization -----

    def encode(self) -> dict[str, bytes]:
        """Byte content of every bundle file, keyed by file name."""
        truth = [FrameTruth(**rel.model_dump()) for rel in self.frame_truth]
        truth += [VideoTruth(**rel.model_dump()) for rel in self.video_truth]
        weights = dict(self.weights.items())
        return {
            HEADER_FILE: (self.header.model_dump_json(indent=2) + "\n").encode("utf-8"),
            FRAMES_FILE: encode_jsonl(self.frames),
            FEATURES_FILE: encode_tensors(self.features),
            WEIGHTS_FILE: encode_tensors(weights),
            WEIGHT_MANIFEST_FILE: encode_jsonl(WeightEntry(name=n, shape=s) for n, s in self.weights.manifest().items()),
            EMBEDDINGS_FILE: encode_tensors({"embeddings": self.embeddings.matrix}),
            FREQUENCY_FILE: encode_tensors({"counts": self.frequency.counts}),
            TRAJECTORIES_FILE: encode_jsonl(self.trajectories),
            TRACKS_FILE: encode_jsonl(self.tracks),
            TRUTH_FILE: encode_jsonl(truth),
        }

    def content_hash(self) -> str:
        return content_hash(self.encode())


def _check_classes(s: int, o: int, r: int, n_obj: int, n_rel: int, locator: str) -> None:
    if s >= n_obj or o >= n_obj or r >= n_rel:
        raise IngestionError(f"class ids ({s}, {o}, {r}) out of range", source=TRUTH_FILE, locator=locator)


def content_hash(files: dict[str, bytes]) -> str:
    """SHA-256 over file names and contents in name order."""
    digest = hashlib.sha256()
    for name in sorted(files):
        digest.update(name.encode("utf-8") + b"\0")
        digest.update(hashlib.sha256(files[name]).digest())
    return digest.hexdigest()


def save_bundle(bundle: DatasetBundle, path: Path) -> Path:
    path.mkdir(parents=True, exist_ok=True)
    for name, data in bundle.encode().items():
        (path / name).write_bytes(data)
    logger.info(f"Wrote bundle to {path}", extra={"stage": "save", "count": len(bundle.frames)})
    return path


def _read(path: Path, name: str) -> bytes:
    file = path / name
    if not file.is_file():
        raise IngestionError("file not found", source=str(file))
    return file.read_bytes()


def decode_bundle(files: dict[str, bytes]) -> DatasetBundle:
    """Build and validate a bundle from raw file contents."""
    try:
        header = BundleHeader.model_validate_json(files[HEADER_FILE])
    except ValidationError as exc:
        raise IngestionError(str(exc.errors()[0]["msg"]), source=HEADER_FILE) from None

    weights = decode_tensors(files[WEIGHTS_FILE], WEIGHTS_FILE)
    manifest = decode_jsonl(files[WEIGHT_MANIFEST_FILE], WeightEntry, WEIGHT_MANIFEST_FILE)
    declared = {entry.name: entry.shape for entry in manifest}
    for name in sorted(set(declared) | set(weights)):
        if name not in weights:
            raise IngestionError("declared parameter missing from the weight blob", source=WEIGHT_MANIFEST_FILE, locator=name)
        if name not in declared:
            raise IngestionError("parameter not declared in the manifest", source=WEIGHTS_FILE, locator=name)
        if tuple(weights[name].shape) != tuple(declared[name]):
            raise IngestionError(f"shape {weights[name].shape} differs from declared {declared[name]}", source=WEIGHTS_FILE, locator=name)

    embeddings = decode_tensors(files[EMBEDDINGS_FILE], EMBEDDINGS_FILE)
    frequency = decode_tensors(files[FREQUENCY_FILE], FREQUENCY_FILE)
    if "embeddings" not in embeddings:
        raise IngestionError("missing tensor", source=EMBEDDINGS_FILE, locator="embeddings")
    if "counts" not in frequency:
        raise IngestionError("missing tensor", source=FREQUENCY_FILE, locator="counts")
    counts = frequency["counts"]
    if not np.array_equal(counts, np.round(counts)) or np.any(counts < 0):
        raise IngestionError("frequency counts must be non-negative integers", source=FREQUENCY_FILE, locator="counts")

    truth = decode_jsonl(files[TRUTH_FILE], TruthRecord, TRUTH_FILE)
    try:
        bundle = DatasetBundle(
            header=header,
            frames=tuple(decode_jsonl(files[FRAMES_FILE], FrameRecord, FRAMES_FILE)),
            features=decode_tensors(files[FEATURES_FILE], FEATURES_FILE),
            weights=WeightStore(weights),
            embeddings=EmbeddingTable(matrix=embeddings["embeddings"]),
            frequency=FrequencyTable(counts=np.round(counts).astype(np.int64)),
            trajectories=tuple(decode_jsonl(files[TRAJECTORIES_FILE], TrajectoryRecord, TRAJECTORIES_FILE)),
            tracks=tuple(decode_jsonl(files[TRACKS_FILE], TrackRecord, TRACKS_FILE)),
            frame_truth=tuple(FrameRelation(**r.model_dump(exclude={"kind"})) for r in truth if isinstance(r, FrameTruth)),
            video_truth=tuple(VideoGroundTruth(**r.model_dump(exclude={"kind"})) for r in truth if isinstance(r, VideoTruth)),
        )
    except ValidationError as exc:
        raise IngestionError(str(exc.errors()[0]["msg"])) from None
    bundle.validate_references()
    return bundle


def load_bundle(path: Path) -> DatasetBundle:
    """Load every bundle file under ``path`` and check all cross-references before returning."""
    bundle = decode_bundle({name: _read(path, name) for name in BUNDLE_FILES})
    counts = bundle.counts()
    logger.info(
        f"Loaded bundle {path}: " + ", ".join(f"{v} {k}" for k, v in counts.items()),
        extra={"stage": "load", "count": counts["frames"]},
    )
    return bundle
