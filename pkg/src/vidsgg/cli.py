"""Command-line entry point: ``vidsgg {synth,tree,infer,link,eval,all}``."""

import argparse
import logging
import sys
from collections import defaultdict
from collections.abc import Sequence
from pathlib import Path
from typing import Any, Optional

from dotenv import load_dotenv
from pydantic import ValidationError

from .config import ALL_BRANCHES, PipelineConfig, Settings
from .errors import VidSGGError
from .hrtree import build_hrtree
from .linking import VideoRelation, link_video
from .logging_setup import configure_logging
from .metrics import FrameRelation, MetricReport, frame_level_report, video_level_report
from .pipeline import SceneGraph, frame_detections, generate_video_graphs, oracle_scene_graph
from .storage import DatasetBundle, content_hash, load_bundle, read_relations, read_scene_graphs, save_bundle
from .storage.bundle import BUNDLE_FILES
from .storage.results import (
    RELATIONS_FILE,
    REPORT_FILE,
    SCENE_GRAPHS_FILE,
    TREES_FILE,
    write_relations,
    write_report,
    write_scene_graphs,
)
from .synthetic import SceneSpec, generate_synthetic_scene

logger = logging.getLogger(__name__)

CONFIG_FIELDS = (
    "scheme",
    "groups",
    "heads",
    "temporal_mode",
    "context_aggregation",
    "topdown_input",
    "pool_size",
    "T",
    "stride_v",
    "mode",
    "overlap_only",
    "branches",
    "k_per_pair",
    "frame_limit",
    "top_proposals",
    "nms_iou",
    "hit_iou",
    "recall_ks",
    "seg_len",
    "seg_interval",
    "sample_stride",
    "viou_threshold",
    "score_mode",
    "prior_alpha",
    "workers",
    "seed",
)


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _branch_list(text: str) -> tuple[str, ...]:
    names = tuple(part.strip() for part in text.split(",") if part.strip())
    unknown = [n for n in names if n not in ALL_BRANCHES]
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown branches {unknown}; choose from {', '.join(ALL_BRANCHES)}")
    return names


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("pipeline configuration")
    group.add_argument("--scheme", type=int, choices=(1, 2), help="center selection scheme")
    group.add_argument("--groups", type=int, help="group number of the tree-GRU")
    group.add_argument("--heads", type=int, help="attention heads of temporal fusion")
    group.add_argument("--temporal-mode", dest="temporal_mode", choices=("attention", "difference", "none"))
    group.add_argument("--topdown-input", dest="topdown_input", choices=("feature", "hidden"))
    group.add_argument("--no-context", dest="context_aggregation", action="store_false", default=None, help="skip spatial propagation")
    group.add_argument("--pool-size", dest="pool_size", type=int, help="RoI align output side")
    group.add_argument("--T", dest="T", type=int, help="clip length (defaults to the bundle's)")
    group.add_argument("--stride-v", dest="stride_v", type=int, help="clip frame stride (defaults to the bundle's)")
    group.add_argument("--mode", choices=("sgdet", "sgcls", "predcls"))
    group.add_argument("--overlap-only", dest="overlap_only", action="store_true", default=None, help="only score overlapping pairs")
    group.add_argument("--branches", type=_branch_list, help="comma-separated classifier branches")
    group.add_argument("--k-per-pair", dest="k_per_pair", type=int)
    group.add_argument("--frame-limit", dest="frame_limit", type=int)
    group.add_argument("--top-proposals", dest="top_proposals", type=int)
    group.add_argument("--nms-iou", dest="nms_iou", type=float)
    group.add_argument("--hit-iou", dest="hit_iou", type=float)
    group.add_argument("--recall-ks", dest="recall_ks", type=_int_list)
    group.add_argument("--seg-len", dest="seg_len", type=int)
    group.add_argument("--seg-interval", dest="seg_interval", type=int)
    group.add_argument("--sample-stride", dest="sample_stride", type=int)
    group.add_argument("--viou", dest="viou_threshold", type=float)
    group.add_argument("--score-mode", dest="score_mode", choices=("average", "maximum"))
    group.add_argument("--prior-alpha", dest="prior_alpha", type=float)
    group.add_argument("--workers", type=int, help="frames processed in parallel")
    group.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vidsgg", description="Video scene graph generation over file-based bundles")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="write a synthetic bundle")
    synth.add_argument("--objects", type=int, default=SceneSpec.model_fields["objects"].default)
    synth.add_argument("--frames", type=int, default=SceneSpec.model_fields["frames"].default)
    synth.add_argument("--videos", type=int, default=SceneSpec.model_fields["videos"].default)
    synth.add_argument("--relations", type=int, default=SceneSpec.model_fields["num_relation_classes"].default)
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--groups", type=int, default=SceneSpec.model_fields["groups"].default)
    synth.add_argument("--T", dest="T", type=int, default=SceneSpec.model_fields["T"].default)
    synth.add_argument("--stride-v", dest="stride_v", type=int, default=SceneSpec.model_fields["stride_v"].default)
    synth.add_argument("--out", type=Path, required=True)

    for name, help_text in (
        ("tree", "dump HRTree outlines"),
        ("infer", "write frame-level scene graphs"),
        ("link", "write video-level relations"),
        ("eval", "write the metric report"),
        ("all", "infer, link and evaluate"),
    ):
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--bundle", type=Path, required=True)
        cmd.add_argument("--out", type=Path, help="output directory (default: <bundle>/results)")
        if name in ("infer", "all"):
            cmd.add_argument("--oracle", action="store_true", help="predict the annotated relations instead of running the model")
        if name in ("link", "eval"):
            cmd.add_argument("--graphs", type=Path, help=f"scene graphs file (default: <out>/{SCENE_GRAPHS_FILE})")
        if name == "eval":
            cmd.add_argument("--relations", type=Path, help=f"video relations file (default: <out>/{RELATIONS_FILE})")
        _add_config_flags(cmd)
    return parser


def resolve_config(args: argparse.Namespace, bundle: Optional[DatasetBundle] = None) -> PipelineConfig:
    """Config defaults, then the bundle's clip sampling, then explicit flags."""
    values: dict[str, Any] = {}
    if bundle is not None:
        values.update(T=bundle.header.clip_T, stride_v=bundle.header.clip_stride)
    for field in CONFIG_FIELDS:
        value = getattr(args, field, None)
        if value is not None:
            values[field] = value
    return PipelineConfig(**values)


def _echo(config: Optional[PipelineConfig], digest: str) -> None:
    if config is not None:
        print(f"config: {config.resolved()}")
    print(f"inputs: sha256:{digest}")


def _bundle_files(path: Path) -> dict[str, bytes]:
    return {name: (path / name).read_bytes() for name in BUNDLE_FILES if (path / name).is_file()}


def _input_digest(bundle_path: Path, *extra: Path) -> str:
    files = _bundle_files(bundle_path)
    for path in extra:
        files[f"input:{path.name}"] = path.read_bytes() if path.is_file() else b""
    return content_hash(files)


def run_infer(bundle: DatasetBundle, config: PipelineConfig, oracle: bool) -> list[SceneGraph]:
    frames = bundle.frame_inputs()
    if oracle:
        by_frame: dict[str, list[FrameRelation]] = defaultdict(list)
        for rel in bundle.frame_truth:
            by_frame[rel.frame_id].append(rel)
        return [oracle_scene_graph(frame, by_frame[frame.frame_id]) for frame in frames]
    return generate_video_graphs(frames, bundle.model(), config)


def run_link(bundle: DatasetBundle, graphs: Sequence[SceneGraph], config: PipelineConfig) -> list[VideoRelation]:
    tracks = bundle.track_map()
    relations: list[VideoRelation] = []
    for video_id in bundle.video_ids():
        video_graphs = [g for g in graphs if g.video_id == video_id]
        relations.extend(
            link_video(video_id, video_graphs, bundle.trajectories_of(video_id), tracks, config, num_frames=bundle.header.videos[video_id])
        )
    return relations


def run_eval(
    bundle: DatasetBundle, graphs: Sequence[SceneGraph], relations: Sequence[VideoRelation], config: PipelineConfig
) -> MetricReport:
    frame_report = frame_level_report(graphs, bundle.frame_truth, config.recall_ks, config.k_per_pair, config.frame_limit, config.hit_iou)
    by_video: dict[str, list[VideoRelation]] = defaultdict(list)
    for rel in relations:
        by_video[rel.video_id].append(rel)
    video_report = video_level_report(by_video, bundle.video_truth, config.viou_threshold, config.video_recall_ks, config.tagging_ks)
    return frame_report.merged(video_report)


def _print_report(report: MetricReport) -> None:
    for name, value in report.as_percentages().items():
        print(f"{name:>16}  {value:8.2f}")


def _write_trees(bundle: DatasetBundle, config: PipelineConfig, path: Path) -> None:
    chunks = []
    for frame in bundle.frame_inputs():
        dets, _ = frame_detections(frame, config)
        tree = build_hrtree(dets, frame.frame_size, config.scheme)
        chunks.append(
            f"# {frame.frame_id}: {len(tree.leaves)} leaves, {tree.candidate_count()} relation candidates, "
            f"{tree.pair_count()} ordered pairs, depth {tree.depth()}\n"
        )
        chunks.append(tree.to_outline())
    path.write_text("".join(chunks), encoding="utf-8")


def _run(args: argparse.Namespace) -> int:
    if args.command == "synth":
        spec = SceneSpec(
            objects=args.objects,
            frames=args.frames,
            videos=args.videos,
            seed=args.seed,
            num_relation_classes=args.relations,
            T=args.T,
            stride_v=args.stride_v,
            groups=args.groups,
        )
        bundle = generate_synthetic_scene(spec)
        save_bundle(bundle, args.out)
        print(f"spec: {spec.model_dump_json()}")
        _echo(None, bundle.content_hash())
        return 0

    out: Path = args.out or args.bundle / "results"
    graphs_path: Path = getattr(args, "graphs", None) or out / SCENE_GRAPHS_FILE
    relations_path: Path = getattr(args, "relations", None) or out / RELATIONS_FILE
    bundle = load_bundle(args.bundle)
    config = resolve_config(args, bundle)
    extra = {"link": (graphs_path,), "eval": (graphs_path, relations_path)}.get(args.command, ())
    _echo(config, _input_digest(args.bundle, *extra))
    out.mkdir(parents=True, exist_ok=True)

    if args.command == "tree":
        _write_trees(bundle, config, out / TREES_FILE)
        return 0
    if args.command in ("infer", "all"):
        graphs = run_infer(bundle, config, args.oracle)
        write_scene_graphs(out / SCENE_GRAPHS_FILE, graphs)
        if args.command == "infer":
            return 0
    else:
        graphs = read_scene_graphs(graphs_path)
    if args.command in ("link", "all"):
        relations = run_link(bundle, graphs, config)
        write_relations(out / RELATIONS_FILE, relations)
        if args.command == "link":
            return 0
    else:
        relations = read_relations(relations_path)

    report = run_eval(bundle, graphs, relations, config)
    write_report(out / REPORT_FILE, report)
    _print_report(report)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    configure_logging(Settings())
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _run(args)
    except (VidSGGError, ValidationError, OSError) as exc:
        parser.print_usage(sys.stderr)
        print(f"vidsgg {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
