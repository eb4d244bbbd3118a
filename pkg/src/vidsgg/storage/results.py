"""Result files written by the CLI: scene graphs, video relations and metric reports."""

import json
from pathlib import Path

from ..linking import VideoRelation
from ..metrics import MetricReport
from ..pipeline import SceneGraph
from .jsonl import read_jsonl, write_jsonl

SCENE_GRAPHS_FILE = "scene_graphs.jsonl"
RELATIONS_FILE = "video_relations.jsonl"
REPORT_FILE = "report.json"
TREES_FILE = "trees.txt"


def write_scene_graphs(path: Path, graphs: list[SceneGraph]) -> None:
    write_jsonl(path, graphs)


def read_scene_graphs(path: Path) -> list[SceneGraph]:
    return read_jsonl(path, SceneGraph)


def write_relations(path: Path, relations: list[VideoRelation]) -> None:
    write_jsonl(path, relations)


def read_relations(path: Path) -> list[VideoRelation]:
    return read_jsonl(path, VideoRelation)


def write_report(path: Path, report: MetricReport) -> None:
    """Flat metric -> percentage table plus per-class tables (also in percent)."""
    payload = {
        "metrics": report.as_percentages(),
        "per_class": {
            table: {str(c): round(100.0 * v, 4) for c, v in sorted(values.items())} for table, values in sorted(report.per_class.items())
        },
    }
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
