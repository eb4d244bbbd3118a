"""Pytest configuration and shared fixtures."""

import logging
from collections.abc import Callable, Generator, Sequence

import numpy as np
import pytest

from vidsgg.config import PipelineConfig
from vidsgg.geometry import BoundingBox, Detection
from vidsgg.storage import DatasetBundle
from vidsgg.synthetic import SceneSpec, generate_synthetic_scene

DetectionFactory = Callable[..., Detection]


@pytest.fixture(autouse=True)
def restore_root_logging() -> Generator[None, None, None]:
    """The CLI replaces the root handlers; put pytest's back after every test."""
    root = logging.getLogger()
    handlers = list(root.handlers)
    level = root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator for randomized property checks."""
    return np.random.default_rng(1234)


def one_hot(label: int, num_classes: int) -> tuple[float, ...]:
    return tuple(1.0 if c == label else 0.0 for c in range(num_classes))


@pytest.fixture
def make_detection() -> DetectionFactory:
    """Factory for detections from corner coordinates."""

    def factory(
        coords: Sequence[float],
        label: int = 0,
        num_classes: int = 3,
        ref: str = "f/obj",
        confidence: float = 1.0,
    ) -> Detection:
        if confidence >= 1.0:
            scores = one_hot(label, num_classes)
        else:
            rest = (1.0 - confidence) / (num_classes - 1)
            scores = tuple(confidence if c == label else rest for c in range(num_classes))
        return Detection(box=BoundingBox.from_xyxy(coords), class_scores=scores, feature_ref=ref)

    return factory


@pytest.fixture
def random_detections(rng: np.random.Generator) -> Callable[[int], list[Detection]]:
    """Factory for n random detections inside a 200 x 100 frame."""

    def factory(n: int) -> list[Detection]:
        dets = []
        for i in range(n):
            x1, y1 = rng.uniform(0, 150), rng.uniform(0, 60)
            w, h = rng.uniform(5, 50), rng.uniform(5, 40)
            label = int(rng.integers(0, 3))
            dets.append(
                Detection(box=BoundingBox.from_xyxy((x1, y1, x1 + w, y1 + h)), class_scores=one_hot(label, 3), feature_ref=f"f/obj{i}")
            )
        return dets

    return factory


@pytest.fixture(scope="session")
def small_bundle() -> DatasetBundle:
    """Five objects over eight frames: a person holding two objects plus two free objects."""
    return generate_synthetic_scene(SceneSpec(objects=5, frames=8, seed=7))


@pytest.fixture(scope="session")
def video_bundle() -> DatasetBundle:
    """Five objects over sixty frames, enough for three linking segments."""
    return generate_synthetic_scene(SceneSpec(objects=5, frames=60, seed=7))


@pytest.fixture
def default_config() -> PipelineConfig:
    """Configuration used by the synthetic-scene tests (small clip, one worker)."""
    return PipelineConfig(T=SceneSpec().T, stride_v=SceneSpec().stride_v)
