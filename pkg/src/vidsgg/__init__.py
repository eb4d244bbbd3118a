"""vidsgg: hierarchical-tree video scene graph generation, temporal linking and evaluation."""

from .config import PipelineConfig, Settings
from .constants import CONSTANTS, constants
from .errors import ConfigurationError, IngestionError, PreconditionError, VidSGGError

__version__ = "0.1.0"

__all__ = [
    "CONSTANTS",
    "ConfigurationError",
    "IngestionError",
    "PipelineConfig",
    "PreconditionError",
    "Settings",
    "VidSGGError",
    "constants",
]
