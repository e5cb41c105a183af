"""Plane-anchored signed-distance volumes for object-level scene change detection."""

from .config import ConfigError, PipelineConfig, parse_config
from .evaluation import EvaluationReport, score
from .pipeline import DetectionRun, NoPlanesError, detect_changes
from .scene_io import PointCloud, generate_scene_pair, load_point_cloud, make_scenario, save_point_cloud

__all__ = [
    "ConfigError",
    "DetectionRun",
    "EvaluationReport",
    "NoPlanesError",
    "PipelineConfig",
    "PointCloud",
    "detect_changes",
    "generate_scene_pair",
    "load_point_cloud",
    "make_scenario",
    "parse_config",
    "save_point_cloud",
    "score",
]

__version__ = "0.1.0"
