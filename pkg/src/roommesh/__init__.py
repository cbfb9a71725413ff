"""Layout-conditioned room mesh generation from placed primitives."""

from .geometry import Camera, ColorMap, DepthMap, PointCloud, SemanticMap, TriangleMesh
from .layout import ConditionScene, Layout, build_condition_scene, parse_layout
from .pipeline import PipelineConfig, background_trajectory, run
from .raster import render

__version__ = "0.1.0"

__all__ = ["Camera", "ColorMap", "ConditionScene", "DepthMap", "Layout", "PipelineConfig", "PointCloud",
           "SemanticMap", "TriangleMesh", "background_trajectory", "build_condition_scene", "parse_layout",
           "render", "run"]
