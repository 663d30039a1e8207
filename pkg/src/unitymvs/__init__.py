"""Multi-view stereo depth estimation with the unity depth representation."""

from .fusion import FilterParams, PointCloud, evaluate, fuse
from .geometry import Camera, DepthMap, HypothesisVolume
from .loss import UflParams, ufl, ufl_grad
from .pipeline import PipelineConfig, StageConfig, run_pipeline
from .synth import SceneConfig, render_scene
from .unity import UnityVolume, generate_unity, regress_unity

__all__ = [
    "Camera", "DepthMap", "FilterParams", "HypothesisVolume", "PipelineConfig", "PointCloud",
    "SceneConfig", "StageConfig", "UflParams", "UnityVolume", "evaluate", "fuse",
    "generate_unity", "regress_unity", "render_scene", "run_pipeline", "ufl", "ufl_grad",
]
