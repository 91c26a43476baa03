"""Streaming ViSAR shadow enhancement by online mixture-weighted subspace learning."""

__version__ = "0.1.0"

from .videodata import Frame, VideoMatrix
from .gmd import MixtureState
from .subspace import SubspaceState
from .registration import RigidTransform
from .metrics import Box
from .pipeline import PipelineConfig, run_pipeline
from .synth import SceneSpec, generate_scene

__all__ = [
    "Frame",
    "VideoMatrix",
    "MixtureState",
    "SubspaceState",
    "RigidTransform",
    "Box",
    "PipelineConfig",
    "run_pipeline",
    "SceneSpec",
    "generate_scene",
    "__version__",
]
