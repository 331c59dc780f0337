"""Contact-aware refinement, retargeting and tokenization of dexterous hand motion."""

from .geometry import RigidTransform, TargetPoseTrajectory, to_world_trajectory
from .handmodel import HandTrajectory, KinematicChain, ModelError, load_chain, load_demo_chain
from .pointcloud import OrientedPointCloud, build_index, estimate_normals

__version__ = "0.1.0"

__all__ = [
    "HandTrajectory",
    "KinematicChain",
    "ModelError",
    "OrientedPointCloud",
    "RigidTransform",
    "TargetPoseTrajectory",
    "build_index",
    "estimate_normals",
    "load_chain",
    "load_demo_chain",
    "to_world_trajectory",
]
