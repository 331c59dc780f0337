"""Rigid transforms and pose trajectories.

Rotations are kept as 3x3 matrices. A transform read from a file is a
row-major 4x4 homogeneous matrix.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ORTHO_TOL = 1e-9
# Anything farther from SO(3) than this is treated as a bad input, not drift.
_REJECT_TOL = 1e-3


def _polar(rotation: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(rotation)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u[:, -1] *= -1
        r = u @ vt
    return r


def _ortho_error(rotation: np.ndarray) -> float:
    return float(np.linalg.norm(rotation.T @ rotation - np.eye(3)))


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Element of SE(3): ``x -> rotation @ x + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.array(self.rotation, dtype=float).reshape(3, 3)
        p = np.array(self.translation, dtype=float).reshape(3)
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(p))):
            raise ValueError("transform has non-finite entries")
        err = _ortho_error(r)
        if err > _REJECT_TOL or np.linalg.det(r) <= 0:
            raise ValueError(f"rotation is not in SO(3) (orthonormality error {err:.3g})")
        if err > ORTHO_TOL:
            r = _polar(r)
        r.flags.writeable = False
        p.flags.writeable = False
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", p)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls()

    @classmethod
    def from_matrix(cls, matrix) -> RigidTransform:
        m = np.asarray(matrix, dtype=float).reshape(4, 4)
        if not np.allclose(m[3], [0.0, 0.0, 0.0, 1.0], atol=1e-12):
            raise ValueError("bottom row of a homogeneous transform must be (0, 0, 0, 1)")
        return cls(m[:3, :3], m[:3, 3])

    @classmethod
    def from_translation(cls, x, y=None, z=None) -> RigidTransform:
        p = np.array([x, y, z], dtype=float) if y is not None else np.asarray(x, dtype=float)
        return cls(np.eye(3), p)

    @classmethod
    def from_axis_angle(cls, axis, angle: float, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
        return cls(axis_angle_matrix(axis, angle), translation)

    @classmethod
    def from_rpy(cls, rpy, translation=(0.0, 0.0, 0.0)) -> RigidTransform:
        """Fixed-axis roll/pitch/yaw, ``R = Rz(yaw) Ry(pitch) Rx(roll)``."""
        roll, pitch, yaw = rpy
        r = (
            axis_angle_matrix((0, 0, 1), yaw)
            @ axis_angle_matrix((0, 1, 0), pitch)
            @ axis_angle_matrix((1, 0, 0), roll)
        )
        return cls(r, translation)

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def __matmul__(self, other: RigidTransform) -> RigidTransform:
        return compose(self, other)

    def __repr__(self) -> str:
        return f"RigidTransform(rotation={self.rotation.tolist()}, translation={self.translation.tolist()})"


def axis_angle_matrix(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix for a unit ``axis``."""
    a = np.asarray(axis, dtype=float)
    a = a / np.linalg.norm(a)
    k = np.array([[0.0, -a[2], a[1]], [a[2], 0.0, -a[0]], [-a[1], a[0], 0.0]])
    s, c = np.sin(angle), np.cos(angle)
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    """Return ``a ∘ b`` (apply ``b`` first, then ``a``)."""
    return RigidTransform(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(t: RigidTransform) -> RigidTransform:
    rt = t.rotation.T
    return RigidTransform(rt, -(rt @ t.translation))


def apply(t: RigidTransform, x) -> np.ndarray:
    """Map a point (or an ``(N, 3)`` array of points) through ``t``."""
    x = np.asarray(x, dtype=float)
    return x @ t.rotation.T + t.translation


@dataclass(frozen=True, eq=False)
class TargetPoseTrajectory:
    """Per-frame object poses. ``frame_rate`` is informational only."""

    frames: tuple[RigidTransform, ...]
    frame_rate: float = 30.0

    def __post_init__(self):
        frames = tuple(self.frames)
        if not frames:
            raise ValueError("pose trajectory must have at least one frame")
        for f in frames:
            if not isinstance(f, RigidTransform):
                raise TypeError(f"expected RigidTransform, got {type(f).__name__}")
        object.__setattr__(self, "frames", frames)

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, i: int) -> RigidTransform:
        return self.frames[i]

    def __iter__(self):
        return iter(self.frames)

    @classmethod
    def constant(cls, t: RigidTransform, n: int, frame_rate: float = 30.0) -> TargetPoseTrajectory:
        return cls(tuple([t] * n), frame_rate)

    @classmethod
    def from_matrices(cls, matrices: Sequence, frame_rate: float = 30.0) -> TargetPoseTrajectory:
        return cls(tuple(RigidTransform.from_matrix(m) for m in matrices), frame_rate)


def to_world_trajectory(extrinsics: RigidTransform, camera_poses: TargetPoseTrajectory) -> TargetPoseTrajectory:
    """Convert camera-frame object poses to the world frame.

    ``extrinsics`` maps world coordinates into the camera frame, so every
    frame becomes ``inverse(extrinsics) ∘ pose``.
    """
    world_from_cam = inverse(extrinsics)
    return TargetPoseTrajectory(
        tuple(compose(world_from_cam, f) for f in camera_poses.frames),
        camera_poses.frame_rate,
    )
