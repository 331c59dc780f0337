"""Keypoint retargeting by weighted inverse kinematics with joint limits.

The solve reuses :func:`dexrefine.refiner.lm_minimize`: keypoint residuals
``sqrt(w_k) (f_k(q) - target_k)`` take the place of the contact residuals and
the smoothness term ``λ‖q - q_prev‖²`` enters as a generative prior of weight
``2λ`` anchored at ``q_prev``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import RigidTransform
from .handmodel import HandTrajectory, KinematicChain, link_kinematics, link_positions
from .refiner import Linearization, RefinementConfig, lm_minimize

FINGERTIP_WEIGHT = 1.0
PHALANX_WEIGHT = 0.5


@dataclass(frozen=True, eq=False)
class RetargetSpec:
    """Which chain link tracks which source keypoint, and how hard.

    ``scales`` holds one factor per correspondence; each aligned keypoint is
    ``scale * R x + p`` with ``(R, p)`` the device alignment.
    """

    correspondences: tuple[tuple[str, int], ...]
    keypoint_weights: np.ndarray
    device_alignment: RigidTransform = field(default_factory=RigidTransform)
    scales: np.ndarray | None = None
    lambda_smooth: float = 0.0

    def __post_init__(self):
        corr = tuple((str(link), int(k)) for link, k in self.correspondences)
        if not corr:
            raise ValueError("retarget spec needs at least one correspondence")
        w = np.asarray(self.keypoint_weights, dtype=float).reshape(-1)
        if w.shape[0] != len(corr):
            raise ValueError(f"{w.shape[0]} keypoint weights for {len(corr)} correspondences")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise ValueError("keypoint weights must be finite and >= 0")
        s = np.ones(len(corr)) if self.scales is None else np.asarray(self.scales, dtype=float).reshape(-1)
        if s.shape[0] != len(corr):
            raise ValueError(f"{s.shape[0]} scale factors for {len(corr)} correspondences")
        if not self.lambda_smooth >= 0:
            raise ValueError("lambda_smooth must be >= 0")
        object.__setattr__(self, "correspondences", corr)
        object.__setattr__(self, "keypoint_weights", w)
        object.__setattr__(self, "scales", s)

    @property
    def links(self) -> list[str]:
        return [link for link, _ in self.correspondences]

    def validate_for(self, chain: KinematicChain):
        for link in self.links:
            if link not in chain.links:
                raise ValueError(f"correspondence references unknown link '{link}'")

    @classmethod
    def with_default_weights(cls, correspondences, fingertip_links, **kwargs) -> RetargetSpec:
        tips = set(fingertip_links)
        w = [FINGERTIP_WEIGHT if link in tips else PHALANX_WEIGHT for link, _ in correspondences]
        return cls(tuple(correspondences), np.array(w), **kwargs)


def align_targets(frame, spec: RetargetSpec) -> np.ndarray:
    """Source keypoints mapped into the device frame, one row per correspondence."""
    pts = np.asarray(frame, dtype=float).reshape(-1, 3)
    idx = np.array([k for _, k in spec.correspondences])
    if idx.max() >= pts.shape[0] or idx.min() < 0:
        raise ValueError(f"correspondence keypoint index out of range for a frame with {pts.shape[0]} keypoints")
    t = spec.device_alignment
    return spec.scales[:, None] * (pts[idx] @ t.rotation.T) + t.translation


def retarget_objective(q, targets, chain: KinematicChain, spec: RetargetSpec, q_prev) -> float:
    pos = link_positions(chain, q, spec.links)
    err = pos - targets
    dq = np.asarray(q) - np.asarray(q_prev)
    return float(spec.keypoint_weights @ np.einsum("ki,ki->k", err, err)) + spec.lambda_smooth * float(dq @ dq)


def retarget_frame(targets, q_prev, chain: KinematicChain, spec: RetargetSpec, solver_config: RefinementConfig = RefinementConfig()):
    """Joint configuration within limits whose keypoints best match ``targets``.

    Starts from ``q_prev`` (clamped) and returns the best accepted iterate.
    """
    spec.validate_for(chain)
    targets = np.asarray(targets, dtype=float).reshape(len(spec.correspondences), 3)
    q_prev = chain.check_q(q_prev)
    sw = np.sqrt(spec.keypoint_weights)
    links = spec.links
    two_lam = 2.0 * spec.lambda_smooth

    def residual_energy(r, q):
        # Half the objective, so that it matches ½‖r‖² + ½(2λ)‖q - q_prev‖².
        dq = q - q_prev
        return 0.5 * float(r @ r) + 0.5 * two_lam * float(dq @ dq)

    def linearize(q):
        pos, jac = link_kinematics(chain, q, links)
        r = (sw[:, None] * (pos - targets)).reshape(-1)
        j = (sw[:, None, None] * jac).reshape(-1, chain.dof)
        return Linearization(r, j, residual_energy(r, q))

    def energy(q):
        pos = link_positions(chain, q, links)
        return residual_energy((sw[:, None] * (pos - targets)).reshape(-1), q)

    q, _ = lm_minimize(
        q_prev,
        linearize,
        energy,
        np.full(chain.dof, two_lam),
        lambda q: two_lam * (q - q_prev),
        solver_config,
        chain.lower,
        chain.upper,
    )
    return np.clip(q, chain.lower, chain.upper)


def retarget_sequence(keypoint_traj, chain: KinematicChain, spec: RetargetSpec, solver_config: RefinementConfig = RefinementConfig(), q_init=None) -> HandTrajectory:
    frames = list(keypoint_traj)
    if not frames:
        raise ValueError("keypoint trajectory is empty")
    q_prev = np.zeros(chain.dof) if q_init is None else chain.check_q(q_init)
    out = []
    for frame in frames:
        q_prev = retarget_frame(align_targets(frame, spec), q_prev, chain, spec, solver_config)
        out.append(q_prev)
    return HandTrajectory(np.array(out), chain)


SPEC_KEYS = {"correspondences", "keypoint_weights", "device_alignment", "scales", "lambda_smooth"}


def retarget_spec_from_dict(doc: dict, fingertip_links=()) -> RetargetSpec:
    """Parse a spec document; missing weights default to 1.0 for fingertips, 0.5 otherwise.

    ``device_alignment`` is either 16 row-major numbers or ``{"xyz", "rpy"}``.
    """
    if not isinstance(doc, dict):
        raise ValueError("retarget spec must be a mapping")
    unknown = set(doc) - SPEC_KEYS
    if unknown:
        raise ValueError(f"retarget spec: unknown keys {sorted(unknown)}")
    if "correspondences" not in doc:
        raise ValueError("retarget spec: correspondences is required")
    corr = []
    for i, item in enumerate(doc["correspondences"]):
        if not (isinstance(item, (list, tuple)) and len(item) == 2):
            raise ValueError(f"retarget spec: correspondences[{i}] must be [link, keypoint_index]")
        corr.append((str(item[0]), int(item[1])))
    align = doc.get("device_alignment")
    if align is None:
        t = RigidTransform()
    elif isinstance(align, dict):
        t = RigidTransform.from_rpy(align.get("rpy", (0, 0, 0)), align.get("xyz", (0, 0, 0)))
    else:
        t = RigidTransform.from_matrix(align)
    kwargs = dict(device_alignment=t, scales=doc.get("scales"), lambda_smooth=float(doc.get("lambda_smooth", 0.0)))
    if doc.get("keypoint_weights") is None:
        return RetargetSpec.with_default_weights(corr, fingertip_links, **kwargs)
    return RetargetSpec(tuple(corr), np.asarray(doc["keypoint_weights"], dtype=float), **kwargs)
