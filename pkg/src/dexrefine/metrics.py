"""Evaluation metrics for generated hand-manipulation sequences.

Positions come in as meters and are reported in millimeters; orientation
errors are in degrees.
"""

from __future__ import annotations

import numpy as np

from .tokenizer.codebook import Codebook, PoseChunkSpec, make_chunks, quantize_many
from .tokenizer.nets import CoderNet

M_TO_MM = 1000.0
ORTHO_TOL = 1e-6


def _as_joint_traj(x) -> np.ndarray:
    a = np.asarray(x, dtype=float)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"joint trajectory must have shape (T, J, 3), got {a.shape}")
    return a


def mpjpe_sequence(pred, gt) -> float:
    """Mean per-joint position error of one sequence, in millimeters."""
    p, g = _as_joint_traj(pred), _as_joint_traj(gt)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    return float(np.linalg.norm(p - g, axis=2).mean() * M_TO_MM)


def mpjpe(pred, gt) -> float:
    """MPJPE of one sequence, or the mean of per-sequence values for lists.

    Sequences may differ in length; each counts once.
    """
    if isinstance(pred, (list, tuple)):
        if len(pred) != len(gt) or not pred:
            raise ValueError("need equally many (and at least one) predicted and ground-truth sequences")
        return float(np.mean([mpjpe_sequence(p, g) for p, g in zip(pred, gt)]))
    return mpjpe_sequence(pred, gt)


def fpl(pred_final_center, gt_final_center) -> float:
    """Final root-position error (mm). Accepts one 3-vector or an ``(N, 3)`` batch."""
    p = np.asarray(pred_final_center, dtype=float).reshape(-1, 3)
    g = np.asarray(gt_final_center, dtype=float).reshape(-1, 3)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    return float(np.linalg.norm(p - g, axis=1).mean() * M_TO_MM)


def _check_rotation(r: np.ndarray):
    if r.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {r.shape}")
    if np.linalg.norm(r.T @ r - np.eye(3)) > ORTHO_TOL:
        raise ValueError("rotation matrix is not orthonormal")


def rotation_angle_deg(r_gt, r_pred) -> float:
    r_gt = np.asarray(r_gt, dtype=float)
    r_pred = np.asarray(r_pred, dtype=float)
    _check_rotation(r_gt)
    _check_rotation(r_pred)
    c = (np.trace(r_gt.T @ r_pred) - 1.0) / 2.0
    return float(np.degrees(np.arccos(np.clip(c, -1.0, 1.0))))


def fol(pred_final_R, gt_final_R) -> float:
    """Final orientation error in degrees; batches of ``(N, 3, 3)`` are averaged."""
    p = np.asarray(pred_final_R, dtype=float).reshape(-1, 3, 3)
    g = np.asarray(gt_final_R, dtype=float).reshape(-1, 3, 3)
    if p.shape != g.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
    return float(np.mean([rotation_angle_deg(gi, pi) for pi, gi in zip(p, g)]))


def extract_features(sequence, enc: CoderNet, codebook: Codebook, spec: PoseChunkSpec) -> np.ndarray:
    """Mean of the quantised latents over all windows of a joint trajectory."""
    frames = getattr(sequence, "frames", sequence)
    chunks = make_chunks(frames, spec)
    return codebook.codes[quantize_many(codebook, enc.forward(chunks))].mean(axis=0)


def _feature_set(z, what: str) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.ndim != 2:
        raise ValueError(f"{what} features must be an (M, d) matrix")
    if z.shape[0] < 2:
        raise ValueError(f"{what} needs at least 2 feature vectors, got {z.shape[0]}")
    if not np.all(np.isfinite(z)):
        raise ValueError(f"{what} features contain non-finite values")
    return z


def _psd_sqrt(a: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((a + a.T) / 2.0)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T


def fid(real, gen) -> float:
    """Fréchet distance between Gaussian fits of two feature sets.

    Covariances are unbiased (``M - 1``). ``Tr((Σr Σg)^½)`` is evaluated as
    ``Tr((Σr^½ Σg Σr^½)^½)`` with eigenvalues clamped at zero.
    """
    zr = _feature_set(real, "real")
    zg = _feature_set(gen, "generated")
    if zr.shape[1] != zg.shape[1]:
        raise ValueError(f"feature widths differ: {zr.shape[1]} vs {zg.shape[1]}")
    mu_r, mu_g = zr.mean(0), zg.mean(0)
    s_r = np.atleast_2d(np.cov(zr, rowvar=False, ddof=1))
    s_g = np.atleast_2d(np.cov(zg, rowvar=False, ddof=1))
    root_r = _psd_sqrt(s_r)
    cross = _psd_sqrt(root_r @ s_g @ root_r)
    dmu = mu_r - mu_g
    value = float(dmu @ dmu + np.trace(s_r) + np.trace(s_g) - 2.0 * np.trace(cross))
    return max(value, 0.0)


def diversity(features) -> float:
    """Mean pairwise Euclidean distance between feature vectors."""
    z = _feature_set(features, "diversity")
    m = z.shape[0]
    total = 0.0
    for a in range(m - 1):
        total += float(np.linalg.norm(z[a + 1 :] - z[a], axis=1).sum())
    return 2.0 * total / (m * (m - 1))
