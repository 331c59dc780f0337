"""Contact kernel, contact residuals and the quadratic priors of a refinement frame."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import RigidTransform
from .handmodel import KinematicChain, fingertip_kinematics
from .pointcloud import NeighborIndex


@dataclass(frozen=True)
class ContactKernelParams:
    """``alpha`` and ``k`` shape the kernel, ``lambda_c`` weighs contact.

    ``lambda_c = 0`` is accepted and switches the contact term off.
    """

    alpha: float = 1.0
    k: float = 1.0
    lambda_c: float = 100.0
    epsilon: float = 1e-8

    def __post_init__(self):
        for name in ("alpha", "k", "epsilon"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if not self.lambda_c >= 0:
            raise ValueError("lambda_c must be >= 0")


def kernel(d, params: ContactKernelParams = ContactKernelParams()):
    """Asymmetric contact penalty: quadratic outside, exp-linear inside."""
    d = np.asarray(d, dtype=float)
    a, k = params.alpha, params.k
    # Evaluate each branch only on its own half-line; exp(-k d) overflows for large d.
    inside = np.minimum(d, 0.0)
    out = np.where(d >= 0, 0.5 * a * d * d, (a / (k * k)) * (np.expm1(-k * inside) + k * inside))
    return out if out.ndim else float(out)


def kernel_derivative(d, params: ContactKernelParams = ContactKernelParams()):
    d = np.asarray(d, dtype=float)
    a, k = params.alpha, params.k
    inside = np.minimum(d, 0.0)
    out = np.where(d >= 0, a * d, (a / k) * (-np.expm1(-k * inside)))
    return out if out.ndim else float(out)


def smooth_abs_kernel(d, delta: float = 1e-6):
    """``sqrt(d² + δ²) - δ``: a differentiable stand-in for ``|d|``."""
    d = np.asarray(d, dtype=float)
    # Same value, without the cancellation that zeroes it for |d| << δ.
    out = d * d / (np.sqrt(d * d + delta * delta) + delta)
    return out if out.ndim else float(out)


def smooth_abs_derivative(d, delta: float = 1e-6):
    d = np.asarray(d, dtype=float)
    out = d / np.sqrt(d * d + delta * delta)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class Kernel:
    """A contact penalty and its derivative, both vectorised over ``d``."""

    name: str
    value: callable
    derivative: callable


def asymmetric(params: ContactKernelParams) -> Kernel:
    return Kernel("asymmetric", lambda d: kernel(d, params), lambda d: kernel_derivative(d, params))


def smooth_abs(delta: float = 1e-6) -> Kernel:
    return Kernel("smooth_abs", lambda d: smooth_abs_kernel(d, delta), lambda d: smooth_abs_derivative(d, delta))


@dataclass(frozen=True, eq=False)
class Correspondences:
    """Nearest cloud points and normals (object frame), one per fingertip."""

    indices: np.ndarray
    points: np.ndarray
    normals: np.ndarray


@dataclass(frozen=True, eq=False)
class ContactResidual:
    residuals: np.ndarray
    jacobian: np.ndarray
    distances: np.ndarray
    correspondences: Correspondences | None = None
    lambda_c: float = field(default=1.0)
    penalties: np.ndarray | None = None


def find_correspondences(index: NeighborIndex, x_obj) -> Correspondences:
    idx = index.nearest_many(x_obj)
    cloud = index.cloud
    return Correspondences(idx, cloud.points[idx].copy(), cloud.normals[idx].copy())


def contact_residual(
    q,
    chain: KinematicChain,
    index: NeighborIndex,
    t_tar: RigidTransform,
    params: ContactKernelParams = ContactKernelParams(),
    kernel_fn: Kernel | None = None,
    correspondences: Correspondences | None = None,
) -> ContactResidual:
    """Per-fingertip residuals ``sqrt(2 λc f(d_i))`` and their Jacobian rows.

    Correspondences are looked up once at ``q`` and held fixed for the
    Jacobian; pass ``correspondences`` to reuse a previous lookup instead.
    """
    kern = kernel_fn if kernel_fn is not None else asymmetric(params)
    if len(index.cloud) == 0:
        raise ValueError("empty cloud")
    s, jac_world = fingertip_kinematics(chain, q)
    r_t = t_tar.rotation
    x_obj = (s - t_tar.translation) @ r_t  # rows of R^T (s - p)
    corr = correspondences if correspondences is not None else find_correspondences(index, x_obj)
    d = np.einsum("fi,fi->f", corr.normals, x_obj - corr.points)
    f = np.asarray(kern.value(d), dtype=float)
    fp = np.asarray(kern.derivative(d), dtype=float)
    lam = params.lambda_c
    res = np.sqrt(np.maximum(2.0 * lam * f, 0.0))
    gain = np.sqrt(2.0 * lam) * fp / (2.0 * np.sqrt(f) + params.epsilon**2)
    # d(d_i)/dq = n_i^T R^T J_world,i
    dd_dq = np.einsum("fi,fid->fd", corr.normals @ r_t.T, jac_world)
    jac = gain[:, None] * dd_dq
    return ContactResidual(res, jac, d, corr, lam, f)


def contact_energy(residual: ContactResidual) -> float:
    return 0.5 * float(residual.residuals @ residual.residuals)


def _weights(w, n: int) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim == 0:
        return np.full(n, float(w))
    if w.shape != (n,):
        raise ValueError(f"weight vector has length {w.shape}, expected {n}")
    return w


def _same_length(*vecs) -> list[np.ndarray]:
    out = [np.asarray(v, dtype=float).reshape(-1) for v in vecs]
    n = out[0].shape[0]
    for v in out[1:]:
        if v.shape[0] != n:
            raise ValueError(f"length mismatch: {v.shape[0]} vs {n}")
    return out


@dataclass(frozen=True)
class PriorWeights:
    """Diagonal prior weights; scalars broadcast over all joints."""

    w_gen: object = 1.0
    w_vel: object = 0.5
    w_acc: object = 0.25

    def __post_init__(self):
        for name in ("w_gen", "w_vel", "w_acc"):
            w = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(w)) or np.any(w < 0):
                raise ValueError(f"{name} entries must be finite and >= 0")

    def diagonals(self, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return _weights(self.w_gen, n), _weights(self.w_vel, n), _weights(self.w_acc, n)

    def total(self, n: int) -> np.ndarray:
        g, v, a = self.diagonals(n)
        return g + v + a


def generative_energy(q, q_gen, w_gen) -> float:
    q, q_gen = _same_length(q, q_gen)
    e = q - q_gen
    return 0.5 * float(e @ (_weights(w_gen, len(q)) * e))


def temporal_energy(q, q_prev, q_prev2, w_vel, w_acc) -> float:
    q, q_prev, q_prev2 = _same_length(q, q_prev, q_prev2)
    vel = q - q_prev
    acc = vel - (q_prev - q_prev2)
    n = len(q)
    return 0.5 * float(vel @ (_weights(w_vel, n) * vel)) + 0.5 * float(acc @ (_weights(w_acc, n) * acc))


def prior_energy(q, q_gen, q_prev, q_prev2, weights: PriorWeights) -> float:
    return generative_energy(q, q_gen, weights.w_gen) + temporal_energy(q, q_prev, q_prev2, weights.w_vel, weights.w_acc)


def prior_gradient(q, q_gen, q_prev, q_prev2, weights: PriorWeights) -> np.ndarray:
    """Gradient of the generative plus temporal priors at ``q``."""
    q, q_gen, q_prev, q_prev2 = _same_length(q, q_gen, q_prev, q_prev2)
    wg, wv, wa = weights.diagonals(len(q))
    vel = q - q_prev
    return wg * (q - q_gen) + wv * vel + wa * (vel - (q_prev - q_prev2))
