"""Shared codebook: quantisation, VQ losses, usage tracking and cold-code refresh."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .nets import CoderNet

MASK_TOKEN = -1


@dataclass(eq=False)
class Codebook:
    codes: np.ndarray

    def __post_init__(self):
        c = np.array(self.codes, dtype=float)
        if c.ndim != 2 or c.shape[0] < 1:
            raise ValueError("codebook must be a (K, d_z) matrix with K >= 1")
        if not np.all(np.isfinite(c)):
            raise ValueError("codebook has non-finite entries")
        self.codes = c

    @property
    def K(self) -> int:
        return self.codes.shape[0]

    @property
    def d_z(self) -> int:
        return self.codes.shape[1]

    def copy(self) -> Codebook:
        return Codebook(self.codes.copy())


@dataclass(frozen=True)
class PoseChunkSpec:
    """Sliding windows of ``window`` frames, flattened frame-major."""

    window: int = 8
    stride: int = 4
    dof: int = 4

    def __post_init__(self):
        if self.window < 1 or self.stride < 1 or self.dof < 1:
            raise ValueError("window, stride and dof must all be >= 1")

    @property
    def chunk_dim(self) -> int:
        return self.window * self.dof

    def n_chunks(self, n_frames: int) -> int:
        return 0 if n_frames < self.window else (n_frames - self.window) // self.stride + 1


def make_chunks(frames, spec: PoseChunkSpec) -> np.ndarray:
    """``(T, D)`` trajectory -> ``(n_chunks, W*D)`` chunk matrix."""
    f = np.asarray(frames, dtype=float)
    if f.ndim != 2 or f.shape[1] != spec.dof:
        raise ValueError(f"expected a (T, {spec.dof}) trajectory, got {f.shape}")
    n = spec.n_chunks(f.shape[0])
    if n == 0:
        raise ValueError(f"trajectory of {f.shape[0]} frames is shorter than one window ({spec.window})")
    starts = np.arange(n) * spec.stride
    return np.stack([f[s : s + spec.window].reshape(-1) for s in starts])


def quantize_many(codebook: Codebook, z_e) -> np.ndarray:
    """Nearest-code index for each row of ``z_e`` (lowest index on ties)."""
    z = np.asarray(z_e, dtype=float)
    if z.ndim == 1:
        z = z[None, :]
    if z.shape[1] != codebook.d_z:
        raise ValueError(f"latent width {z.shape[1]} does not match codebook d_z {codebook.d_z}")
    codes = codebook.codes
    approx = (z * z).sum(1)[:, None] - 2.0 * (z @ codes.T) + (codes * codes).sum(1)[None, :]
    best = approx.min(axis=1)
    # The expanded form can misorder near-ties; settle them with exact distances.
    slack = 1e-9 * (1.0 + np.abs(best)) + 1e-9 * (z * z).sum(1)
    out = np.empty(len(z), dtype=int)
    for i in range(len(z)):
        cand = np.flatnonzero(approx[i] <= best[i] + slack[i])
        if cand.size == 1:
            out[i] = cand[0]
        else:
            d2 = ((codes[cand] - z[i]) ** 2).sum(axis=1)
            out[i] = cand[int(np.argmin(d2))]
    return out


def quantize(codebook: Codebook, z_e) -> int:
    z = np.asarray(z_e, dtype=float)
    if z.ndim != 1:
        raise ValueError("quantize takes a single latent vector; use quantize_many for batches")
    return int(quantize_many(codebook, z)[0])


def reconstruct(enc: CoderNet, dec: CoderNet, codebook: Codebook, chunk) -> np.ndarray:
    """Encode, snap to the nearest code, decode."""
    return translate(enc, dec, codebook, chunk)


def translate(enc_i: CoderNet, dec_j: CoderNet, codebook: Codebook, chunk_i) -> np.ndarray:
    """Decode hand ``i``'s token with hand ``j``'s decoder."""
    if enc_i.out_dim != codebook.d_z or dec_j.in_dim != codebook.d_z:
        raise ValueError(
            f"latent widths disagree: encoder {enc_i.out_dim}, codebook {codebook.d_z}, decoder {dec_j.in_dim}"
        )
    x = np.asarray(chunk_i, dtype=float)
    z = enc_i.forward(x)
    c = quantize_many(codebook, z)
    zq = codebook.codes[c]
    out = dec_j.forward(zq)
    return out[0] if x.ndim == 1 else out


def vq_losses(z_e, z_q, beta: float = 0.25) -> tuple[float, float]:
    """Codebook term ``‖sg[z_e] - z_q‖²`` and commitment term ``β‖z_e - sg[z_q]‖²``.

    Values are equal up to ``β``; they differ in which side receives the
    gradient, see :func:`vq_gradients`.
    """
    z_e = np.asarray(z_e, dtype=float)
    z_q = np.asarray(z_q, dtype=float)
    if z_e.shape != z_q.shape:
        raise ValueError(f"shape mismatch {z_e.shape} vs {z_q.shape}")
    sq = float(((z_e - z_q) ** 2).sum())
    return sq, beta * sq


def vq_gradients(z_e, z_q, beta: float = 0.25) -> dict:
    """Gradients of the two VQ terms with stop-gradient routing applied.

    Keys are ``(term, target)``; the blocked routes are returned as zeros.
    """
    z_e = np.asarray(z_e, dtype=float)
    z_q = np.asarray(z_q, dtype=float)
    diff = z_e - z_q
    zero = np.zeros_like(diff)
    return {
        ("codebook", "codes"): -2.0 * diff,
        ("codebook", "encoder"): zero,
        ("commitment", "codes"): zero,
        ("commitment", "encoder"): 2.0 * beta * diff,
    }


def distill_loss(z_new, z_ref) -> float:
    z_new = np.asarray(z_new, dtype=float)
    z_ref = np.asarray(z_ref, dtype=float)
    if z_new.shape != z_ref.shape:
        raise ValueError(f"shape mismatch {z_new.shape} vs {z_ref.shape}")
    return float(((z_new - z_ref) ** 2).sum())


def usage_counts(indices, K: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=int).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= K):
        raise ValueError(f"code index out of range for K={K}")
    return np.bincount(idx, minlength=K)


def cold_set(usage, tau_c: float = 1) -> np.ndarray:
    """Indices whose usage this epoch fell below ``tau_c``."""
    return np.flatnonzero(np.asarray(usage) < tau_c)


def refresh_cold_codes(codebook: Codebook, cold, buffer, seed: int = 0, max_iter: int = 100) -> Codebook:
    """Replace cold codes by K-Means centroids of recent encoder outputs.

    ``R = min(|cold|, |buffer|)`` centroids are computed; the ``R`` smallest
    cold indices receive them in order. All other rows are left untouched.
    """
    from sklearn.cluster import KMeans

    cold = np.unique(np.asarray(cold, dtype=int))
    out = codebook.copy()
    if cold.size == 0:
        return out
    buf = np.asarray(buffer, dtype=float)
    if buf.size == 0:
        raise ValueError("cold codes present but the encoder-output buffer is empty")
    buf = buf.reshape(-1, codebook.d_z)
    r = min(cold.size, buf.shape[0])
    with warnings.catch_warnings():
        # Fewer distinct points than clusters is legal here; centroids then repeat.
        warnings.simplefilter("ignore")
        km = KMeans(n_clusters=r, init="k-means++", n_init=1, max_iter=max_iter, random_state=seed, tol=0.0)
        km.fit(buf)
    centroids = km.cluster_centers_
    order = np.lexsort(centroids.T[::-1])
    out.codes[cold[:r]] = centroids[order]
    return out


class Reservoir:
    """Uniform sample of at most ``capacity`` rows seen since the last reset."""

    def __init__(self, capacity: int, dim: int, rng: np.random.Generator):
        self.capacity = capacity
        self.rng = rng
        self.data = np.empty((capacity, dim))
        self.seen = 0

    def extend(self, rows):
        for row in np.asarray(rows, dtype=float):
            if self.seen < self.capacity:
                self.data[self.seen] = row
            else:
                j = int(self.rng.integers(0, self.seen + 1))
                if j < self.capacity:
                    self.data[j] = row
            self.seen += 1

    def contents(self) -> np.ndarray:
        return self.data[: min(self.seen, self.capacity)].copy()

    def reset(self):
        self.seen = 0


def mask_sequence(token_seq, p: float, seed=0, mask_token: int = MASK_TOKEN) -> np.ndarray:
    """Replace each token by ``mask_token`` independently with probability ``p``."""
    if not 0.0 <= p <= 1.0:
        raise ValueError("mask ratio must lie in [0, 1]")
    tokens = np.array(token_seq, copy=True)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    hit = rng.random(tokens.shape) < p
    tokens[hit] = mask_token
    return tokens


def mask_ratio_schedule(epoch_fraction: float) -> float:
    """No masking for the first 20%, a linear ramp to 1 by 80%, then full masking."""
    e = float(epoch_fraction)
    if not 0.0 <= e <= 1.0:
        raise ValueError("epoch fraction must lie in [0, 1]")
    if e < 0.2:
        return 0.0
    if e > 0.8:
        return 1.0
    return min(1.0, (e - 0.2) / 0.6)


def assemble_chunks(chunks, spec: PoseChunkSpec, n_frames: int) -> np.ndarray:
    """Inverse of :func:`make_chunks`: overlap-average windows back into ``(T, D)``.

    Frames past the last full window are not covered and come back as NaN.
    """
    c = np.asarray(chunks, dtype=float).reshape(-1, spec.window, spec.dof)
    if c.shape[0] != spec.n_chunks(n_frames):
        raise ValueError(f"{c.shape[0]} chunks do not tile {n_frames} frames")
    acc = np.zeros((n_frames, spec.dof))
    cnt = np.zeros(n_frames)
    for i, win in enumerate(c):
        s = i * spec.stride
        acc[s : s + spec.window] += win
        cnt[s : s + spec.window] += 1
    out = np.full_like(acc, np.nan)
    hit = cnt > 0
    out[hit] = acc[hit] / cnt[hit, None]
    return out
