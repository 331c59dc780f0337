"""Training the shared codebook and per-morphology coder nets.

Everything runs on numpy with a single seeded generator, so two runs with
the same inputs and seed produce bit-identical parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .codebook import Codebook, Reservoir, cold_set, quantize_many, refresh_cold_codes, usage_counts
from .nets import CoderNet


@dataclass(frozen=True)
class TokenizerSpec:
    """Architecture of one morphology's coder pair plus the shared codebook size."""

    K: int = 256
    d_z: int = 32
    window: int = 8
    stride: int = 4
    dof: int = 4
    hidden: tuple = (128, 128)
    activation: str = "tanh"

    @property
    def chunk_dim(self) -> int:
        return self.window * self.dof

    def encoder_widths(self) -> list[int]:
        return [self.chunk_dim, *self.hidden, self.d_z]

    def decoder_widths(self) -> list[int]:
        return [self.d_z, *reversed(self.hidden), self.chunk_dim]


def default_refresh_epochs(epochs: int, every: int = 50) -> tuple[int, ...]:
    return tuple(range(every, epochs + 1, every))


@dataclass(frozen=True)
class TrainConfig:
    beta: float = 0.25
    learning_rate: float = 1e-4
    epochs: int = 200
    refresh_epochs: tuple | None = None  # None: every 50th epoch
    tau_c: float = 1
    lambda_distill: float = 0.1
    seed: int = 0
    batch_size: int = 32
    buffer_capacity: int = 65536
    distill_epochs: int | None = None  # stage 1 length when onboarding; None: same as epochs
    update_codebook_stage2: bool = False

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError("beta must be > 0")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")

    def refresh_schedule(self) -> frozenset:
        sched = default_refresh_epochs(self.epochs) if self.refresh_epochs is None else self.refresh_epochs
        return frozenset(int(e) for e in sched)


class TrainingDiverged(RuntimeError):
    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    rec: float
    vq: float
    distill: float = 0.0
    mse: float = float("nan")
    n_cold: int | None = None
    n_replaced: int | None = None


@dataclass
class History:
    epochs: list[EpochRecord] = field(default_factory=list)
    initial_mse: float = float("nan")
    final_mse: float = float("nan")
    distill_before: float = float("nan")
    distill_after: float = float("nan")

    def __len__(self) -> int:
        return len(self.epochs)


def reconstruction_mse(enc: CoderNet, dec: CoderNet, codebook: Codebook, x) -> float:
    z = enc.forward(x)
    xh = dec.forward(codebook.codes[quantize_many(codebook, z)])
    return float(np.mean((xh - x) ** 2))


def _check_dataset(x, width: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError(f"{what} must be a non-empty (N, {width}) chunk matrix")
    if x.shape[1] != width:
        raise ValueError(f"{what} chunks have width {x.shape[1]}, expected {width}")
    return x


@dataclass
class BatchGradients:
    loss: float
    rec: float
    vq: float
    distill: float
    indices: np.ndarray
    z_e: np.ndarray
    enc_grads: list
    dec_grads: list
    code_grads: np.ndarray


def vq_batch_gradients(enc, dec, codebook, xb, beta: float, lambda_distill: float = 0.0, distill_target=None) -> BatchGradients:
    """Losses and gradients of ``L_rec + L_vq (+ λ L_distill)`` on a minibatch.

    Losses are batch means of per-chunk sums. The quantizer is bridged with
    the straight-through estimator: the decoder-input gradient is handed to
    the encoder output unchanged.
    """
    b = xb.shape[0]
    z_e, enc_cache = enc.forward(xb, keep=True)
    if not np.all(np.isfinite(z_e)):
        raise FloatingPointError("encoder produced non-finite latents")
    idx = quantize_many(codebook, z_e)
    z_q = codebook.codes[idx]
    x_hat, dec_cache = dec.forward(z_q, keep=True)
    diff = x_hat - xb
    rec = float((diff * diff).sum()) / b
    dz = z_e - z_q
    sq = float((dz * dz).sum()) / b
    vq = sq + beta * sq
    loss = rec + vq

    dec_grads, g_zq = dec.backward(dec_cache, 2.0 * diff / b)
    g_ze = g_zq + 2.0 * beta * dz / b
    distill = 0.0
    if distill_target is not None:
        dd = z_e - distill_target
        distill = float((dd * dd).sum()) / b
        loss += lambda_distill * distill
        g_ze = g_ze + lambda_distill * 2.0 * dd / b
    enc_grads, _ = enc.backward(enc_cache, g_ze)
    g_codes = np.zeros_like(codebook.codes)
    np.add.at(g_codes, idx, -2.0 * dz / b)
    return BatchGradients(loss, rec, vq, distill, idx, z_e, enc_grads, dec_grads, g_codes)


def _vq_step(enc, dec, codebook, xb, cfg: TrainConfig, lr: float, update_codes: bool, distill_target=None):
    """One gradient step on a minibatch; returns the pre-step losses."""
    g = vq_batch_gradients(enc, dec, codebook, xb, cfg.beta, cfg.lambda_distill, distill_target)
    dec.apply_gradients(g.dec_grads, lr)
    enc.apply_gradients(g.enc_grads, lr)
    if update_codes:
        codebook.codes -= lr * g.code_grads
    return g.loss, g.rec, g.vq, g.distill, g.indices, g.z_e


def _init_codebook(enc: CoderNet, x, K: int, rng) -> Codebook:
    z = enc.forward(x)
    pick = rng.choice(len(z), size=K, replace=len(z) < K)
    jitter = 1e-3 * rng.standard_normal((K, z.shape[1])) * (z.std() + 1e-12)
    return Codebook(z[pick] + jitter)


def train_reference(dataset, spec: TokenizerSpec, config: TrainConfig = TrainConfig()):
    """Train the reference encoder/decoder and the shared codebook.

    Args:
        dataset: ``(N, W*D)`` matrix of flattened pose chunks.

    Returns:
        ``(encoder, decoder, codebook, history)``.
    """
    x = _check_dataset(dataset, spec.chunk_dim, "dataset")
    rng = np.random.default_rng(config.seed)
    enc = CoderNet.init(spec.encoder_widths(), rng, spec.activation)
    dec = CoderNet.init(spec.decoder_widths(), rng, spec.activation)
    codebook = _init_codebook(enc, x, spec.K, rng)
    history = History(initial_mse=reconstruction_mse(enc, dec, codebook, x))
    buffer = Reservoir(config.buffer_capacity, spec.d_z, rng)
    refresh = config.refresh_schedule()

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(x))
        used = []
        tot = np.zeros(3)
        for s in range(0, len(x), config.batch_size):
            xb = x[order[s : s + config.batch_size]]
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    loss, rec, vq, _, idx, z_e = _vq_step(enc, dec, codebook, xb, config, config.learning_rate, True)
            except FloatingPointError as exc:
                raise TrainingDiverged(f"epoch {epoch}: {exc}", history) from exc
            tot += np.array([loss, rec, vq]) * len(xb)
            used.append(idx)
            buffer.extend(z_e)
        tot /= len(x)
        rec_ = EpochRecord(epoch, *tot.tolist())
        if not np.all(np.isfinite(tot)):
            history.epochs.append(rec_)
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}", history)
        if epoch in refresh:
            counts = usage_counts(np.concatenate(used), spec.K)
            cold = cold_set(counts, config.tau_c)
            pool = buffer.contents()
            rec_.n_cold = int(cold.size)
            rec_.n_replaced = int(min(cold.size, len(pool)))
            codebook = refresh_cold_codes(codebook, cold, pool, seed=config.seed + epoch)
            buffer.reset()
        rec_.mse = rec_.rec / spec.chunk_dim
        history.epochs.append(rec_)

    history.final_mse = reconstruction_mse(enc, dec, codebook, x)
    return enc, dec, codebook, history


def mean_distill_loss(enc_new: CoderNet, enc_ref: CoderNet, x_new, x_ref) -> float:
    d = enc_new.forward(x_new) - enc_ref.forward(x_ref)
    return float((d * d).sum(axis=1).mean())


def train_new_morphology(x_new, x_ref, ref_enc: CoderNet, codebook: Codebook, spec: TokenizerSpec, config: TrainConfig = TrainConfig()):
    """Bring a new hand onto the shared codebook.

    Stage 1 fits the new encoder to the frozen reference encoder on paired
    chunks (distillation only). Stage 2 trains the new encoder and decoder on
    reconstruction + VQ + ``lambda_distill`` x distillation. The codebook is
    only modified in stage 2 and only if ``config.update_codebook_stage2``.

    Returns:
        ``(encoder, decoder, history)``; ``codebook`` is updated in place when
        stage-2 updates are enabled.
    """
    x_new = _check_dataset(x_new, spec.chunk_dim, "x_new")
    x_ref = _check_dataset(x_ref, ref_enc.in_dim, "x_ref")
    if len(x_new) != len(x_ref):
        raise ValueError(f"{len(x_new)} new chunks but {len(x_ref)} reference chunks")
    if ref_enc.out_dim != codebook.d_z or spec.d_z != codebook.d_z:
        raise ValueError("latent widths of the reference encoder, spec and codebook disagree")
    rng = np.random.default_rng(config.seed)
    enc = CoderNet.init(spec.encoder_widths(), rng, spec.activation)
    dec = CoderNet.init(spec.decoder_widths(), rng, spec.activation)
    target = ref_enc.forward(x_ref)
    history = History(distill_before=mean_distill_loss(enc, ref_enc, x_new, x_ref))

    stage1 = config.epochs if config.distill_epochs is None else config.distill_epochs
    lr = config.learning_rate
    for epoch in range(1, stage1 + 1):
        order = rng.permutation(len(x_new))
        total = 0.0
        for s in range(0, len(x_new), config.batch_size):
            sel = order[s : s + config.batch_size]
            z, cache = enc.forward(x_new[sel], keep=True)
            dd = z - target[sel]
            total += float((dd * dd).sum())
            grads, _ = enc.backward(cache, 2.0 * dd / len(sel))
            enc.apply_gradients(grads, lr)
        loss = total / len(x_new)
        history.epochs.append(EpochRecord(epoch, loss, 0.0, 0.0, distill=loss))
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite distillation loss at epoch {epoch}", history)
    history.distill_after = mean_distill_loss(enc, ref_enc, x_new, x_ref)

    for epoch in range(stage1 + 1, stage1 + config.epochs + 1):
        order = rng.permutation(len(x_new))
        tot = np.zeros(4)
        for s in range(0, len(x_new), config.batch_size):
            sel = order[s : s + config.batch_size]
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    loss, rec, vq, distill, _, _ = _vq_step(
                        enc, dec, codebook, x_new[sel], config, lr, config.update_codebook_stage2, target[sel]
                    )
            except FloatingPointError as exc:
                raise TrainingDiverged(f"epoch {epoch}: {exc}", history) from exc
            tot += np.array([loss, rec, vq, distill]) * len(sel)
        tot /= len(x_new)
        rec_ = EpochRecord(epoch, *tot.tolist(), mse=tot[1] / spec.chunk_dim)
        history.epochs.append(rec_)
        if not np.all(np.isfinite(tot)):
            raise TrainingDiverged(f"non-finite loss at epoch {epoch}", history)
    history.final_mse = reconstruction_mse(enc, dec, codebook, x_new)
    return enc, dec, history


def with_seed(config: TrainConfig, seed: int) -> TrainConfig:
    return replace(config, seed=seed)
