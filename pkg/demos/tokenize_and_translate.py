"""
A shared motion vocabulary for two hands
========================================

Short pose windows are encoded, snapped to the nearest of K code vectors
and decoded. A second hand, whose joints are a fixed linear mix of the
first, gets its own encoder and decoder aligned to the same codebook, so a
motion of one hand can be replayed on the other through the tokens.
"""

import numpy as np

from dexrefine.fixtures import paired_sequences, sinusoid_sequences
from dexrefine.tokenizer import (
    PoseChunkSpec,
    TokenizerSpec,
    TrainConfig,
    make_chunks,
    quantize_many,
    reconstruction_mse,
    train_new_morphology,
    train_reference,
    translate,
)

rng = np.random.default_rng(0)
ref_train = sinusoid_sequences(rng, 12)
ref_test = sinusoid_sequences(rng, 4)
new_train, new_test = paired_sequences(ref_train), paired_sequences(ref_test)

chunk = PoseChunkSpec(window=8, stride=4, dof=4)


def chunks(seqs):
    return np.vstack([make_chunks(s, chunk) for s in seqs])


spec = TokenizerSpec(K=32, d_z=16, window=8, stride=4, dof=4, hidden=(64, 64))
cfg = TrainConfig(learning_rate=0.03, epochs=200, seed=1, refresh_epochs=(50, 100, 150, 200))

enc, dec, codebook, hist = train_reference(chunks(ref_train), spec, cfg)
print(f"reference hand: reconstruction MSE {hist.initial_mse:.4f} -> {hist.final_mse:.5f}")
for e in hist.epochs:
    if e.n_cold is not None:
        print(f"  epoch {e.epoch}: {e.n_cold} cold codes refreshed")

# One sequence as a token string.
print("tokens:", quantize_many(codebook, enc.forward(make_chunks(ref_test[0], chunk))).tolist())

enc_new, dec_new, hist_new = train_new_morphology(chunks(new_train), chunks(ref_train), enc, codebook, spec, cfg)
print(f"\nsecond hand: latent distillation {hist_new.distill_before:.3f} -> {hist_new.distill_after:.2e}")

# Encode with the first hand, decode with the second.
x_ref, x_new = chunks(ref_test), chunks(new_test)
cross = np.mean((translate(enc, dec_new, codebook, x_ref) - x_new) ** 2)
own = reconstruction_mse(enc_new, dec_new, codebook, x_new)
print(f"held out: translation MSE {cross:.5f}, second hand's own reconstruction {own:.5f}")
