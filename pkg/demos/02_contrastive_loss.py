"""The image-video contrastive loss, its gradient, and a toy encoder trained with it.

Run: python3 demos/02_contrastive_loss.py
"""

import math

import numpy as np

from vidgeo.embeddings import build_gallery, l2_normalize, top_k_batch
from vidgeo.loss import LossConfig, anchor_losses, init_toy_encoders, run_loss_checks, train_toy_encoders
from vidgeo.synth import gen_latent_pairs

# The positive is not in the denominator, so an anchor's loss can go below zero.
e = np.eye(2)
print("orthogonal pairs, tau=0.5:", anchor_losses(e, e, LossConfig(tau=0.5))[0], "expected", math.log(2) - 2)
same = np.tile(l2_normalize([1.0, 1.0, 1.0]), (2, 1))
print("identical rows:", anchor_losses(same, same)[0], "expected", math.log(2))

# Vectorized loss against a scalar loop, gradient against finite differences.
checks = run_loss_checks(trials=20, seed=0)
print(f"loop error {checks['max_abs_value_error_vs_loop']:.1e}, gradient error {checks['max_rel_gradient_error_vs_fd']:.1e}")

# Ground and aerial latents are noisy copies; two linear maps learn to align them.
ground, aerial = gen_latent_pairs(2500, 64, noise=0.1, seed=3)
enc = train_toy_encoders(ground[:2000], aerial[:2000], dim=32, epochs=15)
print("loss per epoch:", " ".join(f"{v:.2f}" for v in enc.loss_history))


def recall_at_1(encoders):
    ids = [f"a{i}" for i in range(500)]
    gallery = build_gallery(ids, encoders.encode_aerial(aerial[2000:]))
    hits = top_k_batch(gallery, encoders.encode_ground(ground[2000:]), 1)
    return np.mean([r.ids[0] == i for r, i in zip(hits, ids)])


print(f"held-out recall@1: random init {recall_at_1(init_toy_encoders(64, 32)):.3f}, trained {recall_at_1(enc):.3f}")
