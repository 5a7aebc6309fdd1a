"""Cross-modal (image-video) NT-Xent loss with exact gradients.

For anchor ground embedding ``c_i`` the positive is the aerial embedding
``a_i``; every other ground and aerial embedding in the batch is a negative::

    l(c_i) = -log( exp(c_i.a_i / tau) /
                   (sum_{k!=i} exp(c_i.c_k / tau) + sum_{k!=i} exp(c_i.a_k / tau)) )

The positive is *not* part of the denominator, so per-anchor losses can be
negative. ``LossConfig(include_positive=True)`` switches to the usual
SimCLR-style denominator for comparison. With ``symmetrized=True`` the
aerial anchors are scored the same way and both directions are averaged.

Also holds a small linear-encoder trainer used to check that the loss
drives cross-view retrieval on synthetic pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .embeddings import l2_normalize


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.1
    symmetrized: bool = True
    include_positive: bool = False

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"temperature must be positive, got {self.tau}")


def _check_batch(ground, aerial, normalize: bool):
    c = np.asarray(ground, dtype=np.float64)
    a = np.asarray(aerial, dtype=np.float64)
    if c.ndim != 2 or c.shape != a.shape:
        raise ValueError(f"ground and aerial must be matching (N, D) arrays, got {c.shape} and {a.shape}")
    if c.shape[0] < 2:
        raise ValueError("need at least 2 pairs: the denominator is empty for N < 2")
    if normalize:
        return l2_normalize(c), l2_normalize(a)
    for name, m in (("ground", c), ("aerial", a)):
        err = np.abs(np.linalg.norm(m, axis=1) - 1.0).max()
        if err > 1e-4:
            raise ValueError(f"{name} rows are not L2-normalized (max deviation {err:.3g})")
    return c, a


def _forward(c: np.ndarray, a: np.ndarray, cfg: LossConfig):
    n = c.shape[0]
    z = np.vstack([c, a])
    logits = z @ z.T / cfg.tau
    rows = np.arange(2 * n)
    positive = (rows + n) % (2 * n)
    mask = np.ones_like(logits, dtype=bool)
    mask[rows, rows] = False
    if not cfg.include_positive:
        mask[rows, positive] = False
    masked = np.where(mask, logits, -np.inf)
    shift = masked.max(axis=1, keepdims=True)
    expd = np.exp(masked - shift)
    denom = expd.sum(axis=1, keepdims=True)
    lse = (shift + np.log(denom))[:, 0]
    per_anchor = lse - logits[rows, positive]
    return z, logits, mask, expd / denom, positive, per_anchor


def _weights(n: int, cfg: LossConfig) -> np.ndarray:
    if cfg.symmetrized:
        return np.full(2 * n, 1.0 / (2 * n))
    return np.concatenate([np.full(n, 1.0 / n), np.zeros(n)])


def anchor_losses(ground, aerial, cfg: LossConfig = LossConfig(), normalize: bool = False) -> np.ndarray:
    """Per-anchor losses, shape ``(2, N)``: row 0 ground anchors, row 1 aerial anchors."""
    c, a = _check_batch(ground, aerial, normalize)
    return _forward(c, a, cfg)[-1].reshape(2, -1)


def nt_xent_cross_modal(ground, aerial, cfg: LossConfig = LossConfig(), normalize: bool = False) -> float:
    """Mean loss over ground anchors, or over both directions when symmetrized.

    Rows must already be unit length unless ``normalize`` is set.
    """
    c, a = _check_batch(ground, aerial, normalize)
    per_anchor = _forward(c, a, cfg)[-1]
    return float(per_anchor @ _weights(c.shape[0], cfg))


def nt_xent_value_and_grad(ground, aerial, cfg: LossConfig = LossConfig()):
    """Loss and its gradient with respect to the raw (unnormalized) rows."""
    raw_c = np.asarray(ground, dtype=np.float64)
    raw_a = np.asarray(aerial, dtype=np.float64)
    c, a = _check_batch(raw_c, raw_a, normalize=True)
    n = c.shape[0]
    z, _, _, prob, positive, per_anchor = _forward(c, a, cfg)
    w = _weights(n, cfg)

    # d loss / d logits
    g = prob * w[:, None]
    g[np.arange(2 * n), positive] -= w
    dz = (g + g.T) @ z / cfg.tau

    # back through z = x / |x|
    norms = np.linalg.norm(np.vstack([raw_c, raw_a]), axis=1, keepdims=True)
    dx = (dz - z * np.sum(dz * z, axis=1, keepdims=True)) / norms
    return float(per_anchor @ w), dx[:n], dx[n:]


def nt_xent_gradient(ground, aerial, cfg: LossConfig = LossConfig()):
    """``(grad_ground, grad_aerial)`` of the loss with respect to the raw rows."""
    _, g_c, g_a = nt_xent_value_and_grad(ground, aerial, cfg)
    return g_c, g_a


# -- toy linear encoders -------------------------------------------------------


class DivergenceError(RuntimeError):
    pass


@dataclass
class ToyEncoders:
    w_ground: np.ndarray
    w_aerial: np.ndarray
    loss_history: list[float] = field(default_factory=list)

    def encode_ground(self, x) -> np.ndarray:
        return l2_normalize(np.asarray(x) @ self.w_ground)

    def encode_aerial(self, x) -> np.ndarray:
        return l2_normalize(np.asarray(x) @ self.w_aerial)


def init_toy_encoders(d_in: int, dim: int, seed: int = 0) -> ToyEncoders:
    rng = np.random.default_rng(seed)
    scale = 1.0 / np.sqrt(d_in)
    return ToyEncoders(rng.normal(0, scale, (d_in, dim)), rng.normal(0, scale, (d_in, dim)))


def _batches(n: int, batch_size: int, order: np.ndarray):
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        if len(idx) >= 2:
            yield idx


def train_toy_encoders(
    ground,
    aerial,
    dim: int,
    epochs: int = 30,
    lr: float = 0.5,
    cfg: LossConfig = LossConfig(),
    batch_size: int = 256,
    momentum: float = 0.9,
    seed: int = 0,
) -> ToyEncoders:
    """Fit two bias-free linear maps with mini-batch gradient descent on the loss.

    ``loss_history[e]`` is the mean batch loss over a fixed partition of the
    training set measured after epoch ``e`` (entry 0 is before training),
    so the history does not move when ``lr == 0``.
    """
    x_c = np.asarray(ground, dtype=np.float64)
    x_a = np.asarray(aerial, dtype=np.float64)
    n, d_in = x_c.shape
    if x_a.shape != x_c.shape:
        raise ValueError("ground and aerial latents must have the same shape")
    if n < 64:
        raise ValueError(f"need at least 64 training pairs, got {n}")
    if d_in < dim:
        raise ValueError(f"input dimension {d_in} smaller than embedding dimension {dim}")

    enc = init_toy_encoders(d_in, dim, seed)
    rng = np.random.default_rng(seed + 1)
    fixed = list(_batches(n, batch_size, np.arange(n)))

    def epoch_loss():
        losses = [nt_xent_cross_modal(x_c[i] @ enc.w_ground, x_a[i] @ enc.w_aerial, cfg, normalize=True) for i in fixed]
        return float(np.mean(losses))

    enc.loss_history.append(epoch_loss())
    vel_c = np.zeros_like(enc.w_ground)
    vel_a = np.zeros_like(enc.w_aerial)
    for epoch in range(1, epochs + 1):
        for idx in _batches(n, batch_size, rng.permutation(n)):
            loss, g_c, g_a = nt_xent_value_and_grad(x_c[idx] @ enc.w_ground, x_a[idx] @ enc.w_aerial, cfg)
            if not np.isfinite(loss):
                raise DivergenceError(f"loss diverged at epoch {epoch}")
            vel_c = momentum * vel_c - lr * (x_c[idx].T @ g_c)
            vel_a = momentum * vel_a - lr * (x_a[idx].T @ g_a)
            enc.w_ground += vel_c
            enc.w_aerial += vel_a
        loss = epoch_loss()
        if not np.isfinite(loss):
            raise DivergenceError(f"loss diverged at epoch {epoch}")
        enc.loss_history.append(loss)
    return enc


# -- self checks -----------------------------------------------------------------


def nt_xent_loop(ground, aerial, cfg: LossConfig = LossConfig()) -> float:
    """Scalar double-loop evaluation of the loss on unit rows (slow, for checking)."""
    c = [list(map(float, r)) for r in np.asarray(ground, dtype=np.float64)]
    a = [list(map(float, r)) for r in np.asarray(aerial, dtype=np.float64)]
    n = len(c)

    def dot(u, v):
        return sum(x * y for x, y in zip(u, v))

    def direction(anchor, same, other):
        total = 0.0
        for i in range(n):
            pos = math.exp(dot(anchor[i], other[i]) / cfg.tau)
            den = pos if cfg.include_positive else 0.0
            for k in range(n):
                if k != i:
                    den += math.exp(dot(anchor[i], same[k]) / cfg.tau)
                    den += math.exp(dot(anchor[i], other[k]) / cfg.tau)
            total += -math.log(pos / den)
        return total / n

    forward = direction(c, c, a)
    if not cfg.symmetrized:
        return forward
    return 0.5 * (forward + direction(a, a, c))


def finite_difference_grad(ground, aerial, cfg: LossConfig = LossConfig(), h: float = 1e-5):
    """Central-difference gradient of the loss with respect to the raw rows."""
    c = np.array(ground, dtype=np.float64)
    a = np.array(aerial, dtype=np.float64)
    grads = []
    for m in (c, a):
        g = np.zeros_like(m)
        for idx in np.ndindex(m.shape):
            orig = m[idx]
            m[idx] = orig + h
            up = nt_xent_cross_modal(c, a, cfg, normalize=True)
            m[idx] = orig - h
            down = nt_xent_cross_modal(c, a, cfg, normalize=True)
            m[idx] = orig
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads[0], grads[1]


def run_loss_checks(trials: int = 100, seed: int = 0) -> dict:
    """Loop-oracle and finite-difference agreement over random batches."""
    rng = np.random.default_rng(seed)
    max_value_err = 0.0
    max_grad_rel = 0.0
    for _ in range(trials):
        n = int(rng.integers(2, 17))
        d = int(rng.integers(4, 65))
        cfg = LossConfig(tau=float(rng.uniform(0.05, 1.0)))
        c = rng.standard_normal((n, d))
        a = rng.standard_normal((n, d))
        cu, au = l2_normalize(c), l2_normalize(a)
        max_value_err = max(max_value_err, abs(nt_xent_cross_modal(cu, au, cfg) - nt_xent_loop(cu, au, cfg)))
        g_c, g_a = nt_xent_gradient(c, a, cfg)
        f_c, f_a = finite_difference_grad(c, a, cfg)
        analytic = np.concatenate([g_c.ravel(), g_a.ravel()])
        numeric = np.concatenate([f_c.ravel(), f_a.ravel()])
        rel = np.abs(analytic - numeric).max() / max(np.abs(numeric).max(), 1e-12)
        max_grad_rel = max(max_grad_rel, float(rel))
    same = np.ones((2, 3)) / np.sqrt(3)
    ortho = np.eye(2)
    return {
        "trials": trials,
        "seed": seed,
        "max_abs_value_error_vs_loop": max_value_err,
        "max_rel_gradient_error_vs_fd": max_grad_rel,
        "identical_batch_anchor_loss": float(anchor_losses(same, same)[0, 0]),
        "orthogonal_pair_anchor_loss_tau_0.5": float(anchor_losses(ortho, ortho, LossConfig(tau=0.5))[0, 0]),
        "passed": bool(max_value_err < 1e-10 and max_grad_rel < 1e-4),
    }
