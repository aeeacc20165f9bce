"""Dual denoising loss: masked cross-entropy over gene identities plus a
weighted squared error over values, normalized per sequence by the size
of its masked set and then averaged over the batch.

The value term's weight lambda corresponds to a fixed-variance Gaussian
likelihood with sigma^2 = 1 / (2 * lambda).  Gradients flow only through
masked positions; sequences with an empty masked set are excluded from
the average (an error is raised only when every sequence is empty).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffusion
from .tensor import Tensor, no_grad


class DegenerateBatchError(ValueError):
    pass


@dataclass
class LossConfig:
    lambda_val: float = 10.0

    def __post_init__(self):
        if self.lambda_val < 0:
            raise ValueError("lambda must be non-negative")

    @property
    def sigma_sq(self):
        if self.lambda_val == 0:
            raise ValueError("sigma^2 undefined at lambda = 0")
        return 1.0 / (2.0 * self.lambda_val)


@dataclass
class LossBreakdown:
    id_loss: float
    val_loss: float
    total: float
    n_masked: int
    id_loss_raw_sum: float     # unnormalized sum, logged for transparency
    val_loss_raw_sum: float
    total_tensor: Tensor = None   # differentiable total, for the trainer


def dual_loss(output, corrupted, config):
    """Masked-set loss on a DenoiserOutput against its CorruptedBatch."""
    mask = corrupted.mask
    per_seq = mask.sum(axis=1)
    active = per_seq > 0
    if not active.any():
        raise DegenerateBatchError("every sequence has an empty masked set")

    b_idx, pos_idx = np.nonzero(mask)
    true_tokens = corrupted.originals.tokens[b_idx, pos_idx]
    true_values = corrupted.originals.values[b_idx, pos_idx]

    # per-element weight: 1/(n_active * |M_b|)
    weights = 1.0 / (active.sum() * per_seq[b_idx])

    logp = output.id_logits.log_softmax(axis=-1)
    picked = logp[b_idx, pos_idx, true_tokens]
    id_loss = -(picked * weights).sum()

    pred_v = output.value_pred[b_idx, pos_idx]
    sq = (pred_v - Tensor(true_values)) ** 2
    val_loss = (sq * weights).sum()

    total = id_loss + config.lambda_val * val_loss
    raw_id = float(-(picked.data).sum())
    raw_val = float(sq.data.sum())
    return LossBreakdown(
        id_loss=float(id_loss.data), val_loss=float(val_loss.data),
        total=float(total.data), n_masked=int(mask.sum()),
        id_loss_raw_sum=raw_id, val_loss_raw_sum=raw_val,
        total_tensor=total)


def elbo_estimate(model, batch, n_monte_carlo, seed):
    """Monte-Carlo estimate of the reverse-process identity term: the
    masked cross-entropy averaged over independent (t, mask) draws.

    Up to corruption-independent constants this lower-bounds the data
    log-likelihood; lower is better.
    """
    if n_monte_carlo < 1:
        raise ValueError("n_monte_carlo must be >= 1")
    rng = np.random.default_rng(seed)
    cfg = LossConfig(lambda_val=0.0)
    draws = []
    attempts = 0
    while len(draws) < n_monte_carlo:
        t = diffusion.sample_time(rng)
        attempts += 1
        corrupted = diffusion.forward_mask(batch, t, seed=int(rng.integers(2 ** 31)))
        if not (corrupted.mask.sum(axis=1) > 0).any():
            if attempts > 50 * n_monte_carlo:
                raise DegenerateBatchError("could not draw non-empty masks")
            continue
        with no_grad():
            out = model.denoise(corrupted)
            draws.append(dual_loss(out, corrupted, cfg).id_loss)
    return float(np.mean(draws))
