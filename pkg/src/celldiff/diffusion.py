"""Continuous-time absorbing-state forward corruption and its discretized
Markov chain, plus the dropout observation map.

A token keeps its identity with probability (1 - t) and falls into the
absorbing MASK state with probability t; once masked it stays masked.
Masking randomness is counter-based and keyed per (seed, cell_id, t), so
corruption of one cell never depends on batch composition.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .serialization import LAT_ID, MASK_ID, PAD_ID

MASKED_VALUE_SENTINEL = 0.0


class DomainError(ValueError):
    pass


class ContractViolation(RuntimeError):
    pass


@dataclass
class PaddedBatch:
    """Collated, uncorrupted batch: LAT at index 0, PAD at the tail."""

    tokens: np.ndarray         # (B, L) int64
    values: np.ndarray         # (B, L) float64
    pad_mask: np.ndarray       # (B, L) bool, True at PAD positions
    cell_ids: list

    @property
    def shape(self):
        return self.tokens.shape


@dataclass
class CorruptedBatch:
    tokens: np.ndarray         # (B, L) with MASK at corrupted positions
    values: np.ndarray         # (B, L) with sentinel at corrupted positions
    mask: np.ndarray           # (B, L) bool, True iff position is in M_t
    t: float
    originals: PaddedBatch

    def masked_counts(self):
        return self.mask.sum(axis=1)


def _check_time(t):
    t = float(t)
    if not (0.0 <= t <= 1.0):
        raise DomainError(f"diffusion time {t} outside [0, 1]")
    return t


def transition_prob(original, corrupted, t):
    """q(x_t = corrupted | x_0 = original) for a single token."""
    t = _check_time(t)
    if corrupted == original:
        return 1.0 - t
    if corrupted == MASK_ID:
        return t
    return 0.0


def discretized_step_prob(t_prev, t_next):
    """Per-step mask probability for a still-unmasked token going from
    t_prev to t_next; masked tokens stay masked with probability 1."""
    t_prev, t_next = _check_time(t_prev), _check_time(t_next)
    if t_prev >= 1.0:
        raise DomainError("t_prev = 1 is the absorbing boundary")
    if t_next < t_prev:
        raise DomainError("t_next must be >= t_prev")
    return (t_next - t_prev) / (1.0 - t_prev)


def sample_time(rng):
    """t ~ Unif[0, 1)."""
    return float(rng.random())


def cell_rng(seed, cell_id, t):
    """Counter-based generator keyed by (seed, cell_id, t)."""
    t_bits = np.float64(t).view(np.uint64)
    digest = hashlib.blake2b(
        f"{seed}|{cell_id}|{int(t_bits)}".encode(), digest_size=16).digest()
    key = np.frombuffer(digest, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def forward_mask(batch, t, seed):
    """Independently mask each eligible position with probability t.

    LAT and PAD positions are never eligible.  Values at masked positions
    are replaced by the sentinel; the MASK token itself carries the
    "masked" signal.
    """
    t = _check_time(t)
    tokens = batch.tokens.copy()
    values = batch.values.copy()
    eligible = ~batch.pad_mask & (batch.tokens != LAT_ID)
    mask = np.zeros_like(eligible)
    for b, cell_id in enumerate(batch.cell_ids):
        rng = cell_rng(seed, cell_id, t)
        draw = rng.random(tokens.shape[1]) < t
        mask[b] = draw & eligible[b]
    tokens[mask] = MASK_ID
    values[mask] = MASKED_VALUE_SENTINEL
    return CorruptedBatch(tokens=tokens, values=values, mask=mask, t=t,
                          originals=batch)


def observe(token, value):
    """Dropout observation map: identity on genes, zero signal for MASK."""
    if token == PAD_ID:
        raise ContractViolation("observe() is undefined on PAD positions")
    if token == MASK_ID:
        return 0, 0.0
    return int(token), float(value)
