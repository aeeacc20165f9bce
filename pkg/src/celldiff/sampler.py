"""Reverse-process inference: one-step infilling (the default), iterative
schedule-driven generation from the fully-masked prior, and reconstruction
evaluation at a fixed corruption level.

The per-step unmasking rule is count-exact: the masked count after
completing the step at level t_k equals round(t_{k-1} * L_eligible), so
the schedule invariants are testable without fractional ambiguity.  With
low-confidence remasking enabled, the candidates committed at each step
are the highest-confidence ones (confidence = model probability of the
chosen token); the rest stay masked.  Committed tokens are never revised.

Decoding is restricted to gene tokens; specials are excluded from the
candidate distribution.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffusion
from .serialization import LAT_ID, MASK_ID, N_SPECIAL, SerializedCell
from .tensor import no_grad
from .trainer import collate, _derive_seed


class ScheduleError(ValueError):
    pass


class CompatibilityError(RuntimeError):
    pass


@dataclass
class Schedule:
    times: list      # strictly increasing, times[0] = 0, times[-1] = 1

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        if len(t) < 2 or t[0] != 0.0 or t[-1] != 1.0:
            raise ScheduleError("schedule must run exactly from 0 to 1")
        if not (np.diff(t) > 0).all():
            raise ScheduleError("schedule times must be strictly increasing")
        self.times = [float(x) for x in t]

    @property
    def n_steps(self):
        return len(self.times) - 1

    @classmethod
    def linear(cls, n_steps):
        return cls(list(np.linspace(0.0, 1.0, n_steps + 1)))

    @classmethod
    def cosine(cls, n_steps):
        k = np.arange(n_steps + 1)
        return cls(list((1.0 - np.cos(np.pi * k / n_steps)) / 2.0))


@dataclass
class GenerationResult:
    tokens: np.ndarray          # (L,) gene token ids, LAT excluded
    values: np.ndarray          # (L,)
    masked_after_step: list     # masked counts after each completed step


def target_masked_count(t, n_eligible):
    return int(np.rint(t * n_eligible))


def _candidate_probs(logits, temperature):
    """Softmax over gene tokens only; specials get zero probability."""
    z = logits / max(temperature, 1e-8)
    z[..., :N_SPECIAL] = -np.inf
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def one_step_infer(model, corrupted):
    """Fill every masked position in a single denoiser pass (argmax token,
    predicted value); unmasked positions pass through untouched."""
    with no_grad():
        out = model.denoise(corrupted)
    tokens = corrupted.originals.tokens.copy()
    values = corrupted.originals.values.copy()
    tokens[~corrupted.mask] = corrupted.tokens[~corrupted.mask]
    values[~corrupted.mask] = corrupted.values[~corrupted.mask]
    logits = out.id_logits.data.copy()
    logits[..., :N_SPECIAL] = -np.inf
    pred_tok = logits.argmax(axis=-1)
    tokens[corrupted.mask] = pred_tok[corrupted.mask]
    values[corrupted.mask] = out.value_pred.data[corrupted.mask]
    return tokens, values


def _refine(model, tokens, values, pad_mask, masked, levels, rng, remask,
            temperature, argmax):
    """Shared reverse loop: unmask down the `levels` ladder (descending,
    levels[-1] must be 0).  Mutates tokens/values/masked in place."""
    B, L = tokens.shape
    eligible = (~pad_mask) & (np.arange(L)[None, :] > 0)
    n_eligible = eligible.sum(axis=1)
    masked_after = []
    for k in range(len(levels) - 1):
        t_k, t_next = levels[k], levels[k + 1]
        if not masked.any():
            masked_after.append([0] * B)
            continue
        with no_grad():
            out = model.forward(tokens, values, pad_mask, t_k)
        probs = _candidate_probs(out.id_logits.data, temperature)
        for b in range(B):
            idx = np.flatnonzero(masked[b])
            if len(idx) == 0:
                continue
            p = probs[b, idx]
            if argmax:
                cand = p.argmax(axis=-1)
            else:
                u = rng.random(len(idx))
                cdf = p.cumsum(axis=-1)
                cand = (u[:, None] < cdf).argmax(axis=-1)
            conf = p[np.arange(len(idx)), cand]
            target = target_masked_count(t_next, n_eligible[b])
            n_unmask = max(len(idx) - target, 0)
            if n_unmask == 0:
                continue
            if remask:
                commit = idx[np.argsort(-conf, kind="stable")[:n_unmask]]
                commit_cand = cand[np.argsort(-conf, kind="stable")[:n_unmask]]
            else:
                pick = rng.permutation(len(idx))[:n_unmask]
                commit, commit_cand = idx[pick], cand[pick]
            tokens[b, commit] = commit_cand
            values[b, commit] = out.value_pred.data[b, commit]
            masked[b, commit] = False
        masked_after.append(masked.sum(axis=1).tolist())
    return masked_after


def generate(model, length, schedule, seed, remask=True, temperature=1.0,
             argmax=False):
    """Sample one sequence from the fully-masked prior (Schedule endpoint 1)
    down to zero masked positions."""
    L = length + 1                      # LAT + genes
    tokens = np.full((1, L), MASK_ID, dtype=np.int64)
    tokens[0, 0] = LAT_ID
    values = np.zeros((1, L))
    pad_mask = np.zeros((1, L), dtype=bool)
    masked = np.zeros((1, L), dtype=bool)
    masked[0, 1:] = True
    rng = np.random.default_rng(_derive_seed(seed, "generate"))
    levels = list(reversed(schedule.times))      # 1 ... 0
    masked_after = _refine(model, tokens, values, pad_mask, masked, levels,
                           rng, remask, temperature, argmax)
    return GenerationResult(tokens=tokens[0, 1:].copy(),
                            values=values[0, 1:].copy(),
                            masked_after_step=[m[0] for m in masked_after])


@dataclass
class ReconRecord:
    cell_id: str
    truth_tokens: list
    truth_values: list
    pred_tokens: list
    pred_values: list
    masked_positions: list


def reconstruct_eval(model, cells, t, mode="one-step", steps=32, seed=0,
                     l_max=None, batch_size=64, fingerprint=None,
                     expected_fingerprint=None):
    """Corrupt serialized cells at a fixed time t and reconstruct them.

    mode "one-step" fills everything in one pass; mode "schedule" walks
    `steps` levels from t down to 0 committing highest-confidence argmax
    candidates first.  Emits aligned (truth, prediction) records.
    """
    if fingerprint is not None and expected_fingerprint is not None \
            and fingerprint != expected_fingerprint:
        raise CompatibilityError(
            "serialization stats fingerprint does not match the one the "
            "model was trained with")
    if mode not in ("one-step", "schedule"):
        raise ScheduleError(f"unknown reconstruction mode {mode!r}")
    if l_max is None:
        l_max = max(len(c) for c in cells)
    records = []
    for lo in range(0, len(cells), batch_size):
        chunk = cells[lo:lo + batch_size]
        batch = collate(chunk, l_max)
        corrupted = diffusion.forward_mask(
            batch, t, _derive_seed(seed, "recon", lo))
        if mode == "one-step":
            tokens, values = one_step_infer(model, corrupted)
        else:
            tokens = corrupted.tokens.copy()
            values = corrupted.values.copy()
            masked = corrupted.mask.copy()
            levels = list(np.linspace(t, 0.0, steps + 1))
            rng = np.random.default_rng(_derive_seed(seed, "refine", lo))
            _refine(model, tokens, values, batch.pad_mask, masked, levels,
                    rng, remask=True, temperature=1.0, argmax=True)
        for b, cell in enumerate(chunk):
            n = len(cell)
            records.append(ReconRecord(
                cell_id=cell.cell_id,
                truth_tokens=list(cell.tokens),
                truth_values=list(cell.values),
                pred_tokens=[int(x) for x in tokens[b, 1:1 + n]],
                pred_values=[float(x) for x in values[b, 1:1 + n]],
                masked_positions=[int(i - 1) for i in
                                  np.flatnonzero(corrupted.mask[b])]))
    return records
