"""Training loop: collation, corruption, forward/backward, AdamW steps,
checkpointing and CSV logging.

All randomness (epoch shuffling, diffusion times, per-cell masking) is
keyed by (seed, epoch/step indices), so a run can be resumed from any
checkpoint and reproduce the uninterrupted trace exactly.

Diffusion times are uniform on [0, 1) with one draw per micro-batch.
Draws are stratified over consecutive 100-step blocks (a shuffled
jittered grid), which keeps the marginal distribution exactly uniform
while flattening the variance of windowed loss averages.
"""

from __future__ import annotations

import csv
import hashlib
import math
import os
from dataclasses import dataclass, asdict

import numpy as np

from . import diffusion
from .checkpoint import save_checkpoint, load_checkpoint
from .diffusion import PaddedBatch
from .objective import DegenerateBatchError, LossConfig, dual_loss
from .optim import AdamW
from .serialization import LAT_ID, PAD_ID
from .tensor import ContractError

TIME_BLOCK = 100


class NumericalAbort(RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 32            # global batch
    grad_accum_steps: int = 1
    max_steps: int = 2000
    seed: int = 0
    checkpoint_interval: int = 1000
    log_interval: int = 100
    l_max: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    warmup_steps: int = 100
    lambda_val: float = 10.0

    def __post_init__(self):
        if self.batch_size % self.grad_accum_steps != 0:
            raise ValueError("batch_size must be divisible by grad_accum_steps")

    @property
    def micro_batch(self):
        return self.batch_size // self.grad_accum_steps

    def to_dict(self):
        return asdict(self)


def _derive_seed(*parts):
    digest = hashlib.blake2b("|".join(str(p) for p in parts).encode(),
                             digest_size=8).digest()
    return int.from_bytes(digest, "little") >> 1


def collate(cells, l_max, vocab=None):
    """LAT at index 0, genes at 1.., PAD to l_max + 1 total length."""
    if not cells:
        raise ContractError("empty batch")
    L = l_max + 1
    B = len(cells)
    tokens = np.full((B, L), PAD_ID, dtype=np.int64)
    values = np.zeros((B, L))
    pad_mask = np.ones((B, L), dtype=bool)
    for b, cell in enumerate(cells):
        if len(cell) > l_max:
            raise ContractError(
                f"cell {cell.cell_id!r} has length {len(cell)} > l_max "
                f"{l_max}; serialization should have capped it")
        tokens[b, 0] = LAT_ID
        tokens[b, 1:1 + len(cell)] = cell.tokens
        values[b, 1:1 + len(cell)] = cell.values
        pad_mask[b, :1 + len(cell)] = False
    return PaddedBatch(tokens=tokens, values=values, pad_mask=pad_mask,
                       cell_ids=[c.cell_id for c in cells])


def stratified_time(seed, micro_counter):
    """Uniform [0,1) diffusion time, stratified within 100-draw blocks."""
    block, idx = divmod(micro_counter, TIME_BLOCK)
    rng = np.random.default_rng(_derive_seed(seed, "tblock", block))
    perm = rng.permutation(TIME_BLOCK)
    jitter = rng.random(TIME_BLOCK)
    return float((perm[idx] + jitter[idx]) / TIME_BLOCK)


def steps_per_epoch(n_cells, batch_size):
    return math.ceil(n_cells / batch_size)


def train_step(model, optimizer, micro_batches, loss_cfg, step, seed):
    """One optimizer step over `micro_batches` collated PaddedBatch-es.

    Each micro-batch draws its own diffusion time; gradients are averaged
    across micro-batches before a single AdamW update.
    """
    optimizer.zero_grad()
    accum = len(micro_batches)
    id_sum = val_sum = tot_sum = masked_sum = 0.0
    t_last = 0.0
    for m, batch in enumerate(micro_batches):
        counter = step * accum + m
        t = stratified_time(seed, counter)
        breakdown = None
        for attempt in range(20):
            mask_seed = _derive_seed(seed, "mask", step, m, attempt)
            corrupted = diffusion.forward_mask(batch, t, mask_seed)
            try:
                out = model.forward(corrupted.tokens, corrupted.values,
                                    batch.pad_mask, t)
                breakdown = dual_loss(out, corrupted, loss_cfg)
                break
            except DegenerateBatchError:
                # t near 0 legitimately yields empty mask sets; redraw t
                t = float(np.random.default_rng(
                    _derive_seed(seed, "tretry", counter, attempt)).random())
        if breakdown is None:
            raise NumericalAbort(f"step {step}: no non-empty mask in 20 draws")
        if not np.isfinite(breakdown.total):
            raise NumericalAbort(
                f"non-finite loss at step {step}, t={t:.4f}, "
                f"cells={batch.cell_ids[:4]}...")
        (breakdown.total_tensor * (1.0 / accum)).backward()
        id_sum += breakdown.id_loss
        val_sum += breakdown.val_loss
        tot_sum += breakdown.total
        masked_sum += breakdown.n_masked / len(batch.cell_ids)
        t_last = t
    optimizer.step()
    return {"step": step, "t": t_last, "mean_masked": masked_sum / accum,
            "id_loss": id_sum / accum, "val_loss": val_sum / accum,
            "total": tot_sum / accum}


LOG_FIELDS = ["step", "t", "mean_masked", "id_loss", "val_loss", "total"]


def fit(cells, model, cfg, out_dir, resume_from=None, verbose=False,
        extra_state=None):
    """Run the training loop for cfg.max_steps steps.

    Returns (final checkpoint path, list of per-step log rows).  Writes
    checkpoints/step_*.bin and train_log.csv under out_dir.
    """
    os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)
    loss_cfg = LossConfig(lambda_val=cfg.lambda_val)
    optimizer = AdamW(model.parameters(), lr=cfg.lr,
                      betas=(cfg.beta1, cfg.beta2), eps=cfg.adam_eps,
                      weight_decay=cfg.weight_decay,
                      warmup_steps=cfg.warmup_steps)
    start_step = 0
    if resume_from is not None:
        arrays, extra = load_checkpoint(resume_from)
        model.load_arrays(arrays)
        optimizer.load_state_arrays(arrays, extra["step"])
        start_step = int(extra["step"])

    n = len(cells)
    spe = steps_per_epoch(n, cfg.batch_size)
    rows = []
    log_path = os.path.join(out_dir, "train_log.csv")
    mode = "a" if (resume_from is not None and os.path.exists(log_path)) else "w"
    with open(log_path, mode, newline="") as log_fh:
        writer = csv.DictWriter(log_fh, fieldnames=LOG_FIELDS)
        if mode == "w":
            writer.writeheader()
        ckpt_path = None
        for step in range(start_step, cfg.max_steps):
            epoch, batch_index = divmod(step, spe)
            perm = np.random.default_rng(
                _derive_seed(cfg.seed, "shuffle", epoch)).permutation(n)
            chunk = perm[batch_index * cfg.batch_size:
                         (batch_index + 1) * cfg.batch_size]
            selected = [cells[i] for i in chunk]
            micro_batches = [
                collate(selected[j:j + cfg.micro_batch], cfg.l_max)
                for j in range(0, len(selected), cfg.micro_batch)]
            row = train_step(model, optimizer, micro_batches, loss_cfg,
                             step, cfg.seed)
            rows.append(row)
            writer.writerow({k: repr(row[k]) if isinstance(row[k], float)
                             else row[k] for k in LOG_FIELDS})
            if verbose and (step + 1) % cfg.log_interval == 0:
                print(f"step {step + 1}/{cfg.max_steps} "
                      f"id={row['id_loss']:.4f} val={row['val_loss']:.4f}")
            done = step + 1
            if done % cfg.checkpoint_interval == 0 or done == cfg.max_steps:
                ckpt_path = os.path.join(out_dir, "checkpoints",
                                         f"step_{done}.bin")
                _save(model, optimizer, cfg, done, ckpt_path, extra_state)
    return ckpt_path, rows


def _save(model, optimizer, cfg, step, path, extra_state=None):
    arrays = dict(model.state_arrays())
    arrays.update(optimizer.state_arrays())
    extra = {"step": step,
             "model_config": model.config.to_dict(),
             "train_config": cfg.to_dict()}
    if extra_state:
        extra.update(extra_state)
    save_checkpoint(path, arrays, extra=extra)
