"""celldiff: masked discrete diffusion over entropy-serialized
single-cell expression sequences.

Submodules:
  data_io        sparse matrix I/O, filtering, normalization, synthetic data
  serialization  entropy-normalized gene ranking and token sequences
  diffusion      absorbing-state forward corruption process
  tensor/optim/gradcheck/checkpoint
                 float64 reverse-mode autodiff, AdamW, finite-difference
                 verification, bit-exact checkpoints
  denoiser       bidirectional dual-head transformer
  objective      masked cross-entropy + weighted value regression
  trainer        seeded, resumable training loop
  sampler        one-step infilling and schedule-driven generation
  metrics        reconstruction / integration / perturbation metrics
  cli            command-line pipeline
"""

__version__ = "0.1.0"

from . import (checkpoint, data_io, denoiser, diffusion, gradcheck, metrics,
               objective, optim, sampler, serialization, tensor, trainer)

__all__ = ["checkpoint", "data_io", "denoiser", "diffusion", "gradcheck",
           "metrics", "objective", "optim", "sampler", "serialization",
           "tensor", "trainer", "__version__"]
