"""The absorbing-state forward process and the dropout observation map.

Shows how masking probability composes across a discretized chain and why
corrupting a serialized cell looks exactly like technical dropout.

Run:  python3 demos/02_diffusion.py
"""

import numpy as np

from celldiff import data_io, diffusion, serialization
from celldiff.trainer import collate

spec = data_io.SyntheticSpec(n_cells=10, rng_seed=0)
matrix, _ = data_io.generate_synthetic(spec)
matrix = data_io.log_normalize(matrix)
stats = serialization.compute_entropy(matrix)
vocab = serialization.GeneVocab(tuple(matrix.gene_names))
cells = serialization.serialize_matrix(matrix, stats, vocab, l_max=12)
batch = collate(cells, 12)

print("marginal masking at a few times (LAT and PAD never masked):")
for t in (0.0, 0.3, 0.7, 1.0):
    cor = diffusion.forward_mask(batch, t, seed=0)
    eligible = (~batch.pad_mask).sum() - len(cells)
    print(f"  t={t:.1f}: {cor.mask.sum():3d} of {eligible} tokens masked")

print("\nchain composition: surviving 0->0.3->0.6 equals the 0.6 marginal")
p1 = diffusion.discretized_step_prob(0.0, 0.3)
p2 = diffusion.discretized_step_prob(0.3, 0.6)
print(f"  (1-{p1:.3f}) * (1-{p2:.3f}) = {(1 - p1) * (1 - p2):.3f} = 1 - 0.6")

print("\ndropout view of one corrupted cell (gene kept / signal zeroed):")
cor = diffusion.forward_mask(batch, 0.5, seed=1)
for i in range(1, 9):
    token, value = diffusion.observe(int(cor.tokens[0, i]),
                                     float(cor.values[0, i]))
    state = "dropped" if token == 0 else vocab.name_for(token)
    print(f"  position {i}: {state:>9s}  value {value:.3f}")
