"""The evaluation metrics on worked examples.

Run:  python3 demos/05_metrics.py
"""

import numpy as np

from celldiff.metrics import (PerturbDelta, avg_batch, avg_bio, bleu,
                              cluster_embeddings, l_dist, spearman, wmse)

print("rank metrics")
print(f"  L-Dist identity      {l_dist([1, 2, 3, 4], [1, 2, 3, 4]):.3f}")
print(f"  L-Dist full reversal {l_dist([1, 2, 3, 4], [4, 3, 2, 1]):.3f}")
print(f"  BLEU adjacent swap   "
      f"{bleu(['a', 'b', 'c', 'd'], ['a', 'b', 'd', 'c'], max_n=2):.4f} "
      f"(= sqrt(1/3))")
print(f"  Spearman one swap    {spearman([1, 2, 3], [1, 3, 2]):.3f}")

print("\nintegration metrics on toy embeddings")
rng = np.random.default_rng(0)
types = np.repeat([0, 1, 2], 40)
batches = np.tile([0, 1], 60)
centers = np.array([[0, 0], [6, 0], [0, 6]])
mixed = centers[types] + rng.normal(scale=0.4, size=(120, 2))
clusters = cluster_embeddings(mixed, 3, seed=0)
print(f"  batch-mixed:     Avg-Batch {avg_batch(mixed, batches):.3f}  "
      f"Avg-Bio {avg_bio(mixed, clusters, types):.3f}")
separated = mixed + np.array([20.0, 0.0]) * batches[:, None]
print(f"  batch-separated: Avg-Batch {avg_batch(separated, batches):.3f}")

print("\nperturbation metric")
delta = PerturbDelta(delta_true=[0.5, -0.2, 0.0],
                     delta_pred=[0.4, -0.1, 0.3],
                     mean_expression=[2.0, 1.0, 0.1])
print(f"  WMSE {wmse(delta):.4f} (errors on expressed genes weigh more)")
