import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from celldiff.denoiser import Denoiser, ModelConfig
from celldiff.serialization import N_SPECIAL, SerializedCell


def random_cells(rng, n_cells, vocab_size, min_len=3, max_len=8):
    """Distinct-gene serialized cells with positive values."""
    cells = []
    for b in range(n_cells):
        L = int(rng.integers(min_len, max_len + 1))
        genes = rng.choice(vocab_size - N_SPECIAL, size=L, replace=False)
        cells.append(SerializedCell(
            cell_id=f"cell{b}",
            tokens=[int(g) + N_SPECIAL for g in genes],
            values=[float(v) for v in rng.uniform(0.5, 3.0, L)]))
    return cells


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture(scope="session")
def tiny_model():
    return Denoiser(ModelConfig.tiny(), seed=7)


@pytest.fixture
def tiny_cells(rng, tiny_model):
    return random_cells(rng, 4, tiny_model.config.vocab_size)
