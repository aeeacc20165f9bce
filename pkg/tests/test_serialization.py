import math

import numpy as np
import pytest

from celldiff.data_io import ExpressionMatrix, ValidationError
from celldiff.serialization import (EmptyCellError, GeneVocab, LAT_ID, MASK_ID,
                                    N_SPECIAL, PAD_ID, SerializedCell,
                                    VocabError, compute_entropy, load_serialized,
                                    load_stats, rank_score, save_serialized,
                                    save_stats, serialize_cell,
                                    serialize_matrix, stats_fingerprint)
from oracles import entropy_oracle


def matrix_from_dense(dense, prefix="g"):
    dense = np.asarray(dense, dtype=float)
    rows, cols = np.nonzero(dense)
    return ExpressionMatrix(
        dense.shape[0], dense.shape[1], rows, cols, dense[rows, cols],
        [f"{prefix}{j}" for j in range(dense.shape[1])],
        [f"c{i}" for i in range(dense.shape[0])])


class TestVocab:
    def test_special_ids_fixed(self):
        assert (PAD_ID, MASK_ID, LAT_ID, N_SPECIAL) == (0, 1, 2, 3)

    def test_round_trip_and_specials(self):
        v = GeneVocab(("alpha", "beta"))
        assert v.size == 5
        assert v.id_for("beta") == 4
        assert v.name_for(4) == "beta"
        assert v.name_for(MASK_ID) == "[MASK]"
        assert v.is_special(LAT_ID) and not v.is_special(3)
        assert v.gene_index_from_id(v.gene_id_from_index(1)) == 1

    def test_unknown_rejected(self):
        v = GeneVocab(("alpha",))
        with pytest.raises(VocabError):
            v.id_for("nope")
        with pytest.raises(VocabError):
            v.name_for(99)
        with pytest.raises(VocabError):
            v.gene_index_from_id(LAT_ID)


class TestEntropy:
    def test_two_equal_mass_bins_give_ln2(self):
        # half the cells at value 1, half at 2 -> H = ln 2
        dense = np.zeros((8, 1))
        dense[:4, 0] = 1.0
        dense[4:, 0] = 2.0
        stats = compute_entropy(matrix_from_dense(dense), n_bins=2)
        np.testing.assert_allclose(stats.entropy[0], math.log(2), rtol=1e-12)

    def test_half_quarter_quarter_distribution(self):
        # zeros take one bin (p=1/2); nonzero values split the rest evenly
        dense = np.zeros((8, 1))
        dense[:2, 0] = 1.0
        dense[2:4, 0] = 5.0
        stats = compute_entropy(matrix_from_dense(dense), n_bins=3)
        expected = entropy_oracle([0.5, 0.25, 0.25])
        np.testing.assert_allclose(stats.entropy[0], expected, rtol=1e-12)
        np.testing.assert_allclose(stats.entropy[0], 1.0397207708399179,
                                   rtol=1e-12)

    def test_entropy_bounded_by_log_bins(self, rng):
        dense = rng.poisson(2.0, size=(60, 10)).astype(float)
        for binning in ("quantile", "fixed-width"):
            for n_bins in (2, 4, 32):
                stats = compute_entropy(matrix_from_dense(dense),
                                        n_bins=n_bins, binning=binning)
                assert (stats.entropy <= math.log(n_bins) + 1e-12).all()
                assert (stats.entropy >= 0).all()

    def test_constant_gene_has_zero_entropy(self):
        dense = np.full((10, 1), 3.0)
        stats = compute_entropy(matrix_from_dense(dense), n_bins=8)
        np.testing.assert_allclose(stats.entropy[0], 0.0, atol=1e-15)

    def test_all_zero_gene_has_zero_entropy(self):
        dense = np.zeros((5, 2))
        dense[:, 0] = 1.0
        stats = compute_entropy(matrix_from_dense(dense), n_bins=4)
        assert stats.entropy[1] == 0.0

    def test_fixed_width_matches_hand_binning(self):
        # values 0..4 with zeros; 2 equal-width bins over [0, 4]
        dense = np.array([[0.0], [1.0], [1.0], [3.0], [4.0], [4.0]])
        stats = compute_entropy(matrix_from_dense(dense), n_bins=2,
                                binning="fixed-width")
        # bin 1 [0,2): zero + two 1s; bin 2 [2,4]: 3,4,4
        np.testing.assert_allclose(stats.entropy[0],
                                   entropy_oracle([0.5, 0.5]), rtol=1e-12)

    def test_invalid_parameters(self):
        m = matrix_from_dense(np.ones((2, 1)))
        with pytest.raises(ValidationError):
            compute_entropy(m, n_bins=1)
        with pytest.raises(ValidationError):
            compute_entropy(m, binning="magic")


class TestSerialization:
    def test_rank_score_formula(self):
        np.testing.assert_allclose(
            rank_score([2.0, 3.0], [1.0, 0.0], 1e-6),
            [2.0 / (1.0 + 1e-6), 3.0 / 1e-6])
        with pytest.raises(ValidationError):
            rank_score([1.0], [1.0], 0.0)

    def test_low_entropy_gene_outranks_higher_value(self):
        # gene 1 varies across cells (high H); gene 0 is informative (low H)
        dense = np.zeros((8, 2))
        dense[0, 0] = 2.0
        dense[:, 1] = np.arange(8) + 1.0
        m = matrix_from_dense(dense)
        stats = compute_entropy(m, n_bins=8)
        vocab = GeneVocab(tuple(m.gene_names))
        cell = serialize_cell(m, 0, stats, vocab, l_max=10)
        assert cell.tokens[0] == N_SPECIAL + 0
        assert cell.values == [2.0, 1.0]

    def test_descending_score_with_token_tiebreak(self):
        dense = np.zeros((4, 3))
        dense[0] = [5.0, 5.0, 7.0]          # same entropy pattern per gene
        dense[1] = [5.0, 5.0, 7.0]
        dense[2] = [1.0, 1.0, 2.0]
        dense[3] = [1.0, 1.0, 2.0]
        m = matrix_from_dense(dense)
        stats = compute_entropy(m, n_bins=4)
        cell = serialize_cell(m, 0, stats, GeneVocab(tuple(m.gene_names)), 5)
        assert cell.tokens == [N_SPECIAL + 2, N_SPECIAL + 0, N_SPECIAL + 1]

    def test_l_max_truncation(self):
        dense = np.arange(1, 7, dtype=float).reshape(1, 6)
        m = matrix_from_dense(np.vstack([dense, dense * 2]))
        stats = compute_entropy(m, n_bins=4)
        cells = serialize_matrix(m, stats, GeneVocab(tuple(m.gene_names)), 3)
        assert all(len(c) == 3 for c in cells)

    def test_empty_cell_rejected(self):
        m = ExpressionMatrix(2, 2, [0], [0], [1.0], ["x", "y"], ["a", "b"])
        stats = compute_entropy(m, n_bins=2)
        with pytest.raises(EmptyCellError):
            serialize_cell(m, 1, stats, GeneVocab(("x", "y")), 5)

    def test_serialized_cell_validation(self):
        with pytest.raises(ValidationError):
            SerializedCell("c", [3, 3], [1.0, 2.0])
        with pytest.raises(ValidationError):
            SerializedCell("c", [3, 4], [1.0])


class TestPersistence:
    def test_stats_round_trip_exact(self, tmp_path, rng):
        dense = rng.poisson(3.0, size=(30, 5)).astype(float)
        m = matrix_from_dense(dense)
        stats = compute_entropy(m, n_bins=8)
        path = tmp_path / "stats.tsv"
        save_stats(stats, m.gene_names, path)
        loaded, names = load_stats(path)
        assert names == m.gene_names
        np.testing.assert_array_equal(loaded.entropy, stats.entropy)
        assert loaded.n_bins == 8 and loaded.binning == "quantile"
        for a, b in zip(loaded.bin_edges, stats.bin_edges):
            np.testing.assert_array_equal(a, b)

    def test_fingerprint_tracks_content(self, tmp_path, rng):
        dense = rng.poisson(3.0, size=(20, 4)).astype(float)
        m = matrix_from_dense(dense)
        path = tmp_path / "stats.tsv"
        save_stats(compute_entropy(m, n_bins=4), m.gene_names, path)
        f1 = stats_fingerprint(path)
        save_stats(compute_entropy(m, n_bins=8), m.gene_names, path)
        assert stats_fingerprint(path) != f1

    def test_serialized_round_trip(self, tmp_path):
        cells = [SerializedCell("a", [3, 5], [1.5, 0.5]),
                 SerializedCell("b", [4], [2.0])]
        path = tmp_path / "ser.jsonl"
        save_serialized(cells, path, fingerprint="fp123")
        back, fp = load_serialized(path)
        assert fp == "fp123"
        assert [c.cell_id for c in back] == ["a", "b"]
        assert back[0].tokens == [3, 5]
        assert back[0].values == [1.5, 0.5]
