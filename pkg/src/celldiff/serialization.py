"""Entropy-normalized serialization: population gene entropy, per-cell
ranking scores, and fixed-length token/value sequences.

A gene's Shannon entropy is computed from a binned distribution of its
values across *all* cells (zeros included), so ubiquitously expressed
genes are penalized in the ranking score v / (H + eps).  The total number
of bins is always n_bins (for quantile binning over nonzero values, one
bin is reserved for zero whenever the gene has any zero cells), which
keeps H <= ln(n_bins) in both binning modes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .data_io import ValidationError

PAD_TOKEN = "[PAD]"
MASK_TOKEN = "[MASK]"
LAT_TOKEN = "[LAT]"
PAD_ID = 0
MASK_ID = 1
LAT_ID = 2
N_SPECIAL = 3


class VocabError(KeyError):
    pass


class EmptyCellError(ValueError):
    pass


@dataclass(frozen=True)
class GeneVocab:
    """Dense mapping: special ids 0..2, then gene ids 3..|V|-1."""

    gene_names: tuple

    @property
    def size(self):
        return N_SPECIAL + len(self.gene_names)

    def id_for(self, name):
        try:
            return N_SPECIAL + self._index()[name]
        except KeyError:
            raise VocabError(f"unknown gene name {name!r}")

    def name_for(self, token_id):
        if token_id == PAD_ID:
            return PAD_TOKEN
        if token_id == MASK_ID:
            return MASK_TOKEN
        if token_id == LAT_ID:
            return LAT_TOKEN
        if N_SPECIAL <= token_id < self.size:
            return self.gene_names[token_id - N_SPECIAL]
        raise VocabError(f"token id {token_id} out of range")

    def is_special(self, token_id):
        return token_id < N_SPECIAL

    def gene_id_from_index(self, gene_index):
        return N_SPECIAL + int(gene_index)

    def gene_index_from_id(self, token_id):
        if token_id < N_SPECIAL or token_id >= self.size:
            raise VocabError(f"token id {token_id} is not a gene")
        return token_id - N_SPECIAL

    def _index(self):
        cached = getattr(self, "_name_to_index", None)
        if cached is None:
            cached = {name: i for i, name in enumerate(self.gene_names)}
            object.__setattr__(self, "_name_to_index", cached)
        return cached


@dataclass
class GeneStats:
    entropy: np.ndarray        # per gene, natural log
    bin_edges: list            # per gene array of boundaries
    epsilon: float
    n_bins: int
    binning: str

    def __post_init__(self):
        if (self.entropy < 0).any():
            raise ValidationError("entropy must be non-negative")
        if self.epsilon <= 0:
            raise ValidationError("epsilon must be positive")


@dataclass
class SerializedCell:
    cell_id: str
    tokens: list               # distinct gene token ids, descending score
    values: list               # positive normalized values, aligned

    def __post_init__(self):
        if len(self.tokens) != len(self.values):
            raise ValidationError("tokens and values must be aligned")
        if len(set(self.tokens)) != len(self.tokens):
            raise ValidationError("duplicate gene token in serialized cell")

    def __len__(self):
        return len(self.tokens)


def _entropy_from_counts(counts, total):
    p = np.asarray(counts, dtype=np.float64) / total
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def compute_entropy(m, n_bins=32, binning="quantile"):
    """Per-gene binned Shannon entropy over all cells (zeros included)."""
    if n_bins < 2:
        raise ValidationError("n_bins must be >= 2")
    if binning not in ("quantile", "fixed-width"):
        raise ValidationError(f"unknown binning mode {binning!r}")
    entropy = np.zeros(m.n_genes)
    edges_per_gene = []
    csc = m.to_csr().tocsc()
    for g in range(m.n_genes):
        vals = csc.data[csc.indptr[g]:csc.indptr[g + 1]]
        vals = vals[vals > 0]
        n_zero = m.n_cells - len(vals)
        if len(vals) == 0:
            entropy[g] = 0.0
            edges_per_gene.append(np.array([]))
            continue
        if binning == "quantile":
            # one bin reserved for zero cells; the rest are equal-mass
            # over the nonzero values
            k = n_bins - 1 if n_zero > 0 else n_bins
            edges = np.unique(np.quantile(vals, np.linspace(0, 1, k + 1)))
            inner = edges[1:-1]
            counts = list(np.bincount(
                np.searchsorted(inner, vals, side="right"),
                minlength=len(inner) + 1))
            if n_zero > 0:
                counts.append(n_zero)
        else:
            # equal-width bins over the full value range, zeros included
            lo = 0.0 if n_zero > 0 else float(vals.min())
            hi = float(vals.max())
            if hi <= lo:
                hi = lo + 1.0
            edges = np.linspace(lo, hi, n_bins + 1)
            idx = np.clip(np.searchsorted(edges[1:-1], vals, side="right"),
                          0, n_bins - 1)
            counts = np.bincount(idx, minlength=n_bins)
            counts[0] += n_zero
        entropy[g] = _entropy_from_counts(counts, m.n_cells)
        edges_per_gene.append(np.asarray(edges, dtype=np.float64))
    return GeneStats(entropy=entropy, bin_edges=edges_per_gene,
                     epsilon=1e-6, n_bins=n_bins, binning=binning)


def rank_score(v, h, eps):
    """Entropy-normalized ranking score v / (h + eps)."""
    if eps <= 0:
        raise ValidationError("eps must be positive")
    return np.asarray(v, dtype=np.float64) / (np.asarray(h) + eps)


def serialize_cell(m, cell_index, stats, vocab, l_max):
    """Top-l_max expressed genes of one cell by descending score.

    Ties break by ascending token id so the output is independent of
    input triplet order.
    """
    genes, vals = m.cell_entries(cell_index)
    expressed = vals > 0
    genes, vals = genes[expressed], vals[expressed]
    if len(genes) == 0:
        raise EmptyCellError(f"cell {m.cell_ids[cell_index]!r} has no "
                             "expressed genes")
    scores = rank_score(vals, stats.entropy[genes], stats.epsilon)
    token_ids = genes + N_SPECIAL
    order = np.lexsort((token_ids, -scores))[:l_max]
    return SerializedCell(
        cell_id=m.cell_ids[cell_index],
        tokens=[int(t) for t in token_ids[order]],
        values=[float(v) for v in vals[order]])


def serialize_matrix(m, stats, vocab, l_max):
    return [serialize_cell(m, i, stats, vocab, l_max)
            for i in range(m.n_cells)]


# -- persistence ----------------------------------------------------------

def save_stats(stats, gene_names, path):
    with open(path, "w") as fh:
        fh.write(f"#n_bins={stats.n_bins}\tbinning={stats.binning}\t"
                 f"epsilon={stats.epsilon!r}\n")
        for name, h, edges in zip(gene_names, stats.entropy, stats.bin_edges):
            edge_s = ",".join(repr(float(e)) for e in edges)
            fh.write(f"{name}\t{float(h)!r}\t{edge_s}\n")


def load_stats(path):
    with open(path) as fh:
        head = fh.readline().strip()
        if not head.startswith("#"):
            raise ValidationError(f"missing stats header in {path}")
        fields = dict(kv.split("=") for kv in head[1:].split("\t"))
        names, entropy, edges = [], [], []
        for line in fh:
            if not line.strip():
                continue
            name, h, edge_s = line.rstrip("\n").split("\t")
            names.append(name)
            entropy.append(float(h))
            edges.append(np.array([float(e) for e in edge_s.split(",")]
                                  if edge_s else []))
    stats = GeneStats(entropy=np.array(entropy), bin_edges=edges,
                      epsilon=float(fields["epsilon"]),
                      n_bins=int(fields["n_bins"]), binning=fields["binning"])
    return stats, names


def stats_fingerprint(path):
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def save_serialized(cells, path, fingerprint=""):
    with open(path, "w") as fh:
        fh.write(json.dumps({"_stats_fingerprint": fingerprint}) + "\n")
        for cell in cells:
            fh.write(json.dumps({"cell_id": cell.cell_id,
                                 "tokens": cell.tokens,
                                 "values": cell.values}) + "\n")


def load_serialized(path):
    """Returns (cells, fingerprint)."""
    cells = []
    fingerprint = ""
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            if "_stats_fingerprint" in rec:
                fingerprint = rec["_stats_fingerprint"]
                continue
            cells.append(SerializedCell(rec["cell_id"], rec["tokens"],
                                        rec["values"]))
    return cells, fingerprint
