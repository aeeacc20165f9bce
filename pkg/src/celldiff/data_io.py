"""Sparse expression matrices: triplet-file I/O, filtering, normalization,
and a synthetic corpus generator with known ground truth.

File formats (all plain text):
  matrix.mtx  coordinate sparse: a %%-header line, a "n_cells n_genes nnz"
              dims line, then 0-based "cell gene count" triplets
  genes.tsv   one gene name per line
  cells.tsv   one cell id per line
  meta.tsv    tab-separated rows: cell_id, batch, cell_type
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


class FormatError(ValueError):
    pass


class ValidationError(ValueError):
    pass


class EmptyResultError(ValueError):
    pass


@dataclass
class ExpressionMatrix:
    """Sparse cell x gene matrix stored as sorted (cell, gene, value) triplets."""

    n_cells: int
    n_genes: int
    rows: np.ndarray          # cell indices
    cols: np.ndarray          # gene indices
    vals: np.ndarray          # counts (raw) or normalized values
    gene_names: list
    cell_ids: list

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.int64)
        self.cols = np.asarray(self.cols, dtype=np.int64)
        self.vals = np.asarray(self.vals, dtype=np.float64)
        if not (len(self.rows) == len(self.cols) == len(self.vals)):
            raise ValidationError("triplet arrays must be aligned")
        if len(self.gene_names) != self.n_genes:
            raise ValidationError("gene_names length must equal n_genes")
        if len(self.cell_ids) != self.n_cells:
            raise ValidationError("cell_ids length must equal n_cells")
        if len(self.rows):
            if self.rows.min() < 0 or self.rows.max() >= self.n_cells:
                raise ValidationError("cell index out of bounds")
            if self.cols.min() < 0 or self.cols.max() >= self.n_genes:
                raise ValidationError("gene index out of bounds")
            if self.vals.min() < 0:
                raise ValidationError("negative count")
        # canonical ordering by (cell, gene); also detects duplicates
        order = np.lexsort((self.cols, self.rows))
        self.rows = self.rows[order]
        self.cols = self.cols[order]
        self.vals = self.vals[order]
        if len(self.rows) > 1:
            same = (np.diff(self.rows) == 0) & (np.diff(self.cols) == 0)
            if same.any():
                raise ValidationError("duplicate (cell, gene) entry")

    @property
    def nnz(self):
        return len(self.vals)

    def to_csr(self):
        return sp.csr_matrix(
            (self.vals, (self.rows, self.cols)),
            shape=(self.n_cells, self.n_genes))

    def cell_entries(self, cell_index):
        """(gene indices, values) of one cell's nonzero entries."""
        lo = np.searchsorted(self.rows, cell_index, side="left")
        hi = np.searchsorted(self.rows, cell_index, side="right")
        return self.cols[lo:hi], self.vals[lo:hi]

    def genes_per_cell(self):
        return np.bincount(self.rows, minlength=self.n_cells)


@dataclass
class CellMetadata:
    cell_ids: list
    batch: list
    cell_type: list = None

    def __post_init__(self):
        if len(self.batch) != len(self.cell_ids):
            raise ValidationError("one batch label per cell required")
        if self.cell_type is not None and len(self.cell_type) != len(self.cell_ids):
            raise ValidationError("one cell_type label per cell required")


@dataclass
class SyntheticSpec:
    n_cell_types: int = 5
    n_cells: int = 2000
    n_genes: int = 100
    marker_genes_per_type: int = 20
    dropout_rate: float = 0.0
    library_size_mean: float = 10000.0
    rng_seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ValidationError("dropout_rate must be in [0, 1)")
        if self.library_size_mean <= 0:
            raise ValidationError("library_size_mean must be positive")
        if self.n_genes < self.n_cell_types * self.marker_genes_per_type:
            raise ValidationError(
                "n_genes must cover disjoint marker sets: need >= "
                f"{self.n_cell_types * self.marker_genes_per_type}")


# -- file I/O -------------------------------------------------------------

def _read_lines(path):
    with open(path) as fh:
        return [line.rstrip("\n") for line in fh]


def read_matrix_market(path, genes_path, cells_path):
    gene_names = [l for l in _read_lines(genes_path) if l]
    cell_ids = [l for l in _read_lines(cells_path) if l]
    with open(path) as fh:
        header = fh.readline()
        if not header.startswith("%%"):
            raise FormatError(f"missing %% header line in {path}")
        line = fh.readline()
        while line.startswith("%"):
            line = fh.readline()
        parts = line.split()
        if len(parts) != 3:
            raise FormatError(f"malformed dims line in {path}: {line!r}")
        n_cells, n_genes, nnz = (int(p) for p in parts)
        rows, cols, vals = [], [], []
        for line in fh:
            if not line.strip():
                continue
            r, c, v = line.split()
            rows.append(int(r))
            cols.append(int(c))
            vals.append(float(v))
    if len(rows) != nnz:
        raise FormatError(f"dims line declares {nnz} entries, found {len(rows)}")
    return ExpressionMatrix(n_cells, n_genes, rows, cols, vals,
                            gene_names, cell_ids)


def write_matrix_market(m, path, genes_path, cells_path):
    with open(path, "w") as fh:
        fh.write("%%celldiff coordinate sparse (0-based cell gene value)\n")
        fh.write(f"{m.n_cells} {m.n_genes} {m.nnz}\n")
        for r, c, v in zip(m.rows, m.cols, m.vals):
            fh.write(f"{r} {c} {float(v)!r}\n")
    with open(genes_path, "w") as fh:
        fh.write("".join(name + "\n" for name in m.gene_names))
    with open(cells_path, "w") as fh:
        fh.write("".join(cid + "\n" for cid in m.cell_ids))


def read_metadata(path):
    cell_ids, batch, cell_type = [], [], []
    has_type = False
    for line in _read_lines(path):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) < 2:
            raise FormatError(f"malformed meta row: {line!r}")
        cell_ids.append(parts[0])
        batch.append(parts[1])
        if len(parts) >= 3:
            has_type = True
            cell_type.append(parts[2])
        else:
            cell_type.append("")
    return CellMetadata(cell_ids, batch, cell_type if has_type else None)


def write_metadata(meta, path):
    with open(path, "w") as fh:
        for i, cid in enumerate(meta.cell_ids):
            ct = meta.cell_type[i] if meta.cell_type is not None else ""
            fh.write(f"{cid}\t{meta.batch[i]}\t{ct}\n")


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        h.update(fh.read())
    return h.hexdigest()


# -- transformations ------------------------------------------------------

def filter_cells(m, min_genes):
    """Keep cells with at least `min_genes` nonzero entries."""
    if min_genes < 0:
        raise ValidationError("min_genes must be >= 0")
    nnz = m.genes_per_cell()
    keep = np.flatnonzero(nnz >= min_genes)
    if len(keep) == 0:
        raise EmptyResultError(
            f"no cell has >= {min_genes} detected genes")
    remap = -np.ones(m.n_cells, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    sel = remap[m.rows] >= 0
    return ExpressionMatrix(
        len(keep), m.n_genes,
        remap[m.rows[sel]], m.cols[sel], m.vals[sel],
        m.gene_names, [m.cell_ids[i] for i in keep])


def log_normalize(m, scale=1e4):
    """v -> log(1 + scale * count / cell_total), natural log."""
    if scale <= 0:
        raise ValidationError("scale must be positive")
    totals = np.zeros(m.n_cells)
    np.add.at(totals, m.rows, m.vals)
    if (totals == 0).any():
        bad = int(np.flatnonzero(totals == 0)[0])
        raise ValidationError(
            f"cell {m.cell_ids[bad]!r} has zero total count; filter first")
    vals = np.log1p(scale * m.vals / totals[m.rows])
    return ExpressionMatrix(m.n_cells, m.n_genes, m.rows.copy(), m.cols.copy(),
                            vals, m.gene_names, m.cell_ids)


# -- synthetic corpus -----------------------------------------------------

def generate_synthetic(spec):
    """Cells drawn per type with elevated marker genes and known labels.

    Per-gene baseline rates are log-spread so every gene has a distinct
    expected value, markers get a fixed 10x fold-change on top, and each
    cell's counts are Poisson around `library_size_mean`.  Marker genes of
    the cell's own type are guaranteed detected (count >= 1) before
    dropout, so dropout_rate=0 implies all own markers nonzero.
    """
    rng = np.random.default_rng(spec.rng_seed)
    n_types = spec.n_cell_types
    mpt = spec.marker_genes_per_type
    marker_sets = [np.arange(k * mpt, (k + 1) * mpt) for k in range(n_types)]

    # log-spread baseline rates: ~1.5 decades across the marker block so
    # the within-type serialization order is close to deterministic
    base = np.ones(spec.n_genes)
    for genes in marker_sets:
        base[genes] = np.logspace(0.0, 1.5, len(genes))[::-1]
    background = np.setdiff1d(np.arange(spec.n_genes),
                              np.concatenate(marker_sets))
    if len(background):
        base[background] = rng.uniform(0.5, 2.0, size=len(background))

    rows, cols, vals = [], [], []
    cell_ids = [f"cell{i:05d}" for i in range(spec.n_cells)]
    types, batches = [], []
    for i in range(spec.n_cells):
        k = i % n_types
        rates = base.copy()
        rates[marker_sets[k]] *= 10.0
        probs = rates / rates.sum()
        counts = rng.poisson(spec.library_size_mean * probs)
        counts[marker_sets[k]] = np.maximum(counts[marker_sets[k]], 1)
        if spec.dropout_rate > 0:
            dropped = rng.random(spec.n_genes) < spec.dropout_rate
            counts[dropped] = 0
        nz = np.flatnonzero(counts)
        rows.extend([i] * len(nz))
        cols.extend(nz.tolist())
        vals.extend(counts[nz].tolist())
        types.append(f"type{k}")
        batches.append(f"batch{i % 2}")

    m = ExpressionMatrix(spec.n_cells, spec.n_genes, rows, cols, vals,
                         [f"gene{g:04d}" for g in range(spec.n_genes)],
                         cell_ids)
    meta = CellMetadata(cell_ids, batches, types)
    return m, meta
