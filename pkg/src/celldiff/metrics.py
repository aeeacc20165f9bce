"""Evaluation metrics: rank-value reconstruction (L-Dist, BLEU, Spearman),
integration (Avg-Batch, Avg-Bio from silhouette/NMI/ARI), and the
expression-weighted perturbation MSE.

Distances are Euclidean throughout.  Spearman uses average ranks for
ties (Pearson on ranks), which reduces to the closed form
1 - 6*sum(d^2)/(m(m^2-1)) when tie-free.  Silhouette follows the usual
convention that samples in singleton clusters contribute 0.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata
from sklearn.cluster import KMeans
from sklearn.metrics import (adjusted_rand_score,
                             normalized_mutual_info_score,
                             silhouette_score)


class AlignmentError(ValueError):
    pass


class UndefinedMetricError(ValueError):
    pass


def _clip_range(x, lo, hi, name):
    if x < lo - 1e-12 or x > hi + 1e-12:
        raise AssertionError(f"{name} = {x} escapes [{lo}, {hi}]")
    return min(max(x, lo), hi)


# -- reconstruction metrics ----------------------------------------------

def l_dist(truth_ranking, pred_ranking):
    """Mean absolute rank displacement between two orderings of one set."""
    if sorted(truth_ranking) != sorted(pred_ranking):
        raise AlignmentError("rankings must be permutations of the same set")
    if len(set(truth_ranking)) != len(truth_ranking):
        raise AlignmentError("rankings must not contain duplicates")
    pred_rank = {g: k for k, g in enumerate(pred_ranking)}
    L = len(truth_ranking)
    return sum(abs(k - pred_rank[g]) for k, g in enumerate(truth_ranking)) / L


def bleu(truth, pred, max_n=4):
    """Clipped n-gram precision with brevity penalty, uniform weights.

    Returns 0 whenever any order's precision is 0 (including predictions
    shorter than max_n).
    """
    if max_n < 1:
        raise ValueError("max_n must be >= 1")
    truth, pred = list(truth), list(pred)
    if len(pred) == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        pred_ngrams = Counter(tuple(pred[i:i + n])
                              for i in range(len(pred) - n + 1))
        truth_ngrams = Counter(tuple(truth[i:i + n])
                               for i in range(len(truth) - n + 1))
        clipped = sum(min(c, truth_ngrams[g]) for g, c in pred_ngrams.items())
        total = max(len(pred) - n + 1, 0)
        if total == 0 or clipped == 0:
            return 0.0
        log_sum += np.log(clipped / total) / max_n
    bp = 1.0 if len(pred) >= len(truth) else np.exp(1.0 - len(truth) / len(pred))
    return _clip_range(float(bp * np.exp(log_sum)), 0.0, 1.0, "BLEU")


def spearman(truth_values, pred_values):
    """Rank correlation with average-rank tie handling."""
    x = np.asarray(truth_values, dtype=np.float64)
    y = np.asarray(pred_values, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise AlignmentError("need two aligned vectors of length >= 2")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise AlignmentError("non-finite values")
    rx, ry = rankdata(x), rankdata(y)
    if rx.std() == 0 or ry.std() == 0:
        raise UndefinedMetricError("correlation undefined for constant vector")
    return float(np.corrcoef(rx, ry)[0, 1])


# -- integration metrics --------------------------------------------------

def silhouette(embeddings, labels):
    """Mean silhouette width, Euclidean distances."""
    z = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    if len(set(labels.tolist())) < 2:
        raise UndefinedMetricError("silhouette needs >= 2 clusters")
    return float(silhouette_score(z, labels, metric="euclidean"))


def nmi(pred_labels, true_labels):
    return float(normalized_mutual_info_score(
        true_labels, pred_labels, average_method="arithmetic"))


def ari(pred_labels, true_labels):
    return float(adjusted_rand_score(true_labels, pred_labels))


def avg_batch(embeddings, batch_labels):
    """1 - batch silhouette: higher means better batch mixing."""
    return _clip_range(1.0 - silhouette(embeddings, batch_labels),
                       0.0, 2.0, "Avg-Batch")


def cluster_embeddings(embeddings, n_clusters, seed=0):
    """Seeded k-means assignments used for the Avg-Bio agreement terms."""
    km = KMeans(n_clusters=n_clusters, n_init=10, random_state=seed)
    return km.fit_predict(np.asarray(embeddings, dtype=np.float64))


def avg_bio(embeddings, cluster_labels, true_types):
    """(NMI + ARI + biological silhouette) / 3; components unshifted."""
    return (nmi(cluster_labels, true_types)
            + ari(cluster_labels, true_types)
            + silhouette(embeddings, true_types)) / 3.0


# -- perturbation metric --------------------------------------------------

@dataclass
class PerturbDelta:
    delta_true: np.ndarray
    delta_pred: np.ndarray
    mean_expression: np.ndarray
    alpha: float = 1e-2

    def __post_init__(self):
        self.delta_true = np.asarray(self.delta_true, dtype=np.float64)
        self.delta_pred = np.asarray(self.delta_pred, dtype=np.float64)
        self.mean_expression = np.asarray(self.mean_expression,
                                          dtype=np.float64)
        if not (len(self.delta_true) == len(self.delta_pred)
                == len(self.mean_expression)):
            raise AlignmentError("gene axes must be aligned")
        if len(self.delta_true) == 0:
            raise UndefinedMetricError("empty gene set")
        if self.alpha <= 0 and (self.mean_expression <= 0).any():
            raise ValueError("alpha must be positive")


def wmse(delta):
    """Expression-weighted MSE; weights sum to 1 by construction."""
    w = delta.mean_expression + delta.alpha
    w = w / w.sum()
    return float((w * (delta.delta_pred - delta.delta_true) ** 2).sum())


# -- reports --------------------------------------------------------------

@dataclass
class EvalReport:
    kind: str
    metrics: dict
    provenance: dict = field(default_factory=dict)

    def to_json(self):
        return json.dumps({"kind": self.kind, "metrics": self.metrics,
                           "provenance": self.provenance},
                          sort_keys=True, indent=2)


def token_accuracy(records, masked_only=True):
    """Fraction of positions where the predicted gene token matches truth."""
    hit = total = 0
    for rec in records:
        positions = (rec.masked_positions if masked_only
                     else range(len(rec.truth_tokens)))
        for i in positions:
            total += 1
            hit += rec.truth_tokens[i] == rec.pred_tokens[i]
    return hit / total if total else float("nan")


def reconstruction_report(records, bleu_n=4, provenance=None):
    """Cell-averaged L-Dist / BLEU / Spearman over paired records.

    L-Dist and Spearman are computed on the genes present in both the
    truth and predicted sequences (rankings re-indexed within that common
    set); BLEU runs on the raw token sequences.
    """
    ld, bl, sp = [], [], []
    for rec in records:
        bl.append(bleu(rec.truth_tokens, rec.pred_tokens, max_n=bleu_n))
        common = set(rec.truth_tokens) & set(rec.pred_tokens)
        truth_r = [g for g in rec.truth_tokens if g in common]
        seen = set()
        pred_r = []
        for g in rec.pred_tokens:
            if g in common and g not in seen:
                pred_r.append(g)
                seen.add(g)
        if len(truth_r) >= 1 and len(truth_r) == len(pred_r):
            ld.append(l_dist(truth_r, pred_r))
        tv = {g: v for g, v in zip(rec.truth_tokens, rec.truth_values)}
        pv = {g: v for g, v in zip(rec.pred_tokens, rec.pred_values)}
        aligned = sorted(common)
        if len(aligned) >= 2:
            try:
                sp.append(spearman([tv[g] for g in aligned],
                                   [pv[g] for g in aligned]))
            except UndefinedMetricError:
                pass
    metrics = {
        "L-Dist": float(np.mean(ld)) if ld else float("nan"),
        "BLEU": float(np.mean(bl)) if bl else float("nan"),
        "Spearman": float(np.mean(sp)) if sp else float("nan"),
        "token_accuracy_masked": token_accuracy(records, masked_only=True),
        "n_cells": len(records),
    }
    return EvalReport(kind="reconstruction", metrics=metrics,
                      provenance=provenance or {})


def integration_report(embeddings, batch_labels, true_types, seed=0,
                       provenance=None):
    n_types = len(set(list(true_types)))
    clusters = cluster_embeddings(embeddings, n_types, seed=seed)
    asw_batch = silhouette(embeddings, batch_labels)
    asw_bio = silhouette(embeddings, true_types)
    metrics = {
        "Avg-Batch": _clip_range(1.0 - asw_batch, 0.0, 2.0, "Avg-Batch"),
        "Avg-Bio": avg_bio(embeddings, clusters, true_types),
        "ASW_batch": asw_batch,
        "ASW_bio": asw_bio,
        "NMI": nmi(clusters, true_types),
        "ARI": ari(clusters, true_types),
    }
    return EvalReport(kind="integration", metrics=metrics,
                      provenance=provenance or {})


def perturbation_report(delta, provenance=None):
    return EvalReport(kind="perturbation", metrics={"WMSE": wmse(delta)},
                      provenance=provenance or {})
