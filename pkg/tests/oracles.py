"""Independent brute-force oracles used to cross-check the metric and
serialization implementations.  Everything here is written directly from
the defining formulas with no shared code paths with the package."""

import itertools
import math
from collections import Counter

import numpy as np


def entropy_oracle(probabilities):
    """Shannon entropy, natural log, skipping empty categories."""
    return -sum(p * math.log(p) for p in probabilities if p > 0)


def l_dist_oracle(truth, pred):
    pos = {g: i for i, g in enumerate(pred)}
    return sum(abs(i - pos[g]) for i, g in enumerate(truth)) / len(truth)


def bleu_oracle(truth, pred, max_n=4):
    if len(pred) == 0:
        return 0.0
    precisions = []
    for n in range(1, max_n + 1):
        pred_grams = [tuple(pred[i:i + n]) for i in range(len(pred) - n + 1)]
        truth_grams = Counter(tuple(truth[i:i + n])
                              for i in range(len(truth) - n + 1))
        if not pred_grams:
            return 0.0
        used = Counter()
        hits = 0
        for g in pred_grams:
            if used[g] < truth_grams[g]:
                hits += 1
                used[g] += 1
        if hits == 0:
            return 0.0
        precisions.append(hits / len(pred_grams))
    geo = math.exp(sum(math.log(p) for p in precisions) / max_n)
    bp = 1.0 if len(pred) >= len(truth) else math.exp(1 - len(truth) / len(pred))
    return bp * geo


def average_ranks(values):
    """1-based ranks, ties get the mean of the ranks they span."""
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        mean_rank = (i + j) / 2 + 1
        for k in range(i, j + 1):
            ranks[order[k]] = mean_rank
        i = j + 1
    return ranks


def pearson_oracle(x, y):
    mx = sum(x) / len(x)
    my = sum(y) / len(y)
    num = sum((a - mx) * (b - my) for a, b in zip(x, y))
    dx = math.sqrt(sum((a - mx) ** 2 for a in x))
    dy = math.sqrt(sum((b - my) ** 2 for b in y))
    return num / (dx * dy)


def spearman_oracle(x, y):
    return pearson_oracle(average_ranks(list(x)), average_ranks(list(y)))


def silhouette_oracle(points, labels):
    """Mean silhouette width; singleton-cluster samples contribute 0."""
    points = np.asarray(points, dtype=float)
    n = len(points)
    dist = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(-1))
    labels = list(labels)
    scores = []
    for i in range(n):
        same = [j for j in range(n) if j != i and labels[j] == labels[i]]
        if not same:
            scores.append(0.0)
            continue
        a = sum(dist[i, j] for j in same) / len(same)
        b = math.inf
        for other in set(labels) - {labels[i]}:
            members = [j for j in range(n) if labels[j] == other]
            b = min(b, sum(dist[i, j] for j in members) / len(members))
        scores.append((b - a) / max(a, b))
    return sum(scores) / n


def _mutual_information(a, b):
    n = len(a)
    joint = Counter(zip(a, b))
    ca, cb = Counter(a), Counter(b)
    mi = 0.0
    for (x, y), c in joint.items():
        mi += (c / n) * math.log(n * c / (ca[x] * cb[y]))
    return mi


def _label_entropy(a):
    n = len(a)
    return entropy_oracle([c / n for c in Counter(a).values()])


def nmi_oracle(a, b):
    """Normalized mutual information, arithmetic-mean normalization."""
    ha, hb = _label_entropy(a), _label_entropy(b)
    if ha == 0 and hb == 0:
        return 1.0
    denom = (ha + hb) / 2
    if denom == 0:
        return 0.0
    return _mutual_information(a, b) / denom


def _comb2(n):
    return n * (n - 1) // 2


def ari_oracle(a, b):
    joint = Counter(zip(a, b))
    ca, cb = Counter(a), Counter(b)
    n = len(a)
    index = sum(_comb2(c) for c in joint.values())
    sum_a = sum(_comb2(c) for c in ca.values())
    sum_b = sum(_comb2(c) for c in cb.values())
    expected = sum_a * sum_b / _comb2(n)
    maximum = (sum_a + sum_b) / 2
    if maximum == expected:
        return 1.0 if index == expected else 0.0
    return (index - expected) / (maximum - expected)


def wmse_oracle(delta_true, delta_pred, mean_expr, alpha):
    weights = [m + alpha for m in mean_expr]
    total = sum(weights)
    return sum((w / total) * (p - t) ** 2
               for w, t, p in zip(weights, delta_true, delta_pred))


def softmax_oracle(logits):
    m = max(logits)
    exps = [math.exp(z - m) for z in logits]
    s = sum(exps)
    return [e / s for e in exps]


def kmeans_best_label_match(pred, true):
    """Best-permutation accuracy between two labelings (small k only)."""
    klabels = sorted(set(pred))
    tlabels = sorted(set(true))
    best = 0
    for perm in itertools.permutations(tlabels, len(klabels)):
        mapping = dict(zip(klabels, perm))
        best = max(best, sum(mapping[p] == t for p, t in zip(pred, true)))
    return best / len(pred)
