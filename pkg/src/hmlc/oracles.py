"""Slow reference computations used to cross-check the fast paths.

Nothing here shares code with `hmlc.losses`; these are direct, loop-based
evaluations meant for verification only.
"""

from __future__ import annotations

import itertools
import math
from typing import Sequence


def brute_force_gamma(y_chain: Sequence[float], z: int) -> float:
    """Gamma by explicit enumeration of every non-empty subset of the chain."""
    y = [float(v) for v in y_chain]
    sums = [
        sum(-y[j] for j in combo)
        for r in range(1, len(y) + 1)
        for combo in itertools.combinations(range(len(y)), r)
    ]
    top = max(sums)
    lse = top + math.log(math.fsum(math.exp(s - top) for s in sums))
    return (1 - z) * (sum(-v for v in y) - lse)


def brute_force_gamma_grad(y_chain: Sequence[float], z: int) -> list[float]:
    """Gradient of `brute_force_gamma` from subset softmax weights."""
    y = [float(v) for v in y_chain]
    subsets = [combo for r in range(1, len(y) + 1)
               for combo in itertools.combinations(range(len(y)), r)]
    sums = [sum(-y[j] for j in s) for s in subsets]
    top = max(sums)
    w = [math.exp(s - top) for s in sums]
    tot = math.fsum(w)
    out = []
    for j in range(len(y)):
        share = math.fsum(wi for wi, s in zip(w, subsets) if j in s) / tot
        out.append((1 - z) * (share - 1.0))
    return out


def sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def chain_product(y_chain: Sequence[float]) -> float:
    p = 1.0
    for v in y_chain:
        p *= sigmoid(v)
    return p


def pairwise_auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """AUC by counting every positive/negative pair."""
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def rank_walk_ap(scores: Sequence[float], labels: Sequence[int]) -> float:
    """AP by walking a stable descending sort and averaging precision at each hit."""
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    hits, total = 0, 0.0
    for rank, i in enumerate(order, start=1):
        if labels[i] == 1:
            hits += 1
            total += hits / rank
    return total / hits
