"""Conditional and unconditional probabilities from taxonomy logits."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, log_expit

from .taxonomy import Taxonomy

# below this a conditional switches the chain product to log space
_LOG_SPACE_BELOW = 1e-12


@dataclass(frozen=True)
class ProbVector:
    """``conditional[m]`` is P(m | parent), ``unconditional[m]`` is P(m).

    Arrays are ``(k,)`` for one instance or ``(n, k)`` for a batch.
    """

    conditional: np.ndarray
    unconditional: np.ndarray


def predict(t: Taxonomy, y) -> ProbVector:
    """Sigmoid conditionals and their top-down chain-rule products.

    The product is accumulated parent-first so each node reuses its
    parent's value, which keeps ``P(parent) >= P(child)`` exact. Rows
    containing a conditional below 1e-12 are accumulated in log space.
    """
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    y2 = np.atleast_2d(y)
    if y2.shape[1] != t.k:
        raise ValueError(f"expected {t.k} logits per row, got {y2.shape[1]}")
    if not np.all(np.isfinite(y2)):
        raise ValueError("logits must be finite")
    cond = expit(y2)
    unc = np.empty_like(cond)
    for m in t.topological_order:
        p = t.parent(m)
        unc[:, m] = cond[:, m] if p is None else unc[:, p] * cond[:, m]

    tiny = (cond < _LOG_SPACE_BELOW).any(axis=1)
    if tiny.any():
        logc = log_expit(y2[tiny])
        logu = np.empty_like(logc)
        for m in t.topological_order:
            p = t.parent(m)
            logu[:, m] = logc[:, m] if p is None else logu[:, p] + logc[:, m]
        unc[tiny] = np.exp(logu)

    if single:
        return ProbVector(cond[0], unc[0])
    return ProbVector(cond, unc)


def scores_for(t: Taxonomy, y, chained: bool) -> np.ndarray:
    """Ranking scores for evaluation.

    Hierarchical models output conditionals and are chained; binary
    relevance outputs are already unconditional and are only squashed.
    """
    if chained:
        return predict(t, y).unconditional
    return expit(np.asarray(y, dtype=np.float64))


def write_predictions(t: Taxonomy, ids, probs: np.ndarray) -> str:
    """CSV dump ``id,<label>...`` with 9 significant digits."""
    probs = np.atleast_2d(probs)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", *t.names])
    for iid, row in zip(ids, probs):
        w.writerow([iid, *(f"{p:.9g}" for p in row)])
    return buf.getvalue()


def read_predictions(text: str) -> tuple[list[str], list[str], np.ndarray]:
    rows = [r for r in csv.reader(io.StringIO(text)) if r]
    if not rows or rows[0][0] != "id":
        raise ValueError("prediction file must start with an 'id' header")
    names = rows[0][1:]
    ids = [r[0] for r in rows[1:]]
    probs = np.array([[float(c) for c in r[1:]] for r in rows[1:]], dtype=np.float64)
    return ids, names, probs.reshape(len(ids), len(names))
