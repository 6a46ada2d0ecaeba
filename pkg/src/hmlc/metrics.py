"""Ranking metrics, per-taxonomy reports and bootstrap confidence intervals."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.stats import rankdata

from .taxonomy import Taxonomy

AP_ESTIMATOR = "mean precision at the rank of each positive; ties broken by input order"


class DegenerateLabelsError(ValueError):
    """The labels lack a positive or a negative, so the metric is undefined."""


def _binary(scores, labels):
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(labels).reshape(-1)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be 0 or 1")
    return s, y.astype(bool)


def auc(scores, labels, exact: bool = False):
    """Area under the ROC curve as the Mann-Whitney statistic.

    ``(#(pos > neg) + 0.5 * #ties) / (#pos * #neg)``, computed from average
    ranks. ``exact=True`` returns a `fractions.Fraction`.
    """
    s, y = _binary(scores, labels)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabelsError("AUC needs at least one positive and one negative")
    ranks = rankdata(s)  # average ranks; ties get half credit
    if exact:
        # twice the rank sum is an integer even with averaged ties
        twice = int(round(2 * ranks[y].sum()))
        return Fraction(twice - n_pos * (n_pos + 1), 2 * n_pos * n_neg)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(scores, labels, exact: bool = False):
    """Mean of the precision at each positive's rank in descending score order.

    Equal scores keep their input order (stable sort).
    """
    s, y = _binary(scores, labels)
    n_pos = int(y.sum())
    if n_pos == 0:
        raise DegenerateLabelsError("AP needs at least one positive")
    order = np.argsort(-s, kind="stable")
    hits = y[order]
    ranks = np.flatnonzero(hits) + 1
    tp = np.arange(1, n_pos + 1)
    if exact:
        return sum((Fraction(int(a), int(b)) for a, b in zip(tp, ranks)), Fraction(0)) / n_pos
    return float(np.mean(tp / ranks))


# reports --------------------------------------------------------------------

@dataclass
class LabelMetrics:
    label: str
    n_pos: int
    n_neg: int
    auc: float | None
    ap: float | None
    auc_lo: float | None = None
    auc_hi: float | None = None


@dataclass
class MetricReport:
    """Per-label metrics plus means over leaf and non-leaf labels.

    Labels without both classes in the evaluated rows carry ``None`` and
    are left out of every mean.
    """

    labels: list[LabelMetrics]
    mean_leaf_auc: float | None
    mean_leaf_ap: float | None
    mean_nonleaf_auc: float | None
    mean_nonleaf_ap: float | None
    cond_mean_leaf_auc: float | None = None
    cond_mean_leaf_ap: float | None = None
    summary_ci: dict[str, tuple[float, float]] = field(default_factory=dict)

    def by_label(self) -> dict[str, LabelMetrics]:
        return {lm.label: lm for lm in self.labels}

    def summary_rows(self) -> list[LabelMetrics]:
        rows = []
        for name, a, p in [
            ("mean_leaf", self.mean_leaf_auc, self.mean_leaf_ap),
            ("mean_nonleaf", self.mean_nonleaf_auc, self.mean_nonleaf_ap),
            ("cond_mean_leaf", self.cond_mean_leaf_auc, self.cond_mean_leaf_ap),
        ]:
            lo, hi = self.summary_ci.get(name, (None, None))
            rows.append(LabelMetrics(name, 0, 0, a, p, lo, hi))
        return rows


def _mean(values: Iterable[float | None]) -> float | None:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


def label_metrics(name: str, scores: np.ndarray, states: np.ndarray) -> LabelMetrics:
    known = states >= 0
    s, y = scores[known], states[known]
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        return LabelMetrics(name, n_pos, n_neg, None, None)
    return LabelMetrics(name, n_pos, n_neg, auc(s, y), average_precision(s, y))


def evaluate(t: Taxonomy, scores: np.ndarray, labels: np.ndarray,
             exclude: Iterable[int] = (), rows: np.ndarray | None = None) -> MetricReport:
    """Metrics on ``rows`` (all by default), skipping unknown ground truth per label."""
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    labels = np.atleast_2d(np.asarray(labels))
    if scores.shape != labels.shape or scores.shape[1] != t.k:
        raise ValueError("scores and labels must both have shape (n, k)")
    if rows is not None:
        scores, labels = scores[rows], labels[rows]
    skip = set(exclude)
    per = [label_metrics(t.name(m), scores[:, m], labels[:, m])
           for m in range(t.k) if m not in skip]
    byname = {lm.label: lm for lm in per}
    leaves = [byname[t.name(m)] for m in sorted(t.leaves()) if m not in skip]
    inner = [byname[t.name(m)] for m in sorted(t.non_leaves()) if m not in skip]
    return MetricReport(
        labels=per,
        mean_leaf_auc=_mean(lm.auc for lm in leaves),
        mean_leaf_ap=_mean(lm.ap for lm in leaves),
        mean_nonleaf_auc=_mean(lm.auc for lm in inner),
        mean_nonleaf_ap=_mean(lm.ap for lm in inner),
    )


def conditional_report(t: Taxonomy, scores: np.ndarray, labels: np.ndarray,
                       condition: int | None = None, exclude: Iterable[int] = ()) -> MetricReport:
    """Metrics restricted to instances whose ground truth at ``condition`` is positive."""
    labels = np.atleast_2d(np.asarray(labels))
    node = t.root if condition is None else condition
    t.name(node)
    rows = np.flatnonzero(labels[:, node] == 1)
    if rows.size == 0:
        raise DegenerateLabelsError(f"no instance is positive for {t.name(node)!r}")
    return evaluate(t, scores, labels, exclude=exclude, rows=rows)


def full_report(t: Taxonomy, scores: np.ndarray, labels: np.ndarray,
                exclude: Iterable[int] = (), bootstrap_rounds: int = 0,
                seed: int = 0) -> MetricReport:
    """Unconditional report with the root-conditioned leaf means attached.

    With ``bootstrap_rounds > 0`` every label AUC and the mean leaf AUC get
    2.5/97.5 percentile intervals.
    """
    exclude = list(exclude)
    rep = evaluate(t, scores, labels, exclude=exclude)
    try:
        cond = conditional_report(t, scores, labels, exclude=exclude)
        rep.cond_mean_leaf_auc, rep.cond_mean_leaf_ap = cond.mean_leaf_auc, cond.mean_leaf_ap
    except DegenerateLabelsError:
        pass
    if bootstrap_rounds > 0:
        scores = np.atleast_2d(scores)
        labels = np.atleast_2d(labels)
        for lm in rep.labels:
            if lm.auc is None:
                continue
            m = t.index(lm.label)
            known = labels[:, m] >= 0
            try:
                lm.auc_lo, lm.auc_hi = bootstrap_ci(
                    auc, scores[known, m], labels[known, m], rounds=bootstrap_rounds, seed=seed)
            except DegenerateLabelsError:
                pass
        skip = set(exclude)
        leaves = [m for m in sorted(t.leaves()) if m not in skip]
        try:
            rep.summary_ci["mean_leaf"] = bootstrap_ci(
                lambda s, y: mean_auc(s, y, leaves), scores, labels,
                rounds=bootstrap_rounds, seed=seed)
        except DegenerateLabelsError:
            pass
    return rep


def mean_auc(scores: np.ndarray, labels: np.ndarray, nodes: Sequence[int]) -> float:
    """Mean AUC over ``nodes``, skipping unknown cells and one-class labels."""
    vals = []
    for m in nodes:
        known = labels[:, m] >= 0
        y = labels[known, m]
        if y.size and 0 < y.sum() < y.size:
            vals.append(auc(scores[known, m], y))
    if not vals:
        raise DegenerateLabelsError("no label has both classes")
    return float(np.mean(vals))


# bootstrap ------------------------------------------------------------------

def bootstrap_ci(metric: Callable[..., float], *arrays, rounds: int = 5000, seed: int = 0,
                 level: float = 0.95) -> tuple[float, float]:
    """Percentile bootstrap interval of ``metric(*arrays)``.

    Rows (first axis) are resampled with replacement ``rounds`` times;
    rounds where the metric is undefined are dropped, and more than half
    undefined raises `DegenerateLabelsError`.
    """
    if rounds < 1:
        raise ValueError("rounds must be at least 1")
    arrays = [np.asarray(a) for a in arrays]
    n = arrays[0].shape[0]
    if any(a.shape[0] != n for a in arrays):
        raise ValueError("all arrays must share their first dimension")
    rng = np.random.default_rng(seed)
    stats = []
    failed = 0
    for _ in range(rounds):
        idx = rng.integers(0, n, size=n)
        try:
            v = metric(*(a[idx] for a in arrays))
        except DegenerateLabelsError:
            failed += 1
            continue
        if v is None or not np.isfinite(v):
            failed += 1
            continue
        stats.append(float(v))
    if failed * 2 > rounds:
        raise DegenerateLabelsError(f"metric undefined in {failed} of {rounds} bootstrap rounds")
    tail = 100.0 * (1.0 - level) / 2.0
    lo, hi = np.percentile(stats, [tail, 100.0 - tail])
    return float(lo), float(hi)


# output ---------------------------------------------------------------------

REPORT_COLUMNS = ("label", "n_pos", "n_neg", "auc", "ap", "auc_lo", "auc_hi")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return str(v)


def report_to_csv(rep: MetricReport) -> str:
    buf = io.StringIO()
    buf.write(f"# ap_estimator: {AP_ESTIMATOR}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for lm in rep.labels + rep.summary_rows():
        w.writerow([_cell(getattr(lm, c)) for c in REPORT_COLUMNS])
    return buf.getvalue()


def report_to_jsonl(rep: MetricReport) -> str:
    lines = [json.dumps({"ap_estimator": AP_ESTIMATOR})]
    for lm in rep.labels + rep.summary_rows():
        lines.append(json.dumps({c: getattr(lm, c) for c in REPORT_COLUMNS}))
    return "\n".join(lines) + "\n"
