"""Tri-state label vectors, datasets, synthetic generation and label deletion.

Labels are stored as ``int8`` arrays of shape ``(n, k)`` holding
``1`` (positive), ``0`` (negative) or ``-1`` (unknown). Unknown labels never
contribute to a loss or a metric.
"""

from __future__ import annotations

import csv
import hashlib
import io
import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Iterable, Sequence

import numpy as np
from scipy.special import expit

from .taxonomy import Taxonomy

SPLITS = ("train", "val", "test")
SPLIT_FRACTIONS = (0.7, 0.1, 0.2)


class LabelState(IntEnum):
    UNKNOWN = -1
    NEGATIVE = 0
    POSITIVE = 1


POS = LabelState.POSITIVE
NEG = LabelState.NEGATIVE
UNK = LabelState.UNKNOWN

_CELL = {"1": 1, "0": 0, "?": -1}
_CELL_OUT = {1: "1", 0: "0", -1: "?"}


class DatasetFormatError(ValueError):
    """Malformed dataset CSV; carries the 1-based row and column when known."""

    def __init__(self, message: str, row: int | None = None, column: int | None = None):
        self.row, self.column = row, column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column}")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class LabelConsistencyError(ValueError):
    pass


@dataclass(frozen=True)
class Violation:
    node: int
    reason: str
    row: int | None = None

    def describe(self, t: Taxonomy) -> str:
        where = "" if self.row is None else f"row {self.row}: "
        return f"{where}{t.name(self.node)}: {self.reason}"


def as_label_array(v) -> np.ndarray:
    arr = np.asarray([int(s) for s in v] if not isinstance(v, np.ndarray) else v, dtype=np.int8)
    if arr.size and not np.isin(arr, (-1, 0, 1)).all():
        raise ValueError("label states must be 1, 0 or -1")
    return arr


def validate_labels(t: Taxonomy, v) -> list[Violation]:
    """List every node whose label breaks hierarchy consistency.

    A positive node needs a positive parent; a parent that is negative or
    unknown above a known positive is reported at the child. An empty list
    means the vector is valid.
    """
    v = as_label_array(v)
    if v.ndim != 1 or v.shape[0] != t.k:
        raise ValueError(f"label vector has length {v.shape[-1] if v.ndim else 0}, taxonomy has k={t.k}")
    out = []
    for m in t.topological_order:
        p = t.parent(m)
        if p is None or v[m] != POS:
            continue
        if v[p] == NEG:
            out.append(Violation(m, f"positive under negative parent {t.name(p)!r}"))
        elif v[p] == UNK:
            out.append(Violation(m, f"known positive under unknown ancestor {t.name(p)!r}"))
    return out


def validate_label_matrix(t: Taxonomy, labels: np.ndarray) -> list[Violation]:
    labels = np.asarray(labels)
    if labels.ndim != 2 or labels.shape[1] != t.k:
        raise ValueError(f"label matrix must have shape (n, {t.k}), got {labels.shape}")
    parents = np.asarray(t.parent_array)
    nonroot = parents >= 0
    child_pos = labels[:, nonroot] == POS
    parent_states = labels[:, parents[nonroot]]
    bad_rows, bad_cols = np.nonzero(child_pos & (parent_states != POS))
    nodes = np.flatnonzero(nonroot)
    out = []
    for r, c in zip(bad_rows, bad_cols):
        m = int(nodes[c])
        p = t.parent(m)
        kind = "negative parent" if labels[r, p] == NEG else "unknown ancestor"
        out.append(Violation(m, f"known positive under {kind} {t.name(p)!r}", row=int(r)))
    return out


@dataclass(frozen=True)
class Dataset:
    """Feature matrix, tri-state labels and split assignment.

    ``split`` is ``None`` when the source file carried no split column.
    """

    ids: tuple[str, ...]
    features: np.ndarray
    labels: np.ndarray
    label_names: tuple[str, ...]
    split: tuple[str, ...] | None = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labs = np.asarray(self.labels, dtype=np.int8)
        if feats.ndim != 2 or labs.ndim != 2:
            raise ValueError("features and labels must be 2-D")
        n = len(self.ids)
        if feats.shape[0] != n or labs.shape[0] != n:
            raise ValueError("ids, features and labels disagree on the number of rows")
        if labs.shape[1] != len(self.label_names):
            raise ValueError("label columns do not match label names")
        if self.split is not None:
            if len(self.split) != n:
                raise ValueError("split column has the wrong length")
            bad = set(self.split) - set(SPLITS)
            if bad:
                raise ValueError(f"unknown split value(s): {sorted(bad)}")
        if len(set(self.ids)) != n:
            raise ValueError("instance ids must be unique")
        feats.setflags(write=False)
        labs.setflags(write=False)
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labs)
        object.__setattr__(self, "label_names", tuple(self.label_names))
        if self.split is not None:
            object.__setattr__(self, "split", tuple(self.split))

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def d(self) -> int:
        return self.features.shape[1]

    def mask(self, split: str) -> np.ndarray:
        if self.split is None:
            raise ValueError("dataset has no split column")
        return np.array([s == split for s in self.split], dtype=bool)

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        if rows.dtype == bool:
            rows = np.flatnonzero(rows)
        return Dataset(
            ids=tuple(self.ids[i] for i in rows),
            features=self.features[rows],
            labels=self.labels[rows],
            label_names=self.label_names,
            split=None if self.split is None else tuple(self.split[i] for i in rows),
        )

    def take(self, split: str) -> "Dataset":
        return self.subset(self.mask(split))

    def with_labels(self, labels: np.ndarray) -> "Dataset":
        return replace(self, labels=labels)

    def check(self, t: Taxonomy) -> list[Violation]:
        if tuple(t.names) != self.label_names:
            raise ValueError("dataset label columns do not follow the taxonomy's node order")
        return validate_label_matrix(t, self.labels)


# hashing --------------------------------------------------------------------

def keyed_uniform(*key) -> float:
    """Uniform in [0, 1) as a pure function of ``key`` (stable across runs and platforms)."""
    h = hashlib.blake2b("\x1f".join(str(x) for x in key).encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "big") / 2.0**64


def assign_split(instance_id: str, fractions: Sequence[float] = SPLIT_FRACTIONS) -> str:
    u = keyed_uniform("split", instance_id)
    acc = 0.0
    for name, frac in zip(SPLITS, fractions):
        acc += frac
        if u < acc:
            return name
    return SPLITS[-1]


# synthetic data -------------------------------------------------------------

def synth_generate(t: Taxonomy, n: int, d: int, seed: int, scale: float = 3.0) -> Dataset:
    """Hierarchy-consistent synthetic data.

    Features are standard normal. Every node owns a hidden linear scorer
    ``w_m`` with ``||w_m|| ~ scale``; labels are drawn top-down, the root is
    positive with probability ``sigmoid(w_root . x)`` and a non-root node is
    only drawn when its parent is positive, otherwise it is negative.
    """
    if n < 1 or d < 1:
        raise ValueError("n and d must be at least 1")
    rng = np.random.default_rng(seed)
    w = rng.standard_normal((t.k, d)) * (scale / math.sqrt(d))
    x = rng.standard_normal((n, d))
    u = rng.random((n, t.k))
    cond = expit(x @ w.T)
    labels = np.zeros((n, t.k), dtype=np.int8)
    for m in t.topological_order:
        p = t.parent(m)
        draw = u[:, m] < cond[:, m]
        labels[:, m] = draw if p is None else draw & (labels[:, p] == POS)
    ids = tuple(f"x{i:06d}" for i in range(n))
    split = tuple(assign_split(i) for i in ids)
    return Dataset(ids=ids, features=x, labels=labels, label_names=t.names, split=split)


# deletion protocol ----------------------------------------------------------

@dataclass(frozen=True)
class DeletionConfig:
    """Controlled removal of known labels below positive parents.

    Children of each positive ``group_parents`` node are deleted with
    probability ``beta``; of a positive ``mid_parent`` with ``ratio*beta``; of
    a positive root with ``ratio**2 * beta``. ``excluded`` nodes are always
    unknown in training.
    """

    beta: float
    group_parents: tuple[int, ...] = ()
    mid_parent: int | None = None
    root: int | None = None
    ratio: float = 0.3
    seed: int = 0
    excluded: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if self.ratio < 0 or self.ratio * self.beta > 1.0:
            raise ValueError("ratio must be non-negative with ratio*beta <= 1")
        object.__setattr__(self, "group_parents", tuple(int(g) for g in self.group_parents))
        object.__setattr__(self, "excluded", frozenset(int(e) for e in self.excluded))

    def levels(self, t: Taxonomy) -> list[tuple[int, float]]:
        """``(parent, probability)`` pairs after checking the levels against ``t``."""
        root = t.root if self.root is None else self.root
        if root != t.root:
            raise ValueError(f"deletion root {t.name(root)!r} is not the taxonomy root")
        leaves = t.leaves()
        if self.mid_parent is not None:
            if self.mid_parent == root or self.mid_parent in leaves:
                raise ValueError("mid_parent must be a non-root, non-leaf node")
        for g in self.group_parents:
            if g == root or g == self.mid_parent or g in leaves:
                raise ValueError(f"group parent {t.name(g)!r} must be a non-root, non-leaf node "
                                 "distinct from mid_parent")
            for h in self.group_parents:
                if h != g and t.is_ancestor(h, g):
                    raise ValueError(f"group parents {t.name(h)!r} and {t.name(g)!r} are nested")
            if self.mid_parent is not None and t.is_ancestor(g, self.mid_parent):
                raise ValueError(f"mid_parent lies below group parent {t.name(g)!r}")
        if len(set(self.group_parents)) != len(self.group_parents):
            raise ValueError("duplicate group parents")
        out = [(g, self.beta) for g in self.group_parents]
        if self.mid_parent is not None:
            out.append((self.mid_parent, self.ratio * self.beta))
        out.append((root, self.ratio ** 2 * self.beta))
        return out


def default_deletion_levels(t: Taxonomy) -> tuple[tuple[int, ...], int | None]:
    """Infer group and mid-level parents from the tree shape.

    Group parents are non-root nodes whose children are all leaves; the mid
    parent is the single remaining non-root internal node, if there is
    exactly one.
    """
    leaves = t.leaves()
    internal = [m for m in sorted(t.non_leaves()) if m != t.root]
    groups = tuple(m for m in internal if all(c in leaves for c in t.children(m)))
    rest = [m for m in internal if m not in groups]
    mid = rest[0] if len(rest) == 1 else None
    return groups, mid


def deletion_draws(ds: Dataset, levels: Iterable[tuple[int, float]], seed: int) -> np.ndarray:
    """Keyed uniforms ``u[i, j]`` for instance ``i`` and the ``j``-th level parent."""
    parents = [p for p, _ in levels]
    return np.array([[keyed_uniform("delete", seed, iid, p) for p in parents] for iid in ds.ids],
                    dtype=np.float64).reshape(ds.n, len(parents))


def delete_labels(ds: Dataset, t: Taxonomy, cfg: DeletionConfig) -> Dataset:
    """Return a copy of ``ds`` with training labels deleted per ``cfg``.

    A level fires for an instance when its parent is positive and the keyed
    uniform falls below the level's probability; all strict descendants of
    a firing parent become unknown. Because the uniforms depend only on
    ``(seed, instance id, parent)``, anything deleted at one ``beta`` is also
    deleted at every larger ``beta``.
    """
    if ds.split is None:
        raise ValueError("label deletion needs a split column (it only touches train rows)")
    levels = cfg.levels(t)
    labels = ds.labels.copy()
    train = np.flatnonzero(ds.mask("train"))
    if train.size == 0:
        return ds
    u = deletion_draws(ds.subset(train), levels, cfg.seed)
    sub = labels[train]
    wipe = np.zeros(sub.shape, dtype=bool)
    for j, (p, prob) in enumerate(levels):
        fire = (sub[:, p] == POS) & (u[:, j] < prob)
        desc = t.descendants(p)
        if desc:
            wipe[np.ix_(fire, desc)] = True
    for e in cfg.excluded:
        wipe[:, [e] + t.descendants(e)] = True
    sub[wipe] = UNK
    labels[train] = sub
    return ds.with_labels(labels)


# CSV I/O --------------------------------------------------------------------

def _fmt_float(x: float) -> str:
    return repr(float(x))


def write_dataset(ds: Dataset) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    header = ["id"] + [f"f{j}" for j in range(ds.d)] + list(ds.label_names)
    if ds.split is not None:
        header.append("split")
    w.writerow(header)
    for i in range(ds.n):
        row = [ds.ids[i]] + [_fmt_float(x) for x in ds.features[i]]
        row += [_CELL_OUT[int(s)] for s in ds.labels[i]]
        if ds.split is not None:
            row.append(ds.split[i])
        w.writerow(row)
    return buf.getvalue()


def read_dataset(text: str) -> Dataset:
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if r]
    if not rows:
        raise DatasetFormatError("empty dataset file")
    header = rows[0]
    if not header or header[0] != "id":
        raise DatasetFormatError("header must start with 'id'", row=1, column=1)
    has_split = header[-1] == "split"
    cols = header[1:-1] if has_split else header[1:]
    d = 0
    while d < len(cols) and cols[d] == f"f{d}":
        d += 1
    names = cols[d:]
    if not names:
        raise DatasetFormatError("header has no label columns", row=1)
    if len(set(names)) != len(names):
        raise DatasetFormatError("duplicate label column names", row=1)
    width = len(header)
    ids, feats, labs, split = [], [], [], []
    for r, row in enumerate(rows[1:], start=2):
        if len(row) != width:
            raise DatasetFormatError(f"expected {width} cells, got {len(row)}", row=r)
        ids.append(row[0])
        try:
            feats.append([float(c) for c in row[1:1 + d]])
        except ValueError as exc:
            col = next(j for j, c in enumerate(row[1:1 + d], start=2) if not _is_float(c))
            raise DatasetFormatError(f"bad feature value {row[col - 1]!r}", row=r, column=col) from exc
        lab = []
        for j, c in enumerate(row[1 + d:1 + d + len(names)], start=2 + d):
            if c not in _CELL:
                raise DatasetFormatError(f"label cell must be 1, 0 or ?, got {c!r}", row=r, column=j)
            lab.append(_CELL[c])
        labs.append(lab)
        if has_split:
            s = row[-1]
            if s not in SPLITS:
                raise DatasetFormatError(f"split must be one of {SPLITS}, got {s!r}",
                                         row=r, column=width)
            split.append(s)
    n = len(ids)
    try:
        return Dataset(
            ids=tuple(ids),
            features=np.array(feats, dtype=np.float64).reshape(n, d),
            labels=np.array(labs, dtype=np.int8).reshape(n, len(names)),
            label_names=tuple(names),
            split=tuple(split) if has_split else None,
        )
    except ValueError as exc:
        raise DatasetFormatError(str(exc)) from exc


def _is_float(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True
