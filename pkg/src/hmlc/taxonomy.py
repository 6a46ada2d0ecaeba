"""Label taxonomies: rooted trees of labels with ancestor and leaf queries.

A taxonomy file is UTF-8 text with one ``child<TAB>parent`` line per node.
The parent ``-`` marks the root; blank lines and ``#`` comments are skipped.
Node ids are dense integers assigned in order of first appearance in the
child column, so logit and label vectors have a deterministic layout.
"""

from __future__ import annotations

from collections import deque
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

ROOT_MARKER = "-"

BUILTIN_TAXONOMIES = {
    "plco": "plco_reconstructed.tsv",
    "padchest": "padchest_reconstructed.tsv",
    "synthetic7": "synthetic7.tsv",
}


class TaxonomyError(ValueError):
    """Base class for malformed taxonomy input."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class EmptyTaxonomyError(TaxonomyError):
    pass


class DuplicateNameError(TaxonomyError):
    pass


class UnknownParentError(TaxonomyError):
    pass


class MultipleRootsError(TaxonomyError):
    pass


class CycleError(TaxonomyError):
    pass


class Taxonomy:
    """Immutable rooted label tree.

    Parameters
    ----------
    names : sequence of str
        Node names indexed by node id.
    parents : sequence of int or None
        Parent id of every node; ``None`` for exactly one node, the root.
    """

    def __init__(self, names: Sequence[str], parents: Sequence[int | None]):
        if len(names) == 0:
            raise EmptyTaxonomyError("taxonomy has no nodes")
        if len(names) != len(parents):
            raise TaxonomyError("names and parents differ in length")
        seen: dict[str, int] = {}
        for i, name in enumerate(names):
            if not name or "\t" in name or name != name.strip():
                raise TaxonomyError(f"invalid node name {name!r}")
            if name in seen:
                raise DuplicateNameError(f"duplicate node name {name!r}")
            seen[name] = i
        roots = [i for i, p in enumerate(parents) if p is None]
        if len(roots) > 1:
            raise MultipleRootsError(
                "multiple roots: " + ", ".join(repr(names[r]) for r in roots))
        if not roots:
            raise CycleError("no root node; the parent relation is cyclic")
        k = len(names)
        for i, p in enumerate(parents):
            if p is not None and not 0 <= p < k:
                raise UnknownParentError(f"node {names[i]!r} has invalid parent id {p}")

        self._names = tuple(names)
        self._index = seen
        self._parent = tuple(-1 if p is None else int(p) for p in parents)
        self._root = roots[0]
        children: list[list[int]] = [[] for _ in range(k)]
        for i, p in enumerate(self._parent):
            if p >= 0:
                children[p].append(i)
        self._children = tuple(tuple(c) for c in children)

        # breadth-first from the root; anything unreached sits on a cycle
        order = []
        depth = [0] * k
        queue = deque([self._root])
        while queue:
            m = queue.popleft()
            order.append(m)
            for c in self._children[m]:
                depth[c] = depth[m] + 1
                queue.append(c)
        if len(order) != k:
            stray = sorted(set(range(k)) - set(order))
            raise CycleError(
                "parent relation is cyclic at: " + ", ".join(repr(self._names[i]) for i in stray))
        self._order = tuple(order)
        self._depth = tuple(depth)

        ancestors = [()] * k
        for m in order:
            p = self._parent[m]
            ancestors[m] = (m,) if p < 0 else ancestors[p] + (m,)
        self._ancestors = tuple(ancestors)

    # basic structure -----------------------------------------------------

    @property
    def k(self) -> int:
        return len(self._names)

    def __len__(self) -> int:
        return len(self._names)

    @property
    def names(self) -> tuple[str, ...]:
        return self._names

    @property
    def root(self) -> int:
        return self._root

    @property
    def topological_order(self) -> tuple[int, ...]:
        """Node ids ordered so every parent precedes its children."""
        return self._order

    def parent(self, m: int) -> int | None:
        self._check(m)
        p = self._parent[m]
        return None if p < 0 else p

    @property
    def parent_array(self) -> tuple[int, ...]:
        """Parent id per node, ``-1`` at the root."""
        return self._parent

    def children(self, m: int) -> tuple[int, ...]:
        self._check(m)
        return self._children[m]

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown label {name!r}") from None

    def indices(self, names: Iterable[str]) -> list[int]:
        return [self.index(n) for n in names]

    def name(self, m: int) -> str:
        self._check(m)
        return self._names[m]

    # queries -------------------------------------------------------------

    def ancestors(self, m: int) -> tuple[int, ...]:
        """Nodes from the root down to ``m``, inclusive of both."""
        self._check(m)
        return self._ancestors[m]

    def depth(self, m: int) -> int:
        """Edges between the root and ``m`` (the root has depth 0)."""
        self._check(m)
        return self._depth[m]

    def descendants(self, m: int) -> list[int]:
        """Strict descendants of ``m`` in breadth-first order."""
        self._check(m)
        out = []
        queue = deque(self._children[m])
        while queue:
            c = queue.popleft()
            out.append(c)
            queue.extend(self._children[c])
        return out

    def is_ancestor(self, a: int, m: int) -> bool:
        """True when ``a`` lies on the root path of ``m`` (``a == m`` included)."""
        return a in self.ancestors(m)

    def leaves(self) -> set[int]:
        return {m for m in range(self.k) if not self._children[m]}

    def non_leaves(self) -> set[int]:
        return {m for m in range(self.k) if self._children[m]}

    def max_depth(self) -> int:
        """Number of nodes on the longest root-to-leaf path."""
        return max(self._depth) + 1

    # serialization -------------------------------------------------------

    def serialize(self) -> str:
        lines = []
        for m, name in enumerate(self._names):
            p = self._parent[m]
            lines.append(f"{name}\t{ROOT_MARKER if p < 0 else self._names[p]}")
        return "\n".join(lines) + "\n"

    def __eq__(self, other) -> bool:
        if not isinstance(other, Taxonomy):
            return NotImplemented
        return self._names == other._names and self._parent == other._parent

    def __hash__(self) -> int:
        return hash((self._names, self._parent))

    def __repr__(self) -> str:
        return (f"Taxonomy(k={self.k}, root={self._names[self._root]!r}, "
                f"depth={self.max_depth()}, leaves={len(self.leaves())})")

    def _check(self, m: int) -> None:
        if not isinstance(m, (int,)) and not hasattr(m, "__index__"):
            raise TypeError(f"node id must be an integer, got {type(m).__name__}")
        if not 0 <= m < len(self._names):
            raise IndexError(f"invalid node id {m} for taxonomy of {len(self._names)} nodes")


def parse_taxonomy(text: str) -> Taxonomy:
    """Parse the tab-separated edge-list format into a validated `Taxonomy`."""
    entries: list[tuple[str, str, int]] = []
    line_of: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.rstrip("\r")
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 2:
            raise TaxonomyError(
                f"expected 'child<TAB>parent', got {len(fields)} field(s)", line=lineno)
        child, parent = fields[0].strip(), fields[1].strip()
        if not child or not parent:
            raise TaxonomyError("empty node name", line=lineno)
        if child in line_of:
            raise DuplicateNameError(
                f"duplicate node name {child!r} (first defined on line {line_of[child]})",
                line=lineno)
        line_of[child] = lineno
        entries.append((child, parent, lineno))

    if not entries:
        raise EmptyTaxonomyError("taxonomy document contains no nodes")

    roots = [(c, ln) for c, p, ln in entries if p == ROOT_MARKER]
    if len(roots) > 1:
        raise MultipleRootsError(
            "multiple roots: " + ", ".join(f"{c!r} (line {ln})" for c, ln in roots),
            line=roots[1][1])

    index = {c: i for i, (c, _, _) in enumerate(entries)}
    names = [c for c, _, _ in entries]
    parents: list[int | None] = []
    for child, parent, lineno in entries:
        if parent == ROOT_MARKER:
            parents.append(None)
        elif parent not in index:
            raise UnknownParentError(
                f"parent {parent!r} of {child!r} is not defined", line=lineno)
        elif parent == child:
            raise CycleError(f"node {child!r} is its own parent", line=lineno)
        else:
            parents.append(index[parent])
    return Taxonomy(names, parents)


def load_taxonomy(path: str | Path) -> Taxonomy:
    """Read a taxonomy file, or a builtin one by name (``plco``, ``padchest``, ``synthetic7``)."""
    key = str(path)
    if key in BUILTIN_TAXONOMIES and not Path(key).exists():
        text = resources.files("hmlc.taxonomies").joinpath(
            BUILTIN_TAXONOMIES[key]).read_text(encoding="utf-8")
        return parse_taxonomy(text)
    return parse_taxonomy(Path(path).read_text(encoding="utf-8"))


def chain(k: int, prefix: str = "n") -> Taxonomy:
    """A linear taxonomy ``n0 > n1 > ... > n{k-1}``."""
    return Taxonomy([f"{prefix}{i}" for i in range(k)], [None] + list(range(k - 1)))


def random_taxonomy(rng, k: int, max_depth: int | None = None) -> Taxonomy:
    """Random tree with ``k`` nodes, optionally capped at ``max_depth`` levels.

    Node ``i`` attaches to a uniformly chosen earlier node whose depth still
    leaves room, so ids are already in topological order.
    """
    if k > 1 and max_depth is not None and max_depth < 2:
        raise ValueError("more than one node needs max_depth >= 2")
    parents: list[int | None] = [None]
    depth = [1]
    for i in range(1, k):
        allowed = [j for j in range(i) if max_depth is None or depth[j] < max_depth]
        p = int(allowed[rng.integers(len(allowed))])
        parents.append(p)
        depth.append(depth[p] + 1)
    return Taxonomy([f"L{i}" for i in range(k)], parents)
