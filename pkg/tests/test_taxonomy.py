import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hmlc.taxonomy import (CycleError, DuplicateNameError, EmptyTaxonomyError,
                           MultipleRootsError, TaxonomyError, UnknownParentError,
                           chain, load_taxonomy, parse_taxonomy, random_taxonomy)

SCAR = "Abnormal\t-\nPulmonary Diseases\tAbnormal\nScarring\tPulmonary Diseases"


class TestParse:
    def test_scarring_chain(self):
        t = parse_taxonomy(SCAR)
        assert t.k == 3
        assert t.names == ("Abnormal", "Pulmonary Diseases", "Scarring")
        assert t.root == 0
        assert t.ancestors(2) == (0, 1, 2)

    def test_single_node(self):
        t = parse_taxonomy("X\t-")
        assert t.k == 1 and t.root == 0
        assert t.leaves() == {0} and t.non_leaves() == set()
        assert t.max_depth() == 1

    def test_comments_and_blank_lines(self):
        t = parse_taxonomy("# header\n\nroot\t-\n  # indented comment\nleaf\troot\n")
        assert t.names == ("root", "leaf")

    def test_names_with_spaces(self):
        t = parse_taxonomy("Pleural Abnormality\t-\nFluid in Pleural Space\tPleural Abnormality\n")
        assert t.index("Fluid in Pleural Space") == 1

    def test_forward_reference_keeps_first_appearance_order(self):
        t = parse_taxonomy("B\tA\nA\t-\n")
        assert t.names == ("B", "A")
        assert t.root == 1
        assert t.topological_order == (1, 0)

    @pytest.mark.parametrize("text, exc", [
        ("", EmptyTaxonomyError),
        ("# only a comment\n\n", EmptyTaxonomyError),
        ("A\t-\nB\t-\n", MultipleRootsError),
        ("A\t-\nA\t-\n", DuplicateNameError),
        ("A\t-\nB\tA\nB\tA\n", DuplicateNameError),
        ("A\t-\nB\tC\n", UnknownParentError),
        ("A\t-\nB\tC\nC\tB\n", CycleError),
        ("A\tA\n", CycleError),
        ("A\t-\tx\n", TaxonomyError),
        ("A -\n", TaxonomyError),
    ])
    def test_errors(self, text, exc):
        with pytest.raises(exc):
            parse_taxonomy(text)

    def test_error_carries_line(self):
        with pytest.raises(UnknownParentError) as info:
            parse_taxonomy("A\t-\n# c\nB\tZ\n")
        assert info.value.line == 3


class TestQueries:
    def test_chain_ancestors(self):
        t = chain(3)
        assert t.ancestors(2) == (0, 1, 2)
        assert t.ancestors(0) == (0,)
        assert t.leaves() == {2}
        assert t.non_leaves() == {0, 1}
        assert t.max_depth() == 3

    def test_invalid_node(self):
        t = chain(2)
        with pytest.raises(IndexError):
            t.ancestors(5)
        with pytest.raises(IndexError):
            t.ancestors(-1)

    def test_descendants(self):
        t = parse_taxonomy("r\t-\na\tr\nb\tr\nc\ta\n")
        assert t.descendants(0) == [1, 2, 3]
        assert t.descendants(1) == [3]
        assert t.descendants(3) == []

    def test_plco(self):
        t = load_taxonomy("plco")
        assert t.k == 19
        assert len(t.leaves()) == 14
        assert len(t.non_leaves()) == 5
        assert t.max_depth() == 4
        scar = t.index("Scarring")
        assert [t.name(m) for m in t.ancestors(scar)] == ["Abnormal", "Pulmonary Diseases", "Scarring"]
        # a depth-four path exists
        assert any(len(t.ancestors(m)) == 4 for m in range(t.k))

    def test_padchest(self):
        t = load_taxonomy("padchest")
        assert t.k == 30
        assert t.name(t.root) == "Abnormal"

    def test_load_from_path(self, tmp_path):
        p = tmp_path / "t.tsv"
        p.write_text(SCAR, encoding="utf-8")
        assert load_taxonomy(p) == parse_taxonomy(SCAR)


def _taxonomies():
    return st.builds(lambda seed, k, depth: random_taxonomy(np.random.default_rng(seed), k, depth),
                     st.integers(0, 2**32 - 1), st.integers(1, 25), st.integers(2, 8))


@settings(max_examples=150, deadline=None)
@given(_taxonomies())
def test_ancestor_paths_walk_parent_links(t):
    for m in range(t.k):
        path = t.ancestors(m)
        assert path[0] == t.root and path[-1] == m
        assert len(path) == t.depth(m) + 1
        for u, v in zip(path, path[1:]):
            assert t.parent(v) == u


@settings(max_examples=150, deadline=None)
@given(_taxonomies())
def test_leaves_partition_nodes(t):
    leaves, inner = t.leaves(), t.non_leaves()
    assert leaves | inner == set(range(t.k))
    assert not leaves & inner
    assert all(not t.children(m) for m in leaves)


@settings(max_examples=150, deadline=None)
@given(_taxonomies())
def test_serialize_round_trip(t):
    again = parse_taxonomy(t.serialize())
    assert again == t
    assert again.names == t.names
    assert again.parent_array == t.parent_array


def test_taxonomy_is_hashable_and_immutable():
    t = chain(3)
    assert hash(t) == hash(chain(3))
    with pytest.raises(AttributeError):
        t.k = 4
