"""Tree model: parsing, validation, relative sizes, features, census."""

import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subpathkernel.tree import (
    HISTOGRAM,
    MEAN_VARIANCE,
    DataError,
    FeatureSpec,
    Node,
    ParseError,
    Tree,
    ValidationError,
    compute_rel_sizes,
    extract_features,
    parse_dataset,
    subpath_length_census,
    validate_tree,
    write_dataset,
)

from helpers import abbc_tree, chain


def record(nodes, tree_id="t", label="A"):
    return json.dumps({"id": tree_id, "label": label, "nodes": nodes})


def leaf(nid, parent, *values):
    return {"id": nid, "parent": parent, "leaf_values": list(values)}


def parse(*lines, **kw):
    return parse_dataset(io.StringIO("\n".join(lines) + "\n"), **kw)


@st.composite
def parent_lists(draw, max_nodes=15):
    n = draw(st.integers(1, max_nodes))
    return [None] + [draw(st.integers(0, k - 1)) for k in range(1, n)]


def shuffled_copy(tree: Tree, rng: np.random.Generator) -> Tree:
    """Same tree with node order and every children list permuted."""
    nodes = [
        Node(n.id, n.parent, tuple(rng.permutation(list(n.children))) if n.children else (), n.size,
             n.leaf_values, n.features, n.rel_size)
        for n in tree.nodes
    ]
    order = rng.permutation(len(nodes))
    return Tree(tree.id, tuple(nodes[k] for k in order), tree.root_id)


class TestParse:
    def test_single_node_tree(self):
        ds = parse(record([{"id": "r", "parent": None, "leaf_values": [1.5]}]))
        assert len(ds) == 1
        tree = ds.trees[0]
        assert len(tree) == 1
        assert tree.root.rel_size == 1.0
        assert ds.labels == ("A",)

    def test_children_are_built_from_parent_links(self):
        ds = parse(record([{"id": "r", "parent": None}, leaf("x", "r", 0.0), leaf("y", "r", 1.0)]))
        assert set(ds.trees[0].root.children) == {"x", "y"}

    def test_multiple_roots_rejected(self):
        line = record([leaf("a", None, 0.0), leaf("b", None, 1.0)], tree_id="two-roots")
        with pytest.raises(ValidationError, match="multiple roots") as err:
            parse(line)
        assert err.value.tree_id == "two-roots"

    def test_parent_cycle_rejected(self):
        nodes = [{"id": "r", "parent": None}, leaf("x", "r", 0.0), {"id": "n1", "parent": "n2"}, {"id": "n2", "parent": "n1"}]
        with pytest.raises(ValidationError, match="cycle"):
            parse(record(nodes, tree_id="loop"))

    def test_malformed_json_reports_line_number(self):
        good = record([leaf("r", None, 0.0)])
        with pytest.raises(ParseError) as err:
            parse(good, good, "{not json")
        assert err.value.line == 3
        assert "line 3" in str(err.value)

    def test_unknown_parent_rejected(self):
        with pytest.raises(ValidationError, match="unknown parent"):
            parse(record([{"id": "r", "parent": None}, leaf("x", "ghost", 0.0)]))

    def test_missing_payload_rejected(self):
        with pytest.raises(ValidationError, match="leaves without"):
            parse(record([{"id": "r", "parent": None}, {"id": "x", "parent": "r"}]))

    def test_non_numeric_values_rejected(self):
        with pytest.raises(ParseError, match="list of numbers"):
            parse(record([{"id": "r", "parent": None, "leaf_values": ["a"]}]))

    def test_pixel_sizes_used_when_every_node_has_one(self):
        nodes = [
            {"id": "r", "parent": None, "size": 100, "leaf_values": None},
            {"id": "x", "parent": "r", "size": 30, "leaf_values": [0.0]},
            {"id": "y", "parent": "r", "size": 70, "leaf_values": [1.0]},
        ]
        tree = parse(record(nodes)).trees[0]
        assert tree.by_id["x"].rel_size == pytest.approx(0.3)
        assert tree.by_id["y"].rel_size == pytest.approx(0.7)

    def test_precomputed_features_kept(self):
        nodes = [{"id": "r", "parent": None, "features": [1.0, 2.0]}, {"id": "x", "parent": "r", "features": [3.0, 4.0]}]
        tree = parse(record(nodes)).trees[0]
        assert tree.by_id["x"].features == (3.0, 4.0)

    def test_features_extracted_on_request(self):
        spec = FeatureSpec(MEAN_VARIANCE, dims=1)
        ds = parse(record([{"id": "r", "parent": None}, leaf("x", "r", 0.0), leaf("y", "r", 2.0)]), feature_spec=spec)
        assert ds.trees[0].root.features == (1.0, 1.0)

    def test_label_alphabet_sorted_by_default(self):
        ds = parse(record([leaf("r", None, 0.0)], "t1", "zeta"), record([leaf("r", None, 0.0)], "t2", "alpha"))
        assert ds.labels == ("alpha", "zeta")
        assert ds.label_indices.tolist() == [1, 0]

    def test_round_trip(self):
        lines = [
            record([{"id": "r", "parent": None}, leaf("x", "r", 0.25, 1.0), leaf("y", "r", 2.0, 3.5)], "t1", "A"),
            record([{"id": "q", "parent": None}, {"id": "m", "parent": "q"}, leaf("z", "m", 4.0, -1.0)], "t2", "B"),
        ]
        ds = parse(*lines)
        buf = io.StringIO()
        write_dataset(ds, buf)
        again = parse_dataset(io.StringIO(buf.getvalue()))
        assert again == ds


class TestValidate:
    def test_single_node_is_valid(self):
        assert validate_tree(Tree("t", (Node("r", rel_size=1.0),), "r")) == []

    def test_child_larger_than_parent(self):
        nodes = (Node("r", None, ("m",), rel_size=1.0), Node("m", "r", ("x",), rel_size=0.5), Node("x", "m", rel_size=0.9))
        problems = validate_tree(Tree("t", nodes, "r"))
        assert any("child larger than parent" in p for p in problems)

    def test_inconsistent_links(self):
        nodes = (Node("r", None, ("x",)), Node("y", "r"), Node("x", "y"))
        problems = validate_tree(Tree("t", nodes, "r"))
        assert any("inconsistent links" in p for p in problems)

    def test_root_rel_size_must_be_one(self):
        problems = validate_tree(Tree("t", (Node("r", rel_size=0.5),), "r"))
        assert any("root rel_size" in p for p in problems)

    def test_feature_dimensions_must_agree(self):
        nodes = (Node("r", None, ("x",), features=(1.0,)), Node("x", "r", features=(1.0, 2.0)))
        assert any("feature dimension" in p for p in validate_tree(Tree("t", nodes, "r")))

    def test_duplicate_ids(self):
        nodes = (Node("r", None, ("x",)), Node("x", "r"), Node("x", "r"))
        assert "duplicate node id" in validate_tree(Tree("t", nodes, "r"))


class TestRelSizes:
    def test_four_leaves(self):
        tree = Tree.from_parents("t", [None, 0, 0, 0, 0])
        assert tree.root.rel_size == 1.0
        assert [n.rel_size for n in tree.leaves()] == [0.25] * 4

    def test_chain_is_all_ones(self):
        assert [n.rel_size for n in chain(3).nodes] == [1.0, 1.0, 1.0]

    def test_binary(self):
        tree = Tree.from_parents("t", [None, 0, 0])
        assert [n.rel_size for n in tree.nodes] == [1.0, 0.5, 0.5]

    def test_zero_root_size_rejected(self):
        tree = Tree.from_parents("t", [None, 0])
        tree = tree.replace_nodes(Node(n.id, n.parent, n.children, size=0.0) for n in tree.nodes)
        with pytest.raises(DataError, match="root size"):
            compute_rel_sizes(tree, "pixel")

    @given(parent_lists())
    def test_monotone_along_paths(self, parents):
        tree = Tree.from_parents("t", parents)
        for n in tree.nodes:
            for c in n.children:
                assert tree.by_id[c].rel_size <= n.rel_size


class TestFeatures:
    def test_single_leaf_mean_variance(self):
        tree = Tree.from_parents("t", [None], leaf_values={0: [3.0]})
        assert extract_features(tree, FeatureSpec(MEAN_VARIANCE, 1)).root.features == (3.0, 0.0)

    def test_two_leaves_population_variance(self):
        tree = Tree.from_parents("t", [None, 0, 0], leaf_values={1: [0.0], 2: [2.0]})
        assert extract_features(tree, FeatureSpec(MEAN_VARIANCE, 1)).root.features == (1.0, 1.0)

    def test_histogram_end_bins(self):
        tree = Tree.from_parents("t", [None, 0, 0], leaf_values={1: [0.1], 2: [0.9]})
        spec = FeatureSpec(HISTOGRAM, 1, bins=4, value_range=(0.0, 1.0))
        assert extract_features(tree, spec).root.features == (0.5, 0.0, 0.0, 0.5)

    def test_histogram_clamps_out_of_range(self):
        tree = Tree.from_parents("t", [None, 0, 0], leaf_values={1: [-3.0], 2: [7.0]})
        spec = FeatureSpec(HISTOGRAM, 1, bins=2, value_range=(0.0, 1.0))
        assert extract_features(tree, spec).root.features == (0.5, 0.5)

    def test_histogram_normalized_per_dimension(self):
        tree = Tree.from_parents("t", [None, 0, 0, 0], leaf_values={1: [0.1, 0.6], 2: [0.2, 0.7], 3: [0.9, 0.8]})
        spec = FeatureSpec(HISTOGRAM, 2, bins=2, value_range=(0.0, 1.0))
        f = np.array(extract_features(tree, spec).root.features).reshape(2, 2)
        np.testing.assert_allclose(f.sum(axis=1), [1.0, 1.0])
        np.testing.assert_allclose(f, [[2 / 3, 1 / 3], [0.0, 1.0]])

    def test_histogram_needs_range(self):
        tree = Tree.from_parents("t", [None], leaf_values={0: [0.5]})
        with pytest.raises(DataError, match="range"):
            extract_features(tree, FeatureSpec(HISTOGRAM, 1, bins=4))

    def test_missing_leaf_values(self):
        tree = Tree.from_parents("t", [None, 0])
        with pytest.raises(DataError, match="no leaf_values"):
            extract_features(tree, FeatureSpec(MEAN_VARIANCE, 1))

    def test_wrong_dimension(self):
        tree = Tree.from_parents("t", [None], leaf_values={0: [0.5, 1.0]})
        with pytest.raises(DataError, match="expected 1"):
            extract_features(tree, FeatureSpec(MEAN_VARIANCE, 1))

    @settings(max_examples=50, deadline=None)
    @given(parent_lists(), st.integers(0, 2**32 - 1))
    def test_invariant_under_child_and_node_order(self, parents, seed):
        rng = np.random.default_rng(seed)
        leaves = [k for k in range(len(parents)) if k not in set(parents)]
        values = {k: rng.uniform(0, 5, size=2).tolist() for k in leaves}
        tree = Tree.from_parents("t", parents, leaf_values=values)
        other = shuffled_copy(tree, rng)
        for spec in (FeatureSpec(MEAN_VARIANCE, 2), FeatureSpec(HISTOGRAM, 2, bins=3, value_range=(0.0, 5.0))):
            a = extract_features(tree, spec).by_id
            b = extract_features(other, spec).by_id
            assert all(a[k].features == b[k].features for k in a)


class TestCensus:
    def test_single_node(self):
        assert subpath_length_census(Tree.from_parents("t", [None])) == {1: 1}

    def test_abbc_tree(self):
        assert subpath_length_census(abbc_tree()) == {1: 4, 2: 3, 3: 1}

    def test_chain_of_three(self):
        assert subpath_length_census(chain(3)) == {1: 3, 2: 2, 3: 1}

    @given(st.integers(1, 40))
    def test_chain_total(self, n):
        census = subpath_length_census(chain(n))
        assert sum(census.values()) == n * (n + 1) // 2
        assert census == {length: n - length + 1 for length in range(1, n + 1)}

    @given(parent_lists(30))
    def test_total_is_sum_of_depths(self, parents):
        depth = [0] * len(parents)
        for k, p in enumerate(parents):
            depth[k] = 1 if p is None else depth[p] + 1
        census = subpath_length_census(Tree.from_parents("t", parents))
        assert sum(census.values()) == sum(depth)
        assert census[1] == len(parents)
