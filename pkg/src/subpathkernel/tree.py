"""Tree data model, JSON-lines dataset format, validation and node features.

Trees are rooted and unordered. Each node may carry raw ``leaf_values``
(leaves only), an absolute ``size`` (e.g. a pixel count), derived
``features`` and a ``rel_size`` relative to the root.

Kernels never walk :class:`Node` objects directly; they use the packed,
level-order-indexed arrays exposed by :attr:`Tree.packed`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import IO, Iterable, Sequence

import numpy as np

__all__ = [
    "DataError",
    "Dataset",
    "FeatureSpec",
    "Node",
    "PackedTree",
    "ParseError",
    "Tree",
    "ValidationError",
    "compute_rel_sizes",
    "extract_features",
    "parse_dataset",
    "read_dataset",
    "subpath_length_census",
    "validate_tree",
    "write_dataset",
]

MEAN_VARIANCE = "mean-variance"
HISTOGRAM = "histogram"

_REL_TOL = 1e-12


class DataError(ValueError):
    """Bad input data (malformed file, invalid tree, missing payload)."""


class ParseError(DataError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ValidationError(DataError):
    def __init__(self, tree_id: str, violations: Sequence[str]):
        super().__init__(f"tree {tree_id!r}: " + "; ".join(violations))
        self.tree_id = tree_id
        self.violations = list(violations)


@dataclass(frozen=True)
class Node:
    id: str
    parent: str | None = None
    children: tuple[str, ...] = ()
    size: float | None = None
    leaf_values: tuple[float, ...] | None = None
    features: tuple[float, ...] | None = None
    rel_size: float | None = None


@dataclass(frozen=True)
class FeatureSpec:
    """How node features are derived from leaf values.

    ``dims`` is the per-leaf dimensionality D. In histogram mode each
    dimension gets ``bins`` equal-width bins over ``value_range``.
    """

    mode: str = MEAN_VARIANCE
    dims: int = 1
    bins: int = 4
    value_range: tuple[float, float] | None = None

    def __post_init__(self):
        if self.mode not in (MEAN_VARIANCE, HISTOGRAM):
            raise ValueError(f"unknown feature mode {self.mode!r}")
        if self.dims < 1 or self.bins < 1:
            raise ValueError("dims and bins must be positive")
        if self.value_range is not None:
            lo, hi = self.value_range
            if not hi > lo:
                raise ValueError(f"empty value range {self.value_range}")

    @property
    def n_features(self) -> int:
        return 2 * self.dims if self.mode == MEAN_VARIANCE else self.bins * self.dims


@dataclass(frozen=True)
class PackedTree:
    """Level-order array view of a tree; node 0 is the root.

    Children always have larger indices than their parent, so iterating
    indices in reverse visits every child before its parent. The children
    of a node occupy consecutive indices, which keeps the kernel's lookups
    of child pairs within small, cache-friendly blocks.
    """

    ids: tuple[str, ...]
    child_ptr: np.ndarray
    child_idx: np.ndarray
    rel_size: np.ndarray
    features: np.ndarray | None

    def __len__(self) -> int:
        return len(self.ids)

    def children(self, i: int) -> np.ndarray:
        return self.child_idx[self.child_ptr[i] : self.child_ptr[i + 1]]


@dataclass(frozen=True)
class Tree:
    id: str
    nodes: tuple[Node, ...]
    root_id: str

    @cached_property
    def by_id(self) -> dict[str, Node]:
        return {n.id: n for n in self.nodes}

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def root(self) -> Node:
        return self.by_id[self.root_id]

    def preorder(self) -> list[Node]:
        out = []
        stack = [self.root_id]
        while stack:
            node = self.by_id[stack.pop()]
            out.append(node)
            stack.extend(reversed(node.children))
        return out

    def level_order(self) -> list[Node]:
        out = [self.root]
        for node in out:
            out.extend(self.by_id[c] for c in node.children)
        return out

    def leaves(self) -> list[Node]:
        return [n for n in self.preorder() if not n.children]

    @cached_property
    def packed(self) -> PackedTree:
        order = self.level_order()
        # Level order appends each node's children as one consecutive run,
        # so node k's children are the next len(children) unvisited indices.
        ptr = np.zeros(len(order) + 1, dtype=np.int64)
        np.cumsum([len(n.children) for n in order], out=ptr[1:])
        idx = np.arange(1, len(order), dtype=np.int64)
        rel = np.array(
            [1.0 if n.rel_size is None else n.rel_size for n in order], dtype=float
        )
        feats = None
        if all(n.features is not None for n in order):
            feats = np.array([n.features for n in order], dtype=float)
        return PackedTree(
            ids=tuple(n.id for n in order),
            child_ptr=ptr,
            child_idx=idx,
            rel_size=rel,
            features=feats,
        )

    @classmethod
    def from_parents(
        cls,
        tree_id: str,
        parents: Sequence[int | None],
        leaf_values: dict[int, Sequence[float]] | None = None,
        features: Sequence[Sequence[float]] | None = None,
        sizes: Sequence[float] | None = None,
    ) -> Tree:
        """Build a tree from a parent list; node k gets id ``str(k)``.

        Children keep increasing index order. Relative sizes are computed
        from ``sizes`` when given, else from descendant leaf counts.
        """
        kids: list[list[int]] = [[] for _ in parents]
        for k, p in enumerate(parents):
            if p is not None:
                kids[p].append(k)
        nodes = []
        for k, p in enumerate(parents):
            lv = None
            if leaf_values is not None and k in leaf_values:
                lv = tuple(float(v) for v in leaf_values[k])
            nodes.append(
                Node(
                    id=str(k),
                    parent=None if p is None else str(p),
                    children=tuple(str(c) for c in kids[k]),
                    size=None if sizes is None else float(sizes[k]),
                    leaf_values=lv,
                    features=None if features is None else tuple(float(v) for v in features[k]),
                )
            )
        roots = [str(k) for k, p in enumerate(parents) if p is None]
        tree = _check(cls(tree_id, tuple(nodes), roots[0] if len(roots) == 1 else ""))
        return compute_rel_sizes(tree, "pixel" if sizes is not None else "leaf-count")

    def replace_nodes(self, nodes: Iterable[Node]) -> Tree:
        return Tree(self.id, tuple(nodes), self.root_id)


@dataclass(frozen=True)
class Dataset:
    items: tuple[tuple[Tree, str], ...]
    labels: tuple[str, ...]
    feature_spec: FeatureSpec = field(default_factory=FeatureSpec)

    def __post_init__(self):
        alphabet = set(self.labels)
        for tree, label in self.items:
            if label not in alphabet:
                raise DataError(f"tree {tree.id!r}: label {label!r} not in alphabet")

    def __len__(self) -> int:
        return len(self.items)

    @property
    def trees(self) -> list[Tree]:
        return [t for t, _ in self.items]

    @property
    def item_ids(self) -> list[str]:
        return [t.id for t, _ in self.items]

    @property
    def label_indices(self) -> np.ndarray:
        lookup = {lab: k for k, lab in enumerate(self.labels)}
        return np.array([lookup[lab] for _, lab in self.items], dtype=np.int64)

    def value_range(self) -> tuple[float, float]:
        """Declared histogram range, or the observed min/max of leaf values."""
        if self.feature_spec.value_range is not None:
            return self.feature_spec.value_range
        values = [
            v for t in self.trees for n in t.nodes if n.leaf_values for v in n.leaf_values
        ]
        if not values:
            raise DataError("dataset carries no leaf values")
        lo, hi = min(values), max(values)
        if hi <= lo:
            hi = lo + 1.0
        return (lo, hi)

    def with_features(self, spec: FeatureSpec) -> Dataset:
        items = tuple((extract_features(t, spec), lab) for t, lab in self.items)
        return Dataset(items, self.labels, spec)

    def subset(self, indices: Iterable[int]) -> Dataset:
        return Dataset(tuple(self.items[i] for i in indices), self.labels, self.feature_spec)


# --------------------------------------------------------------------------
# validation


def validate_tree(tree: Tree) -> list[str]:
    """Return a list of invariant violations; empty means the tree is valid."""
    problems: list[str] = []
    ids = [n.id for n in tree.nodes]
    if len(set(ids)) != len(ids):
        problems.append("duplicate node id")
    by_id = {n.id: n for n in tree.nodes}

    roots = [n.id for n in tree.nodes if n.parent is None]
    if not roots:
        problems.append("no root")
    elif len(roots) > 1:
        problems.append(f"multiple roots: {sorted(roots)}")
    elif roots[0] != tree.root_id:
        problems.append(f"root mismatch: parentless node {roots[0]!r} is not root_id")

    for n in tree.nodes:
        if n.parent is not None and n.parent not in by_id:
            problems.append(f"unknown parent {n.parent!r} of node {n.id!r}")
        for c in n.children:
            child = by_id.get(c)
            if child is None:
                problems.append(f"unknown child {c!r} of node {n.id!r}")
            elif child.parent != n.id:
                problems.append(f"inconsistent links: {n.id!r} lists child {c!r} whose parent is {child.parent!r}")
        if n.parent in by_id and n.id not in by_id[n.parent].children:
            problems.append(f"inconsistent links: {n.id!r} names parent {n.parent!r} which does not list it")
        if len(set(n.children)) != len(n.children):
            problems.append(f"inconsistent links: duplicate child of {n.id!r}")
    if problems:
        return problems

    # Every node must be reached from the root exactly once.
    seen: set[str] = set()
    stack = [tree.root_id]
    while stack:
        v = stack.pop()
        if v in seen:
            problems.append(f"cycle through node {v!r}")
            return problems
        seen.add(v)
        stack.extend(by_id[v].children)
    if len(seen) != len(by_id):
        # Parents all exist, so an unreachable node sits on a parent cycle.
        unreached = sorted(set(by_id) - seen)
        problems.append(f"cycle among nodes {unreached}")
        return problems

    for n in tree.nodes:
        if n.rel_size is None:
            continue
        if not (0.0 < n.rel_size <= 1.0 + _REL_TOL):
            problems.append(f"rel_size of {n.id!r} outside (0, 1]: {n.rel_size}")
        for c in n.children:
            cr = by_id[c].rel_size
            if cr is not None and cr > n.rel_size * (1 + _REL_TOL):
                problems.append(f"child larger than parent: {c!r} ({cr}) under {n.id!r} ({n.rel_size})")
    root_rel = by_id[tree.root_id].rel_size
    if root_rel is not None and abs(root_rel - 1.0) > _REL_TOL:
        problems.append(f"root rel_size is {root_rel}, expected 1")

    dims = {len(n.features) for n in tree.nodes if n.features is not None}
    if len(dims) > 1:
        problems.append(f"feature dimension differs across nodes: {sorted(dims)}")
    return problems


def _check(tree: Tree) -> Tree:
    problems = validate_tree(tree)
    if problems:
        raise ValidationError(tree.id, problems)
    return tree


# --------------------------------------------------------------------------
# sizes, features, census


def _descendant_leaves(tree: Tree) -> dict[str, list[Node]]:
    out: dict[str, list[Node]] = {}
    for node in reversed(tree.preorder()):
        if not node.children:
            out[node.id] = [node]
        else:
            out[node.id] = [leaf for c in node.children for leaf in out[c]]
    return out


def compute_rel_sizes(tree: Tree, mode: str = "leaf-count") -> Tree:
    """Set ``rel_size = size / size(root)`` on every node.

    ``mode="pixel"`` uses the absolute ``size`` stored on each node;
    ``mode="leaf-count"`` uses the number of descendant leaves.
    """
    if mode == "leaf-count":
        counts = {k: float(len(v)) for k, v in _descendant_leaves(tree).items()}
    elif mode == "pixel":
        missing = [n.id for n in tree.nodes if n.size is None]
        if missing:
            raise DataError(f"tree {tree.id!r}: pixel mode needs size on nodes {missing}")
        counts = {n.id: float(n.size) for n in tree.nodes}
    else:
        raise ValueError(f"unknown size mode {mode!r}")
    root_size = counts[tree.root_id]
    if not root_size > 0:
        raise DataError(f"tree {tree.id!r}: root size is zero")
    return tree.replace_nodes(replace(n, rel_size=counts[n.id] / root_size) for n in tree.nodes)


def _histogram(values: np.ndarray, bins: int, lo: float, hi: float) -> np.ndarray:
    # values: (count, D). Out-of-range values clamp to the end bins.
    pos = np.floor((values - lo) / (hi - lo) * bins).astype(np.int64)
    pos = np.clip(pos, 0, bins - 1)
    count, dims = values.shape
    hist = np.zeros((dims, bins))
    for d in range(dims):
        hist[d] = np.bincount(pos[:, d], minlength=bins)
    return (hist / count).ravel()


def extract_features(tree: Tree, spec: FeatureSpec) -> Tree:
    """Compute every node's features from the leaf values below it."""
    leaves = tree.leaves()
    for leaf in leaves:
        if leaf.leaf_values is None:
            raise DataError(f"tree {tree.id!r}: leaf {leaf.id!r} has no leaf_values")
        if len(leaf.leaf_values) != spec.dims:
            raise DataError(
                f"tree {tree.id!r}: leaf {leaf.id!r} has {len(leaf.leaf_values)} values, expected {spec.dims}"
            )
    if spec.mode == HISTOGRAM:
        if spec.value_range is None:
            raise DataError("histogram features need a declared value range")
        lo, hi = spec.value_range

    below = _descendant_leaves(tree)
    new_nodes = []
    for n in tree.nodes:
        # Sorting makes the floating-point sums independent of leaf order.
        vals = np.array(sorted(leaf.leaf_values for leaf in below[n.id]), dtype=float)
        if spec.mode == MEAN_VARIANCE:
            mean = vals.mean(axis=0)
            var = ((vals - mean) ** 2).mean(axis=0)
            feats = np.concatenate([mean, var])
        else:
            feats = _histogram(vals, spec.bins, lo, hi)
        new_nodes.append(replace(n, features=tuple(float(x) for x in feats)))
    return tree.replace_nodes(new_nodes)


def subpath_length_census(tree: Tree) -> dict[int, int]:
    """Count downward subpaths (single nodes included) by number of nodes."""
    counts: dict[int, int] = {}
    by_id = tree.by_id
    # A node at depth d (root = 1) ends d subpaths of lengths 1..d.
    stack = [(tree.root_id, 1)]
    while stack:
        node_id, depth = stack.pop()
        for length in range(1, depth + 1):
            counts[length] = counts.get(length, 0) + 1
        stack.extend((c, depth + 1) for c in by_id[node_id].children)
    return dict(sorted(counts.items()))


# --------------------------------------------------------------------------
# JSON-lines I/O


def _floats(value, what: str, line: int) -> tuple[float, ...] | None:
    if value is None:
        return None
    if not isinstance(value, list) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    ):
        raise ParseError(line, f"{what} must be a list of numbers")
    return tuple(float(v) for v in value)


def _tree_from_record(rec: dict, line: int) -> tuple[Tree, str]:
    try:
        tree_id = str(rec["id"])
        label = str(rec["label"])
        raw_nodes = rec["nodes"]
    except (KeyError, TypeError) as exc:
        raise ParseError(line, f"missing field {exc}") from None
    if not isinstance(raw_nodes, list) or not raw_nodes:
        raise ParseError(line, "nodes must be a non-empty list")

    parents: dict[str, str | None] = {}
    payload = []
    for raw in raw_nodes:
        if not isinstance(raw, dict) or "id" not in raw:
            raise ParseError(line, "every node needs an id")
        nid = str(raw["id"])
        parent = raw.get("parent")
        parents[nid] = None if parent is None else str(parent)
        size = raw.get("size")
        if size is not None and not isinstance(size, (int, float)):
            raise ParseError(line, f"size of node {nid!r} must be a number")
        payload.append(
            (
                nid,
                None if size is None else float(size),
                _floats(raw.get("leaf_values"), "leaf_values", line),
                _floats(raw.get("features"), "features", line),
            )
        )

    children: dict[str, list[str]] = {nid: [] for nid in parents}
    for nid, parent in parents.items():
        if parent is not None and parent in children:
            children[parent].append(nid)
    nodes = tuple(
        Node(
            id=nid,
            parent=parents[nid],
            children=tuple(children[nid]),
            size=size,
            leaf_values=lv,
            features=ft,
        )
        for nid, size, lv, ft in payload
    )
    if len(nodes) != len(parents):
        raise ValidationError(tree_id, ["duplicate node id"])
    roots = [n.id for n in nodes if n.parent is None]
    tree = Tree(tree_id, nodes, roots[0] if len(roots) == 1 else "")
    _check(tree)

    has_features = all(n.features is not None for n in nodes)
    if not has_features:
        missing = [n.id for n in tree.leaves() if n.leaf_values is None]
        if missing:
            raise ValidationError(tree_id, [f"leaves without leaf_values or features: {missing}"])
    mode = "pixel" if all(n.size is not None for n in nodes) else "leaf-count"
    return _check(compute_rel_sizes(tree, mode)), label


def parse_dataset(
    stream: IO[bytes] | IO[str] | Iterable[str],
    feature_spec: FeatureSpec | None = None,
    labels: Sequence[str] | None = None,
) -> Dataset:
    """Read a JSON-lines dataset, validating every tree.

    When nodes carry precomputed ``features`` they are kept as-is. Otherwise
    features are derived from ``leaf_values`` with ``feature_spec`` (default:
    mean-variance over the observed leaf dimensionality).
    """
    items = []
    for lineno, raw in enumerate(stream, start=1):
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(lineno, f"malformed JSON: {exc.msg}") from None
        if not isinstance(rec, dict):
            raise ParseError(lineno, "record must be a JSON object")
        items.append(_tree_from_record(rec, lineno))

    if labels is None:
        labels = sorted({lab for _, lab in items})
    trees = [t for t, _ in items]
    precomputed = bool(trees) and all(
        all(n.features is not None for n in t.nodes) for t in trees
    )
    if precomputed:
        dims = {len(n.features) for t in trees for n in t.nodes}
        if len(dims) != 1:
            raise DataError(f"feature dimension differs across trees: {sorted(dims)}")
        spec = feature_spec or FeatureSpec(MEAN_VARIANCE, dims=max(1, dims.pop() // 2))
        return Dataset(tuple(items), tuple(labels), spec)

    leaf_dims = {len(n.leaf_values) for t in trees for n in t.leaves()}
    if len(leaf_dims) > 1:
        raise DataError(f"leaf_values dimension differs across trees: {sorted(leaf_dims)}")
    ds = Dataset(tuple(items), tuple(labels), feature_spec or FeatureSpec(dims=leaf_dims.pop() if leaf_dims else 1))
    if feature_spec is not None:
        ds = ds.with_features(feature_spec)
    return ds


def read_dataset(path, feature_spec: FeatureSpec | None = None) -> Dataset:
    with open(path, "rb") as fh:
        return parse_dataset(fh, feature_spec)


def _num(x: float) -> float | int:
    return int(x) if float(x).is_integer() and abs(x) < 2**53 else x


def tree_record(tree: Tree, label: str) -> dict:
    nodes = []
    for n in tree.nodes:
        nodes.append(
            {
                "id": n.id,
                "parent": n.parent,
                "size": None if n.size is None else _num(n.size),
                "leaf_values": None if n.leaf_values is None else list(n.leaf_values),
                "features": None if n.features is None else list(n.features),
            }
        )
    return {"id": tree.id, "label": label, "nodes": nodes}


def write_dataset(ds: Dataset, stream: IO[str], include_features: bool = False) -> None:
    for tree, label in ds.items:
        rec = tree_record(tree, label)
        if not include_features:
            has_leaf_values = all(n.leaf_values is not None for n in tree.leaves())
            if has_leaf_values:
                for node in rec["nodes"]:
                    node["features"] = None
        stream.write(json.dumps(rec, allow_nan=False) + "\n")
