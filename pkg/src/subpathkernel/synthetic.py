"""Seedable generators for the artificial two-class tree scenarios.

Leaves carry one informative value drawn from a type-specific interval
(type A in [0, 1), B in [2, 3), outliers in [4, 5)) plus optional
uninformative noise dimensions in [0, 5). Internal nodes are created by
randomly merging groups of nodes level by level.

Scenarios:

``a``   class 1 has only A leaves, class 2 only B leaves.
``b``   A leaves only; the classes differ in merge fan-out.
``c``   equal numbers of A and B leaves. Class 1 pairs every A leaf with a
        B leaf under one parent, class 2 pairs A with A and B with B.
``c1``  ``c`` with a fraction of leaves turned into outliers.
``c2``  ``c`` with a fraction of leaves flipped between A and B.

Randomness comes from numpy's PCG64 bit generator. Each tree draws from
its own streams spawned from ``SeedSequence(seed)`` keyed by (class, index),
so a dataset is a pure function of its parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .tree import MEAN_VARIANCE, Dataset, FeatureSpec, Tree

SCENARIOS = ("a", "b", "c", "c1", "c2")

TYPE_A, TYPE_B, TYPE_OUTLIER = 0, 1, 2
INTERVALS = {TYPE_A: (0.0, 1.0), TYPE_B: (2.0, 3.0), TYPE_OUTLIER: (4.0, 5.0)}
NOISE_INTERVAL = (0.0, 5.0)
VALUE_RANGE = (0.0, 5.0)


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioParams:
    scenario: str = "a"
    trees_per_class: int = 120
    leaf_range: tuple[int, int] = (16, 32)
    fanout_range_class1: tuple[int, int] = (2, 3)
    fanout_range_class2: tuple[int, int] = (5, 8)
    distortion_ratio: float = 0.0
    extra_noise_dims: int = 0
    seed: int = 0
    n_classes: int = 2

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ParameterError(f"unknown scenario {self.scenario!r}")
        if self.trees_per_class < 21:
            raise ParameterError("trees_per_class must be >= 21")
        for name in ("leaf_range", "fanout_range_class1", "fanout_range_class2"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ParameterError(f"{name} is empty: {(lo, hi)}")
        if self.leaf_range[0] < 1:
            raise ParameterError("trees need at least one leaf")
        for name in ("fanout_range_class1", "fanout_range_class2"):
            if getattr(self, name)[0] < 2:
                raise ParameterError(f"{name} must start at 2 or more")
        if not 0.0 <= self.distortion_ratio <= 1.0:
            raise ParameterError(f"distortion_ratio outside [0, 1]: {self.distortion_ratio}")
        if self.scenario == "c2" and self.distortion_ratio > 0.5:
            raise ParameterError(f"mislabel ratio must be <= 0.5, got {self.distortion_ratio}")
        if self.scenario not in ("c1", "c2") and self.distortion_ratio != 0.0:
            raise ParameterError(f"scenario {self.scenario!r} takes no distortion")
        if self.extra_noise_dims < 0:
            raise ParameterError("extra_noise_dims must be >= 0")
        if self.n_classes < 2:
            raise ParameterError("need at least two classes")
        if self.n_classes > 2 and self.scenario != "c":
            raise ParameterError("more than two classes is only defined for scenario c")
        if self.scenario in ("c", "c1", "c2"):
            lo, hi = self.leaf_range
            if (hi // 4) * 4 < max(lo, 4):
                raise ParameterError(f"leaf_range {self.leaf_range} holds no multiple of 4")

    @property
    def bins(self) -> int:
        return 12 if self.scenario == "c1" else 4


def _group_sizes(n: int, fanout: tuple[int, int], rng) -> list[int]:
    """Random split of ``n`` nodes into groups with sizes inside ``fanout``.

    When no such split exists (e.g. 9 nodes with fan-out 5..8) the smallest
    feasible number of groups is used with near-equal sizes.
    """
    lo, hi = fanout
    g_min, g_max = -(-n // hi), n // lo
    if g_min > g_max:
        return [n // g_min + (k < n % g_min) for k in range(g_min)]
    g = int(rng.integers(g_min, g_max + 1))
    sizes = [lo] * g
    for _ in range(n - lo * g):
        open_groups = [k for k in range(g) if sizes[k] < hi]
        sizes[open_groups[int(rng.integers(len(open_groups)))]] += 1
    return sizes


def _merge_levels(parents: list[int | None], frontier: list[int], fanout: tuple[int, int], rng) -> int:
    """Merge ``frontier`` upward level by level; returns the root index.

    A level of at most ``fanout[1]`` nodes is merged into the root.
    """
    while len(frontier) > 1:
        order = [frontier[k] for k in rng.permutation(len(frontier))]
        sizes = [len(order)] if len(order) <= fanout[1] else _group_sizes(len(order), fanout, rng)
        nxt = []
        i = 0
        for f in sizes:
            parent = len(parents)
            parents.append(None)
            for child in order[i : i + f]:
                parents[child] = parent
            nxt.append(parent)
            i += f
        frontier = nxt
    return frontier[0]


def _plain_shape(n_leaves: int, fanout: tuple[int, int], rng) -> list[int | None]:
    parents: list[int | None] = [None] * n_leaves
    _merge_levels(parents, list(range(n_leaves)), fanout, rng)
    return parents


def _paired_shape(n_pairs: int, fanout: tuple[int, int], rng) -> list[int | None]:
    """Leaves 2k and 2k+1 share parent node ``2 * n_pairs + k``."""
    parents: list[int | None] = [None] * (2 * n_pairs)
    pair_nodes = []
    for k in range(n_pairs):
        p = len(parents)
        parents.append(None)
        parents[2 * k] = parents[2 * k + 1] = p
        pair_nodes.append(p)
    _merge_levels(parents, pair_nodes, fanout, rng)
    return parents


def _leaf_count(params: ScenarioParams, rng) -> int:
    lo, hi = params.leaf_range
    if params.scenario in ("c", "c1", "c2"):
        choices = np.arange(max(4, -(-lo // 4) * 4), hi + 1, 4)
        return int(rng.choice(choices))
    return int(rng.integers(lo, hi + 1))


def _pair_types(n_pairs: int, n_mixed: int, rng) -> np.ndarray:
    """Leaf types for paired leaves: ``n_mixed`` AB pairs, the rest split AA/BB."""
    n_pure = n_pairs - n_mixed
    kinds = np.array(["AB"] * n_mixed + ["AA"] * (n_pure // 2) + ["BB"] * (n_pure // 2))
    kinds = kinds[rng.permutation(n_pairs)]
    types = np.empty(2 * n_pairs, dtype=np.int64)
    for k, kind in enumerate(kinds):
        first, second = (TYPE_A, TYPE_B) if kind == "AB" else ((TYPE_A, TYPE_A) if kind == "AA" else (TYPE_B, TYPE_B))
        types[2 * k], types[2 * k + 1] = first, second
    return types


def _mixed_pairs(params: ScenarioParams, label: int, n_pairs: int) -> int:
    if params.n_classes == 2:
        return n_pairs if label == 0 else 0
    # Class k mixes a fraction (K-1-k)/(K-1) of its pairs; pure pairs stay even.
    frac = (params.n_classes - 1 - label) / (params.n_classes - 1)
    mixed = int(round(frac * n_pairs))
    if (n_pairs - mixed) % 2:
        mixed += 1 if mixed < n_pairs else -1
    return mixed


def _tree(params: ScenarioParams, label: int, index: int) -> Tree:
    seq = np.random.SeedSequence(params.seed, spawn_key=(label, index))
    shape_rng, type_rng, distort_rng, value_rng = (
        np.random.Generator(np.random.PCG64(s)) for s in seq.spawn(4)
    )
    n_leaves = _leaf_count(params, shape_rng)
    sc = params.scenario

    if sc in ("a", "b"):
        fanout = params.fanout_range_class2 if (sc == "b" and label == 1) else params.fanout_range_class1
        parents = _plain_shape(n_leaves, fanout, shape_rng)
        leaf_type = TYPE_B if (sc == "a" and label == 1) else TYPE_A
        types = np.full(n_leaves, leaf_type, dtype=np.int64)
    else:
        n_pairs = n_leaves // 2
        parents = _paired_shape(n_pairs, params.fanout_range_class1, shape_rng)
        types = _pair_types(n_pairs, _mixed_pairs(params, label, n_pairs), type_rng)

    n_distort = int(round(params.distortion_ratio * n_leaves))
    if n_distort:
        chosen = distort_rng.choice(n_leaves, size=n_distort, replace=False)
        if sc == "c1":
            types[chosen] = TYPE_OUTLIER
        else:
            types[chosen] = np.where(types[chosen] == TYPE_A, TYPE_B, TYPE_A)

    leaf_values = {}
    for leaf in range(n_leaves):
        lo, hi = INTERVALS[int(types[leaf])]
        row = [value_rng.uniform(lo, hi)]
        row.extend(value_rng.uniform(*NOISE_INTERVAL, size=params.extra_noise_dims))
        leaf_values[leaf] = row
    return Tree.from_parents(f"t{label + 1}-{index:04d}", parents, leaf_values=leaf_values)


def generate(params: ScenarioParams) -> Dataset:
    """Labelled trees with leaf values and leaf-count relative sizes."""
    params.validate()
    labels = tuple(f"class{k + 1}" for k in range(params.n_classes))
    items = tuple(
        (_tree(params, k, i), labels[k])
        for k in range(params.n_classes)
        for i in range(params.trees_per_class)
    )
    spec = FeatureSpec(MEAN_VARIANCE, dims=1 + params.extra_noise_dims, bins=params.bins, value_range=VALUE_RANGE)
    return Dataset(items, labels, spec)


def derived_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, np.uint64)[0])


def scenario_suite(base: ScenarioParams, ratios: Sequence[float]) -> list[Dataset]:
    """One dataset per distortion ratio, each with its own derived seed."""
    out = []
    for k, ratio in enumerate(ratios):
        params = replace(base, distortion_ratio=float(ratio), seed=derived_seed(base.seed, k))
        params.validate()
        out.append(generate(params))
    return out
