"""Subpath kernel between unordered trees, its brute-force oracle, the
rooted baseline and Gram matrices.

The kernel sums, over every pair of equal-length downward subpaths
``(s, s')`` of two trees, the product of atomic kernels between nodes
aligned root-end to leaf-end.
"""

from __future__ import annotations

import csv
import io
import json
import math
import threading
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import IO, Sequence

import numba
import numpy as np

from . import _dp
from .atomic import CHI2, DELTA, GAUSSIAN, KernelConfig, atomic, size_weight
from .tree import DataError, Dataset, Tree

SUBPATH = "subpath"
ROOTED = "rooted"
KERNEL_KINDS = (SUBPATH, ROOTED)

_KIND_CODE = {GAUSSIAN: _dp.KIND_GAUSSIAN, CHI2: _dp.KIND_CHI2, DELTA: _dp.KIND_DELTA}


class KernelError(ValueError):
    """A kernel value could not be computed (e.g. zero self-similarity)."""


@dataclass(frozen=True)
class SubpathCensus:
    by_length: dict[int, int]
    by_signature: dict[tuple, int] | None = None

    @property
    def total(self) -> int:
        return sum(self.by_length.values())


def enumerate_subpaths(tree: Tree) -> list[list[int]]:
    """Every downward path (root-end first) as packed node indices."""
    pk = tree.packed
    paths = []
    for start in range(len(pk)):
        stack = [[start]]
        while stack:
            path = stack.pop()
            paths.append(path)
            stack.extend(path + [int(c)] for c in pk.children(path[-1]))
    return paths


def subpath_census(tree: Tree, signatures: bool = False) -> SubpathCensus:
    """Subpath counts per length and, optionally, per feature sequence."""
    paths = enumerate_subpaths(tree)
    by_length = dict(sorted(Counter(len(p) for p in paths).items()))
    by_sig = None
    if signatures:
        feats = [tree.by_id[i].features for i in tree.packed.ids]
        by_sig = dict(Counter(tuple(feats[i] for i in p) for p in paths))
    return SubpathCensus(by_length, by_sig)


def symbolic_subpath_kernel(t1: Tree, t2: Tree) -> int:
    """Count of identical subpath pairs, from occurrence counts of each."""
    h1 = subpath_census(t1, signatures=True).by_signature
    h2 = subpath_census(t2, signatures=True).by_signature
    return sum(c * h2.get(sig, 0) for sig, c in h1.items())


def _normalized(k12: float, k11: float, k22: float) -> float:
    if not (k11 > 0 and k22 > 0):
        raise KernelError(f"cannot normalize: self-similarity is zero ({k11}, {k22})")
    return k12 / math.sqrt(k11 * k22)


def subpath_kernel_oracle(t1: Tree, t2: Tree, cfg: KernelConfig) -> float:
    """Reference value by explicit enumeration of all subpath pairs.

    Quadratic in the number of subpaths of each tree; meant for small trees.
    """

    def raw(a: Tree, b: Tree) -> float:
        na = [a.by_id[i] for i in a.packed.ids]
        nb_ = [b.by_id[i] for i in b.packed.ids]
        pa, pb = enumerate_subpaths(a), enumerate_subpaths(b)
        cache: dict[tuple[int, int], float] = {}

        def k(i: int, j: int) -> float:
            if (i, j) not in cache:
                cache[(i, j)] = atomic(na[i], nb_[j], cfg)
            return cache[(i, j)]

        total = 0.0
        for s in pa:
            for r in pb:
                if len(s) == len(r):
                    total += math.prod(k(i, j) for i, j in zip(s, r))
        return total

    value = raw(t1, t2)
    if cfg.normalize:
        return _normalized(value, raw(t1, t1), raw(t2, t2))
    return value


# --------------------------------------------------------------------------
# packed forests for the compiled path


@dataclass
class _Forest:
    features: np.ndarray
    rel_size: np.ndarray
    child_ptr: np.ndarray
    child_idx: np.ndarray
    node_off: np.ndarray


def _pack(trees: Sequence[Tree], ids: Sequence[str] | None = None) -> _Forest:
    ids = ids if ids is not None else [t.id for t in trees]
    feats, rels, ptrs, idxs = [], [], [], []
    off = [0]
    edge = 0
    for tree, tid in zip(trees, ids):
        pk = tree.packed
        if pk.features is None:
            raise DataError(f"tree {tid!r} has no extracted features")
        feats.append(pk.features)
        rels.append(pk.rel_size)
        ptrs.append(pk.child_ptr[:-1] + edge)
        idxs.append(pk.child_idx + off[-1])
        edge += len(pk.child_idx)
        off.append(off[-1] + len(pk))
    dims = {f.shape[1] for f in feats}
    if len(dims) > 1:
        raise DataError(f"feature dimensions differ across trees: {sorted(dims)}")
    return _Forest(
        features=np.ascontiguousarray(np.concatenate(feats)),
        rel_size=np.concatenate(rels),
        child_ptr=np.concatenate(ptrs + [np.array([edge], dtype=np.int64)]),
        child_idx=np.concatenate(idxs).astype(np.int64),
        node_off=np.asarray(off, dtype=np.int64),
    )


def _check_features(forest: _Forest, atomic_kind: str, ids: Sequence[str]):
    if atomic_kind == CHI2 and (forest.features < 0).any():
        rows = np.nonzero((forest.features < 0).any(axis=1))[0]
        tree = int(np.searchsorted(forest.node_off, rows[0], side="right") - 1)
        raise DataError(f"tree {ids[tree]!r}: chi2 atomic kernel needs non-negative features")


def _weights(rel: np.ndarray, betas: Sequence[float]) -> np.ndarray:
    # beta = 0 gives weight 1 even for a zero size.
    return np.array([np.ones_like(rel) if b == 0 else rel**b for b in betas], dtype=float)


def _set_workers(workers: int | None):
    if workers is not None:
        numba.set_num_threads(max(1, min(int(workers), numba.config.NUMBA_NUM_THREADS)))


# Scratch rows larger than this many floats are not kept between calls.
_SCRATCH_KEEP = 1 << 24
_scratch_cache = threading.local()


def _scratch(rows: int, width: int) -> np.ndarray:
    """Per-thread DP workspace, reused across calls while it is small enough."""
    buf = getattr(_scratch_cache, "buf", None)
    if buf is not None and buf.shape[0] >= rows and buf.shape[1] >= width:
        return buf
    buf = np.empty((rows, width))
    if width <= _SCRATCH_KEEP:
        _scratch_cache.buf = buf
    return buf


def _subpath_values(
    forest: _Forest,
    atomic_kind: str,
    gammas: Sequence[float],
    betas: Sequence[float],
    left: np.ndarray,
    right: np.ndarray,
    workers: int | None = None,
) -> np.ndarray:
    """Raw kernel values, one row per (gamma, beta) config, one column per pair."""
    _set_workers(workers)
    uniq_g = sorted(set(float(g) for g in gammas))
    uniq_b = sorted(set(float(b) for b in betas))
    cfg_g = np.array([uniq_g.index(float(g)) for g in gammas], dtype=np.int64)
    cfg_b = np.array([uniq_b.index(float(b)) for b in betas], dtype=np.int64)
    order = np.argsort(cfg_g, kind="stable")
    out = np.empty((len(gammas), len(left)))
    left = np.asarray(left, dtype=np.int64)
    right = np.asarray(right, dtype=np.int64)
    sizes = np.diff(forest.node_off)
    width = 4 * int((sizes[left] * sizes[right]).max()) if len(left) else 0
    _dp.subpath_pairs(
        forest.features,
        np.asarray(uniq_g, dtype=float),
        _weights(forest.rel_size, uniq_b),
        cfg_g[order],
        cfg_b[order],
        forest.child_ptr,
        forest.child_idx,
        forest.node_off,
        left,
        right,
        _KIND_CODE[atomic_kind],
        _scratch(numba.get_num_threads(), width),
        out,
    )
    result = np.empty_like(out)
    result[order] = out
    return result


def _raw_subpath(t1: Tree, t2: Tree, cfg: KernelConfig) -> float:
    forest = _pack([t1, t2])
    _check_features(forest, cfg.atomic, [t1.id, t2.id])
    return float(
        _subpath_values(forest, cfg.atomic, [cfg.gamma], [cfg.beta], np.array([0]), np.array([1]))[0, 0]
    )


def subpath_kernel(t1: Tree, t2: Tree, cfg: KernelConfig) -> float:
    """Subpath kernel in O(|T1| |T2|) node-pair work."""
    value = _raw_subpath(t1, t2, cfg)
    if cfg.normalize:
        return _normalized(value, _raw_subpath(t1, t1, cfg), _raw_subpath(t2, t2, cfg))
    return value


def rooted_kernel(t1: Tree, t2: Tree, cfg: KernelConfig) -> float:
    """Atomic kernel between the two roots only."""
    r1, r2 = t1.root, t2.root
    value = atomic(r1, r2, cfg)
    if cfg.normalize:
        return _normalized(value, atomic(r1, r1, cfg), atomic(r2, r2, cfg))
    return value


# --------------------------------------------------------------------------
# Gram matrices


@dataclass
class GramMatrix:
    values: np.ndarray
    item_ids: list[str]
    config: KernelConfig
    kind: str = SUBPATH
    seconds: float = field(default=0.0, compare=False)

    def fingerprint(self) -> dict:
        return {"config": json.loads(self.config.to_json()), "kind": self.kind}

    def write_csv(self, stream: IO[str]) -> None:
        stream.write("# " + json.dumps(self.fingerprint(), sort_keys=True) + "\n")
        writer = csv.writer(stream, lineterminator="\n")
        writer.writerow(self.item_ids)
        for row in self.values:
            writer.writerow(["%.17g" % v for v in row])

    @classmethod
    def read_csv(cls, stream: IO[str]) -> GramMatrix:
        header = stream.readline()
        if not header.startswith("#"):
            raise DataError("gram file: missing fingerprint comment line")
        meta = json.loads(header[1:])
        rows = list(csv.reader(stream))
        ids = rows[0]
        values = np.array([[float(v) for v in r] for r in rows[1:]], dtype=float)
        if values.shape != (len(ids), len(ids)):
            raise DataError(f"gram file: expected {len(ids)}x{len(ids)} values, got {values.shape}")
        return cls(values, ids, KernelConfig.from_dict(meta["config"]), meta["kind"])

    def to_csv(self) -> str:
        buf = io.StringIO()
        self.write_csv(buf)
        return buf.getvalue()


def _normalize_matrix(values: np.ndarray, ids: Sequence[str]) -> np.ndarray:
    diag = np.diag(values).copy()
    bad = np.nonzero(~(diag > 0))[0]
    if len(bad):
        i = int(bad[0])
        raise KernelError(f"cannot normalize: K({ids[i]!r}, {ids[i]!r}) = {diag[i]}")
    scale = np.sqrt(diag)
    out = values / scale[:, None] / scale[None, :]
    np.fill_diagonal(out, 1.0)
    # Division order differs across the diagonal; mirror to keep exact symmetry.
    iu = np.triu_indices(len(ids), 1)
    out.T[iu] = out[iu]
    return out


def _rooted_values(ds: Dataset, cfg: KernelConfig) -> np.ndarray:
    roots = [t.root for t in ds.trees]
    n = len(roots)
    values = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            values[i, j] = values[j, i] = atomic(roots[i], roots[j], cfg)
    return values


def gram_matrices(
    ds: Dataset,
    configs: Sequence[KernelConfig],
    kind: str = SUBPATH,
    workers: int | None = None,
) -> list[GramMatrix]:
    """One Gram matrix per config, sharing node distances across configs.

    All configs must use the same atomic kind. Each unordered pair is
    computed once and mirrored.
    """
    if kind not in KERNEL_KINDS:
        raise ValueError(f"unknown kernel kind {kind!r}")
    if not configs:
        return []
    kinds = {c.atomic for c in configs}
    if len(kinds) != 1:
        raise ValueError(f"configs mix atomic kinds {sorted(kinds)}")
    ids = ds.item_ids
    n = len(ids)
    start = time.perf_counter()
    if kind == ROOTED:
        raws = [_rooted_values(ds, c) for c in configs]
    else:
        forest = _pack(ds.trees, ids)
        _check_features(forest, configs[0].atomic, ids)
        left, right = np.triu_indices(n)
        flat = _subpath_values(
            forest,
            configs[0].atomic,
            [c.gamma for c in configs],
            [c.beta for c in configs],
            left,
            right,
            workers,
        )
        raws = []
        for row in flat:
            values = np.empty((n, n))
            values[left, right] = row
            values[right, left] = row
            raws.append(values)
    out = []
    elapsed = (time.perf_counter() - start) / len(configs)
    for cfg, values in zip(configs, raws):
        if cfg.normalize:
            values = _normalize_matrix(values, ids)
        out.append(GramMatrix(values, list(ids), cfg, kind, elapsed))
    return out


def gram_matrix(
    ds: Dataset, cfg: KernelConfig, kind: str = SUBPATH, workers: int | None = None
) -> GramMatrix:
    return gram_matrices(ds, [cfg], kind, workers)[0]


def cross_kernel(
    test: Sequence[Tree], train: Sequence[Tree], cfg: KernelConfig, kind: str = SUBPATH
) -> np.ndarray:
    """Kernel rows between test trees and training trees (normalized if asked)."""
    if kind == ROOTED:
        fn = rooted_kernel
        return np.array([[fn(a, b, cfg) for b in train] for a in test])
    trees = list(test) + list(train)
    forest = _pack(trees)
    _check_features(forest, cfg.atomic, [t.id for t in trees])
    nt, nr = len(test), len(train)
    left = np.repeat(np.arange(nt), nr)
    right = np.tile(np.arange(nt, nt + nr), nt)
    vals = _subpath_values(forest, cfg.atomic, [cfg.gamma], [cfg.beta], left, right)[0]
    values = vals.reshape(nt, nr)
    if cfg.normalize:
        idx = np.arange(nt + nr)
        diag = _subpath_values(forest, cfg.atomic, [cfg.gamma], [cfg.beta], idx, idx)[0]
        if not (diag > 0).all():
            raise KernelError("cannot normalize: zero self-similarity")
        values = values / np.sqrt(diag[:nt])[:, None] / np.sqrt(diag[nt:])[None, :]
    return values
