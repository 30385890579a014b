"""Classification experiments: repeated random splits, grid-searched SVMs,
OA / AA / kappa, and paired Wilcoxon tests between methods."""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .atomic import CHI2, DELTA, GAUSSIAN, KernelConfig
from .kernel import KERNEL_KINDS, ROOTED, SUBPATH, gram_matrices
from .svm import SvmParams, grid_search_precomputed, predict, stratified_folds, train
from .tree import HISTOGRAM, MEAN_VARIANCE, DataError, Dataset, FeatureSpec

log = logging.getLogger(__name__)

SIGNIFICANCE_LEVEL = 1e-4

DEFAULT_GRIDS = {
    "gamma": [0.0] + [10.0**k for k in range(-3, 3)],
    "C": [10.0**k for k in range(-2, 4)],
    "beta": [0.0, 0.25, 0.5, 0.75, 1.0],
}


# --------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray  # rows: true class, columns: predicted class
    labels: tuple

    @classmethod
    def from_predictions(cls, truth: Sequence[int], pred: Sequence[int], labels: Sequence) -> ConfusionMatrix:
        counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
        np.add.at(counts, (np.asarray(truth), np.asarray(pred)), 1)
        return cls(counts, tuple(labels))


@dataclass(frozen=True)
class Metrics:
    oa: float
    aa: float
    kappa: float


def metrics(cm: ConfusionMatrix) -> Metrics:
    c = np.asarray(cm.counts, dtype=float)
    total = c.sum()
    if total <= 0:
        raise ValueError("empty confusion matrix")
    rows = c.sum(axis=1)
    cols = c.sum(axis=0)
    empty = np.nonzero(rows == 0)[0]
    if len(empty):
        raise ValueError(f"class {cm.labels[empty[0]]!r} has no test items; average accuracy undefined")
    oa = float(np.trace(c) / total)
    aa = float(np.mean(np.diag(c) / rows))
    p_e = float(rows @ cols / total**2)
    if p_e >= 1.0:
        kappa = 1.0 if oa == 1.0 else 0.0
    else:
        kappa = (oa - p_e) / (1.0 - p_e)
    return Metrics(oa, aa, float(kappa))


# --------------------------------------------------------------------------
# Wilcoxon signed-rank test


@dataclass(frozen=True)
class WilcoxonResult:
    n: int
    statistic: float | None  # W+, sum of ranks of positive differences
    p_value: float | None
    method: str  # "exact", "normal" or "insufficient data"

    @property
    def significant(self) -> bool:
        return self.p_value is not None and self.p_value < SIGNIFICANCE_LEVEL


def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float]) -> WilcoxonResult:
    """Two-sided test on paired samples.

    Zero differences are dropped. Exact null distribution below 20 pairs,
    normal approximation with tie correction otherwise.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("paired samples must have equal length")
    d = a - b
    d = d[d != 0]
    n = len(d)
    if n < 5:
        return WilcoxonResult(n, None, None, "insufficient data")
    ranks = _midranks(np.abs(d))
    w_plus = float(ranks[d > 0].sum())

    if n < 20:
        # Midranks are multiples of 1/2; count subsets over doubled ranks.
        doubled = np.rint(2 * ranks).astype(np.int64)
        dist = np.zeros(int(doubled.sum()) + 1)
        dist[0] = 1.0
        for r in doubled:
            dist[r:] = dist[r:] + dist[: len(dist) - r].copy()
        dist /= dist.sum()
        w2 = int(round(2 * w_plus))
        lower = dist[: w2 + 1].sum()
        upper = dist[w2:].sum()
        return WilcoxonResult(n, w_plus, float(min(1.0, 2 * min(lower, upper))), "exact")

    mean = n * (n + 1) / 4
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24 - float(np.sum(tie_counts**3 - tie_counts)) / 48
    if var <= 0:
        return WilcoxonResult(n, w_plus, 1.0, "normal")
    z = (w_plus - mean) / math.sqrt(var)
    p = math.erfc(abs(z) / math.sqrt(2))
    return WilcoxonResult(n, w_plus, float(min(1.0, p)), "normal")


# --------------------------------------------------------------------------
# experiments


@dataclass(frozen=True)
class Method:
    kernel: str = SUBPATH
    atomic: str = GAUSSIAN

    def __post_init__(self):
        if self.kernel not in KERNEL_KINDS:
            raise ValueError(f"unknown kernel kind {self.kernel!r}")
        if self.atomic not in (GAUSSIAN, CHI2, DELTA):
            raise ValueError(f"unknown atomic kernel {self.atomic!r}")

    @property
    def name(self) -> str:
        return f"{self.kernel}-{self.atomic}"

    @classmethod
    def parse(cls, text: str) -> Method:
        kernel, _, atomic = text.partition("-")
        return cls(kernel, atomic or GAUSSIAN)


ALL_METHODS = tuple(Method(k, a) for k in (ROOTED, SUBPATH) for a in (GAUSSIAN, CHI2))


@dataclass(frozen=True)
class Protocol:
    repetitions: int = 20
    train_per_class: int = 20
    seed: int = 0
    grids: dict = field(default_factory=lambda: {k: list(v) for k, v in DEFAULT_GRIDS.items()})
    folds: int = 5
    normalize: bool = True
    bins: int | None = None
    svm: SvmParams = SvmParams()
    workers: int | None = None


def feature_spec_for(ds: Dataset, atomic_kind: str, bins: int | None = None) -> FeatureSpec:
    spec = ds.feature_spec
    if atomic_kind == CHI2:
        return FeatureSpec(HISTOGRAM, spec.dims, bins or spec.bins, ds.value_range())
    return FeatureSpec(MEAN_VARIANCE, spec.dims, spec.bins, spec.value_range)


def _has_leaf_values(ds: Dataset) -> bool:
    return all(leaf.leaf_values is not None for t in ds.trees for leaf in t.leaves())


def featurize(ds: Dataset, atomic_kind: str, bins: int | None = None) -> Dataset:
    """Dataset with node features suited to the atomic kernel.

    Datasets ingested with precomputed features are used unchanged.
    """
    if not _has_leaf_values(ds):
        return ds
    return ds.with_features(feature_spec_for(ds, atomic_kind, bins))


def method_configs(method: Method, protocol: Protocol, bins: int) -> list[KernelConfig]:
    # The root always has relative size 1, so beta cannot change the rooted kernel.
    betas = [0.0] if method.kernel == ROOTED else protocol.grids["beta"]
    return [
        KernelConfig(method.atomic, float(g), float(b), protocol.normalize, bins)
        for g in protocol.grids["gamma"]
        for b in betas
    ]


@dataclass
class MethodResult:
    method: str
    oa: list[float] = field(default_factory=list)
    aa: list[float] = field(default_factory=list)
    kappa: list[float] = field(default_factory=list)
    selected: list[dict] = field(default_factory=list)
    gram_seconds: float = 0.0
    n_grams: int = 0
    train_seconds: list[float] = field(default_factory=list)

    def summary(self) -> dict:
        def ms(xs):
            return float(np.mean(xs)), float(np.std(xs))

        oa_m, oa_s = ms(self.oa)
        aa_m, aa_s = ms(self.aa)
        k_m, k_s = ms(self.kappa)
        return {
            "method": self.method,
            "oa_mean": oa_m,
            "oa_std": oa_s,
            "aa_mean": aa_m,
            "aa_std": aa_s,
            "kappa_mean": k_m,
            "kappa_std": k_s,
            "gram_seconds": self.gram_seconds / max(1, self.n_grams),
            "train_seconds": float(np.mean(self.train_seconds)) if self.train_seconds else 0.0,
        }


@dataclass
class ExperimentReport:
    methods: list[MethodResult]
    labels: list[str]
    protocol: dict
    split_hashes: list[str]
    wilcoxon: list[dict]

    def by_method(self, name: str) -> MethodResult:
        for m in self.methods:
            if m.method == name:
                return m
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "labels": self.labels,
            "protocol": self.protocol,
            "split_hashes": self.split_hashes,
            "methods": [asdict(m) | {"summary": m.summary()} for m in self.methods],
            "wilcoxon": self.wilcoxon,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def summary_csv(self) -> str:
        buf = io.StringIO()
        cols = ["method", "oa_mean", "oa_std", "aa_mean", "aa_std", "kappa_mean", "kappa_std", "gram_seconds", "train_seconds"]
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for m in self.methods:
            w.writerow(m.summary())
        return buf.getvalue()

    def table(self) -> str:
        """Plain-text table: OA[%], AA[%], kappa, time per method."""
        lines = [f"{'method':<18} {'OA[%]':>13} {'AA[%]':>13} {'kappa':>15} {'time[s]':>9}"]
        for m in self.methods:
            s = m.summary()
            lines.append(
                f"{m.method:<18} {100 * s['oa_mean']:6.1f} ({100 * s['oa_std']:4.1f})"
                f" {100 * s['aa_mean']:6.1f} ({100 * s['aa_std']:4.1f})"
                f" {s['kappa_mean']:6.3f} ({s['kappa_std']:5.3f})"
                f" {s['gram_seconds'] + s['train_seconds']:9.2f}"
            )
        return "\n".join(lines)


class RepetitionError(RuntimeError):
    def __init__(self, repetition: int, cause: Exception):
        super().__init__(f"repetition {repetition}: {cause}")
        self.repetition = repetition
        self.cause = cause


def draw_split(labels: np.ndarray, train_per_class: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    train_idx = []
    for c in np.unique(labels):
        idx = np.nonzero(labels == c)[0]
        train_idx.extend(rng.choice(idx, size=train_per_class, replace=False).tolist())
    train_idx = np.sort(np.asarray(train_idx, dtype=np.int64))
    mask = np.ones(len(labels), dtype=bool)
    mask[train_idx] = False
    return train_idx, np.nonzero(mask)[0]


def split_hash(train_idx: np.ndarray) -> str:
    return hashlib.sha1(np.asarray(train_idx, dtype=np.int64).tobytes()).hexdigest()[:16]


def method_grams(ds: Dataset, method: Method, protocol: Protocol) -> tuple[dict, float, int]:
    """All grid Gram matrices of one method over the full dataset."""
    featured = featurize(ds, method.atomic, protocol.bins)
    configs = method_configs(method, protocol, featured.feature_spec.bins)
    start = time.perf_counter()
    mats = gram_matrices(featured, configs, method.kernel, protocol.workers)
    elapsed = time.perf_counter() - start
    return {(c.gamma, c.beta): m.values for c, m in zip(configs, mats)}, elapsed, len(configs)


def run_experiment(
    ds: Dataset,
    methods: Sequence[Method] = ALL_METHODS,
    protocol: Protocol = Protocol(),
    grams: dict | None = None,
) -> ExperimentReport:
    """Repeated train/test splits shared by all methods (matched samples).

    Kernel values do not depend on the split, so each method's Gram
    matrices are computed once over the whole dataset and sliced per split.
    ``grams`` may supply them precomputed, keyed by method name.
    """
    labels = ds.label_indices
    n_classes = len(ds.labels)
    counts = np.bincount(labels, minlength=n_classes)
    if (counts <= protocol.train_per_class).any():
        raise DataError(
            f"every class needs more than {protocol.train_per_class} items; counts {dict(zip(ds.labels, counts.tolist()))}"
        )

    results = {m.name: MethodResult(m.name) for m in methods}
    cache = dict(grams or {})
    for m in methods:
        if m.name not in cache:
            log.info("computing %s Gram matrices", m.name)
            cache[m.name] = method_grams(ds, m, protocol)
        _, seconds, n = cache[m.name]
        results[m.name].gram_seconds = seconds
        results[m.name].n_grams = n

    hashes = []
    for rep in range(protocol.repetitions):
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(protocol.seed, spawn_key=(rep,))))
        tr, te = draw_split(labels, protocol.train_per_class, rng)
        folds = stratified_folds(labels[tr], protocol.folds, rng)
        hashes.append(split_hash(tr))
        try:
            for m in methods:
                mats = cache[m.name][0]
                start = time.perf_counter()
                blocks = {k: K[np.ix_(tr, tr)] for k, K in mats.items()}
                grid = grid_search_precomputed(blocks, labels[tr], n_classes, protocol.grids["C"], folds, protocol.svm)
                best = grid.best
                svm_params = SvmParams(best.C, protocol.svm.kkt_tolerance, protocol.svm.max_iterations)
                K = mats[(best.gamma, best.beta)]
                model = train(K[np.ix_(tr, tr)], labels[tr], n_classes, svm_params)
                pred = predict(model, K[np.ix_(te, tr)])
                elapsed = time.perf_counter() - start
                met = metrics(ConfusionMatrix.from_predictions(labels[te], pred, ds.labels))
                r = results[m.name]
                r.oa.append(met.oa)
                r.aa.append(met.aa)
                r.kappa.append(met.kappa)
                r.selected.append({"gamma": best.gamma, "beta": best.beta, "C": best.C, "cv": best.mean})
                r.train_seconds.append(elapsed)
        except Exception as exc:
            raise RepetitionError(rep, exc) from exc
        log.debug("repetition %d: %s", rep, {k: v.oa[-1] for k, v in results.items()})

    tests = []
    for a, b in itertools.combinations(methods, 2):
        res = wilcoxon_signed_rank(results[a.name].oa, results[b.name].oa)
        tests.append(
            {
                "a": a.name,
                "b": b.name,
                "n": res.n,
                "statistic": res.statistic,
                "p_value": res.p_value,
                "method": res.method,
                "significant": res.significant,
            }
        )
    proto = {
        "repetitions": protocol.repetitions,
        "train_per_class": protocol.train_per_class,
        "seed": protocol.seed,
        "grids": protocol.grids,
        "folds": protocol.folds,
        "normalize": protocol.normalize,
        "bins": protocol.bins,
        "svm": asdict(protocol.svm),
    }
    return ExperimentReport([results[m.name] for m in methods], list(ds.labels), proto, hashes, tests)


@dataclass
class CurvePoint:
    ratio: float
    method: str
    mean: float
    std: float


def robustness_curve(
    suite: Sequence[Dataset],
    ratios: Sequence[float],
    methods: Sequence[Method] = (Method(SUBPATH, GAUSSIAN), Method(SUBPATH, CHI2)),
    protocol: Protocol = Protocol(),
) -> list[CurvePoint]:
    if len(suite) != len(ratios):
        raise ValueError("one dataset per ratio expected")
    points = []
    for ratio, ds in zip(ratios, suite):
        log.info("curve ratio %.2f", ratio)
        report = run_experiment(ds, methods, protocol)
        for m in report.methods:
            points.append(CurvePoint(float(ratio), m.method, float(np.mean(m.oa)), float(np.std(m.oa))))
    return points


def curve_csv(points: Sequence[CurvePoint]) -> str:
    lines = ["ratio,method,mean,std"]
    lines += [f"{p.ratio!r},{p.method},{p.mean!r},{p.std!r}" for p in points]
    return "\n".join(lines) + "\n"
