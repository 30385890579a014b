"""Randomised cross-check of the fast kernel against explicit enumeration."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .atomic import CHI2, DELTA, GAUSSIAN, KernelConfig
from .kernel import subpath_kernel, subpath_kernel_oracle
from .tree import Tree


def random_tree(
    rng: np.random.Generator,
    n_nodes: int,
    atomic_kind: str = GAUSSIAN,
    dims: int = 2,
    alphabet: int = 3,
    tree_id: str = "t",
) -> Tree:
    """Random recursive tree with features suited to ``atomic_kind``.

    Gaussian: standard normal vectors. Chi2: per-node normalised
    histograms. Delta: integer labels from ``range(alphabet)``.
    """
    parents = [None] + [int(rng.integers(0, k)) for k in range(1, n_nodes)]
    if atomic_kind == DELTA:
        feats = rng.integers(0, alphabet, size=(n_nodes, 1)).astype(float)
    elif atomic_kind == CHI2:
        raw = rng.random((n_nodes, dims)) * (rng.random((n_nodes, dims)) > 0.3)
        sums = raw.sum(axis=1, keepdims=True)
        feats = np.where(sums > 0, raw / np.where(sums > 0, sums, 1), 0.0)
    else:
        feats = rng.normal(size=(n_nodes, dims))
    return Tree.from_parents(tree_id, parents, features=feats.tolist())


@dataclass
class OracleCheck:
    cases: int = 0
    evaluations: int = 0
    max_rel_error: float = 0.0
    failures: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.failures


def oracle_check(max_nodes: int = 12, cases: int = 200, seed: int = 0, tolerance: float = 1e-9) -> OracleCheck:
    """Compare the DP kernel with enumeration on random tree pairs.

    Each case draws one pair of tree shapes and evaluates it under the
    Gaussian, chi2 and delta atomics with random gamma, beta and
    normalisation. Relative error is ``|dp - oracle| / max(1, |oracle|)``.
    """
    rng = np.random.default_rng(seed)
    report = OracleCheck()
    for case in range(cases):
        n1, n2 = (int(v) for v in rng.integers(1, max_nodes + 1, size=2))
        shape_seed = int(rng.integers(2**63))
        for kind in (GAUSSIAN, CHI2, DELTA):
            sub = np.random.default_rng([shape_seed, (GAUSSIAN, CHI2, DELTA).index(kind)])
            alphabet = int(sub.integers(1, 4))
            t1 = random_tree(sub, n1, kind, alphabet=alphabet, tree_id=f"{case}a")
            t2 = random_tree(sub, n2, kind, alphabet=alphabet, tree_id=f"{case}b")
            cfg = KernelConfig(
                atomic=kind,
                gamma=float(rng.uniform(0, 5)),
                beta=float(rng.choice([0.0, 0.5, 1.0])),
                normalize=bool(rng.integers(2)),
            )
            expected = subpath_kernel_oracle(t1, t2, cfg)
            got = subpath_kernel(t1, t2, cfg)
            err = abs(got - expected) / max(1.0, abs(expected))
            report.evaluations += 1
            report.max_rel_error = max(report.max_rel_error, err)
            if not err <= tolerance:
                report.failures.append(
                    {"case": case, "atomic": kind, "config": cfg.to_json(), "dp": got, "oracle": expected, "rel_error": err}
                )
        report.cases += 1
    return report
