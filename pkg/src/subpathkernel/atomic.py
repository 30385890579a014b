"""Node-to-node similarities.

An atomic kernel compares two nodes through an RBF of a distance between
their feature vectors, scaled by the nodes' relative sizes::

    atomic(n, n') = rel(n)**beta * rel(n')**beta * exp(-gamma * d(x, x'))

The ``delta`` kind replaces the RBF factor with exact feature equality and
is used for symbolic (label-valued) trees.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .tree import Node

GAUSSIAN = "gaussian"
CHI2 = "chi2"
DELTA = "delta"
ATOMIC_KINDS = (GAUSSIAN, CHI2, DELTA)


@dataclass(frozen=True)
class KernelConfig:
    atomic: str = GAUSSIAN
    gamma: float = 1.0
    beta: float = 0.0
    normalize: bool = False
    bins: int = 4

    def __post_init__(self):
        if self.atomic not in ATOMIC_KINDS:
            raise ValueError(f"unknown atomic kernel {self.atomic!r}")
        if not self.gamma >= 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not self.beta >= 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")
        if self.bins < 1:
            raise ValueError(f"bins must be >= 1, got {self.bins}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> KernelConfig:
        return cls(
            atomic=str(d["atomic"]),
            gamma=float(d["gamma"]),
            beta=float(d["beta"]),
            normalize=bool(d["normalize"]),
            bins=int(d.get("bins", 4)),
        )

    @classmethod
    def from_json(cls, text: str) -> KernelConfig:
        return cls.from_dict(json.loads(text))


def _pair(x: Sequence[float], y: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {y.shape}")
    return x, y


def gaussian_distance(x: Sequence[float], y: Sequence[float]) -> float:
    """Squared Euclidean distance."""
    x, y = _pair(x, y)
    return float(np.sum((x - y) ** 2))


def chi2_distance(x: Sequence[float], y: Sequence[float]) -> float:
    """Chi-squared distance between histograms; empty bin pairs count 0."""
    x, y = _pair(x, y)
    if (x < 0).any() or (y < 0).any():
        raise ValueError("chi2 distance needs non-negative histogram entries")
    num = (x - y) ** 2
    den = x + y
    nz = den > 0
    return float(np.sum(num[nz] / den[nz]))


def rbf(d: float, gamma: float) -> float:
    if d < 0:
        raise ValueError(f"distance must be >= 0, got {d}")
    return math.exp(-gamma * d)


def size_weight(rel_size: float, beta: float) -> float:
    # 0**0 is 1 by definition here.
    if beta == 0:
        return 1.0
    return rel_size**beta


def atomic(n: Node, m: Node, cfg: KernelConfig) -> float:
    if n.features is None or m.features is None:
        raise ValueError(f"nodes {n.id!r}/{m.id!r} carry no features")
    rn = 1.0 if n.rel_size is None else n.rel_size
    rm = 1.0 if m.rel_size is None else m.rel_size
    w = size_weight(rn, cfg.beta) * size_weight(rm, cfg.beta)
    if cfg.atomic == DELTA:
        x, y = _pair(n.features, m.features)
        return w if np.array_equal(x, y) else 0.0
    if cfg.atomic == GAUSSIAN:
        d = gaussian_distance(n.features, m.features)
    else:
        d = chi2_distance(n.features, m.features)
    return w * rbf(d, cfg.gamma)
