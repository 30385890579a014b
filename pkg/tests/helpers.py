"""Shared fixtures-by-function: small hand-built trees and a slow reference
SVM dual solver used as an oracle for the SMO implementation."""

from __future__ import annotations

import numpy as np

from subpathkernel.tree import Tree

# Label codes for the delta atomic kernel.
A, B, C = 0.0, 1.0, 2.0


def abbc_tree(tree_id: str = "abbc") -> Tree:
    """A(B, B(C)): root A with two B children, one of which has a C child."""
    return Tree.from_parents(tree_id, [None, 0, 0, 2], features=[[A], [B], [B], [C]])


def chain(n: int, tree_id: str = "chain") -> Tree:
    parents = [None] + list(range(n - 1))
    return Tree.from_parents(tree_id, parents, features=[[0.0]] * n)


def star(n_leaves: int, tree_id: str = "star") -> Tree:
    return Tree.from_parents(tree_id, [None] + [0] * n_leaves, features=[[0.0]] * (n_leaves + 1))


def _project(v: np.ndarray, y: np.ndarray, C: float) -> np.ndarray:
    """Euclidean projection onto {0 <= a <= C, y.a = 0} for y in {-1, +1}.

    g(lam) = sum_i y_i clip(v_i - lam y_i, 0, C) is non-increasing and
    piecewise linear in lam; its root is found exactly between breakpoints.
    """
    knots = np.unique(np.concatenate([v * y, (v - C) * y]))

    def g(lam):
        lam = np.atleast_1d(lam)
        return (y[None, :] * np.clip(v[None, :] - lam[:, None] * y[None, :], 0.0, C)).sum(axis=1)

    vals = g(knots)
    if vals[0] < 0 or vals[-1] > 0:
        raise ValueError("projection target infeasible")
    k = int(np.searchsorted(-vals, 0.0))
    if vals[k] == 0.0 or k == 0:
        lam = knots[k]
    else:
        lo, hi = knots[k - 1], knots[k]
        glo, ghi = vals[k - 1], vals[k]
        lam = lo + (hi - lo) * glo / (glo - ghi)
    return np.clip(v - lam * y, 0.0, C)


def reference_dual(K: np.ndarray, y: np.ndarray, C: float, iterations: int = 20000, tol: float = 1e-15) -> np.ndarray:
    """Maximise sum(a) - a'Qa/2 over the C-SVM dual feasible set by
    accelerated projected gradient with adaptive restart."""
    Q = (y[:, None] * y[None, :]) * K
    L = max(float(np.linalg.eigvalsh(Q)[-1]), 1e-12)
    a = np.zeros(len(y))
    z, t = a.copy(), 1.0

    def f(x):
        return 0.5 * x @ Q @ x - x.sum()

    fa = f(a)
    restarted = False
    for _ in range(iterations):
        a_next = _project(z - (Q @ z - 1.0) / L, y, C)
        f_next = f(a_next)
        if f_next > fa:
            # A plain projected step from the current iterate cannot ascend in
            # exact arithmetic, so a second failure in a row means round-off.
            if restarted:
                break
            z, t, restarted = a.copy(), 1.0, True
            continue
        restarted = False
        t_next = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        z = a_next + ((t - 1) / t_next) * (a_next - a)
        done = fa - f_next <= tol * max(1.0, abs(f_next))
        a, fa, t = a_next, f_next, t_next
        if done and np.abs(a - _project(a - (Q @ a - 1.0) / L, y, C)).max() < 1e-10:
            break
    return a


def random_psd(rng: np.random.Generator, n: int, rank: int | None = None) -> np.ndarray:
    X = rng.normal(size=(n, rank or n))
    K = X @ X.T / X.shape[1]
    return 0.5 * (K + K.T)
