"""Compiled inner loops for the subpath kernel.

All trees of a batch are packed into one forest: node ``k`` of tree ``t``
lives at global index ``node_off[t] + k``; ``child_ptr``/``child_idx`` form
a CSR child list over global indices, with every tree stored in level
order (root first, each node's children consecutive).
"""

from __future__ import annotations

import math

import numba as nb
import numpy as np

# The system TBB is too old for numba; prefer OpenMP, then the built-in pool.
nb.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

KIND_GAUSSIAN = 0
KIND_CHI2 = 1
KIND_DELTA = 2


@nb.njit(cache=True)
def node_distances(feat, oi, n, oj, m, kind, out):
    dims = feat.shape[1]
    for i in range(n):
        x = feat[oi + i]
        for j in range(m):
            y = feat[oj + j]
            d = 0.0
            if kind == KIND_GAUSSIAN:
                for k in range(dims):
                    t = x[k] - y[k]
                    d += t * t
            elif kind == KIND_CHI2:
                for k in range(dims):
                    s = x[k] + y[k]
                    if s > 0.0:
                        t = x[k] - y[k]
                        d += t * t / s
            else:
                for k in range(dims):
                    if x[k] != y[k]:
                        d = 1.0
                        break
            out[i, j] = d


@nb.njit(cache=True)
def rbf_block(dist, gamma, kind, out):
    n, m = dist.shape
    for i in range(n):
        for j in range(m):
            if kind == KIND_DELTA:
                out[i, j] = 1.0 if dist[i, j] == 0.0 else 0.0
            else:
                out[i, j] = math.exp(-gamma * dist[i, j])


@nb.njit(cache=True)
def weighted_block(rbf, wi, wj, out):
    n, m = rbf.shape
    for i in range(n):
        for j in range(m):
            out[i, j] = wi[i] * wj[j] * rbf[i, j]


@nb.njit(cache=True)
def subpath_pair(child_ptr, child_idx, oi, n, oj, m, A, P, W):
    """Sum of equal-length subpath pair products between two trees.

    P[i, j] covers pairs of subpaths that start exactly at (i, j); W[i, j]
    covers pairs that start at the same depth inside the subtrees rooted at
    i and j. Children have larger indices than parents, so a reverse sweep
    fills both tables bottom-up.
    """
    for i in range(n - 1, -1, -1):
        gi = oi + i
        for j in range(m - 1, -1, -1):
            gj = oj + j
            sp = 0.0
            sw = 0.0
            for a in range(child_ptr[gi], child_ptr[gi + 1]):
                ci = child_idx[a] - oi
                for b in range(child_ptr[gj], child_ptr[gj + 1]):
                    cj = child_idx[b] - oj
                    sp += P[ci, cj]
                    sw += W[ci, cj]
            p = A[i, j] * (1.0 + sp)
            P[i, j] = p
            W[i, j] = p + sw
    # Each subpath pair has a unique ancestor alignment: both starts at equal
    # depth below the roots, or one start offset below the other's root.
    total = 0.0
    for j in range(m):
        total += W[0, j]
    for i in range(1, n):
        total += W[i, 0]
    return total


@nb.njit(cache=True, parallel=True)
def subpath_pairs(
    feat, gammas, weights, cfg_gamma, cfg_weight, child_ptr, child_idx, node_off, left, right, kind, scratch, out
):
    """Kernel values for many (tree, tree) pairs and many configs at once.

    Config c uses ``gammas[cfg_gamma[c]]`` and size weights
    ``weights[cfg_weight[c], g]`` for global node g. Configs must be sorted
    by ``cfg_gamma`` so each pair evaluates every RBF block only once.
    ``scratch`` holds one row of at least ``4 * max(n * m)`` floats per
    thread; reusing it across calls avoids faulting in fresh pages for
    every pair of large trees.
    """
    n_cfg = cfg_gamma.shape[0]
    for k in nb.prange(left.shape[0]):
        t, u = left[k], right[k]
        oi, oj = node_off[t], node_off[u]
        n, m = node_off[t + 1] - oi, node_off[u + 1] - oj
        size = n * m
        buf = scratch[nb.get_thread_id()]
        # The blocks below are elementwise, so buffers are shared whenever a
        # value is not needed again: A lives in P (each A[i, j] is read just
        # before P[i, j] is written), R in P for a single config, and the
        # distances in R when every config has the same gamma.
        P = buf[:size].reshape((n, m))
        W = buf[size : 2 * size].reshape((n, m))
        if n_cfg == 1:
            R = P
        else:
            R = buf[2 * size : 3 * size].reshape((n, m))
        if cfg_gamma[0] == cfg_gamma[n_cfg - 1]:
            dist = R
        else:
            dist = buf[3 * size : 4 * size].reshape((n, m))
        node_distances(feat, oi, n, oj, m, kind, dist)
        current = -1
        for c in range(n_cfg):
            g = cfg_gamma[c]
            if g != current:
                rbf_block(dist, gammas[g], kind, R)
                current = g
            b = cfg_weight[c]
            weighted_block(R, weights[b, oi : oi + n], weights[b, oj : oj + m], P)
            out[c, k] = subpath_pair(child_ptr, child_idx, oi, n, oj, m, P, P, W)
