"""One-against-one C-SVM on precomputed kernels, with grid search.

The binary solver is SMO with second-order working-set selection. It
minimises the dual

    f(alpha) = 1/2 alpha' Q alpha - sum(alpha),  Q_ij = y_i y_j K_ij,

subject to 0 <= alpha_i <= C and y' alpha = 0, and stops once the maximal
KKT violation drops below ``kkt_tolerance``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numba as nb
import numpy as np

_TAU = 1e-12


class ConvergenceError(RuntimeError):
    def __init__(self, iterations: int, violation: float):
        super().__init__(f"SMO did not converge after {iterations} iterations (KKT violation {violation:.3g})")
        self.iterations = iterations
        self.violation = violation


@dataclass(frozen=True)
class SvmParams:
    C: float = 1.0
    kkt_tolerance: float = 1e-3
    max_iterations: int = 100_000

    def __post_init__(self):
        if not self.C > 0:
            raise ValueError(f"C must be > 0, got {self.C}")
        if not self.kkt_tolerance > 0:
            raise ValueError("kkt_tolerance must be > 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be positive")


@dataclass
class BinarySvm:
    support: np.ndarray
    coef: np.ndarray
    bias: float
    labels: tuple[int, int]
    alpha: np.ndarray = field(repr=False)
    iterations: int = 0
    violation: float = 0.0

    def decision(self, kernel_rows: np.ndarray) -> np.ndarray:
        """Decision values; ``kernel_rows[t, i]`` = K(test t, training item i)."""
        return kernel_rows[:, self.support] @ self.coef + self.bias


@dataclass
class SvmModel:
    machines: list[BinarySvm]
    labels: tuple
    n_train: int


@nb.njit(cache=True)
def _smo(K, y, C, eps, max_iter):
    n = y.shape[0]
    alpha = np.zeros(n)
    G = -np.ones(n)
    it = 0
    gap = np.inf
    while True:
        # i: maximal violating index in I_up; gmax2 tracks the I_low side.
        gmax = -np.inf
        gmax2 = -np.inf
        i = -1
        for t in range(n):
            if y[t] > 0:
                if alpha[t] < C and -G[t] >= gmax:
                    gmax = -G[t]
                    i = t
                if alpha[t] > 0 and G[t] >= gmax2:
                    gmax2 = G[t]
            else:
                if alpha[t] > 0 and G[t] >= gmax:
                    gmax = G[t]
                    i = t
                if alpha[t] < C and -G[t] >= gmax2:
                    gmax2 = -G[t]
        gap = gmax + gmax2
        if gap < eps or i < 0:
            break
        if it >= max_iter:
            return alpha, G, it, gap, False
        j = -1
        obj_min = np.inf
        for t in range(n):
            if y[t] > 0:
                if alpha[t] > 0:
                    grad_diff = gmax + G[t]
                    if grad_diff > 0:
                        quad = K[i, i] + K[t, t] - 2.0 * K[i, t]
                        if quad <= 0:
                            quad = _TAU
                        obj = -(grad_diff * grad_diff) / quad
                        if obj <= obj_min:
                            obj_min = obj
                            j = t
            else:
                if alpha[t] < C:
                    grad_diff = gmax - G[t]
                    if grad_diff > 0:
                        quad = K[i, i] + K[t, t] - 2.0 * K[i, t]
                        if quad <= 0:
                            quad = _TAU
                        obj = -(grad_diff * grad_diff) / quad
                        if obj <= obj_min:
                            obj_min = obj
                            j = t
        if j < 0:
            break
        it += 1

        old_i, old_j = alpha[i], alpha[j]
        quad = K[i, i] + K[j, j] - 2.0 * K[i, j]
        if quad <= 0:
            quad = _TAU
        if y[i] != y[j]:
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            else:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = C + diff
        else:
            delta = (G[i] - G[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = total
            if total > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = total
        di = alpha[i] - old_i
        dj = alpha[j] - old_j
        for t in range(n):
            G[t] += y[t] * (y[i] * K[t, i] * di + y[j] * K[t, j] * dj)
    return alpha, G, it, gap, True


def _bias(alpha: np.ndarray, G: np.ndarray, y: np.ndarray, C: float) -> float:
    yg = y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = yg[free].mean()
    else:
        upper = alpha >= C
        lower = ~upper
        ub_mask = (upper & (y < 0)) | (lower & (y > 0))
        lb_mask = (upper & (y > 0)) | (lower & (y < 0))
        ub = yg[ub_mask].min() if ub_mask.any() else np.inf
        lb = yg[lb_mask].max() if lb_mask.any() else -np.inf
        rho = (ub + lb) / 2
    return -float(rho)


def dual_objective(K: np.ndarray, y: np.ndarray, alpha: np.ndarray) -> float:
    v = alpha * y
    return float(0.5 * v @ K @ v - alpha.sum())


def kkt_violation(K: np.ndarray, y: np.ndarray, alpha: np.ndarray, C: float) -> float:
    """Maximal pairwise KKT violation ``m(alpha) - M(alpha)`` (0 at optimum)."""
    G = (y[:, None] * y[None, :] * K) @ alpha - 1.0
    yg = -y * G
    up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
    low = ((y < 0) & (alpha < C)) | ((y > 0) & (alpha > 0))
    if not up.any() or not low.any():
        return 0.0
    return max(0.0, float(yg[up].max() - yg[low].min()))


def train_binary(gram: np.ndarray, labels: np.ndarray, params: SvmParams = SvmParams()) -> BinarySvm:
    """Train on a square kernel block with labels in {-1, +1}.

    ``labels`` of the returned machine are (+1, -1): a positive decision
    value means the first class.
    """
    K = np.ascontiguousarray(gram, dtype=float)
    y = np.asarray(labels, dtype=float)
    if K.shape != (len(y), len(y)):
        raise ValueError(f"gram shape {K.shape} does not match {len(y)} labels")
    if not np.isin(y, (-1.0, 1.0)).all():
        raise ValueError("labels must be -1 or +1")
    if not ((y > 0).any() and (y < 0).any()):
        raise ValueError("training set needs both classes")
    alpha, G, iters, gap, ok = _smo(K, y, float(params.C), float(params.kkt_tolerance), int(params.max_iterations))
    if not ok:
        raise ConvergenceError(iters, gap)
    support = np.nonzero(alpha > 0)[0]
    return BinarySvm(
        support=support,
        coef=alpha[support] * y[support],
        bias=_bias(alpha, G, y, params.C),
        labels=(1, -1),
        alpha=alpha,
        iterations=iters,
        violation=max(0.0, float(gap)),
    )


def train(gram: np.ndarray, labels: Sequence[int], n_classes: int, params: SvmParams = SvmParams()) -> SvmModel:
    """One machine per unordered class pair; ``labels`` are class indices."""
    labels = np.asarray(labels)
    present = set(np.unique(labels).tolist())
    missing = [c for c in range(n_classes) if c not in present]
    if n_classes < 2:
        raise ValueError("need at least two classes")
    if missing:
        raise ValueError(f"classes without training items: {missing}")
    machines = []
    for a, b in itertools.combinations(range(n_classes), 2):
        idx = np.nonzero((labels == a) | (labels == b))[0]
        y = np.where(labels[idx] == a, 1.0, -1.0)
        m = train_binary(gram[np.ix_(idx, idx)], y, params)
        machines.append(
            BinarySvm(idx[m.support], m.coef, m.bias, (a, b), m.alpha, m.iterations, m.violation)
        )
    return SvmModel(machines, tuple(range(n_classes)), len(labels))


def predict(model: SvmModel, kernel_rows: np.ndarray) -> np.ndarray:
    """Majority vote over pairwise machines; ties go to the lowest class index."""
    rows = np.atleast_2d(np.asarray(kernel_rows, dtype=float))
    if rows.shape[1] != model.n_train:
        raise ValueError(f"kernel rows have {rows.shape[1]} columns, model has {model.n_train} training items")
    votes = np.zeros((rows.shape[0], len(model.labels)), dtype=np.int64)
    for m in model.machines:
        dec = m.decision(rows)
        winner = np.where(dec > 0, m.labels[0], m.labels[1])
        votes[np.arange(len(winner)), winner] += 1
    return np.argmax(votes, axis=1)


# --------------------------------------------------------------------------
# model selection


def stratified_folds(labels: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Fold number per item; each class is dealt round-robin after shuffling."""
    folds = np.empty(len(labels), dtype=np.int64)
    for c in np.unique(labels):
        idx = np.nonzero(labels == c)[0]
        idx = idx[rng.permutation(len(idx))]
        folds[idx] = np.arange(len(idx)) % k
    return folds


def cross_validate(gram: np.ndarray, labels: np.ndarray, n_classes: int, folds: np.ndarray, params: SvmParams) -> np.ndarray:
    """Per-fold accuracies."""
    scores = []
    for f in np.unique(folds):
        tr = np.nonzero(folds != f)[0]
        te = np.nonzero(folds == f)[0]
        model = train(gram[np.ix_(tr, tr)], labels[tr], n_classes, params)
        pred = predict(model, gram[np.ix_(te, tr)])
        scores.append(float(np.mean(pred == labels[te])))
    return np.array(scores)


@dataclass(frozen=True)
class GridCell:
    gamma: float
    beta: float
    C: float
    mean: float
    std: float


@dataclass
class GridResult:
    best: GridCell
    table: list[GridCell]

    def to_csv(self) -> str:
        lines = ["gamma,beta,C,mean_cv_accuracy,std"]
        lines += [f"{c.gamma!r},{c.beta!r},{c.C!r},{c.mean!r},{c.std!r}" for c in self.table]
        return "\n".join(lines) + "\n"


def select_cell(table: Sequence[GridCell]) -> GridCell:
    """Best cell of a scored grid.

    Highest mean CV accuracy wins. With only a few dozen training items many
    cells often tie at the top; the tied cell at the centre of the tied
    plateau is taken (smallest summed L1 distance, in grid-index units, to
    the other tied cells) since plateau edges are where CV noise bites.
    Remaining ties go to smaller C, then gamma, then beta.
    """
    top = max(c.mean for c in table)
    tied = [c for c in table if c.mean >= top - 1e-12]
    axes = [{v: k for k, v in enumerate(sorted({getattr(c, a) for c in table}))} for a in ("gamma", "beta", "C")]
    coords = [(axes[0][c.gamma], axes[1][c.beta], axes[2][c.C]) for c in tied]

    def spread(k: int) -> int:
        return sum(sum(abs(a - b) for a, b in zip(coords[k], other)) for other in coords)

    best = min(range(len(tied)), key=lambda k: (spread(k), tied[k].C, tied[k].gamma, tied[k].beta))
    return tied[best]


def grid_search_precomputed(
    grams: Mapping[tuple[float, float], np.ndarray],
    labels: np.ndarray,
    n_classes: int,
    C_values: Sequence[float],
    folds: np.ndarray,
    svm_params: SvmParams = SvmParams(),
) -> GridResult:
    """Score every (gamma, beta, C) cell by cross-validation.

    ``grams`` maps (gamma, beta) to the kernel block over the training items;
    each block is reused for all values of C.
    """
    if not grams or not len(C_values):
        raise ValueError("empty grid")
    table = []
    for (gamma, beta), K in grams.items():
        for C in C_values:
            params = SvmParams(float(C), svm_params.kkt_tolerance, svm_params.max_iterations)
            scores = cross_validate(K, labels, n_classes, folds, params)
            cell = GridCell(float(gamma), float(beta), float(C), float(scores.mean()), float(scores.std()))
            table.append(cell)
    return GridResult(select_cell(table), table)


def grid_search(
    ds,
    kind: str,
    atomic_kind: str,
    grids: Mapping[str, Sequence[float]],
    folds: int = 5,
    seed: int = 0,
    normalize: bool = True,
    svm_params: SvmParams = SvmParams(),
    gram_fn: Callable | None = None,
) -> tuple:
    """Grid search over a whole dataset treated as the training portion.

    Returns ``(KernelConfig, SvmParams, GridResult)`` for the best cell.
    """
    from .atomic import KernelConfig
    from .harness import featurize
    from .kernel import ROOTED, gram_matrices

    featured = featurize(ds, atomic_kind)
    betas = [0.0] if kind == ROOTED else list(grids["beta"])
    configs = [
        KernelConfig(atomic_kind, float(g), float(b), normalize, featured.feature_spec.bins)
        for g in grids["gamma"]
        for b in betas
    ]
    mats = (gram_fn or gram_matrices)(featured, configs, kind)
    grams = {(c.gamma, c.beta): m.values for c, m in zip(configs, mats)}
    labels = featured.label_indices
    fold_ids = stratified_folds(labels, folds, np.random.default_rng(seed))
    result = grid_search_precomputed(grams, labels, len(ds.labels), grids["C"], fold_ids, svm_params)
    best = result.best
    cfg = KernelConfig(atomic_kind, best.gamma, best.beta, normalize, featured.feature_spec.bins)
    return cfg, SvmParams(best.C, svm_params.kkt_tolerance, svm_params.max_iterations), result
