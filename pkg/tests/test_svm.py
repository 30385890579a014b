"""SMO solver against a slow reference, multiclass voting, model selection."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from helpers import random_psd, reference_dual

from subpathkernel.svm import (
    BinarySvm,
    ConvergenceError,
    GridCell,
    SvmModel,
    SvmParams,
    cross_validate,
    dual_objective,
    grid_search_precomputed,
    kkt_violation,
    predict,
    select_cell,
    stratified_folds,
    train,
    train_binary,
)

TIGHT = SvmParams(C=1.0, kkt_tolerance=1e-6)


def problem(seed, n=20, rank=None):
    rng = np.random.default_rng(seed)
    K = random_psd(rng, n, rank)
    y = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    rng.shuffle(y)
    C = float(rng.choice([0.1, 1.0, 10.0]))
    return K, y, C


def linear_gram(X):
    return X @ X.T


class TestBinary:
    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000), st.integers(4, 30), st.sampled_from([None, 2, 5]))
    def test_matches_reference_objective(self, seed, n, rank):
        K, y, C = problem(seed, n, rank)
        m = train_binary(K, y, SvmParams(C, kkt_tolerance=1e-6))
        ours = dual_objective(K, y, m.alpha)
        ref = dual_objective(K, y, reference_dual(K, y, C))
        assert ours <= ref + 1e-9 * max(1.0, abs(ref))
        assert abs(ours - ref) <= 1e-6 * max(1.0, abs(ref))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10_000))
    def test_solution_is_feasible(self, seed):
        K, y, C = problem(seed)
        m = train_binary(K, y, SvmParams(C))
        assert m.alpha.min() >= 0.0
        assert m.alpha.max() <= C
        assert abs(m.alpha @ y) <= 1e-10 * max(1.0, C)
        assert kkt_violation(K, y, m.alpha, C) <= 1e-3 + 1e-12
        assert m.violation <= 1e-3

    def test_two_points_identity(self):
        # Q = I: the optimum is alpha = (1, 1) for C >= 1, decision values +-1.
        m = train_binary(np.eye(2), np.array([1.0, -1.0]), TIGHT)
        np.testing.assert_allclose(m.alpha, [1.0, 1.0], atol=1e-9)
        np.testing.assert_allclose(m.decision(np.eye(2)), [1.0, -1.0], atol=1e-9)

    def test_two_points_box_bound(self):
        m = train_binary(np.eye(2), np.array([1.0, -1.0]), SvmParams(C=0.25, kkt_tolerance=1e-6))
        np.testing.assert_allclose(m.alpha, [0.25, 0.25])

    def test_support_and_coefficients(self):
        K, y, C = problem(3)
        m = train_binary(K, y, SvmParams(C))
        assert np.array_equal(m.support, np.nonzero(m.alpha > 0)[0])
        np.testing.assert_array_equal(m.coef, m.alpha[m.support] * y[m.support])
        assert m.labels == (1, -1)

    def test_separable_training_accuracy(self):
        rng = np.random.default_rng(0)
        X = np.vstack([rng.normal(3, 0.5, (15, 2)), rng.normal(-3, 0.5, (15, 2))])
        y = np.r_[np.ones(15), -np.ones(15)]
        K = linear_gram(X)
        m = train_binary(K, y, SvmParams(C=100.0))
        assert np.all(np.sign(m.decision(K)) == y)

    def test_not_converging(self):
        K, y, C = problem(1, n=30)
        with pytest.raises(ConvergenceError) as info:
            train_binary(K, y, SvmParams(C=10.0, kkt_tolerance=1e-9, max_iterations=2))
        assert info.value.iterations == 2

    @pytest.mark.parametrize(
        "K, y, message",
        [
            (np.eye(3), np.array([1.0, -1.0]), "does not match"),
            (np.eye(2), np.array([1.0, 0.0]), "-1 or \\+1"),
            (np.eye(2), np.array([1.0, 1.0]), "both classes"),
        ],
    )
    def test_invalid_input(self, K, y, message):
        with pytest.raises(ValueError, match=message):
            train_binary(K, y)

    @pytest.mark.parametrize("kw", [{"C": 0.0}, {"kkt_tolerance": 0.0}, {"max_iterations": 0}])
    def test_invalid_params(self, kw):
        with pytest.raises(ValueError):
            SvmParams(**kw)


def fixed_machine(pair, bias):
    empty = np.zeros(0, dtype=np.int64)
    return BinarySvm(empty, np.zeros(0), bias, pair, np.zeros(0))


class TestMulticlass:
    def test_vote_tie_goes_to_lowest_index(self):
        # 0 beats 1, 2 beats 0, 1 beats 2: one vote each.
        machines = [fixed_machine((0, 1), 1.0), fixed_machine((0, 2), -1.0), fixed_machine((1, 2), 1.0)]
        model = SvmModel(machines, (0, 1, 2), n_train=4)
        assert predict(model, np.zeros((1, 4))).tolist() == [0]

    def test_majority_wins(self):
        machines = [fixed_machine((0, 1), -1.0), fixed_machine((0, 2), 1.0), fixed_machine((1, 2), 1.0)]
        model = SvmModel(machines, (0, 1, 2), n_train=4)
        assert predict(model, np.zeros((2, 4))).tolist() == [1, 1]

    def test_seven_classes_give_twenty_one_machines(self):
        rng = np.random.default_rng(2)
        centres = rng.normal(0, 10, (7, 3))
        labels = np.repeat(np.arange(7), 6)
        X = centres[labels] + rng.normal(0, 0.3, (len(labels), 3))
        K = np.exp(-0.05 * ((X[:, None] - X[None]) ** 2).sum(-1))
        model = train(K, labels, 7, SvmParams(C=10.0))
        assert len(model.machines) == 21
        assert {m.labels for m in model.machines} == {(a, b) for a in range(7) for b in range(a + 1, 7)}
        assert np.array_equal(predict(model, K), labels)

    def test_machine_support_indexes_full_training_set(self):
        labels = np.array([0, 0, 1, 1, 2, 2])
        model = train(np.eye(6), labels, 3, TIGHT)
        for m in model.machines:
            assert set(labels[m.support]) <= set(m.labels)

    def test_missing_class(self):
        with pytest.raises(ValueError, match="without training items"):
            train(np.eye(4), np.array([0, 0, 2, 2]), 3)

    def test_one_class(self):
        with pytest.raises(ValueError, match="at least two"):
            train(np.eye(2), np.array([0, 0]), 1)

    def test_predict_width_mismatch(self):
        model = train(np.eye(4), np.array([0, 0, 1, 1]), 2)
        with pytest.raises(ValueError, match="columns"):
            predict(model, np.zeros((1, 3)))


def cell(gamma, beta, C, mean):
    return GridCell(gamma, beta, C, mean, 0.0)


class TestSelectCell:
    def test_singleton(self):
        only = cell(1.0, 0.0, 1.0, 0.5)
        assert select_cell([only]) is only

    def test_highest_mean_wins(self):
        table = [cell(g, 0.0, C, 0.8) for g in (0.1, 1.0) for C in (1.0, 10.0)]
        table.append(cell(10.0, 0.0, 100.0, 0.9))
        assert select_cell(table) == table[-1]

    def test_plateau_centre(self):
        gammas, Cs = (0.01, 0.1, 1.0, 10.0, 100.0), (0.1, 1.0, 10.0)
        table = [cell(g, 0.0, C, 1.0 if 0.1 <= g <= 10.0 else 0.9) for g in gammas for C in Cs]
        best = select_cell(table)
        assert (best.gamma, best.C) == (1.0, 1.0)

    def test_residual_ties_prefer_smaller_C_then_gamma(self):
        table = [cell(g, 0.0, C, 1.0) for g in (0.1, 1.0) for C in (1.0, 10.0)]
        best = select_cell(table)
        assert (best.gamma, best.C) == (0.1, 1.0)

    def test_grid_search_precomputed(self):
        rng = np.random.default_rng(4)
        X = np.vstack([rng.normal(2, 1, (10, 2)), rng.normal(-2, 1, (10, 2))])
        labels = np.repeat([0, 1], 10)
        d2 = ((X[:, None] - X[None]) ** 2).sum(-1)
        grams = {(g, 0.0): np.exp(-g * d2) for g in (0.1, 1.0)}
        folds = stratified_folds(labels, 5, np.random.default_rng(0))
        result = grid_search_precomputed(grams, labels, 2, [1.0, 10.0], folds)
        assert len(result.table) == 4
        assert result.best == select_cell(result.table)
        csv = result.to_csv().splitlines()
        assert csv[0] == "gamma,beta,C,mean_cv_accuracy,std"
        assert len(csv) == 5

    def test_empty_grid(self):
        with pytest.raises(ValueError, match="empty grid"):
            grid_search_precomputed({}, np.array([0, 1]), 2, [1.0], np.array([0, 1]))


class TestFolds:
    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.integers(0, 3), min_size=10, max_size=60), st.integers(0, 2**32 - 1))
    def test_stratified(self, labels, seed):
        labels = np.array(labels)
        folds = stratified_folds(labels, 5, np.random.default_rng(seed))
        assert folds.min() >= 0 and folds.max() < 5
        for c in np.unique(labels):
            counts = np.bincount(folds[labels == c], minlength=5)
            assert counts.max() - counts.min() <= 1

    def test_deterministic(self):
        labels = np.repeat([0, 1], 20)
        a = stratified_folds(labels, 5, np.random.default_rng(11))
        b = stratified_folds(labels, 5, np.random.default_rng(11))
        assert np.array_equal(a, b)

    def test_cross_validate_returns_per_fold_accuracy(self):
        labels = np.repeat([0, 1], 10)
        K = np.where(labels[:, None] == labels[None, :], 1.0, 0.0) + np.eye(20)
        folds = stratified_folds(labels, 5, np.random.default_rng(0))
        scores = cross_validate(K, labels, 2, folds, SvmParams(C=10.0))
        assert scores.shape == (5,)
        assert np.all(scores == 1.0)
