import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import sparse

from lnpheno.errors import DataError
from lnpheno.glm import (
    Model, SAGSettings, TrainConfig, classify, compute_class_weights, decision_function, fit_sag, grid_search,
    loss_and_gradient, objective, predict_proba, sag_solve, sample_weights_for, select_best_C, stratified_folds,
    train,
)

from oracles import central_difference_gradient, lbfgs_minimum, logistic_objective

TIGHT = SAGSettings(max_epochs=20000, tolerance=1e-9, seed=0)


def _problem(seed, n=40, d=6):
    rng = np.random.default_rng(seed)
    X = (rng.random((n, d)) < 0.4) * rng.integers(1, 4, (n, d)).astype(float)
    w = rng.normal(0, 1, d)
    y = rng.random(n) < 1 / (1 + np.exp(-(X @ w - 1)))
    y[0], y[1] = True, False
    return X, y


class TestClassWeights:
    def test_balanced_formula(self):
        assert compute_class_weights([1, 0, 0, 0]) == (2.0, 4 / 6)

    def test_classes_contribute_equally(self):
        y = np.array([True] * 3 + [False] * 17)
        s = sample_weights_for(y)
        assert s[y].sum() == pytest.approx(s[~y].sum()) == pytest.approx(len(y) / 2)

    def test_uniform(self):
        assert sample_weights_for([True, False], "uniform").tolist() == [1.0, 1.0]

    def test_single_class(self):
        with pytest.raises(DataError):
            compute_class_weights([True, True])


class TestObjective:
    def test_matches_reference_formula(self):
        X, y = _problem(1)
        s = sample_weights_for(y)
        w, b = np.linspace(-1, 1, X.shape[1]), 0.3
        assert objective(w, b, sparse.csr_matrix(X), y, 2.0, s) == pytest.approx(
            logistic_objective(np.append(w, b), X, y, 2.0, s), rel=1e-13)

    def test_intercept_not_penalized(self):
        X, y = _problem(2)
        # with X = 0 the objective only depends on b through the loss term
        Z = sparse.csr_matrix(np.zeros_like(X))
        f0 = objective(np.zeros(X.shape[1]), 0.0, Z, y, 1.0)
        assert f0 == pytest.approx(len(y) * np.log(2))

    def test_large_margins_stay_finite(self):
        X = sparse.csr_matrix([[1.0], [1.0]])
        loss, gw, gb = loss_and_gradient(np.array([1e4]), 0.0, X, [True, False], 1.0)
        assert np.isfinite(loss) and np.isfinite(gw).all() and np.isfinite(gb)
        assert loss == pytest.approx(0.5e8 + 1e4)

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            objective(np.array([np.nan]), 0.0, sparse.csr_matrix([[1.0]]), [True], 1.0)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000), st.floats(0.01, 10))
    def test_gradient_property(self, seed, C):
        X, y = _problem(seed, n=15, d=4)
        s = np.random.default_rng(seed).uniform(0.5, 2, len(y))
        p = np.random.default_rng(seed + 1).normal(0, 1, X.shape[1] + 1)
        _, gw, gb = loss_and_gradient(p[:-1], p[-1], sparse.csr_matrix(X), y, C, s)
        fd = central_difference_gradient(lambda q: logistic_objective(q, X, y, C, s), p)
        assert np.allclose(np.append(gw, gb), fd, rtol=1e-6, atol=1e-6)


class TestSAG:
    @pytest.mark.parametrize("seed,C", [(0, 0.1), (1, 1.0), (2, 10.0)])
    def test_matches_lbfgs(self, seed, C):
        X, y = _problem(seed)
        s = sample_weights_for(y)
        res = sag_solve(sparse.csr_matrix(X), y, C, s, TIGHT)
        _, f_ref = lbfgs_minimum(X, y, C, s)
        f = objective(res.weights, res.intercept, sparse.csr_matrix(X), y, C, s)
        assert f == pytest.approx(f_ref, rel=1e-8)

    def test_dense_and_sparse_inputs_agree(self):
        X, y = _problem(3)
        a = fit_sag(X, y, 1.0, None, SAGSettings(seed=4))
        b = fit_sag(sparse.csr_matrix(X), y, 1.0, None, SAGSettings(seed=4))
        assert np.array_equal(a.weights, b.weights) and a.intercept == b.intercept

    def test_same_seed_same_model(self):
        X, y = _problem(5)
        a, b = fit_sag(X, y, 1.0, None, SAGSettings(seed=9)), fit_sag(X, y, 1.0, None, SAGSettings(seed=9))
        assert np.array_equal(a.weights, b.weights)

    def test_other_seed_same_optimum(self):
        X, y = _problem(6)
        a = fit_sag(X, y, 1.0, None, replace_seed(TIGHT, 1))
        b = fit_sag(X, y, 1.0, None, replace_seed(TIGHT, 2))
        assert np.allclose(a.weights, b.weights, atol=1e-6)

    def test_non_convergence_is_reported_not_raised(self):
        X, y = _problem(7)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            m = fit_sag(X, y, 1e4, None, SAGSettings(max_epochs=2, tolerance=1e-12))
        assert m.metadata["converged"] is False and m.metadata["epochs"] == 2

    def test_metadata_and_means(self):
        X, y = _problem(8)
        m = fit_sag(X, y, 1.0, None, SAGSettings(seed=3), ["a", "b", "c", "d", "e", "f"])
        assert m.metadata["seed"] == 3 and m.metadata["converged"] is True
        assert np.allclose(m.feature_means, X.mean(axis=0))

    def test_single_class(self):
        with pytest.raises(DataError):
            fit_sag(np.ones((3, 1)), [True] * 3, 1.0)


def replace_seed(settings_, seed):
    return SAGSettings(settings_.max_epochs, settings_.tolerance, seed)


class TestFoldsAndGrid:
    def test_folds_are_stratified(self):
        y = np.array([True] * 13 + [False] * 27)
        folds = stratified_folds(y, 5, seed=1)
        for f in range(5):
            assert sum(y[folds == f]) in (2, 3)
            assert (folds == f).sum() == 8

    def test_folds_deterministic(self):
        y = np.array([True, False] * 10)
        assert np.array_equal(stratified_folds(y, 4, 7), stratified_folds(y, 4, 7))

    def test_too_few_positives(self):
        with pytest.raises(DataError):
            stratified_folds(np.array([True] + [False] * 9), 5, 0)

    def test_tie_goes_to_smallest_C(self):
        table = [{"C": c, "correct": k} for c, k in [(1e-2, 9), (1e-1, 10), (1.0, 10), (10.0, 8)]]
        assert select_best_C(table) == 1e-1

    def test_table_and_metadata(self):
        X, y = _problem(10, n=50)
        cfg = TrainConfig(C_grid=(0.01, 1.0, 100.0), cv_folds=3)
        best, table = grid_search(X, y, cfg)
        assert [r["C"] for r in table] == [0.01, 1.0, 100.0]
        assert all(r["n"] == 50 and r["accuracy"] == r["correct"] / 50 for r in table)
        model = train(X, y, [f"f{j}" for j in range(X.shape[1])], cfg)
        assert model.C == best
        assert model.metadata["cv_accuracy_table"] == table
        assert model.metadata["n_train"] == 50 and len(model.metadata["train_fingerprint"]) == 64

    @pytest.mark.parametrize("kwargs", [{"C_grid": ()}, {"C_grid": (0.0,)}, {"class_weight": "auto"},
                                        {"threshold": 1.0}, {"cv_folds": 1}])
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)


class TestModel:
    def _model(self):
        return Model(["a", "b"], [2.0, -1.0], 0.5, 1.0, [0.5, 0.25], {"note": "x"})

    def test_scalar_and_matrix_prediction(self):
        m = self._model()
        assert predict_proba(m, [1.0, 0.0]) == pytest.approx(1 / (1 + np.exp(-2.5)))
        probs = predict_proba(m, np.array([[1.0, 0.0], [0.0, 3.0]]))
        assert probs.shape == (2,) and probs[1] == pytest.approx(1 / (1 + np.exp(2.5)))
        assert np.array_equal(decision_function(m, sparse.csr_matrix([[1.0, 1.0]])), [1.5])

    def test_classify_threshold(self):
        m = self._model()
        assert classify(m, [0.0, 0.5]) is True  # p exactly 0.5
        assert classify(m, [0.0, 0.5], threshold=0.6) is False

    def test_extreme_logits(self):
        m = Model(["a"], [1.0], 0.0, 1.0, [0.0])
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            assert predict_proba(m, [800.0]) == 1.0 and predict_proba(m, [-800.0]) == 0.0

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            predict_proba(self._model(), [1.0, 2.0, 3.0])

    def test_save_load(self, tmp_path):
        m = self._model()
        m.save(tmp_path / "m.json")
        back = Model.load(tmp_path / "m.json")
        assert back.to_dict() == m.to_dict()
        back.save(tmp_path / "again.json")
        assert (tmp_path / "m.json").read_bytes() == (tmp_path / "again.json").read_bytes()
        assert json.loads((tmp_path / "m.json").read_text())["C"] == 1.0
