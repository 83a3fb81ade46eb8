import numpy as np
import pytest

from kneegrade.errors import DataError
from kneegrade.svm import (
    LinearSvmModel,
    MulticlassSvm,
    SvmTrainConfig,
    decision_function,
    decision_matrix,
    load_svm,
    predict_grade,
    predict_grades,
    save_svm,
    train_linear_svm,
    train_ovr,
)


def hinge_objective(model, x, y, c=1.0):
    xs = (np.asarray(x, float) - model.mean) / model.std
    margins = y * (xs @ model.weights + model.bias)
    return 0.5 * model.weights @ model.weights + c * np.maximum(0, 1 - margins).sum()


class TestTrainLinear:
    def test_separable_two_points(self):
        x = [[0.0, 0.0], [2.0, 2.0]]
        y = [-1.0, 1.0]
        model = train_linear_svm(x, y, SvmTrainConfig(seed=1))
        assert decision_function(model, np.array([0.0, 0.0])) < 0
        assert decision_function(model, np.array([2.0, 2.0])) > 0
        xs = (np.array(x) - model.mean) / model.std
        hinge = np.maximum(0, 1 - np.array(y) * (xs @ model.weights + model.bias)).sum()
        assert hinge < 1e-3

    def test_single_class_rejected(self):
        with pytest.raises(DataError):
            train_linear_svm([[0.0], [1.0]], [1.0, 1.0])

    def test_contradictory_duplicates(self):
        x = [[1.0, 2.0], [1.0, 2.0]]
        model = train_linear_svm(x, [1.0, -1.0], SvmTrainConfig(seed=2))
        preds = np.sign(decision_matrix(model, x))
        assert np.mean(preds == np.array([1.0, -1.0])) == 0.5

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            train_linear_svm(np.empty((0, 3)), np.empty(0))

    def test_bad_labels_rejected(self):
        with pytest.raises(ValueError):
            train_linear_svm([[0.0], [1.0]], [0.0, 1.0])

    def test_same_seed_bit_identical(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(20, 5))
        y = np.sign(x[:, 0]) + (x[:, 0] == 0)
        a = train_linear_svm(x, y, SvmTrainConfig(seed=9))
        b = train_linear_svm(x, y, SvmTrainConfig(seed=9))
        assert np.array_equal(a.weights, b.weights) and a.bias == b.bias

    def test_input_order_irrelevant(self):
        # sample order is canonicalized before the seeded shuffle
        rng = np.random.default_rng(4)
        x = rng.normal(size=(15, 4))
        y = np.where(x[:, 1] > 0, 1.0, -1.0)
        if len(np.unique(y)) < 2:
            y[0] = -y[0]
        a = train_linear_svm(x, y, SvmTrainConfig(seed=11))
        perm = rng.permutation(15)
        b = train_linear_svm(x[perm], y[perm], SvmTrainConfig(seed=11))
        assert np.array_equal(a.weights, b.weights) and a.bias == b.bias

    def test_best_objective_non_increasing_in_epochs(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=(30, 4))
        y = np.where(x @ np.array([1.0, -0.5, 0.2, 0.0]) > 0, 1.0, -1.0)
        objs = []
        for epochs in (1, 3, 6, 12):
            m = train_linear_svm(x, y, SvmTrainConfig(seed=6, epochs=epochs))
            objs.append(hinge_objective(m, x, y))
        assert all(b <= a + 1e-12 for a, b in zip(objs, objs[1:]))


class TestDecision:
    def test_zero_weights_gives_bias(self):
        m = LinearSvmModel(np.zeros(3), 0.7, np.zeros(3), np.ones(3))
        assert decision_function(m, np.array([5.0, -2.0, 1.0])) == 0.7

    def test_basis_weight(self):
        m = LinearSvmModel(np.array([1.0, 0.0]), 0.0, np.zeros(2), np.ones(2))
        assert decision_function(m, np.array([3.0, 9.0])) == 3.0

    def test_dimension_mismatch(self):
        m = LinearSvmModel(np.zeros(3), 0.0, np.zeros(3), np.ones(3))
        with pytest.raises(ValueError):
            decision_function(m, np.array([1.0, 2.0]))

    def test_affine_in_input(self):
        rng = np.random.default_rng(7)
        m = LinearSvmModel(rng.normal(size=6), 0.3, np.zeros(6), np.ones(6))
        x1, x2 = rng.normal(size=6), rng.normal(size=6)
        for alpha in (0.0, 0.25, 0.5, 0.9, 1.0):
            mix = alpha * x1 + (1 - alpha) * x2
            lhs = decision_function(m, mix)
            rhs = alpha * decision_function(m, x1) + (1 - alpha) * decision_function(m, x2)
            assert abs(lhs - rhs) < 1e-9


def five_clusters(n_per=30, seed=0, spread=0.15):
    rng = np.random.default_rng(seed)
    centers = np.array([[0, 0], [4, 0], [0, 4], [4, 4], [2, 8]], dtype=float)
    x = np.concatenate([c + spread * rng.normal(size=(n_per, 2)) for c in centers])
    g = np.repeat(np.arange(5), n_per)
    return x, g


class TestOvr:
    def test_cluster_accuracy(self):
        x, g = five_clusters(seed=8)
        rng = np.random.default_rng(9)
        perm = rng.permutation(len(g))
        n_train = int(0.7 * len(g))
        tr, te = perm[:n_train], perm[n_train:]
        model = train_ovr(x[tr], g[tr], SvmTrainConfig(seed=10))
        acc = np.mean(predict_grades(model, x[te]) == g[te])
        assert acc >= 0.95

    def test_single_grade_rejected(self):
        with pytest.raises(DataError):
            train_ovr(np.zeros((4, 2)), [0, 0, 0, 0])

    def test_absent_grade_rejected(self):
        x, g = five_clusters(n_per=5, seed=11)
        keep = g != 3
        with pytest.raises(DataError, match="3"):
            train_ovr(x[keep], g[keep])

    def test_determinism(self):
        x, g = five_clusters(n_per=8, seed=12)
        a = train_ovr(x, g, SvmTrainConfig(seed=13, epochs=5))
        b = train_ovr(x, g, SvmTrainConfig(seed=13, epochs=5))
        for ma, mb in zip(a.models, b.models):
            assert np.array_equal(ma.weights, mb.weights) and ma.bias == mb.bias


def fixed_score_model(score):
    return LinearSvmModel(np.array([0.0]), float(score), np.zeros(1), np.ones(1))


class TestPredictGrade:
    def test_argmax(self):
        mc = MulticlassSvm(tuple(fixed_score_model(s) for s in (0.9, 0.1, 0.0, 0.0, 0.0)))
        assert predict_grade(mc, np.array([0.0])) == 0

    def test_tie_goes_to_lowest(self):
        mc = MulticlassSvm(tuple(fixed_score_model(0.5) for _ in range(5)))
        assert predict_grade(mc, np.array([0.0])) == 0

    def test_positive_scaling_invariance(self):
        rng = np.random.default_rng(14)
        models = tuple(
            LinearSvmModel(rng.normal(size=3), rng.normal(), np.zeros(3), np.ones(3))
            for _ in range(5)
        )
        mc = MulticlassSvm(models)
        scaled = MulticlassSvm(
            tuple(
                LinearSvmModel(7.5 * m.weights, 7.5 * m.bias, m.mean, m.std)
                for m in models
            )
        )
        for _ in range(20):
            x = rng.normal(size=3)
            assert predict_grade(mc, x) == predict_grade(scaled, x)


class TestPersistence:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(15)
        m = LinearSvmModel(rng.normal(size=9), rng.normal(), rng.normal(size=9), np.abs(rng.normal(size=9)) + 0.1)
        p = tmp_path / "m.svm"
        save_svm(m, p)
        back = load_svm(p)
        assert np.array_equal(back.weights, m.weights)
        assert back.bias == m.bias
        assert np.array_equal(back.mean, m.mean) and np.array_equal(back.std, m.std)

    def test_save_load_save_byte_identical(self, tmp_path):
        rng = np.random.default_rng(16)
        m = LinearSvmModel(rng.normal(size=4), 0.25, np.zeros(4), np.ones(4))
        p1, p2 = tmp_path / "a.svm", tmp_path / "b.svm"
        save_svm(m, p1)
        save_svm(load_svm(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_version_mismatch(self, tmp_path):
        p = tmp_path / "bad.svm"
        p.write_text("svm-v9\ndim 1\n")
        with pytest.raises(DataError):
            load_svm(p)

    def test_truncated_file(self, tmp_path):
        m = LinearSvmModel(np.arange(3.0), 0.0, np.zeros(3), np.ones(3))
        p = tmp_path / "t.svm"
        save_svm(m, p)
        p.write_text("\n".join(p.read_text().splitlines()[:-2]))
        with pytest.raises(DataError):
            load_svm(p)
