from dataclasses import replace

import numpy as np
import pytest

from kneegrade.errors import DataError
from kneegrade.imaging import GrayImage
from kneegrade.minicnn import (
    HEAD_REGRESSION,
    HEAD_SOFTMAX,
    LOSS_EUCLIDEAN,
    LOSS_SOFTMAX,
    LayerSpec,
    Network,
    TrainConfig,
    backward,
    build_network,
    extract_features,
    finetune,
    forward,
    load_model,
    loss_euclidean,
    loss_softmax_ce,
    predict_outputs,
    replace_head,
    save_model,
    sgd_step,
)


def tiny_specs(head_dim=5):
    return [
        LayerSpec("conv1", "conv", out_channels=2, kernel=3, stride=1, pad=1),
        LayerSpec("relu1", "relu"),
        LayerSpec("pool1", "maxpool", kernel=2, stride=2),
        LayerSpec("conv2", "conv", out_channels=3, kernel=3, stride=1, pad=1),
        LayerSpec("relu2", "relu"),
        LayerSpec("fc1", "fc", out_dim=6),
        LayerSpec("head", "head", out_dim=head_dim),
    ]


def tiny_net(head="softmax-5", seed=0, size=6):
    dim = 5 if head == HEAD_SOFTMAX else 1
    return build_network((1, size, size), head, seed, tiny_specs(dim))


def relative_error(a, b):
    return abs(a - b) / max(abs(a) + abs(b), 1e-10)


def fd_max_error(net, batch, loss_kind, h=1e-6, per_layer_samples=12, seed=0):
    grads, _ = backward(net, batch, loss_kind)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, layer_grads in grads.items():
        for key in ("w", "b"):
            flat = net.params[name][key].ravel()
            gflat = layer_grads[key].ravel()
            count = min(per_layer_samples, flat.size)
            for i in rng.choice(flat.size, size=count, replace=False):
                orig = flat[i]
                flat[i] = orig + h
                _, lp = backward(net, batch, loss_kind)
                flat[i] = orig - h
                _, lm = backward(net, batch, loss_kind)
                flat[i] = orig
                worst = max(worst, relative_error((lp - lm) / (2 * h), gflat[i]))
    return worst


class TestForward:
    def test_maxpool_takes_max(self):
        net = build_network(
            (1, 2, 2), "none", 0, [LayerSpec("p", "maxpool", kernel=2, stride=2)]
        )
        acts = forward(net, np.array([[[1.0, 3.0], [2.0, 0.0]]]) / 3.0)
        assert acts["p"][0, 0, 0] == 1.0

    def test_relu_clamps(self):
        net = build_network((3,), "none", 0, [LayerSpec("r", "relu")])
        acts = forward(net, np.array([-1.0, 0.0, 2.0]))
        assert np.array_equal(acts["r"], [0.0, 0.0, 2.0])

    def test_identity_conv(self):
        net = build_network(
            (1, 3, 3), "none", 0, [LayerSpec("c", "conv", out_channels=1, kernel=1)]
        )
        net.params["c"]["w"][:] = 1.0
        net.params["c"]["b"][:] = 0.0
        x = np.random.default_rng(0).random((1, 3, 3))
        acts = forward(net, x)
        assert np.allclose(acts["c"], x)

    def test_shape_mismatch_rejected(self):
        net = tiny_net()
        with pytest.raises(ValueError):
            forward(net, np.zeros((1, 4, 4)))

    def test_softmax_output_sums_to_one(self):
        net = tiny_net(seed=3)
        rng = np.random.default_rng(1)
        for _ in range(10):
            out = forward(net, rng.random((1, 6, 6)))["output"]
            assert abs(out.sum() - 1.0) < 1e-12
            assert (out >= 0).all()


class TestExtractFeatures:
    def test_default_architecture_tap_shapes(self):
        net = build_network((1, 64, 64), seed=1)
        img = GrayImage(np.random.default_rng(2).random((64, 64)))
        assert extract_features(net, img, "fc-feat").shape == (32,)
        assert extract_features(net, img, "pool2").shape == (16 * 16 * 16,)
        assert extract_features(net, img, "conv2").shape == (16 * 32 * 32,)

    def test_deterministic(self):
        net = build_network((1, 64, 64), seed=1)
        img = GrayImage(np.random.default_rng(3).random((64, 64)))
        a = extract_features(net, img, "pool2")
        b = extract_features(net, img, "pool2")
        assert np.array_equal(a, b)

    def test_unknown_layer(self):
        net = build_network((1, 64, 64), seed=1)
        img = GrayImage(np.zeros((64, 64)))
        with pytest.raises(ValueError):
            extract_features(net, img, "fc9")


class TestLosses:
    def test_uniform_logits_log5(self):
        loss, _ = loss_softmax_ce(np.zeros(5), 2)
        assert abs(loss - np.log(5)) < 1e-12

    def test_large_margin_loss_vanishes(self):
        logits = np.zeros(5)
        logits[3] = 50.0
        loss, _ = loss_softmax_ce(logits, 3)
        assert loss < 1e-9

    def test_label_out_of_range(self):
        with pytest.raises(ValueError):
            loss_softmax_ce(np.zeros(5), 5)

    def test_softmax_gradient_matches_fd(self):
        rng = np.random.default_rng(4)
        for _ in range(5):
            logits = rng.normal(scale=2.0, size=5)
            label = int(rng.integers(0, 5))
            _, grad = loss_softmax_ce(logits, label)
            h = 1e-6
            for i in range(5):
                lp = loss_softmax_ce(logits + h * np.eye(5)[i], label)[0]
                lm = loss_softmax_ce(logits - h * np.eye(5)[i], label)[0]
                assert relative_error((lp - lm) / (2 * h), grad[i]) < 1e-4

    def test_euclidean_values(self):
        assert loss_euclidean(np.array([2.0]), 2)[0] == 0.0
        assert loss_euclidean(np.array([1.5]), 0)[0] == 2.25

    def test_euclidean_gradient_matches_fd(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            pred = rng.normal(scale=3.0, size=1)
            label = float(rng.integers(0, 5))
            _, grad = loss_euclidean(pred, label)
            h = 1e-6
            lp = loss_euclidean(pred + h, label)[0]
            lm = loss_euclidean(pred - h, label)[0]
            assert relative_error((lp - lm) / (2 * h), grad[0]) < 1e-6


class TestBackward:
    def test_gradients_match_finite_differences_softmax(self):
        rng = np.random.default_rng(6)
        net = tiny_net(seed=7)
        batch = [(rng.random((1, 6, 6)), int(rng.integers(0, 5))) for _ in range(3)]
        assert fd_max_error(net, batch, LOSS_SOFTMAX) < 1e-4

    def test_gradients_match_finite_differences_euclidean(self):
        rng = np.random.default_rng(8)
        net = tiny_net(HEAD_REGRESSION, seed=9)
        batch = [(rng.random((1, 6, 6)), float(rng.integers(0, 5))) for _ in range(3)]
        assert fd_max_error(net, batch, LOSS_EUCLIDEAN) < 1e-4

    def test_zero_multiplier_layers_still_get_gradients(self):
        net = tiny_net(seed=10)
        net.specs[0] = replace(net.specs[0], lr_mult=0.0)
        batch = [(np.random.default_rng(11).random((1, 6, 6)), 1)]
        grads, _ = backward(net, batch, LOSS_SOFTMAX)
        assert "conv1" in grads and np.abs(grads["conv1"]["w"]).sum() > 0

    def test_duplicated_batch_equals_single(self):
        rng = np.random.default_rng(12)
        net = tiny_net(seed=13)
        item = (rng.random((1, 6, 6)), 2)
        g1, l1 = backward(net, [item], LOSS_SOFTMAX)
        g2, l2 = backward(net, [item, item], LOSS_SOFTMAX)
        assert abs(l1 - l2) < 1e-12
        for name in g1:
            for key in ("w", "b"):
                assert np.allclose(g1[name][key], g2[name][key], rtol=1e-12, atol=1e-14)

    def test_head_loss_mismatch_rejected(self):
        net = tiny_net(seed=14)
        with pytest.raises(ValueError):
            backward(net, [(np.zeros((1, 6, 6)), 0.0)], LOSS_EUCLIDEAN)


class TestSgdStep:
    def test_zero_multiplier_freezes_bits(self):
        net = tiny_net(seed=15)
        net.specs[0] = replace(net.specs[0], lr_mult=0.0)
        before = net.params["conv1"]["w"].copy()
        batch = [(np.random.default_rng(16).random((1, 6, 6)), 3)]
        state = {}
        for _ in range(5):
            grads, _ = backward(net, batch, LOSS_SOFTMAX)
            sgd_step(net, grads, TrainConfig(seed=0), state)
        assert net.params["conv1"]["w"].tobytes() == before.tobytes()

    def test_plain_step_exact(self):
        net = build_network((2,), "none", 0, [LayerSpec("f", "fc", out_dim=1)])
        net.params["f"]["w"][:] = np.array([[1.0, 2.0]])
        grads = {"f": {"w": np.array([[0.5, -1.0]]), "b": np.array([0.0])}}
        sgd_step(net, grads, TrainConfig(base_lr=0.25, momentum=0.0))
        assert np.array_equal(net.params["f"]["w"], [[1.0 - 0.25 * 0.5, 2.0 + 0.25]])

    def test_multiplier_ratio_exact(self):
        specs = [LayerSpec("a", "fc", out_dim=2, lr_mult=10.0), LayerSpec("b", "fc", out_dim=2, lr_mult=1.0)]
        net = build_network((2,), "none", 0, specs)
        for name in ("a", "b"):
            net.params[name]["w"][:] = 1.0
        g = np.array([[0.5, 0.25], [1.0, 0.125]])
        grads = {"a": {"w": g.copy(), "b": np.zeros(2)}, "b": {"w": g.copy(), "b": np.zeros(2)}}
        before = {n: net.params[n]["w"].copy() for n in ("a", "b")}
        sgd_step(net, grads, TrainConfig(base_lr=0.5, momentum=0.0))
        delta_a = before["a"] - net.params["a"]["w"]
        delta_b = before["b"] - net.params["b"]["w"]
        assert np.array_equal(delta_a, 10.0 * delta_b)

    def test_missing_gradient_rejected(self):
        net = tiny_net(seed=17)
        grads, _ = backward(net, [(np.zeros((1, 6, 6)), 0)], LOSS_SOFTMAX)
        del grads["conv2"]
        with pytest.raises(ValueError):
            sgd_step(net, grads, TrainConfig())


class TestReplaceHead:
    def test_softmax_head_normalizes(self):
        base = tiny_net(seed=18)
        net = replace_head(base, HEAD_SOFTMAX, seed=1)
        out = forward(net, np.random.default_rng(19).random((1, 6, 6)))["output"]
        assert abs(out.sum() - 1.0) < 1e-12 and out.shape == (5,)

    def test_regression_head_is_linear_scalar(self):
        base = tiny_net(seed=20)
        net = replace_head(base, HEAD_REGRESSION, seed=2)
        assert net.head_kind == HEAD_REGRESSION
        out = forward(net, np.random.default_rng(21).random((1, 6, 6)))["output"]
        assert out.shape == (1,)
        # linear head: doubling the head weights doubles the output shift
        w = net.params["head"]["w"]
        base_out = out[0]
        w *= 2.0
        assert forward(net, np.random.default_rng(21).random((1, 6, 6)))["output"][0] != base_out

    def test_transferred_layers_bit_identical_and_multipliers_set(self):
        base = tiny_net(seed=22)
        net = replace_head(base, HEAD_SOFTMAX, seed=3)
        for spec in net.specs[:-1]:
            assert spec.lr_mult == 1.0
            if spec.has_params:
                for key in ("w", "b"):
                    assert (
                        net.params[spec.name][key].tobytes()
                        == base.params[spec.name][key].tobytes()
                    )
        assert net.specs[-1].lr_mult == 10.0

    def test_headless_net_rejected(self):
        net = build_network((2,), "none", 0, [LayerSpec("f", "fc", out_dim=2)])
        with pytest.raises(ValueError):
            replace_head(net, HEAD_SOFTMAX, 0)


def make_task(n_per_grade, seed, size=16):
    """Tiny gradeable image task: two bright rows whose spacing shrinks with
    grade, plus noise."""
    rng = np.random.default_rng(seed)
    samples = []
    for grade in range(5):
        for _ in range(n_per_grade):
            img = rng.normal(0.3, 0.04, size=(size, size))
            gap = 10 - 2 * grade + rng.integers(-1, 2)
            top = (size - gap) // 2
            img[top - 2 : top, :] += 0.45
            img[top + gap : top + gap + 2, :] += 0.45
            samples.append((np.clip(img, 0, 1)[None], grade))
    order = rng.permutation(len(samples))
    return [samples[i] for i in order]


class TestFinetune:
    def test_classification_improves_over_untrained(self):
        data = make_task(20, seed=23)
        train, val = data[:70], data[70:]
        net = build_network((1, 16, 16), HEAD_SOFTMAX, seed=24, specs=tiny_specs(5))
        xs = np.stack([x for x, _ in val])
        ys = np.array([y for _, y in val])
        untrained = np.mean(predict_outputs(net, xs).argmax(axis=1) == ys)
        tuned, curves = finetune(
            net, train, val, LOSS_SOFTMAX, TrainConfig(epochs=15, base_lr=0.01, seed=25)
        )
        tuned_acc = np.mean(predict_outputs(tuned, xs).argmax(axis=1) == ys)
        assert tuned_acc >= untrained + 0.2
        assert len(curves.train_loss) == 15

    def test_regression_val_mse_decreases_initially(self):
        data = make_task(14, seed=26)
        train = [(x, float(y)) for x, y in data[:50]]
        val = [(x, float(y)) for x, y in data[50:70]]
        net = build_network((1, 16, 16), HEAD_REGRESSION, seed=27, specs=tiny_specs(1))
        _, curves = finetune(
            net, train, val, LOSS_EUCLIDEAN, TrainConfig(epochs=4, base_lr=0.01, seed=28)
        )
        assert curves.val_metric[0] > curves.val_metric[1] > curves.val_metric[2]

    def test_zero_epochs_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)

    def test_empty_split_rejected(self):
        net = tiny_net(seed=29)
        with pytest.raises(DataError):
            finetune(net, [], [(np.zeros((1, 6, 6)), 0)], LOSS_SOFTMAX, TrainConfig())

    def test_seeded_rerun_bit_identical(self):
        data = make_task(4, seed=30)
        net = build_network((1, 16, 16), HEAD_SOFTMAX, seed=31, specs=tiny_specs(5))
        cfg = TrainConfig(epochs=3, seed=32)
        a, _ = finetune(net, data[:12], data[12:16], LOSS_SOFTMAX, cfg)
        b, _ = finetune(net, data[:12], data[12:16], LOSS_SOFTMAX, cfg)
        for name in a.params:
            for key in ("w", "b"):
                assert a.params[name][key].tobytes() == b.params[name][key].tobytes()

    def test_does_not_mutate_input_network(self):
        data = make_task(3, seed=33)
        net = build_network((1, 16, 16), HEAD_SOFTMAX, seed=34, specs=tiny_specs(5))
        before = {n: {k: v.copy() for k, v in p.items()} for n, p in net.params.items()}
        finetune(net, data[:8], data[8:12], LOSS_SOFTMAX, TrainConfig(epochs=2, seed=35))
        for name in net.params:
            for key in ("w", "b"):
                assert net.params[name][key].tobytes() == before[name][key].tobytes()


class TestPersistence:
    def test_save_load_save_byte_identical(self, tmp_path):
        net = tiny_net(seed=36)
        p1, p2 = tmp_path / "a.cnn", tmp_path / "b.cnn"
        save_model(net, p1)
        save_model(load_model(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_forward_identical_after_round_trip(self, tmp_path):
        net = tiny_net(seed=37)
        p = tmp_path / "m.cnn"
        save_model(net, p)
        loaded = load_model(p)
        x = np.random.default_rng(38).random((1, 6, 6))
        a = forward(net, x)["output"]
        b = forward(loaded, x)["output"]
        assert np.array_equal(a, b)

    def test_truncated_file_rejected(self, tmp_path):
        net = tiny_net(seed=39)
        p = tmp_path / "m.cnn"
        save_model(net, p)
        raw = p.read_bytes()
        p.write_bytes(raw[:-16])
        with pytest.raises(DataError):
            load_model(p)

    def test_version_mismatch_rejected(self, tmp_path):
        p = tmp_path / "bad.cnn"
        p.write_bytes(b"cnn-v7\ninput 1 4 4\n")
        with pytest.raises(DataError):
            load_model(p)
