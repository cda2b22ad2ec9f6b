import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poseforge.classifier import (
    MAGIC,
    Model,
    ModelConfig,
    ModelFormatError,
    PredictionResult,
    TrainConfig,
    TrainingDivergedError,
    _result,
    box_downsample,
    forward,
    load_model,
    loss_and_grads,
    predict,
    predict_features,
    preprocess,
    preprocess_batch,
    save_model,
    softmax,
    softmax_loss,
    train,
)


def small_model(n_in=10, hidden=8, classes=4, p=0.0, seed=0):
    cfg = ModelConfig(num_classes=classes, input_side=1, hidden_units=hidden, dropout_p=p, seed=seed)
    return Model.init(cfg, n_inputs=n_in)


def numeric_grad(f, x, h=1e-5):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b):
    return np.max(np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b)))


class TestConfig:
    def test_defaults(self):
        cfg = ModelConfig(num_classes=6)
        assert cfg.n_inputs == 4096 and cfg.hidden_units == 256 and cfg.dropout_p == 0.5
        t = TrainConfig()
        assert (t.learning_rate, t.momentum, t.batch_size) == (0.01, 0.9, 32)

    @pytest.mark.parametrize("kw", [{"num_classes": 1}, {"num_classes": 3, "dropout_p": 1.0}, {"num_classes": 3, "dropout_p": -0.1}])
    def test_model_config_invalid(self, kw):
        with pytest.raises(ValueError):
            ModelConfig(**kw)

    @pytest.mark.parametrize("kw", [{"learning_rate": 0.0}, {"batch_size": 0}])
    def test_train_config_invalid(self, kw):
        with pytest.raises(ValueError):
            TrainConfig(**kw)


class TestPreprocess:
    def test_constant_image(self):
        np.testing.assert_allclose(preprocess(np.full((227, 227), 0.4)), np.zeros(4096), atol=1e-6)

    def test_length(self):
        img = np.random.default_rng(0).random((227, 227))
        assert preprocess(img, 32).shape == (1024,)
        x = preprocess(img)
        assert x.shape == (4096,)
        assert abs(x.mean()) < 1e-9 and abs(x.std() - 1) < 1e-6

    def test_block_means_preserved(self):
        # 2x2 blocks on a 228 grid cropped to 227; compare against an independent
        # supersampled area average (each pixel split into 64x64 subpixels).
        rng = np.random.default_rng(3)
        img = np.kron(rng.integers(0, 256, (114, 114)) / 255.0, np.ones((2, 2)))[:227, :227]
        out = box_downsample(img, 64)
        sub = 64
        fine = np.repeat(np.repeat(img, sub, axis=0), sub, axis=1)[: 227 * sub, : 227 * sub]
        oracle = fine.reshape(64, 227 * sub // 64, 64, 227 * sub // 64).mean(axis=(1, 3))
        assert np.max(np.abs(out - oracle)) < 1 / 255

    def test_integer_factor_is_block_mean(self):
        img = np.random.default_rng(1).random((8, 8))
        np.testing.assert_allclose(box_downsample(img, 4), img.reshape(4, 2, 4, 2).mean(axis=(1, 3)), atol=1e-15)

    def test_batch_flip(self):
        imgs = [np.random.default_rng(i).random((227, 227)) for i in range(2)]
        X = preprocess_batch(imgs, 16, flip=True)
        np.testing.assert_allclose(X[1], preprocess(imgs[1][:, ::-1], 16))


class TestForward:
    def test_no_dropout_train_equals_eval(self):
        m = small_model(p=0.0)
        x = np.random.default_rng(0).normal(size=10)
        np.testing.assert_array_equal(forward(m, x, True, 5), forward(m, x))

    def test_zero_weights_uniform(self):
        m = small_model()
        for a in m.params().values():
            a[...] = 0
        f = forward(m, np.ones(10))
        np.testing.assert_array_equal(f, 0)
        np.testing.assert_allclose(softmax(f), 0.25)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            forward(small_model(), np.ones(11))

    def test_dropout_expectation(self):
        m = small_model(n_in=20, hidden=64, classes=5, p=0.5, seed=2)
        x = np.random.default_rng(9).normal(size=20)
        ref = forward(m, x)
        batch = np.tile(x, (10000, 1))
        mc = forward(m, batch, train_mode=True, dropout_seed=1).mean(axis=0)
        assert np.linalg.norm(mc - ref) / np.linalg.norm(ref) < 0.02

    def test_dropout_seeded(self):
        m = small_model(p=0.5)
        x = np.ones(10)
        np.testing.assert_array_equal(forward(m, x, True, 3), forward(m, x, True, 3))


class TestSoftmaxLoss:
    def test_uniform(self):
        loss, grad = softmax_loss(np.zeros(6), 2)
        assert loss == pytest.approx(math.log(6), abs=1e-12)
        np.testing.assert_allclose(grad, np.array([1, 1, -5, 1, 1, 1]) / 6)

    def test_large_true_logit(self):
        loss, _ = softmax_loss(np.array([1000.0, 0.0, 0.0]), 0)
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_stable_for_huge_logits(self):
        loss, grad = softmax_loss(np.array([1e300, -1e300, 0.0]), 1)
        assert np.isfinite(loss) and np.all(np.isfinite(grad))

    def test_gradient_finite_difference(self):
        rng = np.random.default_rng(4)
        worst = 0.0
        for _ in range(20):
            f = rng.normal(size=7)
            y = int(rng.integers(7))
            _, g = softmax_loss(f, y)
            num = numeric_grad(lambda: softmax_loss(f, y)[0], f)
            worst = max(worst, rel_error(g, num))
        assert worst < 1e-6

    def test_batch_mean(self):
        f = np.random.default_rng(0).normal(size=(5, 3))
        y = np.array([0, 1, 2, 0, 1])
        loss, grad = softmax_loss(f, y)
        singles = [softmax_loss(f[i], y[i]) for i in range(5)]
        assert loss == pytest.approx(np.mean([s[0] for s in singles]))
        np.testing.assert_allclose(grad, np.array([s[1] for s in singles]) / 5)

    def test_bad_class(self):
        with pytest.raises(ValueError):
            softmax_loss(np.zeros(3), 3)

    @settings(max_examples=100)
    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=10))
    def test_softmax_simplex(self, logits):
        p = softmax(np.array(logits))
        assert abs(p.sum() - 1) < 1e-6
        assert np.all(p > 0)


class TestNetworkGradients:
    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_full_network(self, seed):
        rng = np.random.default_rng(seed)
        m = small_model(seed=seed)
        X = rng.normal(size=(5, 10))
        y = rng.integers(0, 4, 5)
        mask = (rng.random((5, 8)) >= 0.5) * 2.0
        _, grads = loss_and_grads(m, X, y, mask)
        for name, param in m.params().items():
            num = numeric_grad(lambda: loss_and_grads(m, X, y, mask)[0], param)
            assert rel_error(grads[name], num) < 1e-4, name


class TestTrain:
    def toy(self, n=200, seed=0):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(n, 10))
        w = rng.normal(size=10)
        y = (X @ w > 0).astype(int)
        return X, y

    def test_separable(self):
        X, y = self.toy()
        m = small_model(hidden=16, classes=2, p=0.0)
        trained, hist = train(m, X, y, TrainConfig(epochs=50, learning_rate=0.05, batch_size=16))
        pred = np.argmax(forward(trained, X), axis=1)
        assert np.mean(pred == y) >= 0.99
        assert len(hist.epoch) == 50

    def test_zero_epochs(self):
        X, y = self.toy()
        m = small_model(classes=2)
        trained, hist = train(m, X, y, TrainConfig(epochs=0))
        for k, v in m.params().items():
            np.testing.assert_array_equal(trained.params()[k], v)
        assert hist.epoch == []

    def test_deterministic(self):
        X, y = self.toy()
        runs = [train(small_model(classes=2, p=0.5), X, y, TrainConfig(epochs=3, seed=7))[0] for _ in range(2)]
        for k in runs[0].params():
            assert runs[0].params()[k].tobytes() == runs[1].params()[k].tobytes()

    def test_monotone_small_lr(self):
        X, y = self.toy(n=32)
        m = small_model(classes=2, p=0.0)
        losses = []
        for _ in range(100):
            m, hist = train(m, X, y, TrainConfig(epochs=1, learning_rate=1e-3, momentum=0.0, batch_size=32))
            losses.append(hist.train_loss[0])
        assert all(b <= a + 1e-15 for a, b in zip(losses, losses[1:]))

    def test_hflip_doubles_samples(self):
        X, y = self.toy(n=50)
        m = small_model(classes=2)
        _, plain = train(m, X, y, TrainConfig(epochs=2))
        _, flipped = train(m, X, y, TrainConfig(epochs=2, hflip_augment=True), X_flip=X[:, ::-1])
        assert flipped.samples == [2 * s for s in plain.samples] == [100, 100]

    def test_hflip_needs_mirrored(self):
        X, y = self.toy(n=10)
        with pytest.raises(ValueError):
            train(small_model(classes=2), X, y, TrainConfig(hflip_augment=True))

    def test_history_csv(self):
        X, y = self.toy(n=20)
        _, hist = train(small_model(classes=2), X, y, TrainConfig(epochs=2), X_val=X, y_val=y)
        lines = hist.to_csv().splitlines()
        assert lines[0] == "epoch,train_loss,val_accuracy"
        assert len(lines) == 3

    def test_divergence(self):
        X, y = self.toy(n=20)
        with pytest.raises(TrainingDivergedError) as err:
            train(small_model(classes=2), X * 1e200, y, TrainConfig(epochs=2, learning_rate=1e10))
        assert err.value.epoch in (1, 2) and err.value.batch == 0

    def test_bad_labels(self):
        X, _ = self.toy(n=10)
        with pytest.raises(ValueError):
            train(small_model(classes=2), X, np.full(10, 2), TrainConfig())


class TestPredict:
    def test_uniform_ratio(self):
        r = _result(np.full(6, 1 / 6))
        assert r.confidence_ratio == pytest.approx(1.0)
        assert not r.high_confidence
        assert r.top_label == 0

    def test_ratio_definition(self):
        r = _result(np.array([0.5, 0.2, 0.1, 0.1, 0.1]))
        assert r.confidence_ratio == pytest.approx(2.5)
        assert r.high_confidence
        assert not PredictionResult(np.array([0.5, 0.25, 0.25]), 0, 2.0).high_confidence

    def test_shift_invariance(self):
        m = small_model()
        x = np.random.default_rng(0).normal(size=10)
        a = predict_features(m, x)[0]
        m.b2 += 123.0
        b = predict_features(m, x)[0]
        assert a.top_label == b.top_label
        np.testing.assert_allclose(a.probs, b.probs, atol=1e-12)

    def test_predict_image(self):
        m = Model.init(ModelConfig(num_classes=3, input_side=8))
        r = predict(m, np.random.default_rng(0).random((227, 227)))
        assert abs(r.probs.sum() - 1) < 1e-9 and r.probs.shape == (3,)


class TestPersistence:
    def test_round_trip(self, tmp_path):
        m = Model.init(ModelConfig(num_classes=6, input_side=16, hidden_units=32, dropout_p=0.3, seed=5))
        save_model(m, tmp_path / "m.bin")
        back = load_model(tmp_path / "m.bin")
        for k in m.params():
            assert back.params()[k].tobytes() == m.params()[k].tobytes()
        assert back.config == m.config

    def test_layout(self, tmp_path):
        m = small_model()
        save_model(m, tmp_path / "m.bin")
        blob = (tmp_path / "m.bin").read_bytes()
        assert blob[:6] == MAGIC == b"PFNET1"
        header = struct.calcsize("<6sIIIIdq")
        np.testing.assert_array_equal(np.frombuffer(blob, "<f8", count=80, offset=header).reshape(8, 10), m.W1)

    def test_truncated(self, tmp_path):
        save_model(small_model(), tmp_path / "m.bin")
        blob = (tmp_path / "m.bin").read_bytes()
        (tmp_path / "t.bin").write_bytes(blob[:-8])
        with pytest.raises(ModelFormatError, match="corrupt"):
            load_model(tmp_path / "t.bin")
        (tmp_path / "h.bin").write_bytes(blob[:10])
        with pytest.raises(ModelFormatError):
            load_model(tmp_path / "h.bin")

    def test_bad_magic(self, tmp_path):
        save_model(small_model(), tmp_path / "m.bin")
        blob = bytearray((tmp_path / "m.bin").read_bytes())
        blob[5:6] = b"9"
        (tmp_path / "m.bin").write_bytes(bytes(blob))
        with pytest.raises(ModelFormatError, match="magic"):
            load_model(tmp_path / "m.bin")
