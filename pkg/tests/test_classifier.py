import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adapfair.classifier import (CallableClassifier, ClassifierHandle, LogisticModel, MLPModel, bce_and_residual,
                                 input_gradients, load_classifier, predict_scores, save_classifier,
                                 train_baseline)
from adapfair.data import LabeledDataset, synth_biased_gaussians
from adapfair.errors import InvalidInput, TrainingFailure
from adapfair.metrics import delta_dp


def fd_grad(model, x, h=1e-6):
    return np.array([(model.predict_score(x + h * e) - model.predict_score(x - h * e)) / (2 * h)
                     for e in np.eye(x.size)])


def test_zero_logistic():
    m = LogisticModel(3)
    x = np.array([1.0, -2.0, 3.0])
    assert m.predict_score(x) == 0.5
    np.testing.assert_array_equal(m.input_gradient(x), 0.0)


def test_logistic_formula():
    w, b = np.array([0.3, -1.2]), 0.4
    m = LogisticModel.from_weights(w, b)
    x = np.array([0.7, 0.2])
    assert m.predict_score(x) == pytest.approx(1 / (1 + np.exp(-(w @ x + b))), abs=1e-15)


def test_clamp():
    m = LogisticModel.from_weights([100.0], 0.0)
    assert m.predict_score(np.array([10.0])) <= 1 - 1e-7
    assert m.predict_score(np.array([-10.0])) >= 1e-7


@pytest.mark.parametrize("model", [LogisticModel.from_weights([0.5, -1.0, 2.0], 0.1),
                                   MLPModel.init(3, (20, 20), seed=0)])
def test_input_gradient_finite_differences(model):
    for seed in range(5):
        x = np.random.default_rng(seed).normal(size=3)
        g, fd = model.input_gradient(x), fd_grad(model, x)
        assert np.max(np.abs(g - fd)) / np.max(np.abs(fd)) < 1e-6


def test_logistic_gradient_scales_with_weights():
    # scaling w by c at a point where w.x + b = 0 scales the gradient by c (sigma' = 1/4 there)
    w = np.array([1.0, 2.0])
    x = np.array([2.0, -1.0])
    for c in (0.5, 2.0, 3.0):
        g = LogisticModel.from_weights(c * w, 0.0).input_gradient(x)
        np.testing.assert_allclose(g, 0.25 * c * w, atol=1e-15)


def test_bce_examples():
    loss, res = bce_and_residual(1, 0.5)
    assert loss == pytest.approx(np.log(2)) and res == pytest.approx(-2.0)
    loss, res = bce_and_residual(0, 0.5)
    assert loss == pytest.approx(np.log(2)) and res == pytest.approx(2.0)


@settings(max_examples=50)
@given(st.sampled_from([0, 1]), st.floats(0.01, 0.99))
def test_bce_residual_is_derivative(y, r):
    h = 1e-6
    fd = (bce_and_residual(y, r + h)[0] - bce_and_residual(y, r - h)[0]) / (2 * h)
    assert abs(bce_and_residual(y, r)[1] - fd) < 1e-8 * max(1.0, abs(fd))


def test_bce_vectorized():
    loss, res = bce_and_residual(np.array([1, 0]), np.array([0.5, 0.5]))
    np.testing.assert_allclose(loss, [np.log(2)] * 2)
    np.testing.assert_allclose(res, [-2.0, 2.0])


def test_frozen_purity_and_checksum():
    m = MLPModel.init(2, (5,), seed=1).freeze()
    x = np.array([0.3, -0.4])
    assert m.predict_score(x) == m.predict_score(x)
    before = m.checksum()
    with pytest.raises(TrainingFailure):
        m.set_params(np.zeros(m.params.size))
    with pytest.raises(ValueError):
        m.params[0] = 1.0
    assert m.checksum() == before


def test_single_sample_contract():
    m = LogisticModel(2)
    with pytest.raises(InvalidInput):
        m.predict_score(np.zeros((2, 2)))
    with pytest.raises(InvalidInput):
        m.predict_score(np.zeros(3))


def test_batch_helpers_match_loop():
    m = MLPModel.init(3, (4, 4), seed=2)
    X = np.random.default_rng(3).normal(size=(6, 3))
    np.testing.assert_allclose(predict_scores(m, X), [m.predict_score(x) for x in X], atol=1e-15)
    np.testing.assert_allclose(input_gradients(m, X), [m.input_gradient(x) for x in X], atol=1e-15)


def test_callable_adapter_is_handle():
    w = np.array([1.0, -1.0])
    h = CallableClassifier(2, lambda x: 1 / (1 + np.exp(-w @ x)), lambda x: w * 0.25)
    assert isinstance(h, ClassifierHandle)
    assert not hasattr(h, "predict_scores")
    assert predict_scores(h, np.zeros((3, 2))).tolist() == [0.5] * 3
    np.testing.assert_array_equal(input_gradients(h, np.zeros((2, 2))), [[0.25, -0.25]] * 2)


def test_separable_training():
    rng = np.random.default_rng(4)
    X = rng.normal(size=(400, 2))
    X[:, 0] += np.sign(X[:, 0]) * 0.5
    y = (X[:, 0] > 0).astype(int)
    data = LabeledDataset(X, np.zeros(400), y)
    for arch in ("logistic", "mlp"):
        m = train_baseline(data, arch, epochs=300, lr=0.5)
        assert m.frozen
        assert np.mean((predict_scores(m, X) > 0.5) == y) > 0.95


def test_training_deterministic():
    data = synth_biased_gaussians(50, 2, 1.0, 0.1, seed=5)
    m1, m2 = train_baseline(data, "mlp", epochs=20, seed=3), train_baseline(data, "mlp", epochs=20, seed=3)
    assert m1.checksum() == m2.checksum()


def test_biased_baseline():
    data = synth_biased_gaussians(500, 2, 2.0, 0.05, seed=0)
    m = train_baseline(data, "logistic", epochs=500, lr=0.5)
    assert delta_dp(predict_scores(m, data.features), data.sensitive) > 0.25


def test_training_divergence_detected():
    data = synth_biased_gaussians(20, 2, 2.0, seed=0)
    data.features[0, 0] = np.inf
    with pytest.raises(TrainingFailure):
        train_baseline(data, "logistic", epochs=5, lr=1e10)


def test_unknown_arch():
    with pytest.raises(InvalidInput):
        train_baseline(synth_biased_gaussians(5, 2), "forest")


@pytest.mark.parametrize("model", [LogisticModel.from_weights([0.2, 0.3], -0.1), MLPModel.init(2, (3, 4), seed=6)])
def test_save_load(tmp_path, model):
    save_classifier(model, tmp_path / "c.bin")
    loaded = load_classifier(tmp_path / "c.bin")
    assert loaded.frozen and loaded.checksum() == model.checksum()
    x = np.array([0.1, 0.9])
    assert loaded.predict_score(x) == model.predict_score(x)
