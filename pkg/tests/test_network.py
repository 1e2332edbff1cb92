import math

import numpy as np
import pytest

from etfscore.errors import NumericError, ShapeError
from etfscore.network import (
    BN_EPS,
    HIDDEN_WIDTHS,
    INFERENCE,
    TRAIN,
    AdamState,
    adam_step,
    backward,
    evaluate,
    forward,
    init_params,
    layer_shapes,
    nll_loss,
    predict,
    predict_batch,
)

N_FEATURES = 2


@pytest.fixture
def params():
    return init_params(N_FEATURES, seed=3)


@pytest.fixture
def batch():
    rng = np.random.default_rng(11)
    X = rng.normal(size=(12, 8 * N_FEATURES))
    y = (X[:, 0] < 0).astype(int)
    return X, y


def test_layer_shapes():
    assert layer_shapes(11) == [(88, 64), (64, 32), (32, 16), (16, 8), (8, 2)]


def test_init_is_seeded(params):
    again = init_params(N_FEATURES, seed=3)
    for (name, a), (_, b) in zip(params.arrays(), again.arrays()):
        np.testing.assert_array_equal(a, b, err_msg=name)
    other = init_params(N_FEATURES, seed=4)
    assert not np.array_equal(params.weights[0], other.weights[0])
    params.validate()


def test_forward_returns_probabilities(params, batch):
    X, _ = batch
    probs, cache = forward(params, X, TRAIN)
    assert probs.shape == (12, 2)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0)
    assert len(cache.xhat) == len(HIDDEN_WIDTHS)


def test_forward_shape_errors(params, batch):
    X, _ = batch
    with pytest.raises(ShapeError):
        forward(params, X[:, :-1], TRAIN)
    with pytest.raises(ShapeError):
        forward(params, X[:1], TRAIN)
    forward(params, X[:1], INFERENCE)


def test_non_finite_input_is_a_numeric_error(params, batch):
    X, _ = batch
    X = X.copy()
    X[0, 0] = np.nan
    with pytest.raises(NumericError):
        forward(params, X, TRAIN)


def test_running_statistics(params, batch):
    X, _ = batch
    before = [m.copy() for m in params.running_means]
    forward(params, X, INFERENCE)
    for a, b in zip(before, params.running_means):
        np.testing.assert_array_equal(a, b)
    _, cache = forward(params, X, TRAIN)
    z = cache.inputs[0] @ params.weights[0] + params.biases[0]
    np.testing.assert_allclose(params.running_means[0], 0.1 * z.mean(axis=0))
    np.testing.assert_allclose(params.running_vars[0], 0.9 + 0.1 * z.var(axis=0, ddof=1))


def test_nll_clamps_zero_probabilities():
    probs = np.array([[0.0, 1.0], [0.5, 0.5]])
    loss = nll_loss(probs, np.array([0, 0]))
    assert loss == pytest.approx((-math.log(1e-30) + math.log(2.0)) / 2)
    onehot = np.array([[1.0, 0.0], [1.0, 0.0]])
    assert nll_loss(probs, onehot) == pytest.approx(loss)


GRID = [(f, b, seed) for f in (2, 3, 5) for b in (2, 4, 8) for seed in (1, 2, 3)]
STEP = 1e-3


def _smooth_params(n_features, seed):
    """Random parameters whose ReLU on/off pattern cannot change under a small step.

    A batch-normalised value lies within sqrt(B - 1) <= sqrt(7) of zero, so
    with gamma <= 1.1 and beta = +-3 every unit stays on or stays off.
    """
    params = init_params(n_features, seed)
    rng = np.random.default_rng(seed + 100)
    for bias in params.biases:
        bias[:] = rng.normal(scale=0.1, size=bias.shape)
    for gamma, beta in zip(params.gammas, params.betas):
        gamma[:] = rng.uniform(0.8, 1.1, size=gamma.shape)
        beta[:] = 3.0 * rng.choice([-1.0, 1.0], size=beta.shape)
        beta[0] = 3.0
    return params


def _loss(params, X, y, bn_eps):
    means, variances = list(params.running_means), list(params.running_vars)
    probs, _ = forward(params, X, TRAIN, bn_eps=bn_eps)
    params.running_means[:] = means
    params.running_vars[:] = variances
    return nll_loss(probs, y)


def _numeric_gradient(params, array, X, y, bn_eps):
    numeric = np.empty_like(array)
    for index in np.ndindex(*array.shape):
        original = array[index]
        samples = []
        for k in (2, 1, -1, -2):
            array[index] = original + k * STEP
            samples.append(_loss(params, X, y, bn_eps))
        array[index] = original
        far_up, up, down, far_down = samples
        numeric[index] = (-far_up + 8.0 * up - 8.0 * down + far_down) / (12.0 * STEP)
    return numeric


@pytest.mark.parametrize("n_features, batch_size, seed", GRID)
def test_gradients_match_finite_differences(n_features, batch_size, seed):
    params = _smooth_params(n_features, seed)
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(batch_size, 8 * n_features))
    y = np.arange(batch_size) % 2
    # two rows normalise to +-1; a wider eps keeps the loss smooth at this step
    bn_eps = 0.1 if batch_size == 2 else BN_EPS
    _, cache = forward(params.copy(), X, TRAIN, bn_eps=bn_eps)
    analytic = backward(cache, y).as_list()
    numeric = [_numeric_gradient(params, array, X, y, bn_eps) for array in params.trainables()]
    assert len(analytic) == len(numeric) == 18
    floor = 1e-3 * max(np.abs(g).max() for g in analytic)
    for i, (a, n) in enumerate(zip(analytic, numeric)):
        assert a.shape == n.shape
        error = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        assert error.max() < 1e-4, f"trainable {i}: max relative error {error.max():.2e}"


def test_duplicated_batch_gives_the_same_gradients(params, batch):
    X, y = batch
    _, cache = forward(params.copy(), X, TRAIN)
    single = backward(cache, y)
    _, cache = forward(params.copy(), np.vstack([X, X]), TRAIN)
    double = backward(cache, np.concatenate([y, y]))
    for a, b in zip(single.as_list(), double.as_list()):
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)


def test_dead_layer_has_zero_gradient_below_it(params, batch):
    X, y = batch
    params.betas[0][:] = -100.0
    probs, cache = forward(params, X, TRAIN)
    assert np.isfinite(nll_loss(probs, y))
    grads = backward(cache, y)
    np.testing.assert_array_equal(grads.weights[0], 0.0)
    np.testing.assert_array_equal(grads.gammas[0], 0.0)


def test_backward_needs_a_train_cache(params, batch):
    X, y = batch
    _, cache = forward(params, X, INFERENCE)
    with pytest.raises(NumericError):
        backward(cache, y)


def test_first_adam_step_moves_each_parameter_by_lr(params, batch):
    X, y = batch
    before = params.copy()
    _, cache = forward(params, X, TRAIN)
    grads = backward(cache, y)
    state = AdamState.for_params(params)
    adam_step(params, grads, state, lr=1e-3)
    assert state.step == 1
    moved = np.abs(params.weights[-1] - before.weights[-1])
    large = np.abs(grads.weights[-1]) > 1e-4
    assert large.any()
    np.testing.assert_allclose(moved[large], 1e-3, rtol=1e-3)
    running = [m.copy() for m in params.running_means]
    adam_step(params, grads, state, lr=1e-3)
    for a, b in zip(running, params.running_means):
        np.testing.assert_array_equal(a, b)


def test_adam_rejects_non_finite_updates(params, batch):
    X, y = batch
    _, cache = forward(params, X, TRAIN)
    grads = backward(cache, y)
    grads.weights[0][0, 0] = np.inf
    with pytest.raises(NumericError):
        adam_step(params, grads, AdamState.for_params(params), lr=1e-3)


def test_predict_and_evaluate(params, batch):
    X, y = batch
    p = predict(params, X[0])
    assert p.shape == (2,) and p.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(predict_batch(params, X)[0], p)
    accuracy, loss = evaluate(params, X, y)
    assert 0.0 <= accuracy <= 1.0 and loss > 0
    with pytest.raises(ShapeError):
        predict(params, X[0, :-1])


def test_zero_input_gives_even_odds():
    params = init_params(3, seed=9)
    probs = predict_batch(params, np.zeros((5, 24)))
    np.testing.assert_array_equal(probs, 0.5)


def test_xavier_variance():
    params = init_params(11, seed=21)
    for (n_in, n_out), weights in list(zip(layer_shapes(11), params.weights))[:3]:
        assert np.abs(weights).max() <= math.sqrt(6.0 / (n_in + n_out))
        assert weights.var() == pytest.approx(2.0 / (n_in + n_out), rel=0.15)
