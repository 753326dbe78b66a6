import numpy as np
import pytest

from romcim.errors import DivergenceError, ValidationError
from romcim.graph import LayerSpec, NetworkGraph, ROM
from romcim.training import (Dataset, TrainState, accuracy, deploy_quantized,
                             fine_tune, float_forward, forward_backward,
                             frozen_hash, init_weights, sgd_step,
                             softmax_cross_entropy)


def numeric_grad(loss_fn, w, step=1e-4):
    """Central finite differences over every element of w."""
    g = np.zeros_like(w, dtype=np.float64)
    it = np.nditer(w, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = w[idx]
        w[idx] = orig + step
        fp = loss_fn()
        w[idx] = orig - step
        fm = loss_fn()
        w[idx] = orig
        g[idx] = (fp - fm) / (2 * step)
        it.iternext()
    return g


def rel_err(a, b, floor=1e-6):
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max())


def all_kinds_net():
    """Small net touching every layer type, with a residual join."""
    layers = [
        LayerSpec("conv2d", in_ch=2, out_ch=4, kernel=3, pad=1, out_scale=0.1),
        LayerSpec("relu", in_ch=4, out_ch=4, trainable=False),
        LayerSpec("pointwise", in_ch=4, out_ch=4, kernel=1, pad=0,
                  out_scale=0.1, inputs=(1,)),
        LayerSpec("residual_add", in_ch=4, out_ch=4, inputs=(1, 2)),
        LayerSpec("maxpool", in_ch=4, out_ch=4, kernel=2, stride=2,
                  trainable=False, inputs=(3,)),
        LayerSpec("avgpool", in_ch=4, out_ch=4, kernel=2, stride=2,
                  trainable=False, inputs=(4,)),
        LayerSpec("fully_connected", in_ch=4 * 2 * 2, out_ch=3, out_scale=0.1,
                  inputs=(5,)),
    ]
    return NetworkGraph(layers, input_shape=(2, 8, 8)).validate()


def make_state(seed=0, **kw):
    net = all_kinds_net()
    weights = init_weights(net, seed=seed)
    return TrainState(net=net, weights=weights, **kw)


def away_from_kinks(state, x, margin=1e-3):
    """True when no relu input sits near zero (keeps differences clean)."""
    outputs, _ = float_forward(state.net, state.weights, x)
    pre = outputs[0]
    return np.abs(pre).min() > margin


# ----------------------------------------------------------------- loss

def test_uniform_logits_loss_is_log_k():
    logits = np.zeros((6, 5))
    loss, _ = softmax_cross_entropy(logits, np.zeros(6, dtype=np.int64))
    assert loss == pytest.approx(np.log(5))


def test_saturated_correct_logits_give_tiny_gradients():
    logits = np.full((4, 3), -50.0)
    logits[np.arange(4), [0, 1, 2, 0]] = 50.0
    loss, dl = softmax_cross_entropy(logits, np.array([0, 1, 2, 0]))
    assert loss < 1e-8
    assert np.abs(dl).max() < 1e-8


# ------------------------------------------------------------ gradient check

def test_gradients_match_central_differences_all_layers():
    state = make_state(seed=3)
    rng = np.random.default_rng(10)
    x = rng.normal(0.0, 1.0, (2, 2, 8, 8)) + 0.05
    labels = np.array([0, 2])
    assert away_from_kinks(state, x)

    _, grads = forward_backward(state, x, labels)
    assert set(grads) == {0, 2, 6}

    for i in grads:
        w = state.weights[i]
        num = numeric_grad(
            lambda: forward_backward(state, x, labels)[0], w)
        assert rel_err(grads[i], num) < 1e-4, f"layer {i}"


def test_gradients_cover_only_trainable_layers():
    net = all_kinds_net()
    layers = list(net.layers)
    layers[0] = LayerSpec("conv2d", in_ch=2, out_ch=4, kernel=3, pad=1,
                          out_scale=0.1, placement=ROM, trainable=False)
    net = NetworkGraph(layers, net.input_shape)
    state = TrainState(net=net, weights=init_weights(net, seed=3))
    x = np.random.default_rng(0).normal(size=(2, 2, 8, 8))
    _, grads = forward_backward(state, x, np.array([0, 1]))
    assert 0 not in grads and set(grads) == {2, 6}


def test_bad_labels_rejected():
    state = make_state()
    x = np.zeros((1, 2, 8, 8))
    with pytest.raises(ValidationError):
        forward_backward(state, x, np.array([7]))


# -------------------------------------------------------------------- SGD

def test_zero_learning_rate_keeps_weights():
    state = make_state(learning_rate=0.0)
    before = {i: w.copy() for i, w in state.weights.items()}
    x = np.random.default_rng(1).normal(size=(2, 2, 8, 8))
    _, grads = forward_backward(state, x, np.array([0, 1]))
    sgd_step(state, grads)
    for i, w in before.items():
        np.testing.assert_array_equal(state.weights[i], w)


def test_scalar_momentum_arithmetic():
    # one fully-connected weight: v = m*v + g ; w -= lr * v
    net = NetworkGraph(
        [LayerSpec("fully_connected", in_ch=1, out_ch=2, out_scale=1.0)],
        input_shape=(1, 1, 1))
    state = TrainState(net=net, weights={0: np.array([[2.0], [-1.0]])},
                       learning_rate=0.5, momentum=0.9)
    g = {0: np.array([[0.2], [-0.4]])}
    sgd_step(state, g)
    np.testing.assert_allclose(state.weights[0], [[2.0 - 0.1], [-1.0 + 0.2]])
    sgd_step(state, g)
    # second step velocity: 0.9*g + g = 1.9g
    np.testing.assert_allclose(state.weights[0],
                               [[1.9 - 0.5 * 0.38], [-0.8 + 0.5 * 0.76]])


def test_mismatched_gradient_set_rejected():
    state = make_state()
    with pytest.raises(ValidationError):
        sgd_step(state, {0: np.zeros_like(state.weights[0])})


def test_sgd_converges_on_separable_toy():
    rng = np.random.default_rng(5)
    n = 40
    x = np.concatenate([rng.normal(-2, 0.5, (n, 1, 2, 2)),
                        rng.normal(+2, 0.5, (n, 1, 2, 2))])
    y = np.array([0] * n + [1] * n)
    net = NetworkGraph(
        [LayerSpec("fully_connected", in_ch=4, out_ch=2, out_scale=1.0)],
        input_shape=(1, 2, 2))
    state = TrainState(net=net, weights=init_weights(net, seed=2),
                       learning_rate=0.1)
    for _ in range(50):
        loss, grads = forward_backward(state, x, y)
        sgd_step(state, grads)
    final, _ = forward_backward(state, x, y)
    assert final < np.log(2)


# -------------------------------------------------------------- fine_tune

def small_dataset(seed=0, n=48):
    rng = np.random.default_rng(seed)
    x = rng.normal(0, 1, (n, 2, 8, 8))
    y = rng.integers(0, 3, n)
    return Dataset(x, y)


def test_zero_epochs_is_identity():
    state = make_state(seed=4)
    before = {i: w.copy() for i, w in state.weights.items()}
    _, history = fine_tune(state, small_dataset(), epochs=0)
    assert history == []
    for i, w in before.items():
        np.testing.assert_array_equal(state.weights[i], w)


def test_frozen_hash_constant_across_training():
    net = all_kinds_net()
    layers = list(net.layers)
    layers[0] = LayerSpec("conv2d", in_ch=2, out_ch=4, kernel=3, pad=1,
                          out_scale=0.1, placement=ROM, trainable=False)
    net = NetworkGraph(layers, net.input_shape)
    state = TrainState(net=net, weights=init_weights(net, seed=6),
                       learning_rate=0.05)
    h0 = frozen_hash(state)
    fine_tune(state, small_dataset(1), epochs=3, batch_size=16)
    assert frozen_hash(state) == h0


def test_training_is_deterministic_per_seed():
    def run():
        state = make_state(seed=7, learning_rate=0.02, rng_seed=11)
        _, hist = fine_tune(state, small_dataset(2), epochs=3, batch_size=16)
        return state.weights, hist

    w1, h1 = run()
    w2, h2 = run()
    assert h1 == h2
    for i in w1:
        np.testing.assert_array_equal(w1[i], w2[i])


@pytest.mark.filterwarnings("ignore:overflow", "ignore:invalid value")
def test_divergence_aborts():
    state = make_state(seed=8, learning_rate=1e4)
    with pytest.raises(DivergenceError):
        fine_tune(state, small_dataset(3), epochs=10, batch_size=16)


def test_empty_dataset_rejected():
    with pytest.raises(ValidationError):
        fine_tune(make_state(), Dataset(np.zeros((0, 2, 8, 8)),
                                        np.zeros(0, dtype=np.int64)), 1)


def test_deploy_quantized_round_trip():
    state = make_state(seed=9)
    q = deploy_quantized(state)
    for i, qt_w in q.items():
        w = state.weights[i]
        tol = qt_w.scale / 2 + 1e-12
        assert np.abs(qt_w.to_float() - w).max() <= tol


def test_accuracy_counts_argmax_matches():
    net = NetworkGraph(
        [LayerSpec("fully_connected", in_ch=4, out_ch=2, out_scale=1.0)],
        input_shape=(1, 2, 2))
    w = {0: np.array([[1.0, 0, 0, 0], [-1.0, 0, 0, 0]])}
    x = np.zeros((2, 1, 2, 2))
    x[0, 0, 0, 0] = 1.0  # class 0 wins
    x[1, 0, 0, 0] = -1.0  # class 1 wins
    ds = Dataset(x, np.array([0, 1]))
    assert accuracy(net, w, ds) == 1.0
