"""Minimal float training engine for the trainable subset of a network.

Training happens in float64 on the same graph the integer path executes;
quantization scales are ignored here and reapplied at deployment. Only
layers marked trainable receive gradients; frozen weights are byte-stable
across any number of steps (hashed to prove it). Plain SGD with momentum,
softmax cross-entropy loss.
"""

import hashlib
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DivergenceError, ValidationError
from .graph import CONV_KINDS, INPUT_EDGE, NetworkGraph
from .quant import QuantTensor, pick_scale, quantize_float

# ----------------------------------------------------------- float layer ops


def _im2col_f(x, kernel, stride, pad):
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    xp[:, :, pad:pad + h, pad:pad + w] = x
    win = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))
    win = win[:, :, ::stride, ::stride, :, :]
    oh, ow = win.shape[2], win.shape[3]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kernel * kernel, oh * ow)
    return np.ascontiguousarray(cols), oh, ow


def _col2im_f(cols, x_shape, kernel, stride, pad):
    n, c, h, w = x_shape
    oh = (h + 2 * pad - kernel) // stride + 1
    ow = (w + 2 * pad - kernel) // stride + 1
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    six = cols.reshape(n, c, kernel, kernel, oh, ow)
    for ki in range(kernel):
        for kj in range(kernel):
            xp[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride] += \
                six[:, :, ki, kj]
    return xp[:, :, pad:pad + h, pad:pad + w]


def conv_forward(x, w, stride, pad):
    cols, oh, ow = _im2col_f(x, w.shape[2], stride, pad)
    out = np.einsum("or,nrp->nop", w.reshape(w.shape[0], -1), cols)
    return out.reshape(x.shape[0], w.shape[0], oh, ow), cols


def conv_backward(dy, x_shape, w, cols, stride, pad):
    n, o = dy.shape[0], dy.shape[1]
    dyf = dy.reshape(n, o, -1)
    dw = np.einsum("nop,nrp->or", dyf, cols).reshape(w.shape)
    dcols = np.einsum("or,nop->nrp", w.reshape(o, -1), dyf)
    dx = _col2im_f(dcols, x_shape, w.shape[2], stride, pad)
    return dx, dw


def maxpool_forward(x, kernel, stride):
    win = sliding_window_view(x, (kernel, kernel), axis=(2, 3))
    win = win[:, :, ::stride, ::stride, :, :]
    n, c, oh, ow = win.shape[:4]
    flat = win.reshape(n, c, oh, ow, kernel * kernel)
    idx = flat.argmax(axis=-1)  # first max wins: deterministic tie-break
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool_backward(dy, x_shape, idx, kernel, stride):
    n, c, h, w = x_shape
    oh, ow = idx.shape[2], idx.shape[3]
    dx = np.zeros(x_shape, dtype=np.float64)
    ni, ci, ii, ji = np.indices((n, c, oh, ow))
    rows = ii * stride + idx // kernel
    cols = ji * stride + idx % kernel
    np.add.at(dx, (ni, ci, rows, cols), dy)
    return dx


def avgpool_forward(x, kernel, stride):
    win = sliding_window_view(x, (kernel, kernel), axis=(2, 3))
    return win[:, :, ::stride, ::stride, :, :].mean(axis=(4, 5))


def avgpool_backward(dy, x_shape, kernel, stride):
    n, c, h, w = x_shape
    oh, ow = dy.shape[2], dy.shape[3]
    dx = np.zeros(x_shape, dtype=np.float64)
    share = dy / (kernel * kernel)
    for ki in range(kernel):
        for kj in range(kernel):
            dx[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride] += share
    return dx


def softmax_cross_entropy(logits, labels):
    """Mean CE over the batch; returns (loss, dlogits)."""
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    logp = z - lse
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    probs = np.exp(logp)
    probs[np.arange(n), labels] -= 1.0
    return loss, probs / n


# ------------------------------------------------------------ forward passes


def float_forward(net: NetworkGraph, weights: dict, x: np.ndarray,
                  keep_cache: bool = False):
    """Float64 forward over the whole graph; optionally keeps backprop state."""
    outputs, cache = {}, {}

    def fetch(e):
        return x if e == INPUT_EDGE else outputs[e]

    for i, layer in enumerate(net.layers):
        ins = [fetch(e) for e in layer.inputs]
        if layer.kind in CONV_KINDS:
            out, cols = conv_forward(ins[0], weights[i], layer.stride, layer.pad)
            outputs[i] = out
            if keep_cache:
                cache[i] = (ins[0].shape, cols)
        elif layer.kind == "fully_connected":
            flat = ins[0].reshape(ins[0].shape[0], -1)
            outputs[i] = flat @ weights[i].T
            if keep_cache:
                cache[i] = (ins[0].shape, flat)
        elif layer.kind == "relu":
            outputs[i] = np.maximum(ins[0], 0.0)
            if keep_cache:
                cache[i] = ins[0] > 0  # subgradient at 0 defined as 0
        elif layer.kind == "maxpool":
            out, idx = maxpool_forward(ins[0], layer.kernel, layer.stride)
            outputs[i] = out
            if keep_cache:
                cache[i] = (ins[0].shape, idx)
        elif layer.kind == "avgpool":
            outputs[i] = avgpool_forward(ins[0], layer.kernel, layer.stride)
            if keep_cache:
                cache[i] = ins[0].shape
        elif layer.kind == "residual_add":
            outputs[i] = ins[0] + ins[1]
    return outputs, cache


# -------------------------------------------------------------- train state


@dataclass
class TrainState:
    """Float weights plus optimizer state over a placed network."""

    net: NetworkGraph
    weights: dict
    learning_rate: float = 0.05
    momentum: float = 0.9
    rng_seed: int = 0
    step: int = 0
    velocity: dict = field(default_factory=dict)

    def __post_init__(self):
        for i in self.net.parametric_indices():
            if i not in self.weights:
                raise ValidationError(f"missing weights for layer {i}")
            self.weights[i] = np.asarray(self.weights[i], dtype=np.float64)
        for i in self.trainable_indices():
            self.velocity.setdefault(i, np.zeros_like(self.weights[i]))

    def trainable_indices(self) -> list:
        return [i for i in self.net.parametric_indices()
                if self.net.layers[i].trainable]

    def frozen_indices(self) -> list:
        return [i for i in self.net.parametric_indices()
                if not self.net.layers[i].trainable]

    @classmethod
    def from_quantized(cls, net: NetworkGraph, qweights: dict, **kw):
        floats = {i: qw.to_float() if isinstance(qw, QuantTensor) else
                  np.asarray(qw, dtype=np.float64)
                  for i, qw in qweights.items()}
        return cls(net=net, weights=floats, **kw)


def init_weights(net: NetworkGraph, seed: int = 0) -> dict:
    """He-style random init for every parametric layer (float64)."""
    rng = np.random.default_rng(seed)
    out = {}
    for i in net.parametric_indices():
        layer = net.layers[i]
        shape = (layer.weight_shape(net.in_features(i))
                 if layer.kind == "fully_connected" else layer.weight_shape())
        fan_in = int(np.prod(shape[1:]))
        out[i] = rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)
    return out


def frozen_hash(state: TrainState) -> str:
    """SHA-256 over the bytes of every frozen layer's weights."""
    h = hashlib.sha256()
    for i in state.frozen_indices():
        h.update(np.ascontiguousarray(state.weights[i]).tobytes())
    return h.hexdigest()


# ------------------------------------------------------- backprop + training


def forward_backward(state: TrainState, x: np.ndarray, labels: np.ndarray):
    """Loss plus gradients for the trainable layers only."""
    net = state.net
    labels = np.asarray(labels)
    n_classes = net.layers[-1].out_ch
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= n_classes:
        raise ValidationError("labels outside the class range")
    outputs, cache = float_forward(net, state.weights, x, keep_cache=True)
    logits = outputs[len(net.layers) - 1]
    loss, dlogits = softmax_cross_entropy(logits, labels)
    if not np.isfinite(loss):
        raise DivergenceError(f"non-finite loss at step {state.step}: {loss}")

    douts = {i: None for i in range(len(net.layers))}
    douts[len(net.layers) - 1] = dlogits
    grads = {}
    trainable = set(state.trainable_indices())

    def push(edge, grad):
        if edge == INPUT_EDGE:
            return
        douts[edge] = grad if douts[edge] is None else douts[edge] + grad

    for i in reversed(range(len(net.layers))):
        dy = douts[i]
        if dy is None:
            continue
        layer = net.layers[i]
        if layer.kind in CONV_KINDS:
            x_shape, cols = cache[i]
            dx, dw = conv_backward(dy, x_shape, state.weights[i], cols,
                                   layer.stride, layer.pad)
            if i in trainable:
                grads[i] = dw
            push(layer.inputs[0], dx)
        elif layer.kind == "fully_connected":
            x_shape, flat = cache[i]
            if i in trainable:
                grads[i] = dy.T @ flat
            push(layer.inputs[0], (dy @ state.weights[i]).reshape(x_shape))
        elif layer.kind == "relu":
            push(layer.inputs[0], dy * cache[i])
        elif layer.kind == "maxpool":
            x_shape, idx = cache[i]
            push(layer.inputs[0],
                 maxpool_backward(dy, x_shape, idx, layer.kernel, layer.stride))
        elif layer.kind == "avgpool":
            push(layer.inputs[0],
                 avgpool_backward(dy, cache[i], layer.kernel, layer.stride))
        elif layer.kind == "residual_add":
            push(layer.inputs[0], dy)
            push(layer.inputs[1], dy)
    return loss, grads


def sgd_step(state: TrainState, grads: dict) -> TrainState:
    """In-place SGD with momentum over exactly the trainable set."""
    trainable = state.trainable_indices()
    if set(grads) != set(trainable):
        raise ValidationError(
            f"gradient keys {sorted(grads)} do not match trainable "
            f"layers {sorted(trainable)}")
    for i in sorted(trainable):
        v = state.velocity[i]
        v *= state.momentum
        v += grads[i]
        state.weights[i] -= state.learning_rate * v
    state.step += 1
    return state


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.shape[0] != self.y.shape[0]:
            raise ValidationError("sample/label count mismatch")

    def __len__(self):
        return self.x.shape[0]


def accuracy(net: NetworkGraph, weights: dict, ds: Dataset) -> float:
    outputs, _ = float_forward(net, weights, ds.x)
    pred = outputs[len(net.layers) - 1].argmax(axis=1)
    return float((pred == ds.y).mean())


def fine_tune(state: TrainState, dataset: Dataset, epochs: int,
              batch_size: int = 32, eval_ds: Dataset = None):
    """Epoch loop over minibatches; returns (state, history).

    history rows are (epoch, mean_loss, accuracy). Frozen weights are hashed
    before and after and must match; three consecutive epochs with loss
    above 10x the initial loss abort with DivergenceError.
    """
    if len(dataset) == 0:
        raise ValidationError("dataset is empty")
    pre_hash = frozen_hash(state)
    rng = np.random.default_rng(state.rng_seed)
    history = []
    initial_loss = None
    bad_epochs = 0
    for epoch in range(epochs):
        order = rng.permutation(len(dataset))
        losses = []
        for b0 in range(0, len(dataset), batch_size):
            idx = order[b0:b0 + batch_size]
            loss, grads = forward_backward(state, dataset.x[idx], dataset.y[idx])
            sgd_step(state, grads)
            losses.append(loss)
        mean_loss = float(np.mean(losses))
        if initial_loss is None:
            initial_loss = mean_loss
        bad_epochs = bad_epochs + 1 if mean_loss > 10 * initial_loss else 0
        if bad_epochs >= 3:
            raise DivergenceError(
                f"loss {mean_loss:.3g} stayed above 10x initial "
                f"({initial_loss:.3g}) for 3 epochs")
        acc = accuracy(state.net, state.weights,
                       eval_ds if eval_ds is not None else dataset)
        history.append((epoch, mean_loss, acc))
    if frozen_hash(state) != pre_hash:
        raise RuntimeError("frozen weights changed during fine-tuning")
    return state, history


def deploy_quantized(state: TrainState) -> dict:
    """Quantize trained float weights back to per-layer QuantTensors."""
    out = {}
    for i in state.net.parametric_indices():
        layer = state.net.layers[i]
        w = state.weights[i]
        scale = pick_scale(w, layer.weight_bits, signed=True)
        out[i] = quantize_float(w, layer.weight_bits, signed=True, scale=scale)
    return out
