"""Bit-exact digital reference for every layer type.

This is the golden path: integer convolution through int64 accumulators,
explicit requantization between layers, no floating point anywhere in the
data path. Hardware-model results are checked against these functions.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ValidationError
from .graph import CONV_KINDS, INPUT_EDGE, NetworkGraph, LayerSpec
from .quant import QuantTensor, qrange, requantize

# accumulator headroom: 8b x 8b products summed over kernel^2 * in_ch
# stay far below 2^63; int64 never overflows for supported geometries
ACC_DTYPE = np.int64


def im2col(x: np.ndarray, kernel: int, stride: int, pad: int):
    """Lower NCHW input to (N, C*k*k, positions) patch columns.

    Row ordering is c*k*k + ki*k + kj, matching the weight lowering used
    by the tiling code, so both sides agree on matrix layout.
    """
    n, c, h, w = x.shape
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=ACC_DTYPE)
    xp[:, :, pad:pad + h, pad:pad + w] = x
    win = sliding_window_view(xp, (kernel, kernel), axis=(2, 3))
    win = win[:, :, ::stride, ::stride, :, :]
    oh, ow = win.shape[2], win.shape[3]
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kernel * kernel, oh * ow)
    return np.ascontiguousarray(cols), oh, ow


def lower_weights(w: np.ndarray) -> np.ndarray:
    """Flatten (out, in, k, k) conv weights to (in*k*k, out) matrix form."""
    out_ch = w.shape[0]
    return np.asarray(w, dtype=ACC_DTYPE).reshape(out_ch, -1).T


def conv2d_ref(x: QuantTensor, w: QuantTensor, layer: LayerSpec) -> np.ndarray:
    """Exact integer convolution; returns the int64 accumulator (N,O,H',W')."""
    if x.data.ndim != 4:
        raise ValidationError(f"conv input must be NCHW, got shape {x.shape}")
    if w.data.ndim != 4:
        raise ValidationError(f"conv weights must be OIKK, got shape {w.shape}")
    n, c, h, wid = x.data.shape
    o, ci, kh, kw = w.data.shape
    if (ci, kh, kw) != (layer.in_ch, layer.kernel, layer.kernel) or o != layer.out_ch:
        raise ValidationError(
            f"weight shape {w.shape} does not match layer "
            f"({layer.out_ch},{layer.in_ch},{layer.kernel},{layer.kernel})")
    if c != layer.in_ch:
        raise ValidationError(f"input has {c} channels, layer expects {layer.in_ch}")
    if x.bits > layer.act_bits or w.bits > layer.weight_bits:
        raise ValidationError("operand bit-width exceeds the layer's declared precision")
    cols, oh, ow = im2col(x.data, layer.kernel, layer.stride, layer.pad)
    wm = lower_weights(w.data)  # (c*k*k, out)
    acc = np.einsum("ro,nrp->nop", wm, cols, dtype=ACC_DTYPE)
    return acc.reshape(n, o, oh, ow)


def fc_ref(x: QuantTensor, w: QuantTensor) -> np.ndarray:
    """Exact integer fully-connected accumulator (N, out)."""
    flat = x.data.reshape(x.data.shape[0], -1)
    if flat.shape[1] != w.data.shape[1]:
        raise ValidationError(
            f"fc expects {w.data.shape[1]} features, got {flat.shape[1]}")
    return flat @ w.data.T


def maxpool_ref(x: np.ndarray, kernel: int, stride: int, pad: int = 0) -> np.ndarray:
    if pad:
        sentinel = np.iinfo(ACC_DTYPE).min // 2  # below any representable code
        n, c, h, w = x.shape
        xp = np.full((n, c, h + 2 * pad, w + 2 * pad), sentinel, dtype=ACC_DTYPE)
        xp[:, :, pad:pad + h, pad:pad + w] = x
        x = xp
    win = sliding_window_view(x, (kernel, kernel), axis=(2, 3))
    return win[:, :, ::stride, ::stride].max(axis=(4, 5))


def avgpool_sum(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    win = sliding_window_view(np.asarray(x, dtype=ACC_DTYPE), (kernel, kernel),
                              axis=(2, 3))
    return win[:, :, ::stride, ::stride].sum(axis=(4, 5))


def forward_ref(net: NetworkGraph, x: QuantTensor, weights: dict) -> QuantTensor:
    """Run the full network in exact integer arithmetic.

    Parametric layers accumulate in int64 and requantize to the layer's
    (act_bits, out_scale); relu flips to unsigned; pooling and residual adds
    stay in the integer domain. Deterministic by construction.
    """
    net.validate()
    outputs = {}

    def fetch(edge):
        return x if edge == INPUT_EDGE else outputs[edge]

    for i, layer in enumerate(net.layers):
        ins = [fetch(e) for e in layer.inputs]
        if layer.parametric and i not in weights:
            raise ValidationError(f"missing weights for layer {i} ({layer.kind})")
        if layer.kind in CONV_KINDS:
            a, w = ins[0], weights[i]
            acc = conv2d_ref(a, w, layer)
            outputs[i] = requantize(acc, a.scale * w.scale, layer.out_scale,
                                    layer.act_bits, signed=True)
        elif layer.kind == "fully_connected":
            a, w = ins[0], weights[i]
            acc = fc_ref(a, w)
            outputs[i] = requantize(acc, a.scale * w.scale, layer.out_scale,
                                    layer.act_bits, signed=True)
        elif layer.kind == "relu":
            a = ins[0]
            vals = np.maximum(a.data, 0)
            outputs[i] = QuantTensor(vals, bits=layer.act_bits, signed=False,
                                     scale=a.scale)
        elif layer.kind == "maxpool":
            a = ins[0]
            vals = maxpool_ref(a.data, layer.kernel, layer.stride, layer.pad)
            outputs[i] = QuantTensor(vals, bits=a.bits, signed=a.signed,
                                     scale=a.scale)
        elif layer.kind == "avgpool":
            a = ins[0]
            acc = avgpool_sum(a.data, layer.kernel, layer.stride)
            k2 = layer.kernel * layer.kernel
            outputs[i] = requantize(acc, a.scale, a.scale * k2,
                                    layer.act_bits, signed=a.signed)
        elif layer.kind == "residual_add":
            a, b = ins
            ra = requantize(a.data, a.scale, layer.out_scale, layer.act_bits,
                            signed=True)
            rb = requantize(b.data, b.scale, layer.out_scale, layer.act_bits,
                            signed=True)
            lo, hi = qrange(layer.act_bits, True)
            vals = np.clip(ra.data + rb.data, lo, hi)
            outputs[i] = QuantTensor(vals, bits=layer.act_bits, signed=True,
                                     scale=layer.out_scale)
        else:  # pragma: no cover - kinds are validated upstream
            raise ValidationError(f"unsupported kind {layer.kind}")
    return outputs[len(net.layers) - 1]
