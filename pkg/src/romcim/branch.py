"""Graph transforms that give fixed read-only weights some flexibility.

Three rewrites over a NetworkGraph:

* build_rebranch - adds a parallel residual branch around a contiguous conv
  group: a fixed pointwise channel-compression layer, a trainable conv group
  mirroring the trunk's kernels at reduced channel width, and a fixed
  pointwise decompression layer, summed with the trunk output. The trainable
  part starts at zero, so the rewrite is an exact no-op until fine-tuning.
* atl_split - freezes the first k parametric layers into ROM and leaves the
  rest trainable in SRAM.
* spwd_decorate - adds a low-bit trainable conv of identical geometry in
  parallel with one layer (zero-initialized).

Channel divisors inside a multi-layer branch alternate between the
compression and decompression ratios so every branch layer is exactly
(compress_ratio * decompress_ratio) times smaller than its trunk twin.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import ValidationError
from .graph import (CONV_KINDS, INPUT_EDGE, LayerSpec, NetworkGraph, ROM,
                    SRAM, insert_layers, repoint_consumers)
from .quant import QuantTensor

FIXED_WEIGHT_REL_STD = 0.25  # seeded projection code std, relative to full scale


@dataclass(frozen=True)
class ReBranchConfig:
    """Branch shape: channel compression/decompression ratios and the trunk.

    trunk_group is an inclusive (first, last) index range of contiguous conv
    layers. The branch's trainable parameter count is exactly the trunk
    group's divided by compress_ratio * decompress_ratio.
    """

    compress_ratio: int = 4
    decompress_ratio: int = 4
    trunk_group: tuple = (0, 0)

    def __post_init__(self):
        if self.compress_ratio < 1 or self.decompress_ratio < 1:
            raise ValidationError("ratios must be >= 1")
        first, last = self.trunk_group
        if first > last or first < 0:
            raise ValidationError(f"bad trunk group range {self.trunk_group}")


@dataclass(frozen=True)
class BranchGroup:
    """Bookkeeping for an inserted branch: layer indices and parameter law."""

    compress_idx: int
    res_indices: tuple
    decompress_idx: int
    add_idx: int
    trunk_indices: tuple
    compress_ratio: int
    decompress_ratio: int
    trunk_params: int
    res_params: int

    @property
    def compression_factor(self) -> int:
        return self.compress_ratio * self.decompress_ratio


def _trunk_channels(graph: NetworkGraph, first: int, last: int) -> list:
    """Channel boundary list C_0..C_n of a contiguous conv chain."""
    if last >= len(graph.layers):
        raise ValidationError(f"trunk group end {last} out of range")
    chans = [graph.layers[first].in_ch]
    for i in range(first, last + 1):
        layer = graph.layers[i]
        if layer.kind not in CONV_KINDS:
            raise ValidationError(
                f"trunk group spans non-conv layer {i} ({layer.kind})")
        if i > first and layer.inputs != (i - 1,):
            raise ValidationError("trunk group must be a linear chain")
        if layer.in_ch != chans[-1]:
            raise ValidationError(
                f"channel chain breaks at layer {i}: {layer.in_ch} != {chans[-1]}")
        chans.append(layer.out_ch)
    return chans


def _branch_divisors(n_layers: int, compress_ratio: int, decompress_ratio: int):
    """Divisor per channel boundary; adjacent products are always D*U."""
    return [compress_ratio if i % 2 == 0 else decompress_ratio
            for i in range(n_layers + 1)]


def _fixed_pointwise(rng, out_ch: int, in_ch: int, weight_bits: int) -> QuantTensor:
    """Seeded frozen projection, scaled to roughly preserve variance."""
    hi = (1 << (weight_bits - 1)) - 1
    int_std = max(1.0, hi * FIXED_WEIGHT_REL_STD)
    codes = np.clip(np.rint(rng.normal(0.0, int_std, (out_ch, in_ch, 1, 1))),
                    -hi, hi)
    scale = 1.0 / (np.sqrt(in_ch) * int_std)
    return QuantTensor(codes.astype(np.int64), bits=weight_bits, signed=True,
                       scale=float(scale))


def build_rebranch(graph: NetworkGraph, weights: dict, cfg: ReBranchConfig,
                   seed: int = 0, join_after_activation: bool = False):
    """Insert a residual branch in parallel with a trunk conv group.

    Returns (graph', weights', BranchGroup). The trainable branch convs are
    zero-initialized, so forward results are unchanged at build time; the
    pointwise projections are seeded, fixed, and placed in ROM.

    The branch joins right after the trunk group's last conv by default;
    join_after_activation moves the join past that conv's activation layer.
    """
    first, last = cfg.trunk_group
    chans = _trunk_channels(graph, first, last)
    n = last - first + 1
    divisors = _branch_divisors(n, cfg.compress_ratio, cfg.decompress_ratio)
    for c, d in zip(chans, divisors):
        if c % d != 0:
            raise ValidationError(
                f"channel count {c} not divisible by branch ratio {d}")

    trunk_specs = [graph.layers[i] for i in range(first, last + 1)]
    trunk_last = graph.layers[last]
    join_src = last
    if join_after_activation:
        acts = [j for j in graph.consumers(last)
                if graph.layers[j].kind == "relu"]
        if len(acts) != 1:
            raise ValidationError(
                "join_after_activation needs exactly one relu consumer of "
                "the trunk group")
        join_src = acts[0]
    group_input = graph.layers[first].inputs[0]
    in_scale = (1.0 if group_input == INPUT_EDGE
                else graph.layers[group_input].out_scale)

    position = join_src + 1
    rng = np.random.default_rng(seed)
    new_specs = []
    new_weights = {}

    compress = LayerSpec("pointwise", in_ch=chans[0],
                         out_ch=chans[0] // divisors[0],
                         kernel=1, pad=0, weight_bits=trunk_specs[0].weight_bits,
                         act_bits=trunk_specs[0].act_bits, placement=ROM,
                         trainable=False, out_scale=in_scale,
                         inputs=(group_input,), name="branch_compress")
    new_specs.append(compress)
    new_weights[0] = _fixed_pointwise(rng, compress.out_ch, compress.in_ch,
                                      compress.weight_bits)

    res_indices = []
    for j, spec in enumerate(trunk_specs):
        cin = chans[j] // divisors[j]
        cout = chans[j + 1] // divisors[j + 1]
        res = LayerSpec(spec.kind, in_ch=cin, out_ch=cout, kernel=spec.kernel,
                        stride=spec.stride, pad=spec.pad,
                        weight_bits=spec.weight_bits, act_bits=spec.act_bits,
                        placement=SRAM, trainable=True, out_scale=in_scale,
                        inputs=(position + j,), name=f"branch_conv{j}")
        new_specs.append(res)
        res_scale = 1.0 / (np.sqrt(cin) * spec.kernel * 127.0)
        new_weights[1 + j] = QuantTensor(
            np.zeros((cout, cin, spec.kernel, spec.kernel), dtype=np.int64),
            bits=spec.weight_bits, signed=True, scale=res_scale)
        res_indices.append(position + 1 + j)

    decompress = LayerSpec("pointwise", in_ch=chans[-1] // divisors[-1],
                           out_ch=chans[-1], kernel=1, pad=0,
                           weight_bits=trunk_last.weight_bits,
                           act_bits=trunk_last.act_bits, placement=ROM,
                           trainable=False, out_scale=trunk_last.out_scale,
                           inputs=(position + n,), name="branch_decompress")
    new_specs.append(decompress)
    new_weights[1 + n] = _fixed_pointwise(rng, decompress.out_ch,
                                          decompress.in_ch,
                                          decompress.weight_bits)

    decompress_idx = position + n + 1
    add_idx = position + n + 2
    add = LayerSpec("residual_add", in_ch=chans[-1], out_ch=chans[-1],
                    act_bits=trunk_last.act_bits,
                    out_scale=trunk_last.out_scale,
                    inputs=(join_src, decompress_idx), name="branch_join")
    new_specs.append(add)

    g2, w2, _ = insert_layers(graph, weights, position, new_specs, new_weights)
    g2 = repoint_consumers(g2, join_src, add_idx, skip={add_idx})
    g2.validate()

    trunk_params = sum(s.param_count() for s in trunk_specs)
    res_params = sum(g2.layers[i].param_count() for i in res_indices)
    group = BranchGroup(
        compress_idx=position, res_indices=tuple(res_indices),
        decompress_idx=decompress_idx, add_idx=add_idx,
        trunk_indices=tuple(range(first, last + 1)),
        compress_ratio=cfg.compress_ratio,
        decompress_ratio=cfg.decompress_ratio,
        trunk_params=trunk_params, res_params=res_params)
    assert group.res_params * group.compression_factor == group.trunk_params
    return g2, w2, group


def _as_matrix(w: np.ndarray) -> np.ndarray:
    """Pointwise weights as (out, in), accepting conv layout (out, in, 1, 1)."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim == 4:
        if w.shape[2] != 1 or w.shape[3] != 1:
            raise ValidationError("projection weights must be pointwise")
        return w[:, :, 0, 0]
    if w.ndim != 2:
        raise ValidationError(f"expected 2-D or 4-D weights, got {w.ndim}-D")
    return w


def equivalent_conv(compress_w, res_w, decompress_w) -> np.ndarray:
    """Collapse compress -> conv -> decompress into one conv weight tensor.

    W_eq[o, i, h, w] = sum_{a, b} Dec[o, a] * Res[a, b, h, w] * Comp[b, i].
    Only single-layer branch conv groups collapse; the linear pipeline and
    the merged conv agree up to float rounding.
    """
    comp = _as_matrix(compress_w)
    dec = _as_matrix(decompress_w)
    res = np.asarray(res_w, dtype=np.float64)
    if res.ndim != 4:
        raise ValidationError("res_w must be a single conv weight tensor "
                              "(multi-layer groups are rejected)")
    return np.einsum("oa,abhw,bi->oihw", dec, res, comp)


def atl_split(graph: NetworkGraph, k: int) -> NetworkGraph:
    """Freeze the first k parametric layers into ROM; rest trainable SRAM."""
    param_idx = graph.parametric_indices()
    if not (0 <= k <= len(param_idx)):
        raise ValidationError(
            f"k must be in 0..{len(param_idx)}, got {k}")
    frozen = set(param_idx[:k])
    out = []
    for i, spec in enumerate(graph.layers):
        if spec.parametric:
            if i in frozen:
                out.append(replace(spec, placement=ROM, trainable=False))
            else:
                out.append(replace(spec, placement=SRAM, trainable=True))
        else:
            out.append(spec)
    return NetworkGraph(out, graph.input_shape)


def spwd_decorate(graph: NetworkGraph, weights: dict, layer_idx: int,
                  sram_bits: int = 2):
    """Add a parallel low-bit trainable conv decorating one conv layer.

    The decoration has identical geometry at sram_bits weight precision and
    starts at zero. Returns (graph', weights', info) where info reports the
    area-saving bound rom_bits / sram_bits.
    """
    if not (0 <= layer_idx < len(graph.layers)):
        raise ValidationError(f"layer index {layer_idx} out of range")
    target = graph.layers[layer_idx]
    if target.kind not in CONV_KINDS:
        raise ValidationError(f"layer {layer_idx} is {target.kind}, not conv")
    if sram_bits >= target.weight_bits:
        raise ValidationError(
            f"decoration bits {sram_bits} must be below the decorated "
            f"layer's {target.weight_bits}")

    position = layer_idx + 1
    deco = replace(target, weight_bits=sram_bits, placement=SRAM,
                   trainable=True, inputs=target.inputs,
                   name=f"decoration{layer_idx}")
    add = LayerSpec("residual_add", in_ch=target.out_ch, out_ch=target.out_ch,
                    act_bits=target.act_bits, out_scale=target.out_scale,
                    inputs=(layer_idx, position), name=f"decoration_join{layer_idx}")
    deco_w = QuantTensor(np.zeros(target.weight_shape(), dtype=np.int64),
                         bits=sram_bits, signed=True,
                         scale=1.0 / (target.kernel * np.sqrt(target.in_ch)))
    g2, w2, _ = insert_layers(graph, weights, position, [deco, add],
                              {0: deco_w})
    add_idx = position + 1
    g2 = repoint_consumers(g2, layer_idx, add_idx, skip={add_idx, position})
    g2.validate()
    info = {
        "decoration_idx": position,
        "add_idx": add_idx,
        "area_saving_bound": target.weight_bits / sram_bits,
        "decoration_params": deco.param_count(),
    }
    return g2, w2, info


def memory_report(graph: NetworkGraph, rom_cell_area_um2: float,
                  sram_cell_area_um2: float) -> dict:
    """Bit, area and parameter totals split by ROM/SRAM placement."""
    shapes = graph.output_shapes()
    rom_bits = sram_bits = rom_params = sram_params = 0
    for i, layer in enumerate(graph.layers):
        if not layer.parametric:
            continue
        if layer.kind == "fully_connected":
            edge = layer.inputs[0]
            shape = graph.input_shape if edge == INPUT_EDGE else shapes[edge]
            params = layer.param_count(int(np.prod(shape)))
        else:
            params = layer.param_count()
        bits = params * layer.weight_bits
        if layer.placement == ROM:
            rom_bits += bits
            rom_params += params
        else:
            sram_bits += bits
            sram_params += params
    total_params = rom_params + sram_params
    return {
        "rom_bits": rom_bits,
        "sram_bits": sram_bits,
        "rom_area_um2": rom_bits * rom_cell_area_um2,
        "sram_area_um2": sram_bits * sram_cell_area_um2,
        "sram_fraction": (sram_params / total_params) if total_params else 0.0,
        "rom_params": rom_params,
        "sram_params": sram_params,
        "total_params": total_params,
    }
