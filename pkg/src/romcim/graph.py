"""Network description: layer specs, wiring, shape inference.

A network is an ordered list of layers; layer i may only consume outputs
of earlier layers (or the network input, edge index -1), so list order is
a valid execution order. Residual adds take exactly two inputs.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import ValidationError

CONV_KINDS = ("conv2d", "pointwise")
PARAMETRIC_KINDS = CONV_KINDS + ("fully_connected",)
POOL_KINDS = ("maxpool", "avgpool")
ALL_KINDS = PARAMETRIC_KINDS + POOL_KINDS + ("relu", "residual_add")

ROM = "ROM"
SRAM = "SRAM"
INPUT_EDGE = -1


@dataclass(frozen=True)
class LayerSpec:
    """One layer: kind, channel/spatial geometry, precision, placement.

    inputs holds edge references: indices of earlier layers, or -1 for the
    network input. None means "previous layer" and is resolved by the graph.
    out_scale is the quantization scale of this layer's output in the
    integer inference path.
    """

    kind: str
    in_ch: int = 0
    out_ch: int = 0
    kernel: int = 1
    stride: int = 1
    pad: int = 0
    weight_bits: int = 8
    act_bits: int = 8
    placement: str = SRAM
    trainable: bool = True
    out_scale: float = 1.0
    inputs: tuple = None
    name: str = ""

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise ValidationError(f"unknown layer kind {self.kind!r}")
        if self.placement not in (ROM, SRAM):
            raise ValidationError(f"placement must be ROM or SRAM, got {self.placement!r}")
        if self.placement == ROM and self.trainable:
            raise ValidationError("ROM-resident layers cannot be trainable")
        if self.kind == "pointwise" and (self.kernel != 1 or self.pad != 0):
            raise ValidationError("pointwise layers require kernel=1, pad=0")
        if self.inputs is not None:
            object.__setattr__(self, "inputs", tuple(int(i) for i in self.inputs))

    @property
    def parametric(self) -> bool:
        return self.kind in PARAMETRIC_KINDS

    def param_count(self, in_features: int = None) -> int:
        if self.kind in CONV_KINDS:
            return self.kernel * self.kernel * self.in_ch * self.out_ch
        if self.kind == "fully_connected":
            feats = self.in_ch if in_features is None else in_features
            return feats * self.out_ch
        return 0

    def weight_shape(self, in_features: int = None) -> tuple:
        if self.kind in CONV_KINDS:
            return (self.out_ch, self.in_ch, self.kernel, self.kernel)
        if self.kind == "fully_connected":
            feats = self.in_ch if in_features is None else in_features
            return (self.out_ch, feats)
        return ()


def conv_out_hw(h: int, w: int, kernel: int, stride: int, pad: int) -> tuple:
    oh = (h + 2 * pad - kernel) // stride + 1
    ow = (w + 2 * pad - kernel) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ValidationError(f"window {kernel}x{kernel}/{stride} collapses {h}x{w}")
    return oh, ow


@dataclass
class NetworkGraph:
    """Ordered layer list plus the (C, H, W) shape of the network input."""

    layers: list
    input_shape: tuple

    def __post_init__(self):
        self.input_shape = tuple(int(d) for d in self.input_shape)
        resolved = []
        for i, spec in enumerate(self.layers):
            if spec.inputs is None:
                spec = replace(spec, inputs=(i - 1,))
            resolved.append(spec)
        self.layers = resolved

    def __len__(self):
        return len(self.layers)

    def consumers(self, idx: int) -> list:
        return [j for j, l in enumerate(self.layers) if idx in l.inputs]

    def parametric_indices(self) -> list:
        return [i for i, l in enumerate(self.layers) if l.parametric]

    def output_shapes(self) -> list:
        """Per-layer output shapes (C, H, W); fully-connected yields (out,)."""
        shapes = []

        def shape_of(edge):
            return self.input_shape if edge == INPUT_EDGE else shapes[edge]

        for i, layer in enumerate(self.layers):
            for e in layer.inputs:
                if e != INPUT_EDGE and not (0 <= e < i):
                    raise ValidationError(
                        f"layer {i} ({layer.kind}) has a forward or invalid edge {e}")
            ins = [shape_of(e) for e in layer.inputs]
            if layer.kind in CONV_KINDS:
                c, h, w = ins[0]
                if c != layer.in_ch:
                    raise ValidationError(
                        f"layer {i}: expects {layer.in_ch} channels, gets {c}")
                oh, ow = conv_out_hw(h, w, layer.kernel, layer.stride, layer.pad)
                shapes.append((layer.out_ch, oh, ow))
            elif layer.kind in POOL_KINDS:
                c, h, w = ins[0]
                oh, ow = conv_out_hw(h, w, layer.kernel, layer.stride, layer.pad)
                shapes.append((c, oh, ow))
            elif layer.kind == "relu":
                shapes.append(ins[0])
            elif layer.kind == "residual_add":
                if len(layer.inputs) != 2:
                    raise ValidationError(f"layer {i}: residual_add needs 2 inputs")
                if ins[0] != ins[1]:
                    raise ValidationError(
                        f"layer {i}: residual_add inputs differ, {ins[0]} vs {ins[1]}")
                shapes.append(ins[0])
            elif layer.kind == "fully_connected":
                feats = int(np.prod(ins[0]))
                want = layer.in_ch if layer.in_ch else feats
                if feats != want:
                    raise ValidationError(
                        f"layer {i}: fully_connected expects {want} features, gets {feats}")
                shapes.append((layer.out_ch,))
        return shapes

    def validate(self):
        self.output_shapes()
        return self

    def in_features(self, idx: int) -> int:
        """Flattened input feature count of a layer (for fc weight shapes)."""
        shapes = self.output_shapes()
        edge = self.layers[idx].inputs[0]
        shape = self.input_shape if edge == INPUT_EDGE else shapes[edge]
        return int(np.prod(shape))

    def total_params(self) -> int:
        shapes = self.output_shapes()
        total = 0
        for i, layer in enumerate(self.layers):
            if layer.kind == "fully_connected":
                edge = layer.inputs[0]
                shape = self.input_shape if edge == INPUT_EDGE else shapes[edge]
                total += layer.param_count(int(np.prod(shape)))
            else:
                total += layer.param_count()
        return total


def insert_layers(graph: NetworkGraph, weights: dict, position: int,
                  new_specs: list, new_weights: dict = None):
    """Insert layers at a list position, remapping all edges and weight keys.

    new_specs edges use *old* indices (or -1); edges pointing at or past the
    insertion point are assumed intentional and left untouched for the new
    layers. new_weights is keyed by offset within new_specs.

    Returns (graph', weights', index_map) where index_map maps old layer
    indices to new ones.
    """
    n = len(new_specs)
    index_map = {i: (i if i < position else i + n) for i in range(len(graph.layers))}
    index_map[INPUT_EDGE] = INPUT_EDGE

    def remap_edge(e):
        return index_map[e]

    out = []
    for i, spec in enumerate(graph.layers):
        if i == position:
            out.extend(new_specs)
        out.append(replace(spec, inputs=tuple(remap_edge(e) for e in spec.inputs)))
    if position == len(graph.layers):
        out.extend(new_specs)

    new_w = {}
    if weights is not None:
        for k, v in weights.items():
            new_w[index_map[k]] = v
    if new_weights:
        for off, v in new_weights.items():
            new_w[position + off] = v
    g = NetworkGraph(out, graph.input_shape)
    return g, new_w, index_map


def repoint_consumers(graph: NetworkGraph, old_src: int, new_src: int,
                      skip: set = ()) -> NetworkGraph:
    """Redirect every consumer edge of old_src to new_src (except skip)."""
    out = []
    for i, spec in enumerate(graph.layers):
        if i not in skip and old_src in spec.inputs:
            spec = replace(spec, inputs=tuple(
                new_src if e == old_src else e for e in spec.inputs))
        out.append(spec)
    return NetworkGraph(out, graph.input_shape)
