"""Weight tiling and subarray mapping.

Conv weights are lowered to matrix form (rows = kernel^2 * in_ch following
the im2col patch order, columns = output channels) and cut into tiles that
fit one subarray. Tiles are placed as column strips: each occupies a run of
physical columns over rows [0, tile.rows). Packing is greedy largest-first
with cross-layer co-location whenever column space remains; a naive
one-layer-per-subarray packer serves as the latency baseline.

Declared timing model (plan-level, data-independent):
* an activation covers all col-tiles of one (layer, row-tile) resident in
  one subarray; per input position it costs
  row_groups * chunks * (2^chunk_bits - 1) pulse slots, each pulse
  converting ceil(active_cols / adc_count) ADC slots;
* inference streams positions through the layer pipeline, so plan latency =
  pipeline fill (longest graph path of per-position cycles) plus the steady
  term: the busiest subarray's total work, sum over its resident activation
  groups of positions * cycles-per-position. Subarrays work in parallel;
  everything resident on one subarray time-shares its ADCs.

The greedy packer co-locates tiles only while a subarray's accumulated work
stays at or below the workload's largest single-tile work, so packing never
raises the bottleneck: greedy plans are never slower than the naive
one-layer-per-subarray baseline.

ADC utilization counts useful conversions (columns carrying the active
tiles' weights) against all conversions fired (slots * adc_count).
"""

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, GeometryError, ValidationError
from .graph import CONV_KINDS, NetworkGraph
from .macro import MacroConfig, program

WORST_CASE = "worst"  # plan-level pulse model: every chunk at full amplitude


@dataclass(frozen=True)
class Tile:
    """One rectangle of a layer's lowered weight matrix."""

    layer_idx: int
    row_tile: int
    col_tile: int
    row_start: int
    rows: int
    col_start: int
    logical_cols: int
    weight_bits: int = 8

    @property
    def phys_cols(self) -> int:
        return self.logical_cols * self.weight_bits

    @property
    def cells(self) -> int:
        return self.rows * self.phys_cols


@dataclass(frozen=True)
class Assignment:
    tile: Tile
    chip: int
    macro: int
    row_off: int
    col_off: int


@dataclass(frozen=True)
class MacroInventory:
    chips: int = 1
    subarrays_per_chip: int = 64

    @property
    def total(self) -> int:
        return self.chips * self.subarrays_per_chip

    def chip_of(self, macro: int) -> int:
        return macro // self.subarrays_per_chip


def lowered_geometry(layer, in_features: int = None) -> tuple:
    """(rows, logical_cols) of a layer's lowered weight matrix."""
    if layer.kind in CONV_KINDS:
        return layer.kernel * layer.kernel * layer.in_ch, layer.out_ch
    if layer.kind == "fully_connected":
        feats = layer.in_ch if in_features is None else in_features
        return feats, layer.out_ch
    raise ValidationError(f"layer kind {layer.kind} has no weights to map")


def tile_layer(layer, macro: MacroConfig, layer_idx: int = 0,
               in_features: int = None) -> list:
    """Cut a layer's lowered matrix into subarray-sized tiles."""
    rows, cols = lowered_geometry(layer, in_features)
    max_logical = macro.cols // layer.weight_bits
    tiles = []
    for rt, r0 in enumerate(range(0, rows, macro.rows)):
        r = min(macro.rows, rows - r0)
        for ct, c0 in enumerate(range(0, cols, max_logical)):
            c = min(max_logical, cols - c0)
            tiles.append(Tile(layer_idx=layer_idx, row_tile=rt, col_tile=ct,
                              row_start=r0, rows=r, col_start=c0,
                              logical_cols=c, weight_bits=layer.weight_bits))
    return tiles


def tile_data(tiles: list, matrix: np.ndarray) -> dict:
    """Slice each tile's submatrix out of the lowered weight matrix."""
    out = {}
    for t in tiles:
        out[t] = matrix[t.row_start:t.row_start + t.rows,
                        t.col_start:t.col_start + t.logical_cols]
    return out


def reassemble(tiles_with_data: dict, rows: int, cols: int) -> np.ndarray:
    """Inverse of tile_data; raises if coverage is not exact."""
    out = np.full((rows, cols), np.iinfo(np.int64).min, dtype=np.int64)
    covered = 0
    for t, sub in tiles_with_data.items():
        out[t.row_start:t.row_start + t.rows,
            t.col_start:t.col_start + t.logical_cols] = sub
        covered += t.rows * t.logical_cols
    if covered != rows * cols or (out == np.iinfo(np.int64).min).any():
        raise ValidationError("tiles do not cover the matrix exactly once")
    return out


@dataclass
class MappingPlan:
    assignments: list
    macro: MacroConfig
    inventory: MacroInventory

    def by_layer(self) -> dict:
        out = defaultdict(list)
        for a in self.assignments:
            out[a.tile.layer_idx].append(a)
        return dict(out)

    def macros_used(self) -> list:
        return sorted({a.macro for a in self.assignments})

    def occupancy(self) -> dict:
        """Fraction of cells carrying weight bits, per used subarray."""
        cells = defaultdict(int)
        for a in self.assignments:
            cells[a.macro] += a.tile.cells
        area = self.macro.rows * self.macro.cols
        return {m: c / area for m, c in sorted(cells.items())}

    def validate(self, net: NetworkGraph = None):
        """No overlapping rectangles; optionally full coverage per layer."""
        by_macro = defaultdict(list)
        for a in self.assignments:
            if a.row_off + a.tile.rows > self.macro.rows:
                raise GeometryError("tile exceeds subarray rows")
            if a.col_off + a.tile.phys_cols > self.macro.cols:
                raise GeometryError("tile exceeds subarray columns")
            by_macro[a.macro].append(a)
        for macro, assigns in by_macro.items():
            spans = sorted((a.col_off, a.col_off + a.tile.phys_cols)
                           for a in assigns)
            for (s0, e0), (s1, e1) in zip(spans, spans[1:]):
                if s1 < e0:
                    raise GeometryError(f"overlapping tiles in subarray {macro}")
        if net is not None:
            shapes = net.output_shapes()
            per_layer = self.by_layer()
            for i, layer in enumerate(net.layers):
                if not layer.parametric:
                    continue
                feats = net.in_features(i) if layer.kind == "fully_connected" else None
                rows, cols = lowered_geometry(layer, feats)
                got = sum(a.tile.rows * a.tile.logical_cols
                          for a in per_layer.get(i, []))
                if got != rows * cols:
                    raise ValidationError(
                        f"layer {i} coverage {got} != {rows * cols}")
        return self


def tile_work(tile: Tile, macro: MacroConfig, positions: int = 1) -> int:
    """Plan-level cycle cost of one tile: its activation-group work alone."""
    row_groups = -(-tile.rows // macro.rows_per_step)
    slots = -(-tile.phys_cols // macro.adc_count)
    return positions * row_groups * _pulse_slots(macro) * slots


class _StripPacker:
    """Column-strip allocation with per-subarray work accounting.

    Keeps an open list per pool so packing stays near-linear; subarrays
    with less than one weight-slice of free space are retired.
    """

    def __init__(self, inventory: MacroInventory, cols: int):
        self.inventory = inventory
        self.cols = cols
        self.cursor = {}  # macro id -> next free column
        self.work = defaultdict(int)  # macro id -> accumulated cycle work
        self.open = defaultdict(list)  # pool -> open macro ids
        self.next_fresh = 0

    def place(self, tile: Tile, pool=None, work=0, work_cap=None) -> Assignment:
        open_list = self.open[pool]
        for k, m in enumerate(open_list):
            used = self.cursor[m]
            if used + tile.phys_cols > self.cols:
                continue
            if work_cap is not None and self.work[m] + work > work_cap:
                continue
            return self._commit(tile, m, used, work, open_list, k)
        if self.next_fresh >= self.inventory.total:
            return None
        m = self.next_fresh
        self.next_fresh += 1
        self.cursor[m] = 0
        open_list.append(m)
        return self._commit(tile, m, 0, work, open_list, len(open_list) - 1)

    def _commit(self, tile, m, used, work, open_list, k):
        self.cursor[m] = used + tile.phys_cols
        self.work[m] += work
        if self.cols - self.cursor[m] < tile.weight_bits:
            open_list.pop(k)
        return Assignment(tile=tile, chip=self.inventory.chip_of(m),
                          macro=m, row_off=0, col_off=used)


def _sorted_tiles(tiles: list) -> list:
    return sorted(tiles, key=lambda t: (-t.cells, t.layer_idx, t.row_tile,
                                        t.col_tile))


def pack_greedy(tiles: list, inventory: MacroInventory,
                macro: MacroConfig = None, positions: dict = None,
                exclusive_layers: frozenset = frozenset()) -> MappingPlan:
    """Largest-tile-first greedy with work-capped cross-layer co-location.

    Tiles co-locate in a subarray only while its accumulated work stays at
    or below the largest single-tile work, so sharing never raises the
    throughput bottleneck. positions maps layer index to its output position
    count (defaults to 1, pure area packing). Layers in exclusive_layers get
    subarrays of their own.
    """
    macro = macro or MacroConfig()
    positions = positions or {}
    packer = _StripPacker(inventory, macro.cols)
    ordered = _sorted_tiles(tiles)
    works = {t: tile_work(t, macro, positions.get(t.layer_idx, 1))
             for t in ordered}
    cap = max(works.values(), default=0)
    assignments = []
    unplaced = []
    for t in ordered:
        pool = "x" if t.layer_idx in exclusive_layers else None
        a = packer.place(t, pool=pool, work=works[t], work_cap=cap)
        if a is None:  # inventory tight: fall back to any column space
            a = packer.place(t, pool=pool, work=works[t], work_cap=None)
        if a is None:
            unplaced.append(t)
        else:
            assignments.append(a)
    if unplaced:
        deficit = sum(t.cells for t in unplaced)
        raise CapacityError(
            f"{len(unplaced)} tiles do not fit {inventory.total} subarrays",
            deficit_bits=deficit)
    return MappingPlan(assignments=assignments, macro=macro, inventory=inventory)


def pack_naive(tiles: list, inventory: MacroInventory,
               macro: MacroConfig = None, positions: dict = None) -> MappingPlan:
    """One layer per subarray set: no cross-layer sharing, first-fit within."""
    macro = macro or MacroConfig()
    packer = _StripPacker(inventory, macro.cols)
    assignments = []
    by_layer = defaultdict(list)
    for t in tiles:
        by_layer[t.layer_idx].append(t)
    for layer_idx in sorted(by_layer):
        for t in _sorted_tiles(by_layer[layer_idx]):
            a = packer.place(t, pool=layer_idx)
            if a is None:
                raise CapacityError(
                    f"layer {layer_idx} does not fit the inventory",
                    deficit_bits=t.cells)
            assignments.append(a)
    return MappingPlan(assignments=assignments, macro=macro, inventory=inventory)


def pack_layer_order(tiles: list, inventory: MacroInventory,
                     macro: MacroConfig = None, positions: dict = None) -> MappingPlan:
    """First-fit in layer order; keeps consecutive layers on nearby chips."""
    macro = macro or MacroConfig()
    packer = _StripPacker(inventory, macro.cols)
    assignments = []
    ordered = sorted(tiles, key=lambda t: (t.layer_idx, t.row_tile, t.col_tile))
    for t in ordered:
        a = packer.place(t)
        if a is None:
            raise CapacityError("inventory exhausted", deficit_bits=t.cells)
        assignments.append(a)
    return MappingPlan(assignments=assignments, macro=macro, inventory=inventory)


# ------------------------------------------------------------- evaluation


@dataclass
class UtilizationReport:
    adc_utilization: float
    occupancy: dict
    latency_cycles: int
    total_conversions: int
    useful_conversions: int
    per_layer: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0.0 <= self.adc_utilization <= 1.0):
            raise ValidationError("utilization must be a fraction")


def _pulse_slots(macro: MacroConfig) -> int:
    # worst-case schedule: every chunk fires its maximum pulse count
    return macro.act_chunks * ((1 << macro.act_chunk_bits) - 1)


def _positions(net: NetworkGraph, shapes: list) -> dict:
    out = {}
    for i, layer in enumerate(net.layers):
        if layer.kind in CONV_KINDS:
            _, oh, ow = shapes[i]
            out[i] = oh * ow
        elif layer.kind == "fully_connected":
            out[i] = 1
    return out


def evaluate_plan(plan: MappingPlan, net: NetworkGraph,
                  macro: MacroConfig = None) -> UtilizationReport:
    """Latency, ADC utilization and conversion counts for a mapped network.

    latency = pipeline fill (longest graph path of per-position cycles)
    plus the steady-state bottleneck (busiest subarray's total work).
    """
    macro = macro or plan.macro
    plan.validate(net)
    shapes = net.output_shapes()
    positions = _positions(net, shapes)
    pulse_slots = _pulse_slots(macro)

    # activation groups: (layer, row_tile, subarray) -> member assignments
    groups = defaultdict(list)
    for a in plan.assignments:
        groups[(a.tile.layer_idx, a.tile.row_tile, a.macro)].append(a)

    macro_work = defaultdict(int)  # subarray -> total cycles over the inference
    per_pos = defaultdict(lambda: defaultdict(int))  # layer -> macro -> cyc/pos
    total_conv = useful_conv = 0
    per_layer = defaultdict(lambda: {"cycles": 0, "conversions": 0,
                                     "activations": 0})
    for (layer_idx, _row_tile, m), members in groups.items():
        rows = members[0].tile.rows
        row_groups = -(-rows // macro.rows_per_step)
        active_cols = sum(a.tile.phys_cols for a in members)
        slots = -(-active_cols // macro.adc_count)
        pos = positions[layer_idx]
        cyc_pos = row_groups * pulse_slots * slots
        macro_work[m] += pos * cyc_pos
        per_pos[layer_idx][m] += cyc_pos
        events = pos * row_groups * pulse_slots
        total_conv += events * slots * macro.adc_count
        useful_conv += events * active_cols
        per_layer[layer_idx]["cycles"] += pos * cyc_pos
        per_layer[layer_idx]["conversions"] += events * slots * macro.adc_count
        per_layer[layer_idx]["activations"] += events

    # per-layer per-position bottleneck and the pipeline-fill critical path
    layer_rate = {i: max(busy.values(), default=0)
                  for i, busy in per_pos.items()}
    path = {}
    for i, layer in enumerate(net.layers):
        longest_in = max((path[e] for e in layer.inputs if e >= 0), default=0)
        path[i] = longest_in + layer_rate.get(i, 0)
        per_layer[i]["latency_cycles"] = \
            layer_rate.get(i, 0) * positions.get(i, 1)
    fill = max(path.values(), default=0)
    steady = max(macro_work.values(), default=0)

    util = (useful_conv / total_conv) if total_conv else 0.0
    return UtilizationReport(adc_utilization=util, occupancy=plan.occupancy(),
                             latency_cycles=steady + fill,
                             total_conversions=total_conv,
                             useful_conversions=useful_conv,
                             per_layer=dict(per_layer))


def plan_network(net: NetworkGraph, macro: MacroConfig,
                 inventory: MacroInventory, packer=pack_greedy, **packer_kw):
    """Tile every parametric layer and pack it; returns (tiles, plan)."""
    tiles = []
    for i in net.parametric_indices():
        layer = net.layers[i]
        feats = net.in_features(i) if layer.kind == "fully_connected" else None
        tiles.extend(tile_layer(layer, macro, layer_idx=i, in_features=feats))
    positions = _positions(net, net.output_shapes())
    plan = packer(tiles, inventory, macro, positions=positions, **packer_kw)
    return tiles, plan.validate(net)


# ------------------------------------------------- mapped (physical) execution


def build_images(plan: MappingPlan, net: NetworkGraph, weights: dict):
    """Program every subarray with its resident tiles.

    Returns (images, logical_base): per-macro MacroImage, and for each
    assignment the base index of its tile's logical columns within the
    image's column map (column maps grow in programming order).
    """
    from .reference import lower_weights

    matrices = {}
    for i in net.parametric_indices():
        w = weights[i].data
        matrices[i] = lower_weights(w) if net.layers[i].kind in CONV_KINDS \
            else np.asarray(w, dtype=np.int64).T
    images = {}
    logical_base = {}
    order = sorted(plan.assignments, key=lambda a: (a.macro, a.col_off))
    for a in order:
        t = a.tile
        sub = matrices[t.layer_idx][t.row_start:t.row_start + t.rows,
                                    t.col_start:t.col_start + t.logical_cols]
        existing = images.get(a.macro)
        logical_base[a] = len(existing.column_map) if existing else 0
        images[a.macro] = program(sub, plan.macro if existing is None else None,
                                  row_offset=a.row_off, col_offset=a.col_off,
                                  image=existing, bits=t.weight_bits)
    return images, logical_base


def run_mapped_inference(plan: MappingPlan, net: NetworkGraph, weights: dict,
                         x, rng=None):
    """Execute the network through its mapped subarrays, bit for bit.

    Every parametric layer's accumulator is produced by pulsing the actual
    programmed images tile by tile (co-located tiles and all), so the result
    proves the mapping preserves functional behavior. Activations entering
    CiM layers must be non-negative (post-relu convention).
    """
    from .macro import mac_mvm_batch
    from .quant import QuantTensor, qrange, requantize
    from .reference import avgpool_sum, im2col, maxpool_ref

    net.validate()
    images, logical_base = build_images(plan, net, weights)
    per_layer = plan.by_layer()
    outputs = {}

    def fetch(e):
        return x if e == -1 else outputs[e]

    for i, layer in enumerate(net.layers):
        ins = [fetch(e) for e in layer.inputs]
        if layer.parametric:
            a = ins[0]
            if a.data.min(initial=0) < 0:
                raise ValidationError(
                    f"layer {i}: CiM activations must be non-negative")
            w = weights[i]
            if layer.kind in CONV_KINDS:
                cols, oh, ow = im2col(a.data, layer.kernel, layer.stride,
                                      layer.pad)
            else:
                cols = a.data.reshape(a.data.shape[0], -1)[:, :, None]
                oh = ow = 1
            n, _rows, pos = cols.shape
            acc = np.zeros((n, layer.out_ch, pos), dtype=np.int64)
            for asg in per_layer[i]:
                t = asg.tile
                acts = cols[:, t.row_start:t.row_start + t.rows, :]
                acts = acts.transpose(0, 2, 1).reshape(n * pos, t.rows)
                img = images[asg.macro]
                res = mac_mvm_batch(img, acts, rng=rng,
                                    rows=range(asg.row_off,
                                               asg.row_off + t.rows))
                base = logical_base[asg]
                block = res[:, base:base + t.logical_cols]
                block = block.reshape(n, pos, t.logical_cols).transpose(0, 2, 1)
                acc[:, t.col_start:t.col_start + t.logical_cols, :] += block
            if layer.kind in CONV_KINDS:
                acc = acc.reshape(n, layer.out_ch, oh, ow)
            else:
                acc = acc[:, :, 0]
            outputs[i] = requantize(acc, a.scale * w.scale, layer.out_scale,
                                    layer.act_bits, signed=True)
        elif layer.kind == "relu":
            a = ins[0]
            outputs[i] = QuantTensor(np.maximum(a.data, 0), bits=layer.act_bits,
                                     signed=False, scale=a.scale)
        elif layer.kind == "maxpool":
            a = ins[0]
            vals = maxpool_ref(a.data, layer.kernel, layer.stride, layer.pad)
            outputs[i] = QuantTensor(vals, bits=a.bits, signed=a.signed,
                                     scale=a.scale)
        elif layer.kind == "avgpool":
            a = ins[0]
            acc = avgpool_sum(a.data, layer.kernel, layer.stride)
            outputs[i] = requantize(acc, a.scale,
                                    a.scale * layer.kernel * layer.kernel,
                                    layer.act_bits, signed=a.signed)
        elif layer.kind == "residual_add":
            a, b = ins
            ra = requantize(a.data, a.scale, layer.out_scale, layer.act_bits,
                            signed=True)
            rb = requantize(b.data, b.scale, layer.out_scale, layer.act_bits,
                            signed=True)
            lo, hi = qrange(layer.act_bits, True)
            outputs[i] = QuantTensor(np.clip(ra.data + rb.data, lo, hi),
                                     bits=layer.act_bits, signed=True,
                                     scale=layer.out_scale)
    return outputs[len(net.layers) - 1]
