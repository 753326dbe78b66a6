"""System-level energy / latency / area accounting.

Three configurations share one workload:

* hybrid - frozen conv weights resident in ROM subarrays, trainable layers
  in SRAM subarrays, no steady-state DRAM weight traffic (power-on load is
  amortized to zero unless include_boot is set);
* sram_single - one iso-area chip of SRAM subarrays; weights beyond the
  on-chip capacity are fetched from DRAM exactly once per inference, and
  the compute schedule assumes perfect double-buffering (the shortfall only
  costs DRAM energy and bandwidth time);
* sram_chiplets - enough same-size SRAM chips to hold every weight; feature
  maps crossing a chip boundary and cross-chip partial sums pay link energy.

Energy breakdown components: cim_compute (MAC events), adc (conversions from
the mapping schedule), sram_buffer (feature + partial-sum bytes), dram,
chiplet_link, standby (leaky SRAM bits over the inference latency). Latency
overlaps compute with DRAM/link transfers (double-buffering), so the total
is the max of the three streams.
"""

import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CapacityError, ValidationError, WorkloadMismatchError
from .graph import INPUT_EDGE, NetworkGraph, ROM, SRAM
from .macro import MacroConfig, sram_macro_config
from .mapping import (MacroInventory, MappingPlan, evaluate_plan, pack_greedy,
                      pack_layer_order, plan_network)

HYBRID = "hybrid"
SRAM_SINGLE = "sram_single"
SRAM_CHIPLETS = "sram_chiplets"
KINDS = (HYBRID, SRAM_SINGLE, SRAM_CHIPLETS)


@dataclass(frozen=True)
class CostModel:
    """Per-event energy, bandwidth and area constants (SI units in names).

    Defaults are documented typical figures for a 28nm-class system; every
    field is a config input, none is a measured ground truth.
    """

    rom_mac_energy_j: float = 6.0e-14
    sram_mac_energy_j: float = 1.2e-13
    adc_energy_j: float = 1.0e-14
    sram_buffer_energy_j_per_byte: float = 5.0e-13
    dram_energy_j_per_byte: float = 1.25e-10
    dram_bandwidth_bytes_s: float = 12.8e9
    chiplet_link_energy_j_per_bit: float = 1.17e-12
    chiplet_link_bandwidth_bits_s: float = 2.0e11
    sram_standby_w_per_mbit: float = 5.0e-5
    rom_cell_area_um2: float = 0.014
    sram_cell_area_um2: float = 0.014 * 25.6

    def __post_init__(self):
        for name, v in self.__dict__.items():
            if v < 0:
                raise ValidationError(f"{name} must be non-negative")
        if self.rom_cell_area_um2 >= self.sram_cell_area_um2:
            raise ValidationError("ROM cells must be denser than SRAM cells")

    def scaled(self, factor: float) -> "CostModel":
        """Scale every energy-dimension constant (incl. standby power)."""
        return replace(
            self,
            rom_mac_energy_j=self.rom_mac_energy_j * factor,
            sram_mac_energy_j=self.sram_mac_energy_j * factor,
            adc_energy_j=self.adc_energy_j * factor,
            sram_buffer_energy_j_per_byte=self.sram_buffer_energy_j_per_byte * factor,
            dram_energy_j_per_byte=self.dram_energy_j_per_byte * factor,
            chiplet_link_energy_j_per_bit=self.chiplet_link_energy_j_per_bit * factor,
            sram_standby_w_per_mbit=self.sram_standby_w_per_mbit * factor,
        )

    @property
    def density_ratio(self) -> float:
        return self.sram_cell_area_um2 / self.rom_cell_area_um2


@dataclass(frozen=True)
class SystemConfig:
    kind: str
    area_budget_mm2: float
    rom_macro: MacroConfig
    sram_macro: MacroConfig
    rom_macros: int = 0
    sram_macros: int = 0
    chiplet_count: int = 1
    dram_present: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown system kind {self.kind!r}")

    @property
    def rom_capacity_bits(self) -> int:
        return self.rom_macros * self.rom_macro.capacity_bits

    @property
    def sram_capacity_bits(self) -> int:
        n = self.sram_macros
        if self.kind == SRAM_CHIPLETS:
            n *= self.chiplet_count
        return n * self.sram_macro.capacity_bits

    @property
    def area_mm2(self) -> float:
        rom = self.rom_macros * self.rom_macro.macro_area_mm2
        sram = self.sram_macros * self.sram_macro.macro_area_mm2
        if self.kind == SRAM_CHIPLETS:
            return self.chiplet_count * sram
        return rom + sram

    def subarrays(self, macro: MacroConfig, count: int) -> int:
        per = macro.capacity_bits // (macro.rows * macro.cols)
        return count * per


def _macro_pair(cost: CostModel, rom_macro=None, sram_macro=None):
    rom_macro = rom_macro or MacroConfig(cell_area_um2=cost.rom_cell_area_um2)
    if sram_macro is None:
        sram_macro = sram_macro_config(rom_macro,
                                       density_ratio=cost.density_ratio,
                                       standby_w_per_mbit=cost.sram_standby_w_per_mbit)
    return rom_macro, sram_macro


def placed_bits(net: NetworkGraph) -> dict:
    """Weight bits by placement."""
    out = {ROM: 0, SRAM: 0}
    for i in net.parametric_indices():
        layer = net.layers[i]
        feats = net.in_features(i) if layer.kind == "fully_connected" else None
        out[layer.placement] += layer.param_count(feats) * layer.weight_bits
    return out


def as_all_sram(net: NetworkGraph) -> NetworkGraph:
    """Twin workload for the SRAM baselines: every layer SRAM-resident."""
    layers = [replace(l, placement=SRAM, trainable=l.parametric)
              for l in net.layers]
    return NetworkGraph(layers, net.input_shape)


def workload_fingerprint(workload_id: str, net: NetworkGraph) -> str:
    """Task identity: the named workload at a given input shape.

    Placement variants of one workload (with/without a residual branch,
    all-SRAM twin) share the fingerprint on purpose so they can be compared.
    """
    h = hashlib.sha256(workload_id.encode())
    h.update(repr(net.input_shape).encode())
    return h.hexdigest()[:16]


def _subarrays_per_macro(macro: MacroConfig) -> int:
    return macro.capacity_bits // (macro.rows * macro.cols)


def size_for_network(net: NetworkGraph, cost: CostModel,
                     rom_macro=None, sram_macro=None) -> SystemConfig:
    """Hybrid chip sized so the production mapping actually fits.

    Each placement pool is trial-packed with the same packer the plan will
    use; the macro count is the subarray usage rounded up to whole macros.
    """
    rom_macro, sram_macro = _macro_pair(cost, rom_macro, sram_macro)
    rom_layers = [i for i in net.parametric_indices()
                  if net.layers[i].placement == ROM]
    sram_layers = [i for i in net.parametric_indices()
                   if net.layers[i].placement == SRAM]

    def macros_for(layers, macro):
        if not layers:
            return 0
        trial = _pack_subset(net, layers, macro, subarrays=None)
        used = len(trial.macros_used())
        return -(-used // _subarrays_per_macro(macro))

    cfg = SystemConfig(kind=HYBRID, area_budget_mm2=1.0, rom_macro=rom_macro,
                       sram_macro=sram_macro,
                       rom_macros=macros_for(rom_layers, rom_macro),
                       sram_macros=macros_for(sram_layers, sram_macro))
    return replace(cfg, area_budget_mm2=cfg.area_mm2)


def size_iso_area(kind: str, area_budget_mm2: float, cost: CostModel,
                  rom_macro=None, sram_macro=None, rom_fraction: float = 1.0,
                  required_bits: int = 0) -> SystemConfig:
    """Macro inventory a given silicon budget buys, per configuration kind.

    rom_fraction splits a hybrid budget between ROM and SRAM subarrays;
    required_bits sizes the chiplet count (every chiplet has the full
    budget's worth of SRAM macros).
    """
    if area_budget_mm2 <= 0:
        raise ValidationError("area budget must be positive")
    rom_macro, sram_macro = _macro_pair(cost, rom_macro, sram_macro)
    if kind == HYBRID:
        rom_n = int(area_budget_mm2 * rom_fraction / rom_macro.macro_area_mm2)
        sram_n = int(area_budget_mm2 * (1 - rom_fraction)
                     / sram_macro.macro_area_mm2)
        if rom_n == 0 and rom_fraction > 0:
            raise ValidationError("budget below one ROM macro")
        return SystemConfig(kind=kind, area_budget_mm2=area_budget_mm2,
                            rom_macro=rom_macro, sram_macro=sram_macro,
                            rom_macros=rom_n, sram_macros=sram_n)
    if kind == SRAM_SINGLE:
        sram_n = int(area_budget_mm2 / sram_macro.macro_area_mm2)
        if sram_n == 0:
            raise ValidationError("budget below one SRAM macro")
        return SystemConfig(kind=kind, area_budget_mm2=area_budget_mm2,
                            rom_macro=rom_macro, sram_macro=sram_macro,
                            sram_macros=sram_n, dram_present=True)
    if kind == SRAM_CHIPLETS:
        per_chip = int(area_budget_mm2 / sram_macro.macro_area_mm2)
        if per_chip == 0:
            raise ValidationError("budget below one SRAM macro")
        chip_bits = per_chip * sram_macro.capacity_bits
        count = max(1, -(-int(required_bits) // chip_bits))
        return SystemConfig(kind=kind, area_budget_mm2=area_budget_mm2,
                            rom_macro=rom_macro, sram_macro=sram_macro,
                            sram_macros=per_chip, chiplet_count=count)
    raise ValidationError(f"unknown system kind {kind!r}")


# ----------------------------------------------------------------- planning


def _merge_plans(rom_plan, sram_plan, rom_subarrays, macro, chips=1,
                 per_chip=None):
    assignments = list(rom_plan.assignments) if rom_plan else []
    if sram_plan:
        for a in sram_plan.assignments:
            assignments.append(replace(a, macro=a.macro + rom_subarrays))
    total = rom_subarrays + (sram_plan.inventory.total if sram_plan else 0)
    inv = MacroInventory(chips=chips, subarrays_per_chip=per_chip or total)
    return MappingPlan(assignments=assignments, macro=macro, inventory=inv)


def plan_system(net: NetworkGraph, sys_cfg: SystemConfig,
                headroom: int = 4) -> MappingPlan:
    """Map the network onto the configuration's subarray inventory.

    Hybrid packs ROM and SRAM layers into their own subarray pools (ids are
    offset so the pools never alias). The single-chip SRAM twin packs into
    as many virtual subarrays as the schedule needs; shortfall against the
    physical capacity is charged as DRAM reload traffic, not remapping.
    """
    if sys_cfg.kind == HYBRID:
        rom_layers = [i for i in net.parametric_indices()
                      if net.layers[i].placement == ROM]
        sram_layers = [i for i in net.parametric_indices()
                       if net.layers[i].placement == SRAM]
        rom_sub = sys_cfg.subarrays(sys_cfg.rom_macro, sys_cfg.rom_macros)
        sram_sub = sys_cfg.subarrays(sys_cfg.sram_macro, sys_cfg.sram_macros)
        rom_plan = _pack_subset(net, rom_layers, sys_cfg.rom_macro, rom_sub)
        sram_plan = _pack_subset(net, sram_layers, sys_cfg.sram_macro, sram_sub)
        return _merge_plans(rom_plan, sram_plan, rom_sub, sys_cfg.rom_macro)
    if sys_cfg.kind == SRAM_SINGLE:
        # virtual inventory: weight streaming time-shares physical subarrays,
        # so the schedule packs as if fully resident (one tile needs at most
        # one subarray; the capacity shortfall is charged as DRAM traffic)
        _, plan = plan_network(net, sys_cfg.sram_macro,
                               MacroInventory(1, _tile_count(net,
                                                             sys_cfg.sram_macro)))
        return plan
    if sys_cfg.kind == SRAM_CHIPLETS:
        per_chip = sys_cfg.subarrays(sys_cfg.sram_macro, sys_cfg.sram_macros)
        chips = sys_cfg.chiplet_count
        for attempt in range(headroom * 4):
            try:
                inv = MacroInventory(chips=chips, subarrays_per_chip=per_chip)
                tiles, plan = plan_network(net, sys_cfg.sram_macro, inv,
                                           packer=pack_layer_order)
                return plan
            except CapacityError:
                chips += max(1, chips // 8)
        raise CapacityError("chiplet count did not converge")
    raise ValidationError(f"unknown system kind {sys_cfg.kind!r}")


def _tile_count(net: NetworkGraph, macro: MacroConfig) -> int:
    from .mapping import lowered_geometry

    total = 0
    max_logical = macro.cols  # recomputed per layer below
    for i in net.parametric_indices():
        layer = net.layers[i]
        feats = net.in_features(i) if layer.kind == "fully_connected" else None
        rows, cols = lowered_geometry(layer, feats)
        max_logical = macro.cols // layer.weight_bits
        total += (-(-rows // macro.rows)) * (-(-cols // max_logical))
    return max(total, 1)


def _pack_subset(net, layer_indices, macro, subarrays=None):
    """Pack a placement pool; subarrays=None packs into the tile-count bound."""
    if not layer_indices:
        return None
    from .mapping import _positions, tile_layer

    tiles = []
    for i in layer_indices:
        layer = net.layers[i]
        feats = net.in_features(i) if layer.kind == "fully_connected" else None
        tiles.extend(tile_layer(layer, macro, layer_idx=i, in_features=feats))
    budget = len(tiles) if subarrays is None else max(subarrays, 1)
    positions = _positions(net, net.output_shapes())
    return pack_greedy(tiles, MacroInventory(1, budget), macro,
                       positions=positions)


# --------------------------------------------------------------- simulation


@dataclass
class SimReport:
    kind: str
    workload_id: str
    workload_hash: str
    total_energy_j: float
    latency_s: float
    area_mm2: float
    breakdown: dict
    ops: int
    per_layer: list = field(default_factory=list)
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        total = sum(self.breakdown.values())
        if self.total_energy_j > 0 and \
                abs(total - self.total_energy_j) > 1e-9 * self.total_energy_j:
            raise ValidationError("breakdown does not sum to the total energy")
        if any(v < 0 for v in self.breakdown.values()):
            raise ValidationError("negative energy component")

    @property
    def energy_eff_ops_per_j(self) -> float:
        return self.ops / self.total_energy_j if self.total_energy_j else 0.0

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "workload_id": self.workload_id,
            "workload_hash": self.workload_hash,
            "total_energy_j": self.total_energy_j,
            "latency_s": self.latency_s,
            "area_mm2": self.area_mm2,
            "breakdown": dict(self.breakdown),
            "ops": self.ops,
            "energy_eff_ops_per_j": self.energy_eff_ops_per_j,
            "per_layer": self.per_layer,
            "notes": self.notes,
        }


def _layer_elems(net: NetworkGraph, shapes) -> dict:
    out = {}
    for i, layer in enumerate(net.layers):
        ins = 0
        for e in layer.inputs:
            shape = net.input_shape if e == INPUT_EDGE else shapes[e]
            ins += int(np.prod(shape))
        out[i] = (ins, int(np.prod(shapes[i])))
    return out


def simulate_inference(sys_cfg: SystemConfig, net: NetworkGraph,
                       plan: MappingPlan, cost: CostModel,
                       workload_id: str = "workload",
                       include_boot: bool = False) -> SimReport:
    """Energy/latency/area for one inference of a mapped network."""
    net.validate()
    if sys_cfg.kind == HYBRID:
        bits = placed_bits(net)
        if bits[ROM] > sys_cfg.rom_capacity_bits:
            raise CapacityError(
                "ROM-resident bits exceed the configured ROM capacity",
                deficit_bits=bits[ROM] - sys_cfg.rom_capacity_bits)
        if bits[SRAM] > sys_cfg.sram_capacity_bits:
            raise CapacityError(
                "SRAM-resident bits exceed the configured SRAM capacity",
                deficit_bits=bits[SRAM] - sys_cfg.sram_capacity_bits)
    shapes = net.output_shapes()
    elems = _layer_elems(net, shapes)
    rep = evaluate_plan(plan, net, plan.macro)
    per_layer_plan = rep.per_layer
    by_layer = plan.by_layer()
    all_sram = sys_cfg.kind != HYBRID

    e_mac = e_adc = e_buffer = 0.0
    macs_total = 0
    per_layer_rows = []
    positions = {}
    for i, layer in enumerate(net.layers):
        in_elems, out_elems = elems[i]
        buffer_bytes = in_elems + out_elems
        macs = conversions = 0
        if layer.parametric:
            feats = net.in_features(i) if layer.kind == "fully_connected" else None
            pos = 1 if layer.kind == "fully_connected" else \
                shapes[i][1] * shapes[i][2]
            positions[i] = pos
            macs = layer.param_count(feats) * pos
            conversions = per_layer_plan.get(i, {}).get("conversions", 0)
            row_tiles = len({a.tile.row_tile for a in by_layer.get(i, ())})
            if row_tiles > 1:
                # partial sums spill to the buffer: one 4-byte write + read
                buffer_bytes += (row_tiles - 1) * pos * layer.out_ch * 8
            kind_e = cost.sram_mac_energy_j if (all_sram or layer.placement == SRAM) \
                else cost.rom_mac_energy_j
            e_mac += macs * kind_e
            e_adc += conversions * cost.adc_energy_j
        else:
            kind_e = 0.0
        e_buffer += buffer_bytes * cost.sram_buffer_energy_j_per_byte
        macs_total += macs
        per_layer_rows.append({
            "layer": i, "kind": layer.kind, "macs": macs,
            "conversions": conversions, "buffer_bytes": buffer_bytes,
            "cycles": per_layer_plan.get(i, {}).get("latency_cycles", 0),
            "cim_energy_j": macs * kind_e,
            "adc_energy_j": conversions * cost.adc_energy_j,
            "buffer_energy_j": buffer_bytes * cost.sram_buffer_energy_j_per_byte,
        })

    weight_bits = sum(placed_bits(net).values())
    dram_bytes = 0
    if sys_cfg.kind == SRAM_SINGLE:
        resident = sys_cfg.sram_capacity_bits
        dram_bytes = max(0, (weight_bits - resident)) // 8
        if not sys_cfg.dram_present and dram_bytes:
            raise CapacityError("weights exceed capacity and no DRAM configured",
                                deficit_bits=weight_bits - resident)
    elif sys_cfg.kind == HYBRID and include_boot:
        dram_bytes = placed_bits(net)[SRAM] // 8
    e_dram = dram_bytes * cost.dram_energy_j_per_byte

    link_bits = 0
    if sys_cfg.kind == SRAM_CHIPLETS:
        link_bits = _chiplet_link_bits(net, plan, shapes, positions)
    e_link = link_bits * cost.chiplet_link_energy_j_per_bit

    compute_s = rep.latency_cycles * plan.macro.conversion_slot_ns * 1e-9
    dram_s = dram_bytes / cost.dram_bandwidth_bytes_s if dram_bytes else 0.0
    link_s = link_bits / cost.chiplet_link_bandwidth_bits_s if link_bits else 0.0
    latency_s = max(compute_s, dram_s, link_s)

    sram_mbit = sys_cfg.sram_capacity_bits / (1 << 20)
    e_standby = cost.sram_standby_w_per_mbit * sram_mbit * latency_s

    breakdown = {
        "cim_compute": e_mac,
        "adc": e_adc,
        "sram_buffer": e_buffer,
        "dram": e_dram,
        "chiplet_link": e_link,
        "standby": e_standby,
    }
    return SimReport(
        kind=sys_cfg.kind, workload_id=workload_id,
        workload_hash=workload_fingerprint(workload_id, net),
        total_energy_j=sum(breakdown.values()), latency_s=latency_s,
        area_mm2=sys_cfg.area_mm2, breakdown=breakdown, ops=macs_total,
        per_layer=per_layer_rows,
        notes={
            "dram_bytes": dram_bytes,
            "link_bits": link_bits,
            "compute_s": compute_s,
            "adc_utilization": rep.adc_utilization,
            "include_boot": include_boot,
        })


def _chip_of_layers(net: NetworkGraph, plan: MappingPlan) -> dict:
    """Home chip per layer; non-parametric layers follow their producer."""
    by_layer = plan.by_layer()
    chips = {}
    for i, layer in enumerate(net.layers):
        if i in by_layer:
            chips[i] = min(a.chip for a in by_layer[i])
        else:
            preds = [e for e in layer.inputs if e != INPUT_EDGE]
            chips[i] = chips[preds[0]] if preds else 0
    return chips


def _chiplet_link_bits(net, plan, shapes, positions) -> int:
    chips = _chip_of_layers(net, plan)
    bits = 0
    for i, layer in enumerate(net.layers):
        for e in layer.inputs:
            if e == INPUT_EDGE:
                continue
            if chips[e] != chips[i]:
                bits += int(np.prod(shapes[e])) * 8
        hosts = {a.chip for a in plan.by_layer().get(i, ())}
        if len(hosts) > 1 and layer.parametric:
            # cross-chip partial sums return at accumulator width
            pos = positions.get(i, 1)
            bits += (len(hosts) - 1) * pos * layer.out_ch * 32
    return bits


def compare(report_a: SimReport, report_b: SimReport) -> dict:
    """Efficiency/latency/area ratios of a over b (same workload only)."""
    if report_a.workload_hash != report_b.workload_hash:
        raise WorkloadMismatchError(
            f"workloads differ: {report_a.workload_id} vs {report_b.workload_id}")
    return {
        "kinds": (report_a.kind, report_b.kind),
        "energy_eff_ratio": report_a.energy_eff_ops_per_j
        / report_b.energy_eff_ops_per_j,
        "latency_ratio": report_a.latency_s / report_b.latency_s
        if report_b.latency_s else float("inf"),
        "area_ratio": report_a.area_mm2 / report_b.area_mm2
        if report_b.area_mm2 else float("inf"),
    }


def latency_overhead(net_with: NetworkGraph, net_without: NetworkGraph,
                     cost: CostModel, rom_macro=None, sram_macro=None) -> float:
    """Relative latency cost of an added branch, both networks mapped hybrid."""
    cfg_w = size_for_network(net_with, cost, rom_macro, sram_macro)
    cfg_wo = size_for_network(net_without, cost, rom_macro, sram_macro)
    plan_w = plan_system(net_with, cfg_w)
    plan_wo = plan_system(net_without, cfg_wo)
    lat_w = evaluate_plan(plan_w, net_with, plan_w.macro).latency_cycles
    lat_wo = evaluate_plan(plan_wo, net_without, plan_wo.macro).latency_cycles
    if lat_wo == 0:
        raise ValidationError("baseline network has zero latency")
    return (lat_w - lat_wo) / lat_wo
