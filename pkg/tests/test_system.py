import numpy as np
import pytest
from dataclasses import replace

from romcim.errors import ValidationError, WorkloadMismatchError
from romcim.graph import LayerSpec, NetworkGraph, ROM, SRAM
from romcim.macro import MacroConfig
from romcim.system import (HYBRID, SRAM_CHIPLETS, SRAM_SINGLE, CostModel,
                           as_all_sram, compare, placed_bits, plan_system,
                           simulate_inference, size_for_network,
                           size_iso_area)


def small_workload():
    """Conv stack big enough to exercise tiling but fast to plan."""
    layers = [
        LayerSpec("conv2d", in_ch=3, out_ch=32, kernel=3, pad=1,
                  placement=ROM, trainable=False, out_scale=0.1),
        LayerSpec("relu", in_ch=32, out_ch=32, trainable=False),
        LayerSpec("maxpool", in_ch=32, out_ch=32, kernel=2, stride=2,
                  trainable=False),
        LayerSpec("conv2d", in_ch=32, out_ch=64, kernel=3, pad=1,
                  placement=ROM, trainable=False, out_scale=0.1),
        LayerSpec("relu", in_ch=64, out_ch=64, trainable=False),
        LayerSpec("fully_connected", in_ch=64 * 8 * 8, out_ch=10,
                  out_scale=0.1, placement=SRAM),
    ]
    return NetworkGraph(layers, (3, 16, 16)).validate()


def bigger_workload():
    """Exceeds one 1.2 Mbit macro so reload/chiplet paths activate."""
    layers = [
        LayerSpec("conv2d", in_ch=3, out_ch=32, kernel=3, pad=1,
                  placement=ROM, trainable=False, out_scale=0.1),
        LayerSpec("relu", in_ch=32, out_ch=32, trainable=False),
        LayerSpec("conv2d", in_ch=32, out_ch=64, kernel=3, pad=1,
                  placement=ROM, trainable=False, out_scale=0.1),
        LayerSpec("relu", in_ch=64, out_ch=64, trainable=False),
        LayerSpec("conv2d", in_ch=64, out_ch=192, kernel=3, pad=1,
                  placement=ROM, trainable=False, out_scale=0.1),
        LayerSpec("relu", in_ch=192, out_ch=192, trainable=False),
        LayerSpec("maxpool", in_ch=192, out_ch=192, kernel=2, stride=2,
                  trainable=False),
        LayerSpec("fully_connected", in_ch=192 * 8 * 8, out_ch=10,
                  out_scale=0.1, placement=SRAM),
    ]
    return NetworkGraph(layers, (3, 16, 16)).validate()


def hybrid_report(cost, net=None, **kw):
    net = net or small_workload()
    cfg = size_for_network(net, cost)
    plan = plan_system(net, cfg)
    return simulate_inference(cfg, net, plan, cost, workload_id="toy", **kw)


def single_chip_report(cost, net=None, budget=None, **kw):
    net = net or small_workload()
    twin = as_all_sram(net)
    budget = budget or size_for_network(net, cost).area_mm2
    cfg = size_iso_area(SRAM_SINGLE, budget, cost)
    plan = plan_system(twin, cfg)
    return simulate_inference(cfg, twin, plan, cost, workload_id="toy", **kw)


# ------------------------------------------------------------------- sizing

def test_iso_area_capacity_ratio_tracks_density():
    cost = CostModel()
    budget = 100.0
    rom = size_iso_area(HYBRID, budget, cost, rom_fraction=1.0)
    sram = size_iso_area(SRAM_SINGLE, budget, cost)
    ratio = rom.rom_capacity_bits / sram.sram_capacity_bits
    assert ratio == pytest.approx(25.6, rel=0.05)  # floor effects only


def test_budget_of_one_macro_buys_its_capacity():
    cost = CostModel()
    cfg = size_iso_area(HYBRID, 0.24, cost, rom_fraction=1.0)
    assert cfg.rom_macros == 1
    assert cfg.rom_capacity_bits == MacroConfig().capacity_bits


def test_zero_budget_rejected():
    with pytest.raises(ValidationError):
        size_iso_area(SRAM_SINGLE, 0.0, CostModel())


def test_chiplet_count_covers_required_bits():
    cost = CostModel()
    cfg = size_iso_area(SRAM_CHIPLETS, 10.0, cost, required_bits=10 ** 8)
    assert cfg.chiplet_count * cfg.sram_macros * \
        cfg.sram_macro.capacity_bits >= 10 ** 8


# --------------------------------------------------------------- simulation

def test_zero_energy_cost_model_gives_zero_total():
    cost = CostModel(rom_mac_energy_j=0, sram_mac_energy_j=0, adc_energy_j=0,
                     sram_buffer_energy_j_per_byte=0, dram_energy_j_per_byte=0,
                     chiplet_link_energy_j_per_bit=0, sram_standby_w_per_mbit=0)
    assert hybrid_report(cost).total_energy_j == 0.0


def test_hybrid_steady_state_has_no_dram_energy():
    rep = hybrid_report(CostModel())
    assert rep.breakdown["dram"] == 0.0


def test_include_boot_charges_sram_resident_weights_once():
    cost = CostModel()
    steady = hybrid_report(cost)
    boot = hybrid_report(cost, include_boot=True)
    net = small_workload()
    sram_bytes = placed_bits(net)[SRAM] // 8
    want = sram_bytes * cost.dram_energy_j_per_byte
    assert boot.breakdown["dram"] == pytest.approx(want)
    assert boot.total_energy_j > steady.total_energy_j


def test_single_chip_reloads_nonresident_weights_once():
    cost = CostModel()
    net = bigger_workload()
    rep = single_chip_report(cost, net, budget=0.24 * 26)  # one SRAM macro
    total_bits = sum(placed_bits(as_all_sram(net)).values())
    reload_bytes = rep.notes["dram_bytes"]
    assert 0 < reload_bytes < total_bits // 8
    assert reload_bytes == (total_bits - MacroConfig().capacity_bits) // 8
    assert rep.breakdown["dram"] == pytest.approx(
        reload_bytes * cost.dram_energy_j_per_byte)


def test_breakdown_sums_to_total():
    rep = hybrid_report(CostModel())
    assert sum(rep.breakdown.values()) == pytest.approx(rep.total_energy_j,
                                                        rel=1e-12)


def test_chiplet_link_energy_is_bits_times_unit_cost():
    cost = CostModel()
    net = as_all_sram(bigger_workload())
    # force several tiny chips so layers straddle boundaries
    cfg = size_iso_area(SRAM_CHIPLETS, 6.2, cost,
                        required_bits=sum(placed_bits(net).values()))
    plan = plan_system(net, cfg)
    rep = simulate_inference(cfg, net, plan, cost, workload_id="toy")
    bits = rep.notes["link_bits"]
    assert bits > 0
    assert rep.breakdown["chiplet_link"] == pytest.approx(bits * 1.17e-12)

    # independent boundary count: feature bits over chip-crossing edges
    chips = {}
    by_layer = plan.by_layer()
    shapes = net.output_shapes()
    expect_bits = 0
    for i, layer in enumerate(net.layers):
        if i in by_layer:
            chips[i] = min(a.chip for a in by_layer[i])
        else:
            preds = [e for e in layer.inputs if e >= 0]
            chips[i] = chips[preds[0]] if preds else 0
    for i, layer in enumerate(net.layers):
        for e in layer.inputs:
            if e >= 0 and chips[e] != chips[i]:
                expect_bits += int(np.prod(shapes[e])) * 8
        hosts = {a.chip for a in by_layer.get(i, ())}
        if len(hosts) > 1:
            pos = 1 if layer.kind == "fully_connected" else \
                shapes[i][1] * shapes[i][2]
            expect_bits += (len(hosts) - 1) * pos * layer.out_ch * 32
    assert bits == expect_bits


def test_dram_energy_monotonicity():
    base = CostModel()
    pricier = replace(base, dram_energy_j_per_byte=base.dram_energy_j_per_byte * 3)
    net = small_workload()
    budget = 0.24 * 26
    assert single_chip_report(pricier, net, budget).total_energy_j >= \
        single_chip_report(base, net, budget).total_energy_j
    assert hybrid_report(pricier).total_energy_j == \
        hybrid_report(base).total_energy_j


def test_standby_zero_for_pure_rom_positive_for_sram():
    cost = CostModel()
    net = small_workload()
    all_rom = NetworkGraph([replace(l, placement=ROM, trainable=False)
                            if l.parametric else l for l in net.layers],
                           net.input_shape)
    rep = hybrid_report(cost, all_rom)
    assert rep.breakdown["standby"] == 0.0
    assert single_chip_report(cost, net).breakdown["standby"] > 0.0


# ------------------------------------------------------------------ compare

def test_identical_reports_compare_to_unity():
    rep = hybrid_report(CostModel())
    ratios = compare(rep, rep)
    assert ratios["energy_eff_ratio"] == 1.0
    assert ratios["latency_ratio"] == 1.0
    assert ratios["area_ratio"] == 1.0


def test_workload_mismatch_rejected():
    cost = CostModel()
    a = hybrid_report(cost)
    b = simulate_inference(size_for_network(small_workload(), cost),
                           small_workload(),
                           plan_system(small_workload(),
                                       size_for_network(small_workload(), cost)),
                           cost, workload_id="other")
    with pytest.raises(WorkloadMismatchError):
        compare(a, b)


def test_scale_freeness_of_ratios():
    cost = CostModel()
    scaled = cost.scaled(7.0)
    net = small_workload()
    budget = size_for_network(net, cost).area_mm2
    r1 = compare(hybrid_report(cost), single_chip_report(cost, budget=budget))
    r2 = compare(hybrid_report(scaled),
                 single_chip_report(scaled, budget=budget))
    for key in ("energy_eff_ratio", "latency_ratio", "area_ratio"):
        assert r2[key] == pytest.approx(r1[key], rel=1e-12)


def test_scaled_cost_model_scales_every_energy_term():
    cost = CostModel()
    rep1 = hybrid_report(cost, include_boot=True)
    rep7 = hybrid_report(cost.scaled(7.0), include_boot=True)
    assert rep7.total_energy_j == pytest.approx(7 * rep1.total_energy_j,
                                                rel=1e-12)
    assert rep7.latency_s == rep1.latency_s


def test_undersized_hybrid_capacity_rejected():
    from dataclasses import replace as drep
    from romcim.errors import CapacityError

    cost = CostModel()
    net = small_workload()
    cfg = size_for_network(net, cost)
    plan = plan_system(net, cfg)
    starved = drep(cfg, rom_macros=0)
    with pytest.raises(CapacityError):
        simulate_inference(starved, net, plan, cost, workload_id="toy")


# ----------------------------------------------------------- branch overhead

def test_latency_overhead_zero_without_branch():
    from romcim.system import latency_overhead

    net = small_workload()
    assert latency_overhead(net, net, CostModel()) == 0.0


def test_latency_overhead_small_with_parallel_branch():
    from romcim.branch import ReBranchConfig, build_rebranch
    from romcim.system import latency_overhead

    net = small_workload()
    branched, _, _ = build_rebranch(net, {}, ReBranchConfig(4, 4, (3, 3)))
    overhead = latency_overhead(branched, net, CostModel())
    assert 0.0 <= overhead <= 0.10


# ---------------------------------------------------------------- cost model

def test_cost_model_rejects_negative_energy():
    with pytest.raises(ValidationError):
        CostModel(adc_energy_j=-1.0)


def test_cost_model_requires_denser_rom():
    with pytest.raises(ValidationError):
        CostModel(rom_cell_area_um2=0.5, sram_cell_area_um2=0.4)


def test_workload_parameter_counts():
    from romcim.workloads import resnet18_scale, tiny_yolo_scale, yolo_scale
    yolo, _ = yolo_scale()
    tiny, _ = tiny_yolo_scale()
    resnet, _ = resnet18_scale()
    assert yolo.total_params() == pytest.approx(46e6, rel=0.02)
    assert tiny.total_params() == pytest.approx(11.3e6, rel=0.02)
    assert resnet.total_params() == pytest.approx(11.7e6, rel=0.01)
