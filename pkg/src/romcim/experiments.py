"""Reproducible experiment drivers used by the scripts and acceptance tests.

run_system_comparison evaluates one workload in the three silicon
configurations (hybrid ROM+SRAM, iso-area single-chip SRAM with DRAM
reload, SRAM chiplets) and reports efficiency ratios, branch latency
overhead and a DRAM-energy sensitivity sweep.

transfer_benchmark runs the committed desk-scale transfer experiment:
pretrain a small CNN on task A, freeze it into ROM at 8 bits, then compare
a linear probe, residual-branch fine-tuning, and full fine-tuning on the
contrast-inverted task B.
"""

from dataclasses import replace

from .branch import ReBranchConfig, build_rebranch, memory_report
from .graph import NetworkGraph, ROM
from .system import (SRAM_CHIPLETS, SRAM_SINGLE, CostModel, as_all_sram,
                     compare, placed_bits, plan_system, simulate_inference,
                     size_for_network, size_iso_area)
from .training import (TrainState, accuracy, deploy_quantized, fine_tune,
                       init_weights)
from .workloads import (hybrid_variant, synthetic_transfer_pair,
                        transfer_trunk_net)


def run_system_comparison(builder, cost: CostModel = None, compress: int = 4,
                          decompress: int = 4,
                          dram_sweep=(0.25, 1.0, 4.0)) -> dict:
    """Three-way comparison for one workload builder; returns a result dict."""
    cost = cost or CostModel()
    base, meta = builder()
    wid = meta["workload_id"]
    branched, _, _ = hybrid_variant(base, meta, compress, decompress)
    twin_net = as_all_sram(base)

    hybrid_cfg = size_for_network(branched, cost)
    budget = hybrid_cfg.area_mm2
    twin_cfg = size_iso_area(SRAM_SINGLE, budget, cost)
    chiplet_cfg = size_iso_area(SRAM_CHIPLETS, budget, cost,
                                required_bits=sum(placed_bits(twin_net).values()))

    plans = {
        "hybrid": plan_system(branched, hybrid_cfg),
        "sram_single": plan_system(twin_net, twin_cfg),
        "sram_chiplets": plan_system(twin_net, chiplet_cfg),
    }
    reports = {
        "hybrid": simulate_inference(hybrid_cfg, branched, plans["hybrid"],
                                     cost, workload_id=wid),
        "sram_single": simulate_inference(twin_cfg, twin_net,
                                          plans["sram_single"], cost,
                                          workload_id=wid),
        "sram_chiplets": simulate_inference(chiplet_cfg, twin_net,
                                            plans["sram_chiplets"], cost,
                                            workload_id=wid),
    }

    # branch latency overhead: identical hybrid mapping with and without it
    base_cfg = size_for_network(base, cost)
    base_plan = plan_system(base, base_cfg)
    base_report = simulate_inference(base_cfg, base, base_plan, cost,
                                     workload_id=wid)
    lat_with = reports["hybrid"].latency_s
    lat_without = base_report.latency_s
    overhead = (lat_with - lat_without) / lat_without

    sensitivity = []
    for factor in dram_sweep:
        c2 = replace(cost, dram_energy_j_per_byte=cost.dram_energy_j_per_byte
                     * factor)
        h = simulate_inference(hybrid_cfg, branched, plans["hybrid"], c2,
                               workload_id=wid)
        s = simulate_inference(twin_cfg, twin_net, plans["sram_single"], c2,
                               workload_id=wid)
        sensitivity.append({"dram_factor": factor,
                            "eff_ratio": compare(h, s)["energy_eff_ratio"]})

    return {
        "workload_id": wid,
        "params": base.total_params(),
        "reports": reports,
        "vs_sram_single": compare(reports["hybrid"], reports["sram_single"]),
        "vs_chiplets": compare(reports["hybrid"], reports["sram_chiplets"]),
        "chiplet_count": chiplet_cfg.chiplet_count,
        "branch_latency_overhead": overhead,
        "dram_sensitivity": sensitivity,
        "memory": memory_report(branched, cost.rom_cell_area_um2,
                                cost.sram_cell_area_um2),
    }


def _freeze_backbone(net: NetworkGraph) -> NetworkGraph:
    """All parametric layers except the classifier head into frozen ROM."""
    layers = list(net.layers)
    param = [i for i, l in enumerate(layers) if l.parametric]
    for i in param[:-1]:
        layers[i] = replace(layers[i], placement=ROM, trainable=False)
    return NetworkGraph(layers, net.input_shape)


def transfer_benchmark(seed: int = 0, pretrain_epochs: int = 20,
                       transfer_epochs: int = 15, pretrain_lr: float = 0.05,
                       transfer_lr: float = 0.02) -> dict:
    """Committed seeded transfer experiment; returns accuracies and margins."""
    (train_a, test_a), (train_b, test_b) = synthetic_transfer_pair(seed)
    net = transfer_trunk_net()

    pretrain = TrainState(net=net, weights=init_weights(net, seed=seed),
                          learning_rate=pretrain_lr, rng_seed=seed)
    fine_tune(pretrain, train_a, epochs=pretrain_epochs)
    acc_a = accuracy(net, pretrain.weights, test_a)
    qweights = deploy_quantized(pretrain)

    frozen_net = _freeze_backbone(net)

    # linear probe: frozen 8-bit trunk, trainable head only
    probe = TrainState.from_quantized(frozen_net, qweights,
                                      learning_rate=transfer_lr,
                                      rng_seed=seed + 1)
    fine_tune(probe, train_b, epochs=transfer_epochs)
    acc_probe = accuracy(frozen_net, probe.weights, test_b)

    # residual branches around both convs plus the trainable head
    g, w = frozen_net, dict(qweights)
    g, w, _ = build_rebranch(g, w, ReBranchConfig(4, 4, (3, 3)), seed=seed)
    g, w, _ = build_rebranch(g, w, ReBranchConfig(1, 4, (0, 0)), seed=seed + 7)
    branch = TrainState.from_quantized(g, w, learning_rate=transfer_lr,
                                       rng_seed=seed + 2)
    fine_tune(branch, train_b, epochs=transfer_epochs)
    acc_branch = accuracy(g, branch.weights, test_b)

    # full fine-tune from the same deployed weights
    full = TrainState.from_quantized(net, qweights, learning_rate=transfer_lr,
                                     rng_seed=seed + 3)
    fine_tune(full, train_b, epochs=transfer_epochs)
    acc_full = accuracy(net, full.weights, test_b)

    branch_params = sum(w[i].size for i in g.parametric_indices()
                        if g.layers[i].trainable)
    total_params = sum(w[i].size for i in g.parametric_indices())
    return {
        "task_a_accuracy": acc_a,
        "frozen_probe_accuracy": acc_probe,
        "rebranch_accuracy": acc_branch,
        "full_finetune_accuracy": acc_full,
        "margin_over_probe": acc_branch - acc_probe,
        "margin_below_full": acc_full - acc_branch,
        "trainable_fraction": branch_params / total_params,
        "seed": seed,
    }
