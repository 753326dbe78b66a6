"""Command-line frontend: simulate | rebranch | train | map | compare | macro-stats.

Exit codes: 0 success, 1 input/validation failure, 2 runtime failure.
All randomness flows from --seed; outputs are canonical JSON/CSV so a rerun
with an identical manifest is byte-identical. The ROMCIM_OUT environment
variable overrides --out.
"""

import argparse
import csv
import os
import sys
from pathlib import Path

from . import netio
from .branch import ReBranchConfig, build_rebranch, memory_report
from .errors import ValidationError
from .macro import MacroConfig, macro_stats
from .mapping import MacroInventory, evaluate_plan, plan_network
from .system import (HYBRID, SRAM_CHIPLETS, SRAM_SINGLE, SimReport,
                     as_all_sram, compare, placed_bits, plan_system,
                     simulate_inference, size_for_network, size_iso_area)
from .training import (TrainState, accuracy, deploy_quantized, fine_tune,
                       frozen_hash, init_weights)

CONFIG_NAMES = {"hybrid": HYBRID, "sram-single": SRAM_SINGLE,
                "sram-chiplets": SRAM_CHIPLETS}


def _out_dir(args) -> Path:
    out = os.environ.get("ROMCIM_OUT", args.out)
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_breakdown_csv(path, report: SimReport):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["layer", "kind", "component", "value"])
        for row in report.per_layer:
            for component in ("macs", "conversions", "buffer_bytes", "cycles",
                              "cim_energy_j", "adc_energy_j",
                              "buffer_energy_j"):
                if component in row:
                    wr.writerow([row["layer"], row["kind"], component,
                                 row[component]])
        for component in ("dram", "chiplet_link", "standby"):
            wr.writerow(["-", "total", component + "_energy_j",
                         report.breakdown[component]])


def cmd_simulate(args) -> int:
    net, weights, name = netio.load_network(args.network, seed=args.seed)
    cost = netio.load_costmodel(args.costmodel)
    wid = args.workload_id or name or Path(args.network).stem
    kind = CONFIG_NAMES[args.config]

    hybrid_cfg = size_for_network(net, cost)
    if kind == HYBRID:
        sim_net, sys_cfg = net, hybrid_cfg
    else:
        sim_net = as_all_sram(net)
        budget = args.budget_mm2 or hybrid_cfg.area_mm2
        sys_cfg = size_iso_area(kind, budget, cost,
                                required_bits=sum(placed_bits(sim_net).values()))
    plan = plan_system(sim_net, sys_cfg)
    report = simulate_inference(sys_cfg, sim_net, plan, cost, workload_id=wid,
                                include_boot=args.include_boot)

    out = _out_dir(args)
    manifest = netio.build_manifest(
        "simulate",
        {"config": args.config, "workload_id": wid,
         "include_boot": args.include_boot},
        [args.network, args.costmodel], args.seed, out)
    doc = report.to_dict()
    doc["manifest"] = manifest
    netio.write_json(out / "report.json", doc)
    _write_breakdown_csv(out / "breakdown.csv", report)
    netio.write_json(out / "manifest.json", manifest)
    print(f"{wid} [{args.config}]: {report.total_energy_j:.4e} J, "
          f"{report.latency_s:.4e} s, {report.area_mm2:.1f} mm2 -> {out}")
    return 0


def cmd_rebranch(args) -> int:
    net, weights, name = netio.load_network(args.network, seed=args.seed)
    if args.weights:
        weights.update(netio.load_weights(args.weights))
    first, last = (int(x) for x in args.group.split(":"))
    cfg = ReBranchConfig(compress_ratio=args.D, decompress_ratio=args.U,
                         trunk_group=(first, last))
    g2, w2, group = build_rebranch(net, weights, cfg, seed=args.seed)

    out = _out_dir(args)
    manifest = netio.build_manifest(
        "rebranch", {"D": args.D, "U": args.U, "group": args.group},
        [args.network] + ([args.weights] if args.weights else []),
        args.seed, out)
    netio.write_json(out / "net_rebranch.json",
                     netio.graph_to_dict(g2, name=name or "rebranch"))
    netio.save_weights_npz(out / "weights_rebranch.npz", w2)
    cost_cells = (0.014, 0.014 * 25.6)
    report = memory_report(g2, *cost_cells)
    report.update({
        "trunk_params": group.trunk_params,
        "res_params": group.res_params,
        "compression_factor": group.compression_factor,
    })
    netio.write_json(out / "memory_report.json", report)
    netio.write_json(out / "manifest.json", manifest)
    print(f"branch over layers {first}:{last}: {group.res_params} trainable "
          f"params = trunk/{group.compression_factor} -> {out}")
    return 0


def cmd_train(args) -> int:
    net, qweights, name = netio.load_network(args.network, seed=args.seed)
    if args.weights:
        qweights.update(netio.load_weights(args.weights))
    floats = init_weights(net, seed=args.seed)
    for i, qt in qweights.items():
        floats[i] = qt.to_float()
    dataset = netio.load_dataset(args.dataset)
    state = TrainState(net=net, weights=floats, learning_rate=args.lr,
                       momentum=args.momentum, rng_seed=args.seed)
    hash_before = frozen_hash(state)
    _, history = fine_tune(state, dataset, epochs=args.epochs,
                           batch_size=args.batch_size)
    hash_after = frozen_hash(state)
    assert hash_before == hash_after  # fine_tune enforces the freeze contract

    out = _out_dir(args)
    netio.save_weights_npz(out / "trained_weights.npz",
                           deploy_quantized(state))
    with open(out / "accuracy.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["epoch", "loss", "accuracy"])
        for epoch, loss, acc in history:
            wr.writerow([epoch, f"{loss:.10g}", f"{acc:.10g}"])
    manifest = netio.build_manifest(
        "train", {"epochs": args.epochs, "lr": args.lr,
                  "momentum": args.momentum, "batch_size": args.batch_size},
        [args.network, args.dataset] + ([args.weights] if args.weights else []),
        args.seed, out)
    netio.write_json(out / "manifest.json", manifest)
    netio.write_json(out / "train_report.json", {
        "schema_version": netio.SCHEMA_VERSION,
        "frozen_hash_before": hash_before,
        "frozen_hash_after": hash_after,
        "epochs": args.epochs,
        "final_accuracy": history[-1][2] if history else None,
        "train_accuracy": accuracy(net, state.weights, dataset),
        "manifest": manifest,
    })
    print(f"trained {args.epochs} epochs; frozen hash stable "
          f"({hash_before[:12]}...) -> {out}")
    return 0


def cmd_map(args) -> int:
    net, weights, name = netio.load_network(args.network, seed=args.seed)
    macro = MacroConfig() if not args.macro else \
        netio.macro_from_dict(netio.read_json(args.macro), args.macro)
    inventory = MacroInventory(chips=args.chips,
                               subarrays_per_chip=args.subarrays)
    tiles, plan = plan_network(net, macro, inventory)
    rep = evaluate_plan(plan, net, macro)

    out = _out_dir(args)
    plan_doc = {
        "schema_version": netio.SCHEMA_VERSION,
        "macro": {"rows": macro.rows, "cols": macro.cols,
                  "adc_count": macro.adc_count},
        "assignments": [
            {"layer": a.tile.layer_idx, "row_tile": a.tile.row_tile,
             "col_tile": a.tile.col_tile, "rows": a.tile.rows,
             "logical_cols": a.tile.logical_cols, "chip": a.chip,
             "macro": a.macro, "row_off": a.row_off, "col_off": a.col_off}
            for a in plan.assignments
        ],
    }
    netio.write_json(out / "plan.json", plan_doc)
    netio.write_json(out / "utilization.json", {
        "schema_version": netio.SCHEMA_VERSION,
        "adc_utilization": rep.adc_utilization,
        "latency_cycles": rep.latency_cycles,
        "total_conversions": rep.total_conversions,
        "useful_conversions": rep.useful_conversions,
        "occupancy": {str(k): v for k, v in rep.occupancy.items()},
    })
    manifest = netio.build_manifest(
        "map", {"chips": args.chips, "subarrays": args.subarrays},
        [args.network], args.seed, out)
    netio.write_json(out / "manifest.json", manifest)
    print(f"{len(plan.assignments)} tiles over {len(plan.macros_used())} "
          f"subarrays, ADC utilization {rep.adc_utilization:.3f} -> {out}")
    return 0


def _report_from_file(path) -> SimReport:
    doc = netio.read_json(path)
    for key in ("kind", "workload_hash", "total_energy_j", "latency_s",
                "area_mm2", "breakdown", "ops"):
        if key not in doc:
            raise ValidationError(f"{path}.{key}: missing")
    return SimReport(kind=doc["kind"], workload_id=doc.get("workload_id", ""),
                     workload_hash=doc["workload_hash"],
                     total_energy_j=doc["total_energy_j"],
                     latency_s=doc["latency_s"], area_mm2=doc["area_mm2"],
                     breakdown=doc["breakdown"], ops=doc["ops"])


def cmd_compare(args) -> int:
    a = _report_from_file(args.report_a)
    b = _report_from_file(args.report_b)
    ratios = compare(a, b)
    print(f"{a.kind} vs {b.kind} on {a.workload_id or a.workload_hash}:")
    print(f"  energy efficiency ratio: {ratios['energy_eff_ratio']:.4f}")
    print(f"  latency ratio:           {ratios['latency_ratio']:.4f}")
    print(f"  area ratio:              {ratios['area_ratio']:.4f}")
    if args.out:
        out = _out_dir(args)
        netio.write_json(out / "comparison.json", {
            "schema_version": netio.SCHEMA_VERSION,
            "kinds": list(ratios["kinds"]),
            "energy_eff_ratio": ratios["energy_eff_ratio"],
            "latency_ratio": ratios["latency_ratio"],
            "area_ratio": ratios["area_ratio"],
        })
    return 0


def cmd_macro_stats(args) -> int:
    macro = MacroConfig() if not args.config else \
        netio.macro_from_dict(netio.read_json(args.config), args.config)
    stats = macro_stats(macro)
    doc = {"schema_version": netio.SCHEMA_VERSION, **stats}
    print(netio.canonical_json(doc), end="")
    if args.out:
        out = _out_dir(args)
        netio.write_json(out / "macro_stats.json", doc)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="romcim",
        description="ROM compute-in-memory inference and cost simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="energy/latency/area of one config")
    sim.add_argument("network")
    sim.add_argument("costmodel")
    sim.add_argument("--config", choices=sorted(CONFIG_NAMES), default="hybrid")
    sim.add_argument("--out", default="out")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--workload-id", default="")
    sim.add_argument("--include-boot", action="store_true")
    sim.add_argument("--budget-mm2", type=float, default=0.0)
    sim.set_defaults(func=cmd_simulate)

    reb = sub.add_parser("rebranch", help="add a residual branch to a network")
    reb.add_argument("network")
    reb.add_argument("--D", type=int, default=4, help="channel compression ratio")
    reb.add_argument("--U", type=int, default=4, help="channel decompression ratio")
    reb.add_argument("--group", required=True, help="trunk layer range first:last")
    reb.add_argument("--weights", default="")
    reb.add_argument("--out", default="out")
    reb.add_argument("--seed", type=int, default=0)
    reb.set_defaults(func=cmd_rebranch)

    tr = sub.add_parser("train", help="fine-tune the trainable layers")
    tr.add_argument("network")
    tr.add_argument("dataset")
    tr.add_argument("--epochs", type=int, default=5)
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--lr", type=float, default=0.05)
    tr.add_argument("--momentum", type=float, default=0.9)
    tr.add_argument("--batch-size", type=int, default=32)
    tr.add_argument("--weights", default="")
    tr.add_argument("--out", default="out")
    tr.set_defaults(func=cmd_train)

    mp = sub.add_parser("map", help="tile and pack weights onto subarrays")
    mp.add_argument("network")
    mp.add_argument("--subarrays", type=int, default=256)
    mp.add_argument("--chips", type=int, default=1)
    mp.add_argument("--macro", default="")
    mp.add_argument("--out", default="out")
    mp.add_argument("--seed", type=int, default=0)
    mp.set_defaults(func=cmd_map)

    cp = sub.add_parser("compare", help="ratio summary of two reports")
    cp.add_argument("report_a")
    cp.add_argument("report_b")
    cp.add_argument("--out", default="")
    cp.set_defaults(func=cmd_compare)

    ms = sub.add_parser("macro-stats", help="datasheet arithmetic of one macro")
    ms.add_argument("--config", default="")
    ms.add_argument("--out", default="")
    ms.set_defaults(func=cmd_macro_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1
    except Exception as err:  # runtime failures (divergence, internal)
        print(f"runtime error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
