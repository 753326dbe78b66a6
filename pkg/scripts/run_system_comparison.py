#!/usr/bin/env python3
"""Three-way silicon comparison on the benchmark workloads.

For each workload (large detector, tiny detector, resnet-18-style
classifier) this evaluates the hybrid ROM+SRAM chip, the iso-area
single-chip SRAM twin with DRAM weight reload, and the SRAM chiplet
configuration, then prints efficiency/latency/area ratios, the residual
branch latency overhead, and a DRAM-energy sensitivity table.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from romcim.experiments import run_system_comparison  # noqa: E402
from romcim.netio import canonical_json, load_costmodel  # noqa: E402
from romcim.system import CostModel  # noqa: E402
from romcim.workloads import (resnet18_scale, tiny_yolo_scale,  # noqa: E402
                              yolo_scale)

BUILDERS = {
    "yolo-scale": yolo_scale,
    "tiny-yolo-scale": tiny_yolo_scale,
    "resnet18-scale": resnet18_scale,
}


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--cost", default="", help="cost model JSON (optional)")
    parser.add_argument("--workloads", nargs="*", default=sorted(BUILDERS))
    parser.add_argument("--out", default="", help="write results JSON here")
    args = parser.parse_args()

    cost = load_costmodel(args.cost) if args.cost else CostModel()
    results = {}
    for name in args.workloads:
        res = run_system_comparison(BUILDERS[name], cost)
        results[res["workload_id"]] = res
        reports = res["reports"]
        print(f"\n=== {res['workload_id']} ({res['params'] / 1e6:.1f}M weights)")
        print(f"{'config':14s} {'energy [mJ]':>12s} {'latency [ms]':>13s} "
              f"{'area [mm2]':>11s} {'eff [GOP/J]':>12s}")
        for kind, rep in reports.items():
            print(f"{kind:14s} {rep.total_energy_j * 1e3:12.4f} "
                  f"{rep.latency_s * 1e3:13.3f} {rep.area_mm2:11.1f} "
                  f"{rep.energy_eff_ops_per_j / 1e9:12.2f}")
        print(f"hybrid vs single-chip efficiency: "
              f"{res['vs_sram_single']['energy_eff_ratio']:.2f}x")
        print(f"hybrid vs chiplets efficiency:    "
              f"{res['vs_chiplets']['energy_eff_ratio']:.2f}x "
              f"({res['chiplet_count']} chiplets, area ratio "
              f"{1 / res['vs_chiplets']['area_ratio']:.1f}x larger)")
        print(f"branch latency overhead:          "
              f"{res['branch_latency_overhead'] * 100:.2f}%")
        print("DRAM-energy sensitivity (hybrid/single-chip efficiency):")
        for row in res["dram_sensitivity"]:
            print(f"  x{row['dram_factor']:<5g} -> {row['eff_ratio']:.2f}")

    if args.out:
        doc = {
            wid: {
                "vs_sram_single": res["vs_sram_single"],
                "vs_chiplets": res["vs_chiplets"],
                "branch_latency_overhead": res["branch_latency_overhead"],
                "dram_sensitivity": res["dram_sensitivity"],
                "reports": {k: r.to_dict() for k, r in res["reports"].items()},
            }
            for wid, res in results.items()
        }
        Path(args.out).write_text(canonical_json(doc))
        print(f"\nwrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
