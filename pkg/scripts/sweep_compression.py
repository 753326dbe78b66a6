#!/usr/bin/env python3
"""Grid sweep of the branch compression/decompression ratios.

For each (compress, decompress) pair this reports the trainable parameter
share and the memory-area ratio of an all-SRAM baseline over the mixed
ROM+branch placement, on a VGG-8-like conv stack.
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import numpy as np  # noqa: E402

from romcim.branch import (ReBranchConfig, build_rebranch,  # noqa: E402
                           memory_report)
from romcim.graph import LayerSpec, NetworkGraph, ROM, SRAM  # noqa: E402
from romcim.quant import QuantTensor  # noqa: E402

CHANNELS = [(64, 64), (64, 128), (128, 128), (128, 256), (256, 256),
            (256, 256)]


def vgg_like():
    layers = []
    for i, o in CHANNELS:
        layers.append(LayerSpec("conv2d", in_ch=i, out_ch=o, kernel=3, pad=1,
                                placement=ROM, trainable=False, out_scale=0.1))
    layers.append(LayerSpec("fully_connected", in_ch=256 * 4 * 4, out_ch=10,
                            out_scale=0.1, placement=SRAM))
    net = NetworkGraph(layers, (64, 4, 4)).validate()
    weights = {i: QuantTensor(np.zeros(l.weight_shape(
        net.in_features(i) if l.kind == "fully_connected" else None),
        dtype=np.int64), bits=8, signed=True, scale=0.1)
        for i, l in enumerate(net.layers) if l.parametric}
    return net, weights


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--ratios", nargs="*", type=int, default=[1, 2, 4, 8])
    parser.add_argument("--rom-cell-um2", type=float, default=0.014)
    parser.add_argument("--density-ratio", type=float, default=25.6)
    args = parser.parse_args()

    rom_cell = args.rom_cell_um2
    sram_cell = rom_cell * args.density_ratio
    base_net, _ = vgg_like()
    base = memory_report(base_net, rom_cell, sram_cell)
    all_sram_area = (base["rom_bits"] + base["sram_bits"]) * sram_cell

    print(f"{'D':>3s} {'U':>3s} {'DU':>4s} {'trainable params':>17s} "
          f"{'sram share':>11s} {'area saving':>12s}")
    for d in args.ratios:
        for u in args.ratios:
            net, weights = vgg_like()
            offset = 0
            for conv_idx in range(len(CHANNELS)):
                idx = conv_idx + offset
                cfg = ReBranchConfig(d, u, (idx, idx))
                net, weights, _ = build_rebranch(net, weights, cfg)
                offset += 4
            rep = memory_report(net, rom_cell, sram_cell)
            mixed_area = rep["rom_area_um2"] + rep["sram_area_um2"]
            print(f"{d:3d} {u:3d} {d * u:4d} {rep['sram_params']:17d} "
                  f"{rep['sram_fraction']:11.4f} "
                  f"{all_sram_area / mixed_area:11.2f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
