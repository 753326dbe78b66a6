#!/usr/bin/env python3
"""Write a small demo network, cost model and dataset for the CLI.

    python3 scripts/make_demo_inputs.py demo/
    romcim simulate demo/net.json demo/costmodel.json --config hybrid --out demo/run
    romcim rebranch demo/net.json --D 4 --U 4 --group 2:2 --out demo/branch
    romcim train demo/net.json demo/dataset.npz --epochs 5 --out demo/train
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

import numpy as np  # noqa: E402

from romcim import netio  # noqa: E402
from romcim.graph import LayerSpec, NetworkGraph, ROM, SRAM  # noqa: E402
from romcim.system import CostModel  # noqa: E402
from romcim.training import Dataset  # noqa: E402


def demo_net():
    layers = [
        LayerSpec("conv2d", in_ch=2, out_ch=8, kernel=3, pad=1,
                  placement=ROM, trainable=False, out_scale=0.1, name="stem"),
        LayerSpec("relu", in_ch=8, out_ch=8, trainable=False),
        LayerSpec("conv2d", in_ch=8, out_ch=16, kernel=3, pad=1,
                  placement=ROM, trainable=False, out_scale=0.1, name="body"),
        LayerSpec("relu", in_ch=16, out_ch=16, trainable=False),
        LayerSpec("maxpool", in_ch=16, out_ch=16, kernel=2, stride=2,
                  trainable=False),
        LayerSpec("fully_connected", in_ch=16 * 4 * 4, out_ch=4,
                  out_scale=0.1, placement=SRAM, name="head"),
    ]
    return NetworkGraph(layers, (2, 8, 8)).validate()


def main() -> int:
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo")
    out.mkdir(parents=True, exist_ok=True)
    netio.write_json(out / "net.json", netio.graph_to_dict(demo_net(),
                                                           name="demo"))
    netio.write_json(out / "costmodel.json",
                     netio.costmodel_to_dict(CostModel()))
    rng = np.random.default_rng(0)
    netio.save_dataset(out / "dataset.npz",
                       Dataset(rng.normal(0, 1, (64, 2, 8, 8)),
                               rng.integers(0, 4, 64)))
    print(f"wrote net.json, costmodel.json, dataset.npz under {out}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
