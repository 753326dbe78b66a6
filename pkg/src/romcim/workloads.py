"""Synthetic benchmark networks and the desk-scale transfer task.

The three system workloads mirror public detector/classifier stacks at
224x224: a large ~46M-weight detector, an ~11.7M-weight resnet-18-style
classifier, and an ~11.3M-weight tiny detector. They are cost-model
workloads: parameter counts and feature-map shapes are faithful, activation
functions sit between conv runs (one relu per run) so that each run forms a
contiguous trunk group a residual branch can wrap.

The transfer task is a pair of small 4-class blob-localization problems
whose second task inverts the blob contrast, which defeats a frozen
first-layer feature extractor but is recoverable by small trainable
branches.
"""

from dataclasses import replace

import numpy as np

from .branch import ReBranchConfig, build_rebranch
from .graph import LayerSpec, NetworkGraph, ROM, SRAM
from .training import Dataset


def _conv(in_ch, out_ch, kernel=3, stride=1, placement=ROM, **kw):
    trainable = kw.pop("trainable", placement == SRAM)
    kind = "pointwise" if kernel == 1 else "conv2d"
    return LayerSpec(kind, in_ch=in_ch, out_ch=out_ch, kernel=kernel,
                     stride=stride, pad=0 if kernel == 1 else kernel // 2,
                     placement=placement, trainable=trainable,
                     out_scale=0.1, **kw)


class _StackBuilder:
    def __init__(self, input_shape):
        self.layers = []
        self.input_shape = input_shape
        self.ch = input_shape[0]
        self.branch_groups = []

    def conv_run(self, specs, placement=ROM, branchable=True):
        """A contiguous run of convs followed by one relu."""
        first = len(self.layers)
        for out_ch, kernel in specs:
            self.layers.append(_conv(self.ch, out_ch, kernel,
                                     placement=placement))
            self.ch = out_ch
        last = len(self.layers) - 1
        if branchable and placement == ROM:
            self.branch_groups.append((first, last))
        self.layers.append(LayerSpec("relu", in_ch=self.ch, out_ch=self.ch,
                                     trainable=False))
        return self

    def pool(self, kernel=2, stride=2):
        self.layers.append(LayerSpec("maxpool", in_ch=self.ch, out_ch=self.ch,
                                     kernel=kernel, stride=stride,
                                     trainable=False))
        return self

    def head_conv(self, out_ch, kernel=1):
        self.layers.append(_conv(self.ch, out_ch, kernel, placement=SRAM))
        self.ch = out_ch
        return self

    def build(self, workload_id):
        net = NetworkGraph(self.layers, self.input_shape).validate()
        return net, {"workload_id": workload_id,
                     "branch_groups": list(self.branch_groups)}


def yolo_scale(input_hw: int = 224):
    """Large detector stack, ~46.4M 8-bit weights."""
    b = _StackBuilder((3, input_hw, input_hw))
    b.conv_run([(32, 3)], branchable=False).pool()
    b.conv_run([(64, 3)]).pool()
    b.conv_run([(128, 3), (64, 1), (128, 3)]).pool()
    b.conv_run([(256, 3), (128, 1), (256, 3)]).pool()
    b.conv_run([(512, 3), (256, 1), (512, 3), (256, 1), (512, 3)]).pool()
    b.conv_run([(1024, 3), (512, 1), (1024, 3), (512, 1), (1024, 3)])
    b.conv_run([(1024, 3), (1024, 3), (800, 3)])
    b.head_conv(425, kernel=1)
    return b.build(f"yolo-scale-{input_hw}")


def tiny_yolo_scale(input_hw: int = 224):
    """Small detector stack, ~11.2M 8-bit weights."""
    b = _StackBuilder((3, input_hw, input_hw))
    b.conv_run([(16, 3)], branchable=False).pool()
    b.conv_run([(32, 3)]).pool()
    b.conv_run([(64, 3)]).pool()
    b.conv_run([(128, 3)]).pool()
    b.conv_run([(256, 3)]).pool()
    b.conv_run([(512, 3)])
    b.conv_run([(1024, 3)])
    b.conv_run([(512, 3)])
    b.head_conv(425, kernel=1)
    return b.build(f"tiny-yolo-scale-{input_hw}")


def resnet18_scale(input_hw: int = 224):
    """Residual classifier stack, ~11.7M 8-bit weights."""
    layers = [
        _conv(3, 64, kernel=7, stride=2),
        LayerSpec("relu", in_ch=64, out_ch=64, trainable=False),
        LayerSpec("maxpool", in_ch=64, out_ch=64, kernel=3, stride=2, pad=1,
                  trainable=False),
    ]
    branch_groups = []

    def block(ch_in, ch_out, stride):
        base = len(layers)
        entry = base - 1
        layers.append(replace(_conv(ch_in, ch_out, 3, stride=stride),
                              inputs=(entry,)))
        branch_groups.append((base, base))
        layers.append(LayerSpec("relu", in_ch=ch_out, out_ch=ch_out,
                                trainable=False))
        layers.append(_conv(ch_out, ch_out, 3))
        branch_groups.append((base + 2, base + 2))
        if stride != 1 or ch_in != ch_out:
            layers.append(replace(
                _conv(ch_in, ch_out, kernel=1, stride=stride),
                inputs=(entry,)))
            shortcut = base + 3
        else:
            shortcut = entry
        layers.append(LayerSpec("residual_add", in_ch=ch_out, out_ch=ch_out,
                                inputs=(base + 2, shortcut), out_scale=0.1))
        layers.append(LayerSpec("relu", in_ch=ch_out, out_ch=ch_out,
                                trainable=False))

    ch = 64
    for stage_ch, blocks in ((64, 2), (128, 2), (256, 2), (512, 2)):
        for bi in range(blocks):
            stride = 2 if (bi == 0 and stage_ch != 64) else 1
            block(ch, stage_ch, stride)
            ch = stage_ch
    layers.append(LayerSpec("avgpool", in_ch=512, out_ch=512, kernel=7,
                            stride=7, trainable=False))
    layers.append(LayerSpec("fully_connected", in_ch=512, out_ch=1000,
                            out_scale=0.1, placement=SRAM))
    net = NetworkGraph(layers, (3, input_hw, input_hw)).validate()
    return net, {"workload_id": f"resnet18-scale-{input_hw}",
                 "branch_groups": branch_groups}


def hybrid_variant(net: NetworkGraph, meta: dict, compress: int = 4,
                   decompress: int = 4, seed: int = 0):
    """Base workload with a residual branch around every eligible trunk run."""
    graph, weights = net, {}
    groups = []
    for first, last in sorted(meta["branch_groups"], reverse=True):
        cfg = ReBranchConfig(compress, decompress, (first, last))
        graph, weights, group = build_rebranch(graph, weights, cfg, seed=seed)
        groups.append(group)
    return graph, weights, groups


def workload_params(net: NetworkGraph) -> int:
    return net.total_params()


# ------------------------------------------------------- transfer task data


SMOOTH_BLOB = np.array([[0.5, 1.0, 0.5],
                        [1.0, 1.5, 1.0],
                        [0.5, 1.0, 0.5]])
CHECKER_BLOB = 2.0 * np.array([[+1.0, -1.0, +1.0],
                               [-1.0, +1.0, -1.0],
                               [+1.0, -1.0, +1.0]])


def _blob_images(rng, n, blob, noise=0.8, hw=10):
    """Images with one 3x3 patch per sample; label = quadrant of the patch."""
    x = rng.normal(0.0, noise, (n, 1, hw, hw))
    y = rng.integers(0, 4, n)
    half = hw // 2
    for i, q in enumerate(y):
        qi, qj = divmod(int(q), 2)
        ci = rng.integers(1, half - 1) + qi * half
        cj = rng.integers(1, half - 1) + qj * half
        x[i, 0, ci - 1:ci + 2, cj - 1:cj + 2] += blob
    return Dataset(x, y)


def synthetic_transfer_pair(seed: int = 0, n_train: int = 512,
                            n_test: int = 256):
    """Task A: smooth bright blobs. Task B: zero-mean checkerboard patches.

    A first layer trained on smooth bumps responds near zero to the
    checkerboard texture, so a frozen trunk with a linear head transfers
    poorly while trainable branch filters recover the task.
    Returns ((train_a, test_a), (train_b, test_b)).
    """
    rng = np.random.default_rng(seed)
    task_a = (_blob_images(rng, n_train, SMOOTH_BLOB),
              _blob_images(rng, n_test, SMOOTH_BLOB))
    task_b = (_blob_images(rng, n_train, CHECKER_BLOB),
              _blob_images(rng, n_test, CHECKER_BLOB))
    return task_a, task_b


def transfer_trunk_net():
    """Two-conv CNN for the blob task; branch-compatible channel counts."""
    layers = [
        _conv(1, 8, placement=SRAM),
        LayerSpec("relu", in_ch=8, out_ch=8, trainable=False),
        LayerSpec("maxpool", in_ch=8, out_ch=8, kernel=2, stride=2,
                  trainable=False),
        _conv(8, 8, placement=SRAM),
        LayerSpec("relu", in_ch=8, out_ch=8, trainable=False),
        LayerSpec("maxpool", in_ch=8, out_ch=8, kernel=2, stride=2,
                  trainable=False),
        LayerSpec("fully_connected", in_ch=8 * 2 * 2, out_ch=4,
                  out_scale=0.1, placement=SRAM),
    ]
    return NetworkGraph(layers, (1, 10, 10)).validate()
