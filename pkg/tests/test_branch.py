import numpy as np
import pytest

from romcim.branch import (ReBranchConfig, atl_split, build_rebranch,
                           equivalent_conv, memory_report, spwd_decorate)
from romcim.errors import ValidationError
from romcim.graph import LayerSpec, NetworkGraph, ROM, SRAM
from romcim.quant import QuantTensor
from romcim.reference import forward_ref


def conv(in_ch, out_ch, kernel=3, pad=1, **kw):
    return LayerSpec("conv2d", in_ch=in_ch, out_ch=out_ch, kernel=kernel,
                     pad=pad, **kw)


def frozen_conv(in_ch, out_ch, **kw):
    return conv(in_ch, out_ch, placement=ROM, trainable=False, **kw)


def qt(arr, bits=8, scale=1.0):
    return QuantTensor(np.asarray(arr), bits=bits, signed=True, scale=scale)


def stack_net():
    """relu-separated conv stack with a frozen two-conv trunk group."""
    layers = [
        frozen_conv(8, 8, out_scale=0.1),
        LayerSpec("relu", in_ch=8, out_ch=8, trainable=False),
        frozen_conv(8, 16, out_scale=0.1),
        frozen_conv(16, 16, out_scale=0.1),
        LayerSpec("relu", in_ch=16, out_ch=16, trainable=False),
        LayerSpec("fully_connected", in_ch=16 * 6 * 6, out_ch=4, out_scale=0.2),
    ]
    net = NetworkGraph(layers, input_shape=(8, 6, 6)).validate()
    rng = np.random.default_rng(3)
    weights = {
        0: qt(rng.integers(-40, 41, (8, 8, 3, 3)), scale=0.02),
        2: qt(rng.integers(-40, 41, (16, 8, 3, 3)), scale=0.02),
        3: qt(rng.integers(-40, 41, (16, 16, 3, 3)), scale=0.02),
        5: qt(rng.integers(-40, 41, (4, 16 * 6 * 6)), scale=0.01),
    }
    return net, weights


def random_input(seed=0, shape=(1, 8, 6, 6)):
    rng = np.random.default_rng(seed)
    return qt(rng.integers(0, 100, shape), scale=0.5)


# ------------------------------------------------------------ build_rebranch

def test_transform_is_exact_noop_at_build():
    net, weights = stack_net()
    cfg = ReBranchConfig(compress_ratio=4, decompress_ratio=4, trunk_group=(2, 3))
    g2, w2, group = build_rebranch(net, weights, cfg, seed=7)
    for seed in range(5):
        x = random_input(seed)
        before = forward_ref(net, x, weights)
        after = forward_ref(g2, x, w2)
        np.testing.assert_array_equal(before.data, after.data)
        assert before.scale == after.scale


def test_parameter_compression_single_layer():
    # 3x3 conv 64->64 is 36864 params; ratios 4x4 leave 2304 = 36864/16
    net = NetworkGraph([frozen_conv(64, 64, out_scale=0.1)], input_shape=(64, 8, 8))
    weights = {0: qt(np.zeros((64, 64, 3, 3), dtype=np.int64), scale=0.1)}
    cfg = ReBranchConfig(4, 4, (0, 0))
    _, _, group = build_rebranch(net, weights, cfg)
    assert group.trunk_params == 36864
    assert group.res_params == 2304
    assert group.res_params * 16 == group.trunk_params


@pytest.mark.parametrize("d", [1, 2, 4, 8])
@pytest.mark.parametrize("u", [1, 2, 4, 8])
def test_compression_law_exact_over_ratio_grid(d, u):
    net = NetworkGraph([
        frozen_conv(16, 32, out_scale=0.1),
        frozen_conv(32, 16, out_scale=0.1),
        frozen_conv(16, 8, kernel=1, pad=0, out_scale=0.1),
    ], input_shape=(16, 8, 8))
    weights = {
        0: qt(np.zeros((32, 16, 3, 3), dtype=np.int64), scale=0.1),
        1: qt(np.zeros((16, 32, 3, 3), dtype=np.int64), scale=0.1),
        2: qt(np.zeros((8, 16, 1, 1), dtype=np.int64), scale=0.1),
    }
    _, _, group = build_rebranch(net, weights, ReBranchConfig(d, u, (0, 2)))
    assert group.res_params * d * u == group.trunk_params


def test_degenerate_ratios_keep_full_size():
    net = NetworkGraph([frozen_conv(8, 8, out_scale=0.1)], input_shape=(8, 6, 6))
    weights = {0: qt(np.zeros((8, 8, 3, 3), dtype=np.int64), scale=0.1)}
    _, _, group = build_rebranch(net, weights, ReBranchConfig(1, 1, (0, 0)))
    assert group.res_params == group.trunk_params


def test_branch_layer_placements():
    net, weights = stack_net()
    g2, _, group = build_rebranch(net, weights, ReBranchConfig(4, 4, (2, 3)))
    assert g2.layers[group.compress_idx].placement == ROM
    assert not g2.layers[group.compress_idx].trainable
    assert g2.layers[group.decompress_idx].placement == ROM
    for i in group.res_indices:
        assert g2.layers[i].placement == SRAM and g2.layers[i].trainable


def test_seeded_projections_are_deterministic():
    net, weights = stack_net()
    cfg = ReBranchConfig(4, 4, (2, 3))
    _, w_a, ga = build_rebranch(net, weights, cfg, seed=13)
    _, w_b, gb = build_rebranch(net, weights, cfg, seed=13)
    np.testing.assert_array_equal(w_a[ga.compress_idx].data,
                                  w_b[gb.compress_idx].data)


def test_join_after_activation_is_still_a_noop():
    net, weights = stack_net()
    cfg = ReBranchConfig(4, 4, (2, 3))
    g2, w2, group = build_rebranch(net, weights, cfg, seed=5,
                                   join_after_activation=True)
    add = g2.layers[group.add_idx]
    relu_idx = add.inputs[0]
    assert g2.layers[relu_idx].kind == "relu"
    for seed in range(3):
        x = random_input(seed)
        np.testing.assert_array_equal(forward_ref(net, x, weights).data,
                                      forward_ref(g2, x, w2).data)


def test_indivisible_channels_rejected():
    net, weights = stack_net()
    with pytest.raises(ValidationError):
        build_rebranch(net, weights, ReBranchConfig(3, 4, (2, 3)))


def test_group_spanning_non_conv_rejected():
    net, weights = stack_net()
    with pytest.raises(ValidationError):
        build_rebranch(net, weights, ReBranchConfig(4, 4, (1, 2)))  # hits relu


def test_rom_parameter_monotone_in_ratios():
    net, weights = stack_net()
    sram_params = []
    for d in (1, 2, 4):
        _, w2, group = build_rebranch(net, weights, ReBranchConfig(d, 4, (2, 3)))
        sram_params.append(group.res_params)
    assert sram_params[0] >= sram_params[1] >= sram_params[2]


# ---------------------------------------------------------- equivalent_conv

def test_equivalent_conv_zero_res_is_zero():
    comp = np.random.default_rng(0).normal(size=(2, 8))
    dec = np.random.default_rng(1).normal(size=(8, 2))
    res = np.zeros((2, 2, 3, 3))
    assert np.all(equivalent_conv(comp, res, dec) == 0)


def test_equivalent_conv_identity_projections():
    res = np.random.default_rng(2).normal(size=(4, 4, 3, 3))
    eye = np.eye(4)
    np.testing.assert_allclose(equivalent_conv(eye, res, eye), res)


def float_conv(x, w, pad):
    """Straightforward float conv (stride 1) used as the pipeline oracle."""
    n, c, h, wid = x.shape
    o, _, k, _ = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wid + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + wid] = x
    oh, ow = h + 2 * pad - k + 1, wid + 2 * pad - k + 1
    out = np.zeros((n, o, oh, ow))
    for i in range(oh):
        for j in range(ow):
            patch = xp[:, :, i:i + k, j:j + k]
            out[:, :, i, j] = np.tensordot(patch, w, axes=([1, 2, 3], [1, 2, 3]))
    return out


def test_equivalent_conv_matches_pipeline():
    rng = np.random.default_rng(5)
    for trial in range(20):
        comp = rng.normal(size=(2, 8))
        res = rng.normal(size=(2, 2, 3, 3))
        dec = rng.normal(size=(8, 2))
        x = rng.normal(size=(1, 8, 5, 5))
        via_pipeline = float_conv(
            float_conv(float_conv(x, comp[:, :, None, None], 0),
                       res, 1),
            dec[:, :, None, None], 0)
        merged = equivalent_conv(comp, res, dec)
        via_merged = float_conv(x, merged, 1)
        err = np.abs(via_pipeline - via_merged).max()
        ref = np.abs(via_pipeline).max()
        assert err <= 1e-5 * max(ref, 1.0)


def test_equivalent_conv_rejects_multi_layer_group():
    with pytest.raises(ValidationError):
        equivalent_conv(np.eye(4), np.zeros((4, 4)), np.eye(4))


# ----------------------------------------------------------------- atl_split

def atl_net():
    layers = [
        conv(4, 4, out_scale=0.1),
        LayerSpec("relu", in_ch=4, out_ch=4, trainable=False),
        conv(4, 8, out_scale=0.1),
        conv(8, 8, out_scale=0.1),
        LayerSpec("fully_connected", in_ch=8 * 4 * 4, out_ch=2, out_scale=0.1),
    ]
    return NetworkGraph(layers, input_shape=(4, 4, 4)).validate()


def test_atl_zero_keeps_everything_trainable():
    g = atl_split(atl_net(), 0)
    assert all(l.placement == SRAM for l in g.layers if l.parametric)


def test_atl_all_freezes_everything():
    g = atl_split(atl_net(), 4)
    assert all(l.placement == ROM and not l.trainable
               for l in g.layers if l.parametric)


def test_atl_partial_split_param_fraction():
    net = atl_net()
    g = atl_split(net, 2)
    rep = memory_report(g, 0.014, 0.3584)
    frozen = [l for l in g.layers if l.parametric and l.placement == ROM]
    assert len(frozen) == 2
    want_rom = sum(l.param_count() for l in frozen)
    assert rep["rom_params"] == want_rom
    total = g.total_params()
    assert rep["sram_fraction"] == pytest.approx(1 - want_rom / total)


def test_atl_out_of_range():
    with pytest.raises(ValidationError):
        atl_split(atl_net(), 9)


# ------------------------------------------------------------- spwd_decorate

def spwd_net():
    layers = [
        frozen_conv(4, 8, out_scale=0.1),
        LayerSpec("relu", in_ch=8, out_ch=8, trainable=False),
        LayerSpec("fully_connected", in_ch=8 * 5 * 5, out_ch=3, out_scale=0.1),
    ]
    net = NetworkGraph(layers, input_shape=(4, 5, 5)).validate()
    rng = np.random.default_rng(9)
    weights = {
        0: qt(rng.integers(-50, 51, (8, 4, 3, 3)), scale=0.02),
        2: qt(rng.integers(-50, 51, (3, 8 * 5 * 5)), scale=0.01),
    }
    return net, weights


def test_spwd_noop_at_build():
    net, weights = spwd_net()
    g2, w2, info = spwd_decorate(net, weights, 0, sram_bits=2)
    for seed in range(5):
        x = random_input(seed, shape=(1, 4, 5, 5))
        np.testing.assert_array_equal(forward_ref(net, x, weights).data,
                                      forward_ref(g2, x, w2).data)


def test_spwd_area_saving_bound():
    net, weights = spwd_net()
    _, _, info = spwd_decorate(net, weights, 0, sram_bits=2)
    assert info["area_saving_bound"] == 4.0


def test_spwd_decoration_geometry_matches_trunk():
    net, weights = spwd_net()
    g2, w2, info = spwd_decorate(net, weights, 0, sram_bits=2)
    deco = g2.layers[info["decoration_idx"]]
    trunk = g2.layers[0]
    assert info["decoration_params"] == trunk.param_count()
    assert (deco.in_ch, deco.out_ch, deco.kernel) == (trunk.in_ch, trunk.out_ch,
                                                      trunk.kernel)
    assert deco.weight_bits == 2 and deco.trainable


def test_spwd_rejects_non_conv():
    net, weights = spwd_net()
    with pytest.raises(ValidationError):
        spwd_decorate(net, weights, 1)


def test_spwd_rejects_wide_decoration():
    net, weights = spwd_net()
    with pytest.raises(ValidationError):
        spwd_decorate(net, weights, 0, sram_bits=8)


# ------------------------------------------------------------- memory_report

def test_all_rom_network_has_zero_sram_fraction():
    net = NetworkGraph([frozen_conv(4, 4, out_scale=0.1)], input_shape=(4, 4, 4))
    rep = memory_report(net, 0.014, 0.3584)
    assert rep["sram_fraction"] == 0.0 and rep["sram_bits"] == 0


def test_rebranch_trainable_fraction_below_tenth():
    # uniform conv stack, every layer branched at 16x compression
    layers = [frozen_conv(32, 32, out_scale=0.1) for _ in range(4)]
    net = NetworkGraph(layers, input_shape=(32, 8, 8)).validate()
    weights = {i: qt(np.zeros((32, 32, 3, 3), dtype=np.int64), scale=0.1)
               for i in range(4)}
    g, w = net, weights
    for trunk in range(4):
        # each pass inserts 4 layers; original conv i sits at index 5*i
        idx = trunk * 5
        g, w, _ = build_rebranch(g, w, ReBranchConfig(4, 4, (idx, idx)))
    rep = memory_report(g, 0.014, 0.3584)
    trunk_params = 4 * 32 * 32 * 9
    res_params = trunk_params // 16
    assert rep["sram_params"] == res_params
    assert rep["sram_fraction"] == pytest.approx(
        res_params / (rep["total_params"]))
    assert rep["sram_fraction"] < 0.10


def test_iso_network_area_ratio_near_ten():
    # VGG-8-like conv stack; all-SRAM baseline vs mixed placement after
    # branching every conv group, 25.6x cell density ratio
    chans = [(3, 64), (64, 64), (64, 128), (128, 128), (128, 256), (256, 256),
             (256, 256)]
    layers = [frozen_conv(i, o, out_scale=0.1) for i, o in chans]
    layers.append(LayerSpec("fully_connected", in_ch=256 * 4 * 4, out_ch=10,
                            out_scale=0.1, placement=SRAM))
    net = NetworkGraph(layers, input_shape=(3, 4, 4)).validate()
    weights = {i: qt(np.zeros(l.weight_shape(), dtype=np.int64), scale=0.1)
               for i, l in enumerate(net.layers) if l.parametric}
    g, w = net, weights
    offset = 0
    for trunk in range(len(chans)):
        idx = trunk + offset
        if g.layers[idx].in_ch % 4 or g.layers[idx].out_ch % 4:
            continue  # first conv has 3 input channels
        g, w, _ = build_rebranch(g, w, ReBranchConfig(4, 4, (idx, idx)))
        offset += 4  # compress + res + decompress + join
    rom_cell, sram_cell = 0.014, 0.014 * 25.6
    mixed = memory_report(g, rom_cell, sram_cell)
    baseline = memory_report(net, rom_cell, sram_cell)
    all_sram_area = (baseline["rom_bits"] + baseline["sram_bits"]) * sram_cell
    mixed_area = mixed["rom_area_um2"] + mixed["sram_area_um2"]
    ratio = all_sram_area / mixed_area
    assert 8.0 <= ratio <= 12.0
