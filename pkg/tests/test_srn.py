"""Backbone network: residual blocks, channel gate, rescaling, variants.

The full forward pass is checked against a straight-line numpy
re-implementation (no tape) in ``oracles.srn_forward_np``.
"""

import numpy as np
import pytest

from oracles import fd_check, srn_forward_np
from sciwb.autograd import Tensor, mse_loss, relu
from sciwb.exceptions import ContractError, DimensionError
from sciwb.srn import (ChannelGate, ResidualBlock, SrnConfig, SrnModel,
                       block_split)


def zero_layer(layer):
    layer.weight.data[...] = 0.0
    layer.bias.data[...] = 0.0


def tiny_model(rng, channels=3, use_cae=False, variant="v1"):
    cfg = SrnConfig.tiny(channels, use_cae=use_cae, variant=variant)
    return SrnModel(cfg, rng=rng, dtype=np.float64)


# -- configuration -------------------------------------------------------------------


def test_config_defaults_and_validation():
    cfg = SrnConfig(in_channels=28)
    assert (cfg.width, cfg.num_rbs, cfg.kernel_size) == (64, 16, 3)
    cfg.validate()
    with pytest.raises(ContractError):
        SrnConfig(in_channels=28, width=16).validate()  # width < channels
    with pytest.raises(ContractError):
        SrnConfig(in_channels=4, num_rbs=0).validate()
    with pytest.raises(ContractError):
        SrnConfig(in_channels=4, kernel_size=4).validate()
    with pytest.raises(ContractError):
        SrnConfig(in_channels=4, variant="v4").validate()
    with pytest.raises(ContractError):
        SrnConfig(in_channels=4, variant="v3", num_rbs=4, inner_rbs=6).validate()
    with pytest.raises(ContractError):
        SrnConfig(in_channels=4, width=9, use_cae=True, cae_reduction=2).validate()


def test_block_split():
    assert block_split(SrnConfig(in_channels=4)) == (16, 0, 0)
    assert block_split(SrnConfig(in_channels=4, variant="v2")) == (16, 0, 0)
    assert block_split(SrnConfig(in_channels=4, variant="v3",
                                 inner_rbs=8)) == (4, 8, 4)
    assert block_split(SrnConfig(in_channels=4, variant="v3", num_rbs=5,
                                 inner_rbs=2)) == (1, 2, 2)
    assert block_split(SrnConfig.tiny(3, variant="v3")) == (0, 2, 0)


# -- residual block -------------------------------------------------------------------


def test_rb_zero_convs_is_identity(rng):
    blk = ResidualBlock(8, 3, False, 2, rng, np.float64)
    zero_layer(blk.conv1)
    zero_layer(blk.conv2)
    x = Tensor(rng.standard_normal((2, 8, 5, 7)))
    np.testing.assert_array_equal(blk(x).data, x.data)


def test_rb_zero_convs_gradient_is_passthrough(rng):
    blk = ResidualBlock(8, 3, False, 2, rng, np.float64)
    zero_layer(blk.conv1)
    zero_layer(blk.conv2)
    x = Tensor(rng.standard_normal((1, 8, 4, 4)), requires_grad=True)
    w = rng.standard_normal((1, 8, 4, 4))
    (blk(x) * Tensor(w)).sum().backward()
    np.testing.assert_array_equal(x.grad, w)


def test_rb_preserves_spatial_shape(rng):
    for use_cae in (False, True):
        blk = ResidualBlock(8, 3, use_cae, 2, rng, np.float64)
        for h, w in ((1, 1), (3, 9), (16, 2)):
            x = Tensor(rng.standard_normal((1, 8, h, w)))
            assert blk(x).shape == x.shape


def test_rb_matches_formula(rng):
    blk = ResidualBlock(4, 3, False, 2, rng, np.float64)
    x = Tensor(rng.standard_normal((1, 4, 6, 6)))
    want = (x + blk.conv2(relu(blk.conv1(x)))).data
    np.testing.assert_allclose(blk(x).data, want, atol=1e-15)


# -- channel gate ---------------------------------------------------------------------


def test_gate_shrinks_every_channel(rng):
    gate = ChannelGate(8, 2, rng, np.float64)
    r = rng.standard_normal((2, 8, 5, 5))
    z = gate(Tensor(r)).data
    nz = r != 0
    assert np.all(np.abs(z[nz]) < np.abs(r[nz]))
    assert np.all(np.sign(z[nz]) == np.sign(r[nz]))


def test_gate_constant_input_stays_constant(rng):
    gate = ChannelGate(8, 2, rng, np.float64)
    r = np.broadcast_to(rng.standard_normal((1, 8, 1, 1)), (1, 8, 6, 7)).copy()
    z = gate(Tensor(r)).data
    assert np.ptp(z, axis=(2, 3)).max() == 0.0


def test_gate_zeroed_convs_halve_input(rng):
    gate = ChannelGate(8, 2, rng, np.float64)
    zero_layer(gate.squeeze)
    zero_layer(gate.excite)
    r = rng.standard_normal((1, 8, 4, 4))
    np.testing.assert_array_equal(gate(Tensor(r)).data, 0.5 * r)


def test_gate_large_bias_opens_fully(rng):
    gate = ChannelGate(8, 2, rng, np.float64)
    zero_layer(gate.squeeze)
    gate.excite.weight.data[...] = 0.0
    gate.excite.bias.data[...] = 20.0
    r = np.full((1, 8, 3, 3), 2.0)
    z = gate(Tensor(r)).data
    assert np.all(z / r > 0.999)


# -- full model ----------------------------------------------------------------------


def test_shape_contract_all_variants(rng):
    for variant, (h, w) in (("v1", (7, 5)), ("v2", (6, 10)), ("v3", (8, 12))):
        for use_cae in (False, True):
            model = tiny_model(rng, 3, use_cae, variant)
            x = Tensor(rng.standard_normal((2, 3, h, w)))
            assert model(x).shape == (2, 3, h, w)


def test_global_skip_path_isolated(rng):
    # With head and every block zeroed, the only signal reaching the tail
    # is the long skip branch.
    model = tiny_model(rng, 3)
    zero_layer(model.head)
    for blk in model.blocks:
        zero_layer(blk.conv1)
        zero_layer(blk.conv2)
    x = Tensor(rng.standard_normal((1, 3, 6, 6)))
    want = model.tail(model.skip(x)).data
    np.testing.assert_allclose(model(x).data, want, atol=1e-15)


def test_zeroed_blocks_leave_stack_identity(rng):
    model = tiny_model(rng, 3, variant="v1")
    for blk in model.blocks:
        zero_layer(blk.conv1)
        zero_layer(blk.conv2)
    feat = Tensor(rng.standard_normal((1, 8, 5, 5)))
    out = feat
    for blk in model.blocks:
        out = blk(out)
    np.testing.assert_array_equal(out.data, feat.data)


def test_input_validation(rng):
    model = tiny_model(rng, 3)
    with pytest.raises(DimensionError):
        model(Tensor(np.zeros((3, 8, 8))))
    with pytest.raises(DimensionError):
        model(Tensor(np.zeros((1, 4, 8, 8))))


def test_rescale_divisibility_errors_name_axis(rng):
    model = tiny_model(rng, 3, variant="v2")
    with pytest.raises(DimensionError, match="height"):
        model(Tensor(np.zeros((1, 3, 7, 8))))
    with pytest.raises(DimensionError, match="width"):
        model(Tensor(np.zeros((1, 3, 8, 7))))
    # v3 shrinks twice: 10 passes the outer pair, 5 fails the inner one
    model = tiny_model(rng, 3, variant="v3")
    with pytest.raises(DimensionError, match="height 5"):
        model(Tensor(np.zeros((1, 3, 10, 8))))


def test_rescale_pair_roundtrips_shape(rng):
    model = tiny_model(rng, 3, variant="v2")
    x = Tensor(rng.standard_normal((1, 8, 6, 4)))
    small = model.outer.shrink(x)
    assert small.shape == (1, 8, 3, 2)
    assert model.outer.grow(small).shape == (1, 8, 6, 4)


def test_parameter_counts_match_pinned_architecture(rng):
    v1 = SrnModel(SrnConfig(in_channels=28))
    assert v1.parameter_count() == 1_230_236
    assert abs(v1.parameter_count() - 1.25e6) <= 0.05 * 1.25e6
    v2 = SrnModel(SrnConfig(in_channels=28, variant="v2"))
    assert abs(v2.parameter_count() - 1.44e6) <= 0.05 * 1.44e6
    # one rescaling pair: 64->64 3x3 strided conv plus 64->256 3x3 conv
    assert v2.parameter_count() - v1.parameter_count() == 36_928 + 147_712
    cae = SrnModel(SrnConfig(in_channels=28, use_cae=True))
    assert abs(cae.parameter_count() - 1.31e6) <= 0.05 * 1.31e6


def test_parameter_count_depends_only_on_config(rng):
    cfg = SrnConfig.tiny(3, use_cae=True, variant="v3")
    a = SrnModel(cfg, rng=np.random.default_rng(0))
    b = SrnModel(cfg, rng=np.random.default_rng(9))
    assert a.parameter_count() == b.parameter_count()
    assert a.parameter_count() == sum(p.data.size for p in a.parameters())


def test_named_parameters_cover_every_layer(rng):
    model = tiny_model(rng, 3, use_cae=True, variant="v3")
    names = dict(model.named_parameters())
    for expect in ("head.weight", "skip.bias", "outer.down.weight",
                   "inner.up.weight", "block00.conv1.weight",
                   "block01.gate.excite.bias", "tail.bias"):
        assert expect in names
    assert len(names) == len(set(names))


def test_config_dict_roundtrip(rng):
    model = tiny_model(rng, 3, use_cae=True, variant="v2")
    d = model.config_dict()
    assert d["dtype"] == "float64"
    rebuilt = SrnConfig(**{k: v for k, v in d.items() if k != "dtype"})
    assert rebuilt == model.config


def test_forward_matches_straight_line_oracle(rng):
    x = rng.standard_normal((2, 4, 8, 8))
    for use_cae, variant in ((True, "v1"), (False, "v2"), (True, "v3")):
        model = tiny_model(rng, 4, use_cae, variant)
        got = model(Tensor(x)).data
        want = srn_forward_np(model, x)
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-9)


def test_sampled_gradients_match_finite_differences(rng):
    # Not the full sweep (that runs in the acceptance suite); this spot
    # checks the rescale and gate paths that only v2+CAE exercises.
    model = tiny_model(rng, 3, use_cae=True, variant="v2")
    x = np.asarray(rng.standard_normal((1, 3, 4, 4)))
    target = Tensor(rng.standard_normal((1, 3, 4, 4)))

    def loss_fn():
        return mse_loss(model(Tensor(x)), target).item()

    probes = [model.head.weight, model.outer.up.bias,
              model.blocks[0].gate.excite.weight, model.tail.weight]
    for p in probes:
        p.grad = None
    mse_loss(model(Tensor(x)), target).backward()
    fd_check(loss_fn, [p.data for p in probes], [p.grad for p in probes],
             h=1e-6, rtol=1e-4)
