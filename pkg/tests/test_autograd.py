"""Tape mechanics, operator values, and gradient correctness.

Gradients are validated two ways: hand-derived closed forms where they
exist, and central finite differences (double precision, h = 1e-6)
everywhere else. Convolution values are checked against a brute-force
seven-loop implementation.
"""

import numpy as np
import pytest

from oracles import conv2d_loops, fd_check, pixel_shuffle_loops
from sciwb.autograd import (Tensor, conv2d, global_avg_pool, init_conv_weight,
                            l2_norm_loss, mse_loss, no_grad, pixel_shuffle,
                            relu, sigmoid)
from sciwb.exceptions import ContractError, DimensionError


def scalar(t):
    return t.sum() if t.size != 1 else t


# -- tape mechanics ---------------------------------------------------------------


def test_sum_backward_is_ones(rng):
    x = Tensor(rng.normal(size=(3, 4)).astype(np.float64), requires_grad=True)
    x.sum().backward()
    np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


def test_sum_of_squares_backward(rng):
    x = Tensor(rng.normal(size=(5,)).astype(np.float64), requires_grad=True)
    (x * x).sum().backward()
    np.testing.assert_allclose(x.grad, 2.0 * x.data, rtol=0, atol=0)


def test_backward_requires_scalar(rng):
    x = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
    with pytest.raises(ContractError):
        (x * 2.0).backward()


def test_repeated_backward_accumulates(rng):
    x = Tensor(rng.normal(size=(4,)).astype(np.float64), requires_grad=True)
    loss = (x * 3.0).sum()
    loss.backward()
    first = x.grad.copy()
    loss.backward()
    np.testing.assert_allclose(x.grad, 2.0 * first)
    x.zero_grad()
    assert x.grad is None


def test_no_grad_records_nothing(rng):
    x = Tensor(rng.normal(size=(3,)), requires_grad=True)
    with no_grad():
        y = (x * x).sum()
    assert y._backward is None and not y.requires_grad


def test_reused_node_gets_both_contributions(rng):
    # z = a*a enters the graph twice; gradient must sum both paths.
    a = Tensor(np.array([2.0], dtype=np.float64), requires_grad=True)
    z = a * a
    (z + z).sum().backward()
    np.testing.assert_allclose(a.grad, [8.0])


# -- arithmetic and broadcasting --------------------------------------------------


def test_add_mul_broadcast_gradients(rng):
    a = Tensor(rng.normal(size=(3, 1)).astype(np.float64), requires_grad=True)
    b = Tensor(rng.normal(size=(1, 4)).astype(np.float64), requires_grad=True)
    ((a + b) * a).sum().backward()
    ga = (2.0 * a.data + b.data).sum(axis=1, keepdims=True)
    gb = np.broadcast_to(a.data, (3, 4)).sum(axis=0, keepdims=True)
    np.testing.assert_allclose(a.grad, ga, rtol=1e-12)
    np.testing.assert_allclose(b.grad, gb, rtol=1e-12)


def test_sub_neg_rsub(rng):
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    y = 5.0 - a
    y.sum().backward()
    np.testing.assert_allclose(y.data, [4.0, 3.0])
    np.testing.assert_allclose(a.grad, [-1.0, -1.0])


def test_scalar_division_and_scale():
    a = Tensor(np.array([2.0, 4.0]), requires_grad=True)
    np.testing.assert_allclose((a / 2).data, [1.0, 2.0])
    np.testing.assert_allclose(a.scale(0.5).data, [1.0, 2.0])
    with pytest.raises(ContractError):
        a / Tensor(np.array([2.0]))


def test_mean_matches_numpy(rng):
    x = rng.normal(size=(2, 3, 4)).astype(np.float64)
    t = Tensor(x, requires_grad=True)
    for axis in (None, 0, -1, (0, 2)):
        got = t.mean(axis=axis)
        np.testing.assert_allclose(got.data, x.mean(axis=axis), rtol=1e-12)
    t.mean().backward()
    np.testing.assert_allclose(t.grad, np.full_like(x, 1.0 / x.size))


def test_getitem_backward_scatters(rng):
    x = Tensor(rng.normal(size=(4, 6)).astype(np.float64), requires_grad=True)
    x[1:3, ::2].sum().backward()
    expect = np.zeros((4, 6))
    expect[1:3, ::2] = 1.0
    np.testing.assert_array_equal(x.grad, expect)


def test_transpose_reshape_gradients(rng):
    x = Tensor(rng.normal(size=(2, 3, 4)).astype(np.float64), requires_grad=True)
    (x.transpose((2, 0, 1)).reshape(4, 6) * 2.0).sum().backward()
    np.testing.assert_allclose(x.grad, np.full((2, 3, 4), 2.0))


def test_astype_passes_gradient_through(rng):
    x = Tensor(rng.normal(size=(3,)).astype(np.float64), requires_grad=True)
    x.astype(np.float32).sum().backward()
    assert x.grad.dtype == np.float64
    np.testing.assert_allclose(x.grad, np.ones(3))


# -- nonlinearities ------------------------------------------------------------------


def test_relu_values_and_zero_subgradient():
    x = Tensor(np.array([-1.0, 0.0, 2.0]), requires_grad=True)
    y = relu(x)
    np.testing.assert_array_equal(y.data, [0.0, 0.0, 2.0])
    y.sum().backward()
    np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])


def test_relu_finite_differences(rng):
    # Inputs kept away from the kink so central differences are valid.
    data = rng.uniform(0.2, 1.5, size=(4, 5)) * rng.choice([-1.0, 1.0], size=(4, 5))
    w = rng.normal(size=(4, 5))
    x = Tensor(data.astype(np.float64), requires_grad=True)

    def loss():
        return float((relu(x).data * w).sum())

    (relu(x) * Tensor(w)).sum().backward()
    fd_check(loss, [x.data], [x.grad], rtol=1e-5)


def test_sigmoid_values_and_stability():
    x = Tensor(np.array([-1000.0, 0.0, 1000.0]))
    s = sigmoid(x).data
    assert np.all(np.isfinite(s))
    assert s[0] >= 0.0 and s[2] <= 1.0
    assert s[1] == 0.5


def test_sigmoid_finite_differences(rng):
    x = Tensor(rng.normal(size=(6,)).astype(np.float64), requires_grad=True)
    w = rng.normal(size=(6,))

    def forward():
        return sigmoid(x) * Tensor(w)

    forward().sum().backward()
    fd_check(lambda: float(forward().data.sum()), [x.data], [x.grad], rtol=1e-6)


# -- convolution -----------------------------------------------------------------------


def test_conv2d_matches_bruteforce(rng):
    cases = [
        (1, 1, 1, 3, 3, 1, 0), (1, 2, 3, 5, 5, 1, 1), (2, 3, 4, 8, 8, 1, 1),
        (1, 4, 2, 8, 6, 2, 1), (2, 2, 2, 7, 7, 2, 0), (1, 3, 3, 6, 8, 1, 0),
    ]
    for n, c_in, c_out, h, w, stride, k_pad in cases:
        for k in (1, 3):
            pad = min(k_pad, k // 2) if k == 1 else k_pad
            x = rng.normal(size=(n, c_in, h, w)).astype(np.float64)
            wt = rng.normal(size=(c_out, c_in, k, k)).astype(np.float64)
            b = rng.normal(size=(c_out,)).astype(np.float64)
            got = conv2d(Tensor(x), Tensor(wt), Tensor(b), stride=stride,
                         padding=pad).data
            want = conv2d_loops(x, wt, b, stride=stride, padding=pad)
            np.testing.assert_allclose(got, want, rtol=0, atol=1e-12)


def test_conv2d_padded_ones_box():
    # All-ones 3x3 input, all-ones 3x3 kernel, zero padding 1: each output
    # counts the in-bounds taps.
    x = Tensor(np.ones((1, 1, 3, 3)))
    w = Tensor(np.ones((1, 1, 3, 3)))
    out = conv2d(x, w, padding=1).data[0, 0]
    np.testing.assert_array_equal(out, [[4, 6, 4], [6, 9, 6], [4, 6, 4]])


def test_conv2d_gradients_finite_differences(rng):
    x = Tensor(rng.normal(size=(2, 3, 5, 5)).astype(np.float64), requires_grad=True)
    w = Tensor(rng.normal(size=(4, 3, 3, 3)).astype(np.float64) * 0.3,
               requires_grad=True)
    b = Tensor(rng.normal(size=(4,)).astype(np.float64), requires_grad=True)
    proj = rng.normal(size=(2, 4, 3, 3))

    def forward():
        return conv2d(x, w, b, stride=2, padding=1) * Tensor(proj)

    forward().sum().backward()
    fd_check(lambda: float(forward().data.sum()),
             [x.data, w.data, b.data], [x.grad, w.grad, b.grad], rtol=1e-4)


def test_conv2d_validation():
    x = Tensor(np.zeros((1, 2, 4, 4)))
    with pytest.raises(DimensionError):
        conv2d(Tensor(np.zeros((2, 4, 4))), Tensor(np.zeros((1, 2, 3, 3))))
    with pytest.raises(DimensionError):
        conv2d(x, Tensor(np.zeros((1, 2, 2, 2))))  # even kernel
    with pytest.raises(DimensionError):
        conv2d(x, Tensor(np.zeros((1, 3, 3, 3))))  # channel mismatch
    with pytest.raises(DimensionError):
        conv2d(Tensor(np.zeros((1, 2, 2, 2))), Tensor(np.zeros((1, 2, 5, 5))))
    with pytest.raises(ContractError):
        conv2d(x, Tensor(np.zeros((1, 2, 3, 3))), stride=0)


# -- layout ops -----------------------------------------------------------------------


def test_pixel_shuffle_r1_is_identity(rng):
    x = rng.normal(size=(1, 3, 4, 4)).astype(np.float64)
    np.testing.assert_array_equal(pixel_shuffle(Tensor(x), 1).data, x)


def test_pixel_shuffle_channel_quadruple():
    # Four 1x1 channels [a, b, c, d] become the 2x2 block [[a, b], [c, d]].
    x = Tensor(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 4, 1, 1))
    out = pixel_shuffle(x, 2).data
    np.testing.assert_array_equal(out[0, 0], [[1.0, 2.0], [3.0, 4.0]])


def test_pixel_shuffle_is_a_permutation(rng):
    # Shape contract plus multiset preservation, several scales and sizes.
    for r, c, h, w in [(2, 2, 3, 5), (3, 1, 2, 2), (2, 4, 4, 1)]:
        x = rng.normal(size=(2, c * r * r, h, w)).astype(np.float64)
        out = pixel_shuffle(Tensor(x), r).data
        assert out.shape == (2, c, h * r, w * r)
        np.testing.assert_array_equal(np.sort(out.reshape(-1)),
                                      np.sort(x.reshape(-1)))
        np.testing.assert_array_equal(out, pixel_shuffle_loops(x, r))


def test_pixel_shuffle_gradient_permutes_back(rng):
    x = Tensor(rng.normal(size=(1, 8, 3, 3)).astype(np.float64), requires_grad=True)
    w = rng.normal(size=(1, 2, 6, 6))
    (pixel_shuffle(x, 2) * Tensor(w)).sum().backward()
    np.testing.assert_array_equal(np.sort(x.grad.reshape(-1)),
                                  np.sort(w.reshape(-1)))


def test_pixel_shuffle_divisibility():
    with pytest.raises(DimensionError):
        pixel_shuffle(Tensor(np.zeros((1, 6, 2, 2))), 2)


def test_global_avg_pool_value_and_gradient():
    x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2),
               requires_grad=True)
    pooled = global_avg_pool(x)
    assert pooled.shape == (1, 1)
    assert pooled.item() == 2.5
    pooled.sum().backward()
    np.testing.assert_allclose(x.grad, np.full((1, 1, 2, 2), 0.25))


def test_global_avg_pool_needs_nchw():
    with pytest.raises(DimensionError):
        global_avg_pool(Tensor(np.zeros((2, 2))))


# -- losses ---------------------------------------------------------------------------


def test_loss_values_for_uniform_offset():
    n = 24
    pred = Tensor(np.full((2, 3, 4), 0.6))
    target = Tensor(np.full((2, 3, 4), 0.5))
    assert abs(mse_loss(pred, target).item() - 0.01) < 1e-12
    assert abs(l2_norm_loss(pred, target).item() - 0.1 * np.sqrt(n)) < 1e-9


def test_loss_gradients_finite_differences(rng):
    pred = Tensor(rng.normal(size=(3, 4)).astype(np.float64), requires_grad=True)
    target = Tensor(rng.normal(size=(3, 4)).astype(np.float64) + 2.0)

    mse_loss(pred, target).backward()
    fd_check(lambda: float(mse_loss(pred, target).data),
             [pred.data], [pred.grad], rtol=1e-6)

    pred.zero_grad()
    l2_norm_loss(pred, target).backward()
    fd_check(lambda: float(l2_norm_loss(pred, target).data),
             [pred.data], [pred.grad], rtol=1e-6)


def test_l2_norm_loss_smooth_at_zero():
    pred = Tensor(np.zeros(4), requires_grad=True)
    loss = l2_norm_loss(pred, Tensor(np.zeros(4)))
    loss.backward()
    assert np.all(np.isfinite(pred.grad))


def test_loss_shape_mismatch():
    with pytest.raises(DimensionError):
        mse_loss(Tensor(np.zeros(3)), Tensor(np.zeros(4)))


# -- initialization -----------------------------------------------------------------


def test_init_conv_weight_bounds(rng):
    w, b = init_conv_weight(rng, 16, 8, 3, np.float64)
    bound = np.sqrt(1.0 / (8 * 9))
    assert w.shape == (16, 8, 3, 3) and b.shape == (16,)
    assert np.all(np.abs(w) <= bound)
    assert np.all(b == 0.0)
