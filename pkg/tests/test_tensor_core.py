import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ifsynth import ops
from ifsynth.errors import ContractError, DimensionError
from ifsynth.nn import Conv2d, frozen
from ifsynth.optim import Adam, adam_step, cosine_lr
from ifsynth.tensor import Parameter, Tensor, no_grad

from .oracles import naive_conv2d, rel_err, scatter_conv_transpose2d


def t64(a, grad=False):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=grad, dtype=np.float64)


# -- tensor and graph ------------------------------------------------------


def test_non_float_input_becomes_float32():
    assert Tensor([1, 2, 3]).dtype == np.float32


def test_linear_map_gradient_is_input():
    x = np.array([1.0, -2.0, 3.0])
    w = t64([0.5, 0.5, 0.5], grad=True)
    ops.mul(w, x).sum().backward()
    np.testing.assert_array_equal(w.grad, x)


def test_two_backward_calls_accumulate():
    w = t64([1.0, 2.0], grad=True)
    for _ in range(2):
        ops.square(w).sum().backward()
    np.testing.assert_allclose(w.grad, 2 * 2 * np.array([1.0, 2.0]))


def test_non_scalar_backward_is_contract_error():
    w = t64([1.0, 2.0], grad=True)
    with pytest.raises(ContractError):
        ops.square(w).backward()


def test_backward_without_graph_is_contract_error():
    with pytest.raises(ContractError):
        Tensor(3.0).backward()


def test_shared_subexpression_receives_both_paths():
    x = t64(3.0, grad=True)
    y = ops.mul(x, x)
    (y + y).backward()
    assert x.grad == pytest.approx(12.0)


def test_no_grad_builds_no_graph():
    w = t64([1.0], grad=True)
    with no_grad():
        y = ops.square(w)
    assert not y.requires_grad and y.is_leaf


def test_frozen_module_gets_no_gradient_but_input_does():
    rng = np.random.default_rng(0)
    conv = Conv2d(rng, 1, 1, 3, 1, 1)
    x = Tensor(rng.standard_normal((1, 1, 4, 4)), requires_grad=True)
    with frozen(conv):
        y = conv(x)
    assert all(p.requires_grad for p in conv.parameters())
    y.sum().backward()
    assert x.grad is not None
    assert all(p.grad is None for p in conv.parameters())


@pytest.mark.filterwarnings("ignore:overflow encountered:RuntimeWarning")
def test_nonfinite_forward_raises():
    with pytest.raises(FloatingPointError):
        ops.mul(Tensor([np.float32(3e38)]), 10.0)


def test_forward_is_bitwise_deterministic():
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((2, 3, 8, 8)))
    w = Tensor(rng.standard_normal((4, 3, 3, 3)))
    a = ops.conv2d(x, w, None, 2, 1).data
    b = ops.conv2d(x, w, None, 2, 1).data
    assert np.array_equal(a, b)


# -- convolutions ----------------------------------------------------------


def test_conv2d_scaling_identity():
    y = ops.conv2d(Tensor(np.ones((1, 1, 3, 3))), Tensor([[[[2.0]]]]), Tensor([0.0]), 1, 0)
    np.testing.assert_array_equal(y.data, np.full((1, 1, 3, 3), 2.0))


def test_conv2d_reference_stem_shape():
    x = Tensor(np.zeros((1, 3, 224, 224)))
    w = Tensor(np.zeros((32, 3, 7, 7)))
    assert ops.conv2d(x, w, None, 1, 3).shape == (1, 32, 224, 224)


def test_conv2d_channel_mismatch():
    with pytest.raises(DimensionError):
        ops.conv2d(Tensor(np.zeros((1, 2, 5, 5))), Tensor(np.zeros((1, 3, 3, 3))))


def test_conv2d_kernel_larger_than_input():
    with pytest.raises(DimensionError):
        ops.conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))))


GRID = [(k, s, p) for k in (1, 2, 3, 4) for s in (1, 2, 3) for p in (0, 1, 2) if p < k]


@pytest.mark.parametrize("k,stride,pad", GRID)
def test_conv2d_matches_nested_loops(k, stride, pad):
    rng = np.random.default_rng(k * 100 + stride * 10 + pad)
    x = rng.standard_normal((2, 2, 6, 7))
    w = rng.standard_normal((3, 2, k, k))
    b = rng.standard_normal(3)
    got = ops.conv2d(t64(x), t64(w), t64(b), stride, pad).data
    assert rel_err(got, naive_conv2d(x, w, b, stride, pad)) < 1e-6


def test_conv2d_random_stride2_example():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((1, 2, 5, 5)).astype(np.float32)
    w = rng.standard_normal((3, 2, 3, 3)).astype(np.float32)
    got = ops.conv2d(Tensor(x), Tensor(w), None, 2, 1).data
    assert rel_err(got, naive_conv2d(x, w, None, 2, 1)) < 1e-6


@pytest.mark.parametrize("k,stride,pad", [g for g in GRID if 2 * g[2] < g[0] + 1])
def test_conv_transpose2d_matches_scatter_add(k, stride, pad):
    rng = np.random.default_rng(k * 100 + stride * 10 + pad + 1)
    x = rng.standard_normal((2, 2, 3, 4))
    w = rng.standard_normal((2, 3, k, k))
    b = rng.standard_normal(3)
    got = ops.conv_transpose2d(t64(x), t64(w), t64(b), stride, pad).data
    assert rel_err(got, scatter_conv_transpose2d(x, w, b, stride, pad)) < 1e-6


def test_conv_transpose2d_single_pixel_stamp():
    y = ops.conv_transpose2d(Tensor([[[[1.0]]]]), Tensor([[[[1.0, 2.0], [3.0, 4.0]]]]), None, 1, 0)
    np.testing.assert_array_equal(y.data[0, 0], [[1, 2], [3, 4]])


def test_two_upsamplers_reach_reference_resolution():
    x = Tensor(np.zeros((1, 128, 56, 56)))
    y = ops.conv_transpose2d(x, Tensor(np.zeros((128, 64, 4, 4))), None, 2, 1)
    y = ops.conv_transpose2d(y, Tensor(np.zeros((64, 32, 4, 4))), None, 2, 1)
    assert y.shape == (1, 32, 224, 224)


@settings(max_examples=30, deadline=None)
@given(k=st.integers(1, 4), stride=st.integers(1, 3), pad=st.integers(0, 2), m=st.integers(2, 4),
       seed=st.integers(0, 10**6))
def test_conv_transpose_is_adjoint_of_conv(k, stride, pad, m, seed):
    # matching hyperparameters: the transposed output size (Ho-1)s - 2p + k equals the conv input
    # size exactly when (H + 2p - k) is a multiple of the stride
    h = w = k - 2 * pad + stride * m
    if h < 1:
        return
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((2, 3, h, w))
    wt = rng.standard_normal((4, 3, k, k))
    cx = ops.conv2d(t64(x), t64(wt), None, stride, pad).data
    y = rng.standard_normal(cx.shape)
    # the conv weight (Cout, Cin, k, k) is already laid out as the adjoint's (Cin', Cout', k, k)
    ty = ops.conv_transpose2d(t64(y), t64(wt), None, stride, pad).data
    assert ty.shape == x.shape
    lhs = float((cx * y).sum())
    rhs = float((x * ty).sum())
    assert abs(lhs - rhs) <= 1e-5 * max(1.0, abs(lhs))


# -- normalisation, activations, reductions ---------------------------------


def test_instance_norm_hand_example():
    x = t64(np.array([1.0, 2.0, 3.0, 4.0]).reshape(1, 1, 2, 2))
    y = ops.instance_norm(x, t64([1.0]), t64([0.0]), eps=0.0).data.ravel()
    np.testing.assert_allclose(y, [-1.3416, -0.4472, 0.4472, 1.3416], atol=1e-4)
    y2 = ops.instance_norm(x, t64([2.0]), t64([5.0]), eps=0.0).data.ravel()
    np.testing.assert_allclose(y2, 2 * y + 5, rtol=1e-12)


def test_instance_norm_constant_input_is_zero():
    y = ops.instance_norm(t64(np.full((1, 2, 3, 3), 4.0)), t64([1.0, 1.0]), t64([0.0, 0.0]))
    np.testing.assert_array_equal(y.data, 0.0)


def test_instance_norm_single_position_is_error():
    with pytest.raises(DimensionError):
        ops.instance_norm(t64(np.zeros((1, 1, 1, 1))))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), scale=st.floats(1, 50), shift=st.floats(-100, 100))
def test_instance_norm_standardises(seed, scale, shift):
    x = np.random.default_rng(seed).standard_normal((2, 3, 4, 5)) * scale + shift
    y = ops.instance_norm(t64(x)).data
    assert np.abs(y.mean(axis=(2, 3))).max() <= 1e-5
    assert np.abs(y.var(axis=(2, 3)) - 1).max() <= 1e-4


def test_activation_examples():
    np.testing.assert_array_equal(ops.activation(Tensor([-1.0, 0.0, 2.0]), "relu").data, [0, 0, 2])
    np.testing.assert_allclose(ops.activation(Tensor([-1.0, 2.0]), "leaky_relu").data, [-0.2, 2.0])
    assert ops.activation(Tensor([0.0]), "tanh").data[0] == 0.0


def test_tanh_range():
    y = ops.tanh(Tensor(np.linspace(-30, 30, 101))).data
    assert y.min() >= -1 and y.max() <= 1


def test_reduce_mean_spatial_examples():
    assert ops.reduce_mean_spatial(Tensor(np.full((1, 3, 4, 4), 0.3))).data == pytest.approx(0.3)
    y = ops.reduce_mean_spatial(t64(np.array([[0.0, 1.0], [2.0, 3.0]]).reshape(1, 1, 2, 2))).data
    assert y[0, 0] == 1.5


def test_reduce_mean_spatial_is_linear():
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal((2, 2, 3, 5, 5))
    lhs = ops.reduce_mean_spatial(t64(a + b)).data
    rhs = ops.reduce_mean_spatial(t64(a)).data + ops.reduce_mean_spatial(t64(b)).data
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12)


def test_pad_reflect_matches_numpy():
    x = np.arange(20.0).reshape(1, 1, 4, 5)
    np.testing.assert_array_equal(ops.pad_reflect(t64(x), 2).data, np.pad(x, ((0, 0), (0, 0), (2, 2), (2, 2)),
                                                                          mode="reflect"))


def test_cross_entropy_label_out_of_range():
    with pytest.raises(ContractError):
        ops.cross_entropy(Tensor(np.zeros((2, 3))), [0, 3])


# -- optimiser and schedule --------------------------------------------------


def test_cosine_lr_examples():
    assert cosine_lr(0.001, 0, 40) == 0.001
    assert cosine_lr(0.001, 40, 40) == pytest.approx(0.0, abs=1e-18)
    assert cosine_lr(0.001, 20, 40) == pytest.approx(0.0005, rel=1e-12)
    assert cosine_lr(1.0, 10, 40) == pytest.approx(0.5 * (1 + math.cos(math.pi / 4)))


def test_cosine_lr_rejects_out_of_range():
    with pytest.raises(ValueError):
        cosine_lr(1.0, 41, 40)


def test_adam_zero_gradient_leaves_value():
    p = Parameter(np.array([1.5, -2.0]))
    p.grad = np.zeros(2, np.float32)
    adam_step([p], 0.1)
    np.testing.assert_array_equal(p.data, [1.5, -2.0])
    assert p.step_count == 1


def test_adam_first_step_is_lr_times_sign():
    p = Parameter(np.array([0.0]), dtype=np.float64)
    p.grad = np.array([1.0])
    adam_step([p], 0.1)
    assert p.data[0] == pytest.approx(-0.1, rel=1e-6)


def test_adam_matches_closed_form_over_steps():
    rng = np.random.default_rng(0)
    grads = rng.standard_normal((5, 3))
    p = Parameter(np.zeros(3), dtype=np.float64)
    m = v = np.zeros(3)
    ref = np.zeros(3)
    for t, g in enumerate(grads, 1):
        p.grad = g.copy()
        adam_step([p], 0.01)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        ref -= 0.01 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    np.testing.assert_allclose(p.data, ref, rtol=1e-12)
    assert p.step_count == 5


def test_adam_missing_grad_is_contract_error():
    with pytest.raises(ContractError):
        adam_step([Parameter(np.zeros(2))], 0.1)


def test_adam_leaves_grads_untouched():
    p = Parameter(np.zeros(2))
    p.grad = np.ones(2, np.float32)
    adam_step([p], 0.1)
    np.testing.assert_array_equal(p.grad, 1.0)


def test_adam_class_defaults():
    opt = Adam([Parameter(np.zeros(1))])
    assert (opt.beta1, opt.beta2, opt.eps) == (0.9, 0.999, 1e-8)
