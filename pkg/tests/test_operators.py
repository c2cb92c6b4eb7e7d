import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gradcheck import check
from oracles import adder_loops, attention_loops, conv_loops
from sanas import nn
from sanas.errors import ConfigError, DimensionError
from sanas.operators import (P_MAX, P_MIN, AttnSpec, AttnWeights, BlockType, ConvSpec, OpCounts, add_forward,
                             attn_forward, block_counts, conv_forward, quantize_pow2, shift_forward)
from sanas.tensor import Tensor, make_rng, parameter


def _conv_case(rng, stride=1):
    n, c, o = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
    h = rng.integers(3, 7)
    return rng.standard_normal((n, c, h, h)), rng.standard_normal((o, c, 3, 3)), ConvSpec(c, o, 3, stride)


@pytest.mark.parametrize("stride", [1, 2])
def test_conv_matches_loops(stride):
    rng = make_rng(0, "conv", stride)
    for _ in range(10):
        x, w, spec = _conv_case(rng, stride)
        out = conv_forward(Tensor(x), spec, Tensor(w)).activations.data
        np.testing.assert_allclose(out, conv_loops(x, w, stride), rtol=0, atol=1e-12)


@pytest.mark.parametrize("stride", [1, 2])
def test_adder_matches_loops(stride):
    rng = make_rng(0, "add", stride)
    for _ in range(10):
        x, w, spec = _conv_case(rng, stride)
        out = add_forward(Tensor(x), spec, Tensor(w)).activations.data
        np.testing.assert_allclose(out, adder_loops(x, w, stride), rtol=0, atol=1e-12)


def test_adder_output_is_never_positive():
    rng = make_rng(1)
    x, w, spec = _conv_case(rng)
    assert np.all(add_forward(Tensor(x), spec, Tensor(w)).activations.data <= 0)


def test_attention_matches_loops():
    rng = make_rng(0, "attn")
    for _ in range(10):
        heads = int(rng.integers(1, 4))
        d = heads * int(rng.integers(1, 4))
        din = int(rng.integers(1, 6))
        x = rng.standard_normal((2, int(rng.integers(1, 6)), din))
        ws = [rng.standard_normal((din, d)) for _ in range(3)] + [rng.standard_normal((d, d))]
        out = attn_forward(Tensor(x), AttnSpec(d, heads, din), AttnWeights(*map(Tensor, ws))).activations.data
        np.testing.assert_allclose(out, attention_loops(x, *ws, heads), rtol=0, atol=1e-12)


def test_attention_rejects_wrong_width():
    spec = AttnSpec(4, 2)
    w = AttnWeights(*(Tensor(np.ones((4, 4))) for _ in range(4)))
    with pytest.raises(DimensionError):
        attn_forward(Tensor(np.ones((1, 3, 5))), spec, w)


def test_attn_spec_requires_divisible_heads():
    with pytest.raises(ConfigError):
        AttnSpec(6, 4)


def test_quantize_pow2_values():
    w = np.array([0.3, -0.75, 1.5, 2.0 ** -10, -3.0, 200.0, 0.0, 2.0 ** -9])
    q = quantize_pow2(w)
    # rint(log2 0.3) = -2; log2 0.75 ~ -0.415 -> 0; log2 1.5 ~ 0.585 -> 1; 2^-9 is the smallest live weight
    np.testing.assert_array_equal(q.dequantize(), [0.25, -1.0, 2.0, 0.0, -4.0, 2.0 ** P_MAX, 0.0, 2.0 ** P_MIN])
    assert set(np.unique(q.sign)) <= {-1, 0, 1}


def test_quantize_rounds_half_to_even_in_log_domain():
    # log2(2**1.5) = 1.5 rounds to 2; log2(2**2.5) = 2.5 rounds to 2
    q = quantize_pow2(np.array([2.0 ** 1.5, 2.0 ** 2.5]))
    np.testing.assert_array_equal(q.power, [2, 2])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_shift_equals_conv_on_dequantized_weights(seed):
    rng = make_rng(seed)
    x, w, spec = _conv_case(rng)
    q = quantize_pow2(w)
    a = shift_forward(Tensor(x), spec, q).activations.data
    b = conv_forward(Tensor(x), spec, Tensor(q.dequantize())).activations.data
    assert np.array_equal(a, b)


def test_shift_straight_through_gradient():
    rng = make_rng(3)
    x, w, spec = _conv_case(rng)
    wp = parameter(w)
    shift_forward(Tensor(x), spec, quantize_pow2(wp), wp).activations.sum().backward()
    wq = parameter(quantize_pow2(w).dequantize())
    conv_forward(Tensor(x), spec, wq).activations.sum().backward()
    np.testing.assert_array_equal(wp.grad, wq.grad)


def test_conv_gradients():
    rng = make_rng(4)
    x, w, spec = _conv_case(rng, 2)
    assert check(lambda a, b: conv_forward(a, spec, b).activations, [x, w], rng) < 1e-5


def test_adder_weight_gradient_is_sign():
    rng = make_rng(5)
    x, w, spec = _conv_case(rng)
    assert check(lambda b: add_forward(Tensor(x), spec, b).activations, [w], rng) < 1e-5


def test_adder_input_gradient_is_hardtanh_surrogate():
    x = np.array([[[[0.2, 3.0], [-2.5, 0.0]]]])
    w = np.zeros((1, 1, 1, 1))
    xp = parameter(x)
    nn.adder2d(xp, Tensor(w)).sum().backward()
    # d/dx of -|x - w| replaced by clip(w - x, -1, 1)
    np.testing.assert_allclose(xp.grad, np.clip(w[0, 0, 0, 0] - x, -1, 1))


def test_attention_gradients():
    rng = make_rng(6)
    x = rng.standard_normal((2, 3, 4))
    ws = [rng.standard_normal((4, 4)) for _ in range(4)]
    spec = AttnSpec(4, 2)
    err = check(lambda a, *p: attn_forward(a, spec, AttnWeights(*p)).activations, [x, *ws], rng)
    assert err < 1e-5


def test_op_counts_conventions():
    spec = ConvSpec(2, 3, 3, 1)
    x = Tensor(np.zeros((1, 2, 4, 4)))
    macs = 3 * 16 * 2 * 9
    w = np.ones((3, 2, 3, 3))
    assert conv_forward(x, spec, Tensor(w)).op_counts == OpCounts(mult=macs, add=macs)
    assert shift_forward(x, spec, quantize_pow2(w)).op_counts == OpCounts(add=macs, shift=macs)
    assert add_forward(x, spec, Tensor(w)).op_counts == OpCounts(add=2 * macs)


def test_block_counts_hand_count_conv_keep():
    # 1 image, 2 -> 4 channels, 4x4, no downsample
    total, norm = block_counts(BlockType.CONV, 1, 2, 4, 4, 4, False)
    macs = 4 * 16 * 2 * 9
    out_el = 4 * 16
    assert norm == OpCounts(mult=out_el, add=out_el)
    assert total == OpCounts(mult=macs + out_el, add=macs + out_el + out_el)


def test_block_counts_downsample_adds_pool():
    total, _ = block_counts(BlockType.ADD, 1, 2, 4, 4, 4, True)
    macs = 4 * 4 * 2 * 9
    out_el = 4 * 4
    pool_el = 2 * 4
    assert total == OpCounts(mult=out_el, add=2 * macs + out_el + out_el + 3 * pool_el, shift=pool_el)
