"""The four candidate blocks: Attn, Conv, Shift and Add.

Operator-level functions (``conv_forward`` and friends) return the raw
operator output together with its primitive-operation counts.
``block_forward`` wraps one operator into a full searchable block
(normalization, activation or MLP, residual).

Counting convention, per output tap:

* Conv / Attn matmuls: 1 mult + 1 add per multiply-accumulate
* Shift: 1 shift + 1 add per shift-accumulate
* Add: 2 adds (subtract, accumulate)
* inference batch norm: 1 mult + 1 add per element (folded affine)
* 2x2 average pool: 3 adds + 1 shift per output element
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import ConfigError, DimensionError
from .tensor import Tensor, as_tensor, matmul, relu, reshape, softmax, transpose

P_MIN = -8
P_MAX = 7


class BlockType(enum.IntEnum):
    CONV = 0
    SHIFT = 1
    ADD = 2
    ATTN = 3

    @property
    def letter(self) -> str:
        return "CSAT"[self.value]

    @classmethod
    def from_letter(cls, ch: str) -> "BlockType":
        try:
            return cls("CSAT".index(ch))
        except ValueError:
            raise ConfigError(f"unknown block type {ch!r}; expected one of C, S, A, T") from None


@dataclass(frozen=True)
class OpCounts:
    mult: int = 0
    add: int = 0
    shift: int = 0
    softmax: int = 0  # exp/divide work inside softmax, kept out of the MAC columns

    def __add__(self, other: "OpCounts") -> "OpCounts":
        return OpCounts(self.mult + other.mult, self.add + other.add,
                        self.shift + other.shift, self.softmax + other.softmax)

    def scaled(self, k: int) -> "OpCounts":
        return OpCounts(self.mult * k, self.add * k, self.shift * k, self.softmax * k)

    def as_tuple(self) -> tuple[int, int, int]:
        return self.mult, self.add, self.shift


@dataclass(frozen=True)
class ConvSpec:
    in_channels: int
    out_channels: int
    kernel_size: int = 3
    stride: int = 1

    def __post_init__(self):
        if self.stride not in (1, 2):
            raise ConfigError(f"stride must be 1 or 2, got {self.stride}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd and positive, got {self.kernel_size}")

    @property
    def padding(self) -> int:
        return self.kernel_size // 2

    @property
    def weight_shape(self) -> tuple[int, int, int, int]:
        k = self.kernel_size
        return (self.out_channels, self.in_channels, k, k)

    def out_hw(self, h: int, w: int) -> tuple[int, int]:
        return -(-h // self.stride), -(-w // self.stride)

    def macs(self, n: int, h: int, w: int) -> int:
        ho, wo = self.out_hw(h, w)
        return n * self.out_channels * ho * wo * self.in_channels * self.kernel_size ** 2


@dataclass(frozen=True)
class AttnSpec:
    embed_dim: int
    num_heads: int
    in_dim: int | None = None  # token width entering the projections; defaults to embed_dim

    def __post_init__(self):
        if self.num_heads < 1 or self.embed_dim % self.num_heads:
            raise ConfigError(f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads

    @property
    def input_dim(self) -> int:
        return self.in_dim if self.in_dim is not None else self.embed_dim


@dataclass
class AttnWeights:
    """Projection matrices; head i uses columns [i*d_k, (i+1)*d_k)."""
    wq: Tensor
    wk: Tensor
    wv: Tensor
    wo: Tensor

    def parameters(self) -> list[Tensor]:
        return [self.wq, self.wk, self.wv, self.wo]


@dataclass
class ShiftQuant:
    sign: np.ndarray   # int8 in {-1, 0, 1}
    power: np.ndarray  # int8 in [P_MIN, P_MAX]

    def dequantize(self) -> np.ndarray:
        return np.ldexp(self.sign.astype(np.float64), self.power.astype(np.int32))


@dataclass
class BlockOutput:
    activations: Tensor
    op_counts: OpCounts
    norm_counts: OpCounts = field(default_factory=OpCounts)  # share of op_counts spent on normalization


# -- operators ------------------------------------------------------------

def _check_input(x: Tensor, spec: ConvSpec, w_shape: tuple[int, ...]) -> None:
    if x.ndim != 4 or x.shape[1] != spec.in_channels:
        raise DimensionError(f"input {x.shape} does not match in_channels={spec.in_channels}")
    if tuple(w_shape) != spec.weight_shape:
        raise DimensionError(f"weight {tuple(w_shape)} does not match spec shape {spec.weight_shape}")


def conv_forward(x: Tensor, spec: ConvSpec, w: Tensor) -> BlockOutput:
    x, w = as_tensor(x), as_tensor(w)
    _check_input(x, spec, w.shape)
    macs = spec.macs(*x.shape[:1], *x.shape[2:])
    return BlockOutput(nn.conv2d(x, w, spec.stride), OpCounts(mult=macs, add=macs))


def quantize_pow2(w) -> ShiftQuant:
    """Sign and rounded log2 magnitude; |w| < 2**(P_MIN-1) becomes a dead weight."""
    data = w.data if isinstance(w, Tensor) else np.asarray(w, dtype=np.float64)
    mag = np.abs(data)
    alive = mag >= 2.0 ** (P_MIN - 1)
    with np.errstate(divide="ignore"):
        p = np.rint(np.log2(np.where(alive, mag, 1.0)))  # rint rounds half to even
    power = np.clip(p, P_MIN, P_MAX).astype(np.int8)
    sign = np.where(alive, np.sign(data), 0).astype(np.int8)
    return ShiftQuant(sign=sign, power=np.where(alive, power, 0).astype(np.int8))


def shift_forward(x: Tensor, spec: ConvSpec, q: ShiftQuant, weight: Tensor | None = None) -> BlockOutput:
    """Convolution with power-of-two weights.

    When ``weight`` (the full-precision source of ``q``) is given, its gradient
    is the straight-through gradient of the quantized weights.
    """
    x = as_tensor(x)
    _check_input(x, spec, q.sign.shape)
    wq = q.dequantize()
    w = nn.straight_through(weight, wq) if weight is not None else Tensor(wq)
    macs = spec.macs(*x.shape[:1], *x.shape[2:])
    return BlockOutput(nn.conv2d(x, w, spec.stride), OpCounts(add=macs, shift=macs))


def add_forward(x: Tensor, spec: ConvSpec, w: Tensor) -> BlockOutput:
    x, w = as_tensor(x), as_tensor(w)
    _check_input(x, spec, w.shape)
    macs = spec.macs(*x.shape[:1], *x.shape[2:])
    return BlockOutput(nn.adder2d(x, w, spec.stride), OpCounts(add=2 * macs))


def attn_counts(spec: AttnSpec, batch: int, n: int) -> OpCounts:
    d, din = spec.embed_dim, spec.input_dim
    macs = batch * (3 * n * din * d + 2 * n * n * d + n * d * d)
    return OpCounts(mult=macs, add=macs, softmax=3 * batch * spec.num_heads * n * n)


def attn_forward(x: Tensor, spec: AttnSpec, weights: AttnWeights) -> BlockOutput:
    """Multi-head self-attention over tokens ``x`` of shape (N, n, d_in)."""
    x = as_tensor(x)
    if x.ndim != 3 or x.shape[2] != spec.input_dim:
        raise DimensionError(f"attention input {x.shape} does not match input dim {spec.input_dim}")
    b, n, _ = x.shape
    h, dk, d = spec.num_heads, spec.head_dim, spec.embed_dim

    def heads(proj: Tensor) -> Tensor:
        return transpose(reshape(matmul(x, proj), (b, n, h, dk)), (0, 2, 1, 3))

    q, k, v = heads(weights.wq), heads(weights.wk), heads(weights.wv)
    scores = matmul(q, transpose(k, (0, 1, 3, 2))) * (1.0 / math.sqrt(dk))
    ctx = matmul(softmax(scores, axis=-1), v)
    merged = reshape(transpose(ctx, (0, 2, 1, 3)), (b, n, d))
    return BlockOutput(matmul(merged, weights.wo), attn_counts(spec, b, n))


# -- full blocks ------------------------------------------------------------

@dataclass
class ConvLikeParams:
    """Parameters of a Conv/Shift/Add block.

    ``weight`` is the effective view the operator consumes: the pool tensor
    for Conv, the full-precision tensor to quantize for Shift, the
    transformed tensor for Add.
    """
    weight: Tensor
    bn: nn.BatchNorm


@dataclass
class AttnParams:
    pos: Tensor          # depthwise positional-encoding kernel (C_in, 3, 3)
    weights: AttnWeights
    mlp_w1: Tensor       # (d, 2d)
    mlp_b1: Tensor
    mlp_w2: Tensor       # (2d, d)
    mlp_b2: Tensor
    bn: nn.BatchNorm
    num_heads: int

    def parameters(self) -> list[Tensor]:
        return [self.pos, *self.weights.parameters(), self.mlp_w1, self.mlp_b1,
                self.mlp_w2, self.mlp_b2, *self.bn.parameters()]


def _norm_counts(elements: int) -> OpCounts:
    return OpCounts(mult=elements, add=elements)


def _pool_counts(elements: int) -> OpCounts:
    return OpCounts(add=3 * elements, shift=elements)


def block_counts(block_type: BlockType, batch: int, in_ch: int, out_ch: int, h: int, w: int,
                 downsample: bool, num_heads: int = 1) -> tuple[OpCounts, OpCounts]:
    """Symbolic (total, normalization) counts of one block on an input of the given shape."""
    block_type = BlockType(block_type)
    stride = 2 if downsample else 1
    ho, wo = -(-h // stride), -(-w // stride)
    out_el = batch * out_ch * ho * wo
    norm = _norm_counts(out_el)
    total = norm + OpCounts(add=out_el)  # residual add
    if downsample:
        total = total + _pool_counts(batch * in_ch * ho * wo)
    if block_type == BlockType.ATTN:
        n = ho * wo
        d = out_ch
        total = total + OpCounts(mult=batch * in_ch * n * 9, add=batch * in_ch * n * 10)  # pos-enc + its skip
        total = total + attn_counts(AttnSpec(d, num_heads, in_ch), batch, n)
        mlp = batch * n * (4 * d * d)
        total = total + OpCounts(mult=mlp, add=mlp + batch * n * 3 * d)
        return total, norm
    macs = ConvSpec(in_ch, out_ch, 3, stride).macs(batch, h, w)
    if block_type == BlockType.CONV:
        op = OpCounts(mult=macs, add=macs)
    elif block_type == BlockType.SHIFT:
        op = OpCounts(add=macs, shift=macs)
    else:
        op = OpCounts(add=2 * macs)
    return total + op, norm


def _residual(x: Tensor, out_ch: int, downsample: bool) -> Tensor:
    r = nn.avg_pool2x2(x) if downsample else x
    return nn.pad_channels(r, out_ch)


def block_forward(x: Tensor, block_type: BlockType, params, out_channels: int,
                  downsample: bool = False, mode: str = "train", bn_store: dict | None = None) -> BlockOutput:
    """Run one searchable block on an image batch (N, C, H, W)."""
    try:
        block_type = BlockType(block_type)
    except ValueError:
        raise ConfigError(f"unknown block type {block_type!r}") from None
    n, c, h, w = x.shape
    total, norm = block_counts(block_type, n, c, out_channels, h, w, downsample,
                               getattr(params, "num_heads", 1))
    if block_type == BlockType.ATTN:
        if not isinstance(params, AttnParams):
            raise ConfigError("Attn block needs AttnParams")
        xi = nn.avg_pool2x2(x) if downsample else x
        xi = xi + nn.depthwise_conv2d(xi, params.pos)
        _, _, ho, wo = xi.shape
        tokens = transpose(reshape(xi, (n, c, ho * wo)), (0, 2, 1))
        spec = AttnSpec(out_channels, params.num_heads, c)
        a = attn_forward(tokens, spec, params.weights).activations
        hid = relu(matmul(a, params.mlp_w1) + params.mlp_b1)
        m = matmul(hid, params.mlp_w2) + params.mlp_b2
        img = reshape(transpose(m, (0, 2, 1)), (n, out_channels, ho, wo))
        y = params.bn(img, mode, bn_store)
        return BlockOutput(y + _residual(x, out_channels, downsample), total, norm)
    if not isinstance(params, ConvLikeParams):
        raise ConfigError(f"{block_type.name} block needs ConvLikeParams")
    spec = ConvSpec(c, out_channels, params.weight.shape[-1], 2 if downsample else 1)
    if block_type == BlockType.CONV:
        op = conv_forward(x, spec, params.weight)
    elif block_type == BlockType.SHIFT:
        op = shift_forward(x, spec, quantize_pow2(params.weight), params.weight)
    else:
        op = add_forward(x, spec, params.weight)
    y = relu(params.bn(op.activations, mode, bn_store))
    return BlockOutput(y + _residual(x, out_channels, downsample), total, norm)
