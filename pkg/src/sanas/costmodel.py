"""Operation counts, relative energy, effective FLOPs and a synthetic latency model."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, ContractError
from .operators import AttnSpec, BlockType, ConvSpec, OpCounts, block_counts
from .space import ArchGene, SearchSpace, resolutions, validate


@dataclass(frozen=True)
class CostTable:
    """Relative unit costs with mult = 1; latencies default to the energies."""
    name: str
    mult: float
    add: float
    shift: float
    lat_mult: float | None = None
    lat_add: float | None = None
    lat_shift: float | None = None

    def __post_init__(self):
        vals = [self.mult, self.add, self.shift]
        vals += [v for v in (self.lat_mult, self.lat_add, self.lat_shift) if v is not None]
        if not all(isinstance(v, (int, float)) and math.isfinite(v) and v > 0 for v in vals):
            raise ConfigError(f"cost table {self.name!r}: every unit cost must be a positive number")

    @property
    def latency(self) -> tuple[float, float, float]:
        return (self.lat_mult if self.lat_mult is not None else self.mult,
                self.lat_add if self.lat_add is not None else self.add,
                self.lat_shift if self.lat_shift is not None else self.shift)

    @classmethod
    def from_dict(cls, d: dict) -> "CostTable":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown cost-table keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as e:
            raise ConfigError(f"bad cost table: {e}") from None


PROFILES: dict[str, CostTable] = {
    "45nm-FIX32": CostTable("45nm-FIX32", 1.0, 1 / 196, 1 / 196),
    "45nm-FP32": CostTable("45nm-FP32", 1.0, 1 / 47, 1 / 196),
    "FPGA-FIX32": CostTable("FPGA-FIX32", 1.0, 1 / 31, 1 / 24),
    "FPGA-FP32": CostTable("FPGA-FP32", 1.0, 1 / 4.1, 1 / 24),
}


def get_profile(name_or_path: str) -> CostTable:
    """Built-in profile by name, or a JSON cost table by path."""
    if name_or_path in PROFILES:
        return PROFILES[name_or_path]
    p = Path(name_or_path)
    if p.suffix == ".json" or p.exists():
        if not p.exists():
            raise FileNotFoundError(f"cost table not found: {p}")
        return CostTable.from_dict(json.loads(p.read_text()))
    raise ConfigError(f"unknown profile {name_or_path!r}; built-ins: {', '.join(PROFILES)}")


@dataclass(frozen=True)
class CostReport:
    """Per-image counts.  ``num_*`` are totals; ``overhead_*`` is the part
    spent in the fixed stem, normalization and classifier head."""
    num_mult: int
    num_add: int
    num_shift: int
    softmax: int
    overhead_mult: int
    overhead_add: int
    macs: int
    params: int
    energy: float = 0.0
    latency_estimate: float = 0.0
    effective_flops: float = 0.0

    @property
    def counts(self) -> OpCounts:
        return OpCounts(self.num_mult, self.num_add, self.num_shift, self.softmax)

    def to_dict(self) -> dict:
        return asdict(self)


def layer_counts(gene: ArchGene, space: SearchSpace, batch: int = 1) -> list[tuple[OpCounts, OpCounts] | None]:
    """(total, normalization) counts per slot, ``None`` for inactive slots."""
    out = []
    for i, res in enumerate(resolutions(gene, space)):
        if res is None:
            out.append(None)
            continue
        cin, cout = space.slot_channels(i)
        out.append(block_counts(BlockType(gene.types[i]), batch, cin, cout, res[0], res[0],
                                bool(gene.flags[i]), space.num_heads(cout)))
    return out


def _stem(space: SearchSpace) -> tuple[OpCounts, int]:
    r, c0 = space.input_resolution, space.stem_channels
    macs = ConvSpec(space.input_channels, c0, space.kernel_size).macs(1, r, r)
    el = c0 * r * r
    return OpCounts(mult=macs + el, add=macs + el), macs


def _head(space: SearchSpace, final_res: int) -> tuple[OpCounts, int]:
    c, k = space.stages[-1].channels, space.num_classes
    return OpCounts(mult=c + c * k, add=c * final_res * final_res + c * k + k), c * k


def _block_macs(t: BlockType, cin: int, cout: int, r: int, downsample: bool, heads: int) -> int:
    stride = 2 if downsample else 1
    if t == BlockType.ATTN:
        n = (-(-r // stride)) ** 2
        return attn_macs(AttnSpec(cout, heads, cin), n) + n * cin * 9 + 4 * n * cout * cout
    return ConvSpec(cin, cout, 3, stride).macs(1, r, r)


def attn_macs(spec: AttnSpec, n: int) -> int:
    d, din = spec.embed_dim, spec.input_dim
    return 3 * n * din * d + 2 * n * n * d + n * d * d


def count_params(gene: ArchGene, space: SearchSpace) -> int:
    """Trainable parameters of the standalone model for ``gene``."""
    k = space.kernel_size
    c0 = space.stem_channels
    total = c0 * space.input_channels * k * k + 2 * c0
    total += space.stages[-1].channels * space.num_classes + space.num_classes
    for i in range(len(gene)):
        if not gene.active[i]:
            continue
        cin, cout = space.slot_channels(i)
        if gene.types[i] == BlockType.ATTN:
            total += cin * 9 + 3 * cin * cout + cout * cout + 4 * cout * cout + 3 * cout + 2 * cout
        else:
            total += cout * cin * k * k + 2 * cout
    return total


def count_ops(gene: ArchGene, space: SearchSpace, table: CostTable | None = None, bits: int = 32) -> CostReport:
    """Symbolic per-image cost of ``gene``; no data needed."""
    validate(gene, space)
    stem, stem_macs = _stem(space)
    total = stem
    overhead = stem
    macs = stem_macs
    res = resolutions(gene, space)
    final = space.input_resolution
    for i, lc in enumerate(layer_counts(gene, space)):
        if lc is None:
            continue
        blk, norm = lc
        total = total + blk
        overhead = overhead + norm
        cin, cout = space.slot_channels(i)
        macs += _block_macs(BlockType(gene.types[i]), cin, cout, res[i][0], bool(gene.flags[i]),
                            space.num_heads(cout))
        final = res[i][1]
    head, head_macs = _head(space, final)
    total = total + head
    overhead = overhead + head
    macs += head_macs
    rep = CostReport(total.mult, total.add, total.shift, total.softmax, overhead.mult, overhead.add,
                     macs, count_params(gene, space))
    table = table or PROFILES["45nm-FIX32"]
    return CostReport(**{**asdict(rep), "energy": energy(rep, table),
                         "latency_estimate": synthetic_latency(rep, table, None, 0.0),
                         "effective_flops": effective_flops(2 * macs, bits)})


def energy(report: CostReport, table: CostTable) -> float:
    return report.num_mult * table.mult + report.num_add * table.add + report.num_shift * table.shift


def effective_flops(flops: float, bits: int) -> float:
    """FLOPs scaled by (bits / 32)^2."""
    if isinstance(bits, bool) or not isinstance(bits, (int, np.integer)) or not 1 <= bits <= 32:
        raise ContractError(f"bits must be an integer in [1, 32], got {bits!r}")
    return flops * bits * bits / 1024


def synthetic_latency(report: CostReport, table: CostTable, rng: np.random.Generator | None,
                      noise_sigma: float = 0.0) -> float:
    """Linear latency from unit latencies, times lognormal noise exp(N(0, sigma^2))."""
    if noise_sigma < 0:
        raise ContractError(f"noise_sigma must be >= 0, got {noise_sigma}")
    lm, la, ls = table.latency
    base = report.num_mult * lm + report.num_add * la + report.num_shift * ls
    if noise_sigma == 0:
        return base
    if rng is None:
        raise ContractError("noisy latency needs an rng")
    return base * math.exp(rng.normal(0.0, noise_sigma))
