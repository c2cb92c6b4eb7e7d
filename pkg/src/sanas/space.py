"""Search space and architecture genes.

A space is a list of stages.  Stage ``j`` owns ``max_blocks`` consecutive
layer slots, of which an active prefix of ``min_blocks..max_blocks`` slots is
used; every active slot picks a block type and a downsample flag.  The
running resolution starts at ``input_resolution`` and each downsampling layer
halves it.  A layer's output resolution must not exceed its stage's
resolution and never drops below the smallest stage resolution.

Sampling, mutation and crossover all walk the same decision sequence:
stage depths first, then (flag, type) per active slot in order; a choice is
drawn uniformly from the options that are legal given earlier choices.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .errors import ConfigError, ValidationError
from .operators import BlockType


@dataclass(frozen=True)
class Stage:
    max_blocks: int
    min_blocks: int
    channels: int
    resolution: int


@dataclass(frozen=True)
class SearchSpace:
    stages: tuple[Stage, ...]
    input_resolution: int = 16
    input_channels: int = 3
    num_classes: int = 4
    block_choices: tuple[BlockType, ...] = (BlockType.CONV, BlockType.SHIFT, BlockType.ADD, BlockType.ATTN)
    attn_max_resolution: int | None = 8
    attn_head_dim: int = 16
    kernel_size: int = 3

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(Stage(*s) if not isinstance(s, Stage) else s
                                                 for s in self.stages))
        object.__setattr__(self, "block_choices", tuple(BlockType(b) for b in self.block_choices))
        if not self.stages:
            raise ConfigError("search space needs at least one stage")
        if not self.block_choices:
            raise ConfigError("search space needs at least one block choice")
        prev = self.input_resolution
        for j, st in enumerate(self.stages):
            if not 1 <= st.min_blocks <= st.max_blocks:
                raise ConfigError(f"stage {j}: need 1 <= min_blocks <= max_blocks, got {st}")
            if st.channels < 1:
                raise ConfigError(f"stage {j}: channels must be positive")
            if st.resolution not in (prev, prev // 2) or st.resolution < 1:
                raise ConfigError(f"stage {j}: resolution {st.resolution} must equal or halve {prev}")
            prev = st.resolution
        if len(set(self.block_choices)) != len(self.block_choices):
            raise ConfigError("duplicate block choices")

    # -- geometry -------------------------------------------------------
    @property
    def max_depth(self) -> int:
        return sum(s.max_blocks for s in self.stages)

    @property
    def min_resolution(self) -> int:
        return self.stages[-1].resolution

    @property
    def stem_channels(self) -> int:
        return self.stages[0].channels

    def stage_of(self, slot: int) -> int:
        for j, (start, stop) in enumerate(self.stage_slots()):
            if start <= slot < stop:
                return j
        raise IndexError(slot)

    def stage_slots(self) -> list[tuple[int, int]]:
        out, pos = [], 0
        for st in self.stages:
            out.append((pos, pos + st.max_blocks))
            pos += st.max_blocks
        return out

    def slot_channels(self, slot: int) -> tuple[int, int]:
        """(in_channels, out_channels) of a slot; fixed regardless of the gene."""
        j = self.stage_of(slot)
        start = self.stage_slots()[j][0]
        out = self.stages[j].channels
        if slot > start:
            return out, out
        return (self.stages[j - 1].channels if j else self.stem_channels), out

    def pool_shape(self, slot: int) -> tuple[int, int, int, int]:
        cin, cout = self.slot_channels(slot)
        return (cout, cin, self.kernel_size, self.kernel_size)

    def num_heads(self, channels: int) -> int:
        h = max(1, channels // self.attn_head_dim)
        while channels % h:
            h -= 1
        return h

    # -- legality -------------------------------------------------------
    def legal_flags(self, res: int, stage: int) -> list[int]:
        cap = self.stages[stage].resolution
        out = []
        if res <= cap:
            out.append(0)
        if res // 2 >= self.min_resolution and res // 2 <= cap and res % 2 == 0:
            out.append(1)
        return out

    def legal_types(self, out_res: int) -> list[BlockType]:
        return [b for b in self.block_choices
                if not (b == BlockType.ATTN and self.attn_max_resolution is not None
                        and out_res > self.attn_max_resolution)]

    def depth_options(self, stage: int) -> list[int]:
        st = self.stages[stage]
        return list(range(st.min_blocks, st.max_blocks + 1))

    # -- counting -------------------------------------------------------
    def size(self) -> int:
        """Number of distinct canonical genes (dynamic programming over resolutions)."""
        total = 0
        for depths in itertools.product(*(self.depth_options(j) for j in range(len(self.stages)))):
            ways = {self.input_resolution: 1}
            for j, dep in enumerate(depths):
                for _ in range(dep):
                    nxt: dict[int, int] = {}
                    for r, c in ways.items():
                        for f in self.legal_flags(r, j):
                            r2 = r // 2 if f else r
                            nxt[r2] = nxt.get(r2, 0) + c * len(self.legal_types(r2))
                    ways = nxt
            total += sum(ways.values())
        return total

    # -- serialization --------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "stages": [[s.max_blocks, s.min_blocks, s.channels, s.resolution] for s in self.stages],
            "input_resolution": self.input_resolution,
            "input_channels": self.input_channels,
            "num_classes": self.num_classes,
            "block_choices": [b.letter for b in self.block_choices],
            "attn_max_resolution": self.attn_max_resolution,
            "attn_head_dim": self.attn_head_dim,
            "kernel_size": self.kernel_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SearchSpace":
        known = {"stages", "input_resolution", "input_channels", "num_classes", "block_choices",
                 "attn_max_resolution", "attn_head_dim", "kernel_size"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown search-space keys: {sorted(unknown)}")
        kw = dict(d)
        kw["stages"] = tuple(Stage(*s) for s in d["stages"])
        if "block_choices" in d:
            kw["block_choices"] = tuple(BlockType.from_letter(c) if isinstance(c, str) else BlockType(c)
                                        for c in d["block_choices"])
        return cls(**kw)


def default_space() -> SearchSpace:
    return SearchSpace(stages=(Stage(2, 1, 16, 16), Stage(2, 1, 32, 8), Stage(3, 1, 64, 4)))


@dataclass(frozen=True)
class ArchGene:
    """Per-slot block type, downsample flag and active flag; inactive slots are zero."""
    types: tuple[int, ...]
    flags: tuple[int, ...]
    active: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.types)

    def to_text(self) -> str:
        return ",".join(f"{BlockType(t).letter}{f}" if a else "-"
                        for t, f, a in zip(self.types, self.flags, self.active))

    @classmethod
    def from_text(cls, text: str) -> "ArchGene":
        types, flags, active = [], [], []
        for tok in text.strip().split(","):
            tok = tok.strip()
            if tok == "-":
                types.append(0), flags.append(0), active.append(0)
                continue
            if len(tok) != 2 or tok[1] not in "01":
                raise ValidationError(f"bad gene token {tok!r}; expected e.g. C0, T1 or -")
            try:
                types.append(int(BlockType.from_letter(tok[0])))
            except ConfigError as e:
                raise ValidationError(str(e)) from None
            flags.append(int(tok[1]))
            active.append(1)
        return cls(tuple(types), tuple(flags), tuple(active))

    def to_bits(self) -> int:
        """Pack 4 bits per slot: type (2), downsample (1), active (1); slot 0 lowest."""
        v = 0
        for i, (t, f, a) in enumerate(zip(self.types, self.flags, self.active)):
            v |= (t | f << 2 | a << 3) << (4 * i)
        return v

    def depths(self, space: SearchSpace) -> list[int]:
        return [sum(self.active[a:b]) for a, b in space.stage_slots()]


def resolutions(gene: ArchGene, space: SearchSpace) -> list[tuple[int, int] | None]:
    """(input, output) resolution per slot, ``None`` for inactive slots."""
    r = space.input_resolution
    out: list[tuple[int, int] | None] = []
    for i in range(len(gene)):
        if not gene.active[i]:
            out.append(None)
            continue
        r2 = r // 2 if gene.flags[i] else r
        out.append((r, r2))
        r = r2
    return out


def validate(gene: ArchGene, space: SearchSpace) -> None:
    if not (len(gene.types) == len(gene.flags) == len(gene.active) == space.max_depth):
        raise ValidationError(f"gene has {len(gene)} slots, space needs {space.max_depth}")
    r = space.input_resolution
    for j, (a, b) in enumerate(space.stage_slots()):
        act = gene.active[a:b]
        k = sum(act)
        if any(v not in (0, 1) for v in act) or list(act) != [1] * k + [0] * (len(act) - k):
            raise ValidationError(f"stage {j}: active slots must form a prefix, got {list(act)}")
        if not space.stages[j].min_blocks <= k <= space.stages[j].max_blocks:
            raise ValidationError(f"stage {j}: {k} active blocks outside "
                                  f"[{space.stages[j].min_blocks}, {space.stages[j].max_blocks}]")
        for i in range(a, b):
            if not gene.active[i]:
                if gene.types[i] or gene.flags[i]:
                    raise ValidationError(f"slot {i}: inactive slot must be zeroed")
                continue
            if gene.flags[i] not in space.legal_flags(r, j):
                raise ValidationError(f"slot {i}: downsample flag {gene.flags[i]} illegal at resolution {r}")
            r = r // 2 if gene.flags[i] else r
            if gene.types[i] not in [int(t) for t in space.legal_types(r)]:
                raise ValidationError(f"slot {i}: block type {gene.types[i]} illegal at resolution {r}")


def is_valid(gene: ArchGene, space: SearchSpace) -> bool:
    try:
        validate(gene, space)
    except ValidationError:
        return False
    return True


def _build(space: SearchSpace, rng: np.random.Generator, depth_pick, flag_pick, type_pick) -> ArchGene:
    """Walk the decision sequence; each ``*_pick`` maps (slot or stage, options) -> choice."""
    n = space.max_depth
    types, flags, active = [0] * n, [0] * n, [0] * n
    r = space.input_resolution
    for j, (a, _) in enumerate(space.stage_slots()):
        depth = depth_pick(j, space.depth_options(j))
        for i in range(a, a + depth):
            active[i] = 1
            f = flag_pick(i, space.legal_flags(r, j))
            r = r // 2 if f else r
            flags[i] = f
            types[i] = int(type_pick(i, [int(t) for t in space.legal_types(r)]))
    return ArchGene(tuple(types), tuple(flags), tuple(active))


def _uniform(rng: np.random.Generator, options: list):
    return options[int(rng.integers(len(options)))]


def sample_uniform(space: SearchSpace, rng: np.random.Generator) -> ArchGene:
    pick = lambda _, opts: _uniform(rng, opts)  # noqa: E731
    return _build(space, rng, pick, pick, pick)


def mutate(gene: ArchGene, prob: float, rng: np.random.Generator, space: SearchSpace) -> ArchGene:
    """Resample each structural choice with probability ``prob``; repair illegal leftovers."""
    old_depths = gene.depths(space)

    def keep_or_draw(current, opts):
        if rng.random() < prob or current not in opts:
            return _uniform(rng, opts)
        return current

    def depth_pick(j, opts):
        return keep_or_draw(old_depths[j], opts)

    def slot_pick(attr):
        def pick(i, opts):
            if not gene.active[i]:
                return _uniform(rng, opts)
            return keep_or_draw(getattr(gene, attr)[i], opts)
        return pick

    if prob <= 0:
        return gene
    return _build(space, rng, depth_pick, slot_pick("flags"), slot_pick("types"))


def crossover(a: ArchGene, b: ArchGene, rng: np.random.Generator, space: SearchSpace) -> ArchGene:
    """Per-decision uniform choice between parents, repaired by uniform resampling."""
    da, db = a.depths(space), b.depths(space)

    def choose(cands, opts):
        cands = [c for c in cands if c is not None]
        pick = cands[int(rng.integers(len(cands)))] if cands else None
        if pick in opts:
            return pick
        legal = [c for c in cands if c in opts]
        return legal[0] if legal else _uniform(rng, opts)

    def depth_pick(j, opts):
        return choose([da[j], db[j]], opts)

    def slot_pick(attr):
        def pick(i, opts):
            cands = [getattr(p, attr)[i] for p in (a, b) if p.active[i]]
            return choose(cands, opts)
        return pick

    return _build(space, rng, depth_pick, slot_pick("flags"), slot_pick("types"))


def enumerate_genes(space: SearchSpace) -> Iterator[ArchGene]:
    """Every canonical gene of the space, depth-first in decision order."""
    n = space.max_depth
    slots = space.stage_slots()

    def rec(j: int, pos: int, r: int, types, flags, active):
        if j == len(space.stages):
            yield ArchGene(tuple(types), tuple(flags), tuple(active))
            return
        a, _ = slots[j]
        for depth in space.depth_options(j):
            yield from layers(j, a, a + depth, r, types, flags, active)

    def layers(j, i, stop, r, types, flags, active):
        if i == stop:
            yield from rec(j + 1, i, r, types, flags, active)
            return
        for f in space.legal_flags(r, j):
            r2 = r // 2 if f else r
            for t in space.legal_types(r2):
                t2, f2, a2 = list(types), list(flags), list(active)
                t2[i], f2[i], a2[i] = int(t), f, 1
                yield from layers(j, i + 1, stop, r2, t2, f2, a2)

    yield from rec(0, 0, space.input_resolution, [0] * n, [0] * n, [0] * n)


def load_space(path) -> SearchSpace:
    with open(path) as fh:
        d = json.load(fh)
    return SearchSpace.from_dict(d.get("space", d))
