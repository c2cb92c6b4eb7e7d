import json
from dataclasses import replace

import numpy as np
import pytest

from sanas.costmodel import (PROFILES, CostReport, count_ops, count_params, effective_flops, energy,
                             get_profile, layer_counts, synthetic_latency)
from sanas.errors import ConfigError, ContractError, ValidationError
from sanas.operators import BlockType, OpCounts
from sanas.space import ArchGene, SearchSpace, Stage, default_space, enumerate_genes, sample_uniform
from sanas.supernet import Supernet
from sanas.tensor import make_rng, no_grad


def two_layer_space() -> SearchSpace:
    return SearchSpace(stages=(Stage(1, 1, 8, 8), Stage(1, 1, 16, 8)), input_resolution=8)


# Hand count for "C0,C0" on 3x8x8 input, 8 then 16 channels, 4 classes (per image):
#   stem conv 3->8:  8*3*9*64  = 13824 MACs, BN 8*64 = 512 elements
#   slot 0 conv 8->8:  8*8*9*64  = 36864 MACs, BN 512, residual adds 512
#   slot 1 conv 8->16: 16*8*9*64 = 73728 MACs, BN 1024, residual adds 1024
#   head: 16*64 = 1024 pooling adds, 16 divides, 16*4 = 64 MACs, 4 bias adds
HAND_MULT = 13824 + 512 + 36864 + 512 + 73728 + 1024 + 16 + 64
HAND_ADD = 13824 + 512 + 36864 + 512 + 512 + 73728 + 1024 + 1024 + 1024 + 64 + 4


def test_hand_count_two_layer_gene():
    rep = count_ops(ArchGene.from_text("C0,C0"), two_layer_space())
    assert (rep.num_mult, rep.num_add, rep.num_shift) == (HAND_MULT, HAND_ADD, 0)


def test_conv_to_shift_swap_moves_exactly_the_slot_mults():
    sp = two_layer_space()
    conv = count_ops(ArchGene.from_text("C0,C0"), sp)
    shift = count_ops(ArchGene.from_text("C0,S0"), sp)
    slot_mults = 73728
    assert conv.num_mult - shift.num_mult == slot_mults
    assert shift.num_shift - conv.num_shift == slot_mults
    assert shift.num_add == conv.num_add
    table = PROFILES["45nm-FIX32"]
    assert (slot_mults * table.mult) / (slot_mults * table.shift) == pytest.approx(196.0, rel=1e-12)
    assert energy(conv, table) - energy(shift, table) == pytest.approx(slot_mults * (1 - 1 / 196), rel=1e-12)


def test_counts_match_executed_forward():
    sp = default_space()
    rng = make_rng(0)
    for _ in range(10):
        g = sample_uniform(sp, rng)
        net = Supernet(sp, "standalone", 0, gene=g)
        with no_grad():
            _, counts = net.forward(np.zeros((2, 3, 16, 16)), g, "eval")
        rep = count_ops(g, sp)
        assert counts == OpCounts(rep.num_mult, rep.num_add, rep.num_shift, rep.softmax).scaled(2)
        assert rep.params == count_params(g, sp) == sum(p.size for p in net.parameters())


def test_additivity_over_layers():
    sp = default_space()
    rng = make_rng(1)
    for _ in range(20):
        g = sample_uniform(sp, rng)
        rep = count_ops(g, sp)
        layers = [lc for lc in layer_counts(g, sp) if lc]
        assert rep.num_mult - rep.overhead_mult == sum(t.mult - n.mult for t, n in layers)
        assert rep.num_add - rep.overhead_add == sum(t.add - n.add for t, n in layers)
        assert rep.num_shift == sum(t.shift for t, _ in layers)


def test_shallow_gene_cheaper_than_deep_gene():
    sp = default_space()
    shallow = count_ops(ArchGene.from_text("C0,-,C1,-,C1,-,-"), sp)
    deep = count_ops(ArchGene.from_text("C0,C0,C1,C0,C1,C0,C0"), sp)
    assert shallow.energy < deep.energy
    assert shallow.num_mult < deep.num_mult


def test_multiplication_free_genes_only_pay_overhead_mults():
    sp = SearchSpace(stages=(Stage(2, 1, 8, 8), Stage(2, 1, 16, 4)), input_resolution=8,
                     block_choices=(BlockType.SHIFT, BlockType.ADD))
    for g in enumerate_genes(sp):
        rep = count_ops(g, sp)
        assert rep.num_mult == rep.overhead_mult


def test_energy_table_application():
    rep = count_ops(ArchGene.from_text("C0,C0"), two_layer_space())
    t = PROFILES["45nm-FIX32"]
    assert energy(rep, t) == pytest.approx(rep.num_mult + rep.num_add / 196, rel=1e-15)
    zero = CostReport(0, 0, 0, 0, 0, 0, 0, 0)
    assert energy(zero, t) == 0


def test_builtin_profiles():
    assert PROFILES["45nm-FP32"].add == pytest.approx(1 / 47)
    assert PROFILES["FPGA-FIX32"].add == pytest.approx(1 / 31)
    assert PROFILES["FPGA-FP32"].add == pytest.approx(1 / 4.1)
    assert PROFILES["FPGA-FP32"].shift == pytest.approx(1 / 24)
    for t in PROFILES.values():
        assert 0 < t.shift < t.mult and 0 < t.add < t.mult == 1.0
        assert t.latency == (t.mult, t.add, t.shift)


def test_custom_table_from_json(tmp_path):
    path = tmp_path / "t.json"
    path.write_text(json.dumps({"name": "mine", "mult": 1.0, "add": 0.5, "shift": 0.25}))
    assert get_profile(str(path)).add == 0.5
    path.write_text(json.dumps({"name": "bad", "mult": 1.0, "add": -1, "shift": 0.25}))
    with pytest.raises(ConfigError):
        get_profile(str(path))
    with pytest.raises(ConfigError):
        get_profile("7nm-magic")


@pytest.mark.parametrize("bits, factor", [(32, 1.0), (16, 0.25), (8, 1 / 16), (1, 1 / 1024)])
def test_effective_flops(bits, factor):
    assert effective_flops(3.2e9, bits) == 3.2e9 * factor


@pytest.mark.parametrize("bits", [0, 33, 8.0])
def test_effective_flops_rejects_bad_bits(bits):
    with pytest.raises(ContractError):
        effective_flops(1.0, bits)


def test_synthetic_latency():
    rep = count_ops(ArchGene.from_text("C0,S0"), two_layer_space())
    t = PROFILES["FPGA-FIX32"]
    base = rep.num_mult + rep.num_add / 31 + rep.num_shift / 24
    assert synthetic_latency(rep, t, None, 0.0) == pytest.approx(base, rel=1e-15)
    doubled = replace(rep, num_mult=2 * rep.num_mult, num_add=2 * rep.num_add, num_shift=2 * rep.num_shift)
    assert synthetic_latency(doubled, t, None, 0.0) == pytest.approx(2 * base, rel=1e-15)
    a = synthetic_latency(rep, t, make_rng(3), 0.1)
    assert a == synthetic_latency(rep, t, make_rng(3), 0.1)
    assert a != base
    with pytest.raises(ContractError):
        synthetic_latency(rep, t, make_rng(3), -0.1)


def test_count_ops_rejects_invalid_gene():
    with pytest.raises(ValidationError):
        count_ops(ArchGene.from_text("T0,C0"), SearchSpace(stages=(Stage(1, 1, 8, 16), Stage(1, 1, 16, 16))))
