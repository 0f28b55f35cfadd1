import pytest

from conftest import FAST
from relic_tools.dfg import random_vectors
from relic_tools.errors import InfeasibleError, InputError
from relic_tools.harden import assign_hardening
from relic_tools.repair import (
    RepairPolicy,
    coverage,
    dynamic_repair,
    precompile,
    spare_inventory,
    tradeoff_table,
)
from relic_tools.sim import EQUAL, FaultState, compare_golden, simulate


@pytest.fixture(scope="module")
def design(conv2x2):
    return assign_hardening(conv2x2, "tmr_fu")


@pytest.fixture(scope="module")
def mul_plan(design, tmrfu_4x4, conv_tmr):
    policy = RepairPolicy(spares=RepairPolicy.parse_spares(["mul:1"]))
    return precompile(design, tmrfu_4x4, policy, k=4, placer=FAST, baseline=conv_tmr)


def _used_mul(conv_tmr):
    return [c for c in conv_tmr.placement.used_cells() if conv_tmr.arch.cell_at(c).kind == "mul"]


def test_spare_inventory(design, tmrfu_4x4):
    spares = spare_inventory(design, tmrfu_4x4)
    assert (spares["mul"], spares["add"], spares["subabs"]) == (2, 3, 4)
    assert spare_inventory(design, tmrfu_4x4, excluded=[(0, 0)])["mul"] == 1


def test_policy_parsing():
    assert RepairPolicy.parse_spares(["mul:1", "add:2"]) == (("add", 2), ("mul", 1))
    with pytest.raises(InputError):
        RepairPolicy.parse_spares(["mul"])
    with pytest.raises(InputError):
        RepairPolicy(granularity="per_frame")
    with pytest.raises(InputError):
        RepairPolicy(spares=(("lut", 1),))


def test_precompiled_configs_cover_every_multiplier(mul_plan, conv_tmr):
    assert len(mul_plan.configs) == 4
    assert coverage(mul_plan, ("mul",)) == 1.0
    assert coverage(mul_plan, ("add",)) == 0.0
    for cfg in mul_plan.configs:
        (cell,) = cfg.excluded
        assert cell not in cfg.compiled.placement.used_cells()
        assert cfg.latency(mul_plan.policy) == len(cfg.frames_changed) * 64
    assert mul_plan.to_json()["spares"]["mul"] == 2


def test_lookup_picks_a_matching_config(mul_plan, conv_tmr):
    faulty = _used_mul(conv_tmr)[0]
    outcome = mul_plan.lookup([faulty])
    assert outcome.method == "precompiled"
    assert faulty not in outcome.compiled.placement.used_cells()
    assert outcome.latency_cycles == outcome.frames_rewritten * 64
    spare = conv_tmr.placement.spares[0]
    assert mul_plan.lookup([spare]).method == "unaffected"
    # an adder fault is not covered by multiplier-only alternates
    adder = next(c for c in conv_tmr.placement.used_cells() if conv_tmr.arch.cell_at(c).kind == "add")
    assert mul_plan.lookup([adder]) is None


def test_full_overlay_granularity_rewrites_every_frame(design, tmrfu_4x4, conv_tmr):
    policy = RepairPolicy(spares=(("mul", 1),), granularity="full_overlay")
    plan = precompile(design, tmrfu_4x4, policy, k=1, placer=FAST, baseline=conv_tmr)
    assert plan.configs[0].latency(policy) == 4 * 64


def test_precompile_limits(design, tmrfu_4x4, conv_tmr):
    with pytest.raises(InfeasibleError):
        precompile(design, tmrfu_4x4, RepairPolicy(spares=(("mul", 3),)), k=1, placer=FAST, baseline=conv_tmr)
    with pytest.raises(InputError):
        precompile(design, tmrfu_4x4, RepairPolicy(spares=(("mul", 1),)), k=5, placer=FAST, baseline=conv_tmr)
    empty = precompile(design, tmrfu_4x4, RepairPolicy(), k=0, placer=FAST, baseline=conv_tmr)
    assert coverage(empty) == 0.0


def test_dynamic_repair_avoids_the_fault(design, tmrfu_4x4, conv_tmr):
    faulty = _used_mul(conv_tmr)[1]
    outcome = dynamic_repair(design, tmrfu_4x4, [faulty], placer=FAST, baseline=conv_tmr)
    assert outcome.method == "dynamic"
    assert faulty not in outcome.compiled.placement.used_cells()
    assert outcome.frames_rewritten == 4
    assert outcome.latency_cycles == outcome.compiled.work_units + 4 * 64


def test_dynamic_repair_edge_cases(design, tmrfu_4x4, conv_tmr):
    spare = conv_tmr.placement.spares[0]
    assert dynamic_repair(design, tmrfu_4x4, [spare], placer=FAST, baseline=conv_tmr).method == "unaffected"
    every_mul = [c.coord for c in tmrfu_4x4.cells if c.kind == "mul"]
    with pytest.raises(InfeasibleError):
        dynamic_repair(design, tmrfu_4x4, every_mul, placer=FAST)
    with pytest.raises(InputError):
        dynamic_repair(design, tmrfu_4x4, [(7, 7)], placer=FAST)


@pytest.mark.slow
def test_tradeoff_sweep(design, tmrfu_4x4):
    rows = tradeoff_table(design, tmrfu_4x4, spares_options=(0, 1), k_options=(0, 1), placer=FAST)
    assert len(rows) == 8
    tight = [r for r in rows if r["spares_per_kind"] == 0]
    assert tight[0]["cells"] == 7
    assert [r["status"] for r in tight if r["k"] == 0] == ["ok", "ok"]
    assert all(r["status"].startswith("infeasible") for r in tight if r["k"] == 1)
    assert all(r["dynamic_latency"] is None for r in tight if r["status"] == "ok")
    roomy = [r for r in rows if r["spares_per_kind"] == 1]
    assert all(r["status"] == "ok" for r in roomy)
    assert all(r["dynamic_latency"] > 0 for r in roomy)


@pytest.mark.slow
def test_every_used_cell_fault_is_repaired(design, tmrfu_4x4, conv_tmr, conv2x2):
    vectors = random_vectors(conv2x2, 1000, seed=0)
    for cell in conv_tmr.placement.used_cells():
        outcome = dynamic_repair(design, tmrfu_4x4, [cell], placer=FAST, baseline=conv_tmr)
        repaired = outcome.compiled
        assert outcome.method == "dynamic"
        assert cell not in repaired.placement.used_cells()
        result = simulate(repaired.arch, repaired.bitstream, vectors, FaultState.of(stuck=[cell]), repaired.io)
        assert compare_golden(result, design.dfg, vectors).status == EQUAL
        assert not result.flagged.any()
