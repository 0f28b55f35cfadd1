import numpy as np
import pytest

from conftest import FAST, compile_on_minimal
from relic_tools.arch import CB_SELECT, FU_REPLICA, SB_SWITCH, bit_layout
from relic_tools.dfg import merge_kernels, random_vectors
from relic_tools.errors import InputError, InvariantError
from relic_tools.harden import assign_hardening, minimal_fabric
from relic_tools.pnr import Placement, PlacerConfig, compile_design, place
from relic_tools.seu import (
    BENIGN,
    DETECTED,
    SDC,
    CampaignScope,
    SensitivityMap,
    adjacent_mbu,
    build_device_model,
    cell_mbu,
    classify_upset,
    inject,
    lower_sensitivity,
    mbu_pairs,
    replica_exclusive_bits,
    replica_mbu_violations,
    run_campaign,
)


def _op_bit(compiled, node, replica=0, bit=0):
    r, c = compiled.placement.nodes[node]
    layout = bit_layout(compiled.arch)
    return layout.fields[layout.key_index[("op", r, c, replica)]].index + bit


def _classify(compiled, bits, vectors):
    return classify_upset(compiled.arch, compiled.bitstream, compiled.design.dfg, vectors, bits)


@pytest.fixture(scope="module")
def vectors(conv2x2):
    return random_vectors(conv2x2, 16, seed=4)


def test_inject_flips_and_checks_range(conv_tmr):
    upset = inject(conv_tmr.bitstream, [0, 5])
    diff = np.flatnonzero(upset.flat_payload() != conv_tmr.bitstream.flat_payload())
    assert diff.tolist() == [0, 5]
    with pytest.raises(InputError):
        inject(conv_tmr.bitstream, [conv_tmr.bitstream.nbits])


def test_single_upset_classes(conv_tmr, conv_plain, conv2x2, vectors):
    assert _classify(conv_tmr, [_op_bit(conv_tmr, "m0", replica=1)], vectors) == BENIGN
    assert _classify(conv_plain, [_op_bit(conv_plain, "m0", bit=1)], vectors) == SDC

    for mode, node, replica, bit in (("dwc_fu", "m0", 1, 0), ("edc_fu", "m0", 0, 1)):
        design = assign_hardening(conv2x2, mode)
        compiled = compile_design(design, minimal_fabric(design.requirements()), placer=FAST)
        assert _classify(compiled, [_op_bit(compiled, node, replica, bit)], vectors) == DETECTED


def test_campaign_over_replica_opcodes_is_benign(conv_tmr, vectors):
    smap = run_campaign(conv_tmr.arch, conv_tmr.bitstream, conv_tmr.design.dfg, vectors,
                        CampaignScope.parse("kinds:fu_replica"))
    assert len(smap.bits) == 192
    assert smap.counts() == {BENIGN: 192, DETECTED: 0, SDC: 0}
    summary = smap.summary(bit_layout(conv_tmr.arch))
    assert summary["sensitive_fraction"] == 0.0
    assert summary["by_resource_kind"]["fu_replica"][BENIGN] == 192
    assert summary["runtime"]["simulations"] == 193


def test_plain_campaign_finds_sdc_and_round_trips(conv_plain, vectors):
    layout = bit_layout(conv_plain.arch)
    scope = CampaignScope.parse("random:60", seed=3)
    smap = run_campaign(conv_plain.arch, conv_plain.bitstream, conv_plain.design.dfg, vectors, scope, seed=3)
    assert len(smap.bits) == 60
    assert list(smap.bits) == sorted(smap.bits)
    assert smap.counts()[DETECTED] == 0
    again = SensitivityMap.from_csv(smap.to_csv(layout), layout.nbits)
    assert again.as_dict == smap.as_dict
    header = smap.to_csv(layout).splitlines()[0]
    assert header == "bit_index,frame,offset,resource_kind,row,col,class"

    opcode_bits = CampaignScope.parse("kinds:fu_op").select(layout)
    full = run_campaign(conv_plain.arch, conv_plain.bitstream, conv_plain.design.dfg, vectors,
                        CampaignScope.parse("kinds:fu_op"))
    assert len(full.bits) == len(opcode_bits)
    assert full.counts()[SDC] > 0


@pytest.mark.slow
def test_parallel_campaign_matches_serial(conv_tmr, vectors):
    scope = CampaignScope.parse("random:80", seed=1)
    args = (conv_tmr.arch, conv_tmr.bitstream, conv_tmr.design.dfg, vectors, scope)
    assert run_campaign(*args, jobs=2) == run_campaign(*args, jobs=1)


def test_campaign_refuses_broken_baseline(conv_plain, vectors):
    broken = inject(conv_plain.bitstream, [_op_bit(conv_plain, "m0", bit=1)])
    with pytest.raises(InvariantError):
        run_campaign(conv_plain.arch, broken, conv_plain.design.dfg, vectors, CampaignScope.parse("random:4"))


@pytest.mark.parametrize("text", ["random:x", "kinds:", "kinds:lut", "some"])
def test_bad_scopes(text):
    with pytest.raises(InputError):
        CampaignScope.parse(text)


def test_scope_descriptions():
    assert CampaignScope.parse("all").describe() == "all"
    assert CampaignScope.parse("random:5", seed=2).describe() == "random:5"
    assert CampaignScope.parse("kinds:sb_switch,cb_select").describe() == "kinds:sb_switch,cb_select"


def test_mbu_footprints(tmrfu_4x4):
    # 12 horizontal, 12 vertical and 18 diagonal neighbours
    assert len(mbu_pairs(tmrfu_4x4)) == 42
    layout = bit_layout(tmrfu_4x4)
    rng = np.random.default_rng(0)
    a, b = adjacent_mbu(layout, (0, 0), (1, 1), rng)
    assert a in layout.cell_bits((0, 0)) and b in layout.cell_bits((1, 1))
    bits = cell_mbu(layout, (2, 2), 4, rng)
    assert len(set(bits)) == 4
    assert set(bits) <= set(layout.cell_bits((2, 2)))
    with pytest.raises(InputError):
        cell_mbu(layout, (2, 2), 70, rng)


def test_adjacent_replicas_are_exposed_to_mbus(conv2x2):
    design = assign_hardening(conv2x2, "naive_tmr")
    arch = minimal_fabric(design.requirements())
    # (0, 0), (1, 0) and (2, 0) are all multiplier cells
    close = Placement(design, (("m0_r0", (0, 0)), ("m0_r1", (1, 0))))
    # 4 opcode bits and 3 x 3 select bits per cell
    assert replica_mbu_violations(arch, design, close) == 13 * 13
    apart = Placement(design, (("m0_r0", (0, 0)), ("m0_r1", (2, 0))))
    assert replica_mbu_violations(arch, design, apart) == 0
    # opcode and the two input selects of each replica cell
    layout = bit_layout(arch)
    expected = [b for r in (0, 1) for key in (("op", r, 0, 0), ("in", r, 0, 0), ("in", r, 0, 1))
                for b in _field_bits(layout, key)]
    exclusive = replica_exclusive_bits(arch, design, close)
    assert exclusive == sorted(expected)
    assert len(exclusive) == 2 * (4 + 2 * 3)


def _field_bits(layout, key):
    f = layout.fields[layout.key_index[key]]
    return list(range(f.index, f.index + f.width))


def test_single_upsets_in_one_replica_domain_are_masked(vectors):
    compiled = compile_on_minimal("conv2x2", "naive_tmr")
    bits = replica_exclusive_bits(compiled.arch, compiled.design, compiled.placement)
    # 7 triples, 4 opcode bits and 2 x 3 input-select bits per replica cell
    assert len(bits) == 21 * 10
    assert [b for b in bits if _classify(compiled, [b], vectors) != BENIGN] == []



def test_device_model_sizes(conv_tmr):
    model = build_device_model(conv_tmr.arch, conv_tmr.placement, conv_tmr.routing)
    assert model.frame_count == 40
    assert model.frame_bits == 512
    # 4 TMR multipliers at 3 x 600 + 60 and 3 TMR adders at 3 x 150 + 60
    assert model.essential_static_bits == 4 * 1860 + 3 * 510
    assert model.essential_config_bits == 7 * (12 + 9) + conv_tmr.routing.switch_count
    assert len(np.unique(model.overlay_map)) == bit_layout(conv_tmr.arch).nbits
    assert not model.static_mask[model.overlay_map].any()
    assert set(model.essential_overlay_frames()) <= {0, 1, 2, 3}
    assert model.to_json()["synthetic"] is True


def test_lower_level_classes(conv_tmr, vectors):
    model = build_device_model(conv_tmr.arch, conv_tmr.placement, conv_tmr.routing)
    nbits = bit_layout(conv_tmr.arch).nbits
    counts = lower_sensitivity(model).counts()
    assert counts[SDC] == 8970 + nbits
    assert counts[DETECTED] == 0
    assert sum(counts.values()) == model.nbits

    upper = run_campaign(conv_tmr.arch, conv_tmr.bitstream, conv_tmr.design.dfg, vectors,
                         CampaignScope.parse("kinds:fu_replica"))
    assert lower_sensitivity(model, upper).counts()[SDC] == 8970 + nbits - 192


def test_separated_replicas_escape_adjacent_mbus(conv2x2):
    compiled = compile_on_minimal("conv2x2", "naive_tmr")
    assert compiled.placement.separation == 2
    assert replica_mbu_violations(compiled.arch, compiled.design, compiled.placement) == 0
    # no separation and no annealing: the greedy start packs replicas side by side
    packed = place(compiled.design, compiled.arch, separation=0,
                   config=PlacerConfig(init_moves=0, max_temperatures=0))
    assert replica_mbu_violations(compiled.arch, compiled.design, packed) > 0


@pytest.mark.slow
def test_merged_tmr_units_only_fail_through_routing(conv2x2, sad2x2):
    merged = merge_kernels([conv2x2, sad2x2])
    design = assign_hardening(merged, "tmr_fu")
    compiled = compile_design(design, minimal_fabric(design.requirements()), placer=FAST)
    layout = bit_layout(compiled.arch)
    vectors = random_vectors(merged, 16, seed=4)
    smap = run_campaign(compiled.arch, compiled.bitstream, design.dfg, vectors, CampaignScope.parse("all"))
    assert len(smap.bits) == layout.nbits
    by_kind = smap.by_kind(layout)
    assert by_kind[FU_REPLICA] == {BENIGN: len(layout.bits_of_kind(FU_REPLICA)), DETECTED: 0, SDC: 0}
    assert {kind for kind, classes in by_kind.items() if classes[SDC]} <= {CB_SELECT, SB_SWITCH}


@pytest.mark.slow
def test_tmr_units_have_no_more_sdc_bits_than_plain(conv_tmr, conv_plain, vectors):
    scope = CampaignScope.parse("all")
    tmr = run_campaign(conv_tmr.arch, conv_tmr.bitstream, conv_tmr.design.dfg, vectors, scope)
    plain = run_campaign(conv_plain.arch, conv_plain.bitstream, conv_plain.design.dfg, vectors, scope)
    assert tmr.counts()[SDC] <= plain.counts()[SDC]
