import pytest

from conftest import FAST, HARDENED_MODES, compile_on_minimal
from relic_tools.arch import bit_layout, decode_bitstream, geometry, parse_fabric
from relic_tools.dfg import gen_conv, parse_dfg
from relic_tools.errors import InfeasibleError, InputError, UnroutableError
from relic_tools.harden import ResourceCounts, assign_hardening, compatible_kinds, minimal_fabric
from relic_tools.pnr import (
    Net,
    NetSink,
    PlacerConfig,
    build_netlist,
    check_routing,
    check_separation,
    chebyshev,
    compile_design,
    configured_routes,
    place,
    route,
)

ADD_ONLY = "kernel s\ninput x y\nnode s = add x y\noutput o = s\n"


def _one_cell(width: int):
    return parse_fabric(f"fabric tiny\nrows 1\ncols 1\nchannel_width {width}\nfu 0 0 add\n")


def test_placement_uses_compatible_cells(conv_tmr):
    placement, arch = conv_tmr.placement, conv_tmr.arch
    assert len(placement.used_cells()) == 7
    assert len(placement.spares) == 9
    for node, coord in placement.assignment:
        cell = arch.cell_at(coord)
        assert cell.kind in compatible_kinds(conv_tmr.design.dfg.node_map[node].op)
        assert cell.variant == "tmr_fu"


def test_routing_is_legal_and_matches_bitstream(conv_tmr):
    netlist = build_netlist(conv_tmr.placement, conv_tmr.arch)
    assert check_routing(conv_tmr.routing, netlist, conv_tmr.arch) == []
    decoded = decode_bitstream(bit_layout(conv_tmr.arch), conv_tmr.bitstream)
    assert configured_routes(conv_tmr.arch, decoded) == conv_tmr.routing.switch_sets(conv_tmr.arch.channel_width)
    # every replica opcode of a used cell carries the same operation
    for r, c in conv_tmr.placement.used_cells():
        ops = {decoded.get(("op", r, c, k)) for k in range(3)}
        assert len(ops) == 1 and ops != {0}


def test_compile_is_deterministic(conv2x2, tmrfu_4x4, conv_tmr):
    again = compile_design(assign_hardening(conv2x2, "tmr_fu"), tmrfu_4x4, seed=0, placer=FAST)
    assert again.placement == conv_tmr.placement
    assert again.bitstream.to_bytes() == conv_tmr.bitstream.to_bytes()


def test_report_counts(conv_tmr):
    report = conv_tmr.report()
    assert report["cells_used"] == 7
    assert report["voters"] == 0
    assert report["config_bits"]["total"] == 1104
    assert report["config_bits"]["frames"] == 4
    assert report["separation"]["ok"]
    assert report["routing"]["nets"] == 8 + 7


def test_excluded_cells_are_avoided(conv2x2, tmrfu_4x4):
    design = assign_hardening(conv2x2, "tmr_fu")
    placement = place(design, tmrfu_4x4, seed=1, excluded=[(0, 0), (1, 1)], config=FAST)
    assert (0, 0) not in placement.used_cells()
    assert (1, 1) not in placement.used_cells()
    assert (0, 0) not in placement.spares
    with pytest.raises(InputError):
        place(design, tmrfu_4x4, excluded=[(9, 9)], config=FAST)


def test_too_few_cells_is_infeasible(tmrfu_4x4):
    with pytest.raises(InfeasibleError, match="mul"):
        place(assign_hardening(gen_conv(3), "tmr_fu"), tmrfu_4x4, config=FAST)


def test_data_width_must_match(tmrfu_4x4):
    with pytest.raises(InputError):
        place(assign_hardening(gen_conv(2, width=8), "tmr_fu"), tmrfu_4x4, config=FAST)


@pytest.mark.slow
def test_naive_replicas_are_separated(conv2x2):
    design = assign_hardening(conv2x2, "naive_tmr")
    # a few spare cells per kind give the annealer room to spread the triples
    roomy = ResourceCounts.from_mapping({("mul", "plain"): 16, ("add", "plain"): 12, ("vote", "plain"): 8})
    arch = minimal_fabric(roomy, separation=2)
    compiled = compile_design(design, arch, seed=0, placer=FAST)
    assert check_separation(compiled.placement) == []
    pos = compiled.placement.nodes
    for _, members, _ in design.triples:
        assert chebyshev(pos[members[0]], pos[members[1]]) >= 2


def test_separation_beyond_grid_is_infeasible(conv2x2):
    design = assign_hardening(conv2x2, "naive_tmr")
    arch = minimal_fabric(design.requirements())
    with pytest.raises(InfeasibleError, match="separation"):
        place(design, arch, separation=max(arch.rows, arch.cols), config=FAST)


def test_single_track_cannot_route_two_inputs():
    design = assign_hardening(parse_dfg(ADD_ONLY), "none")
    with pytest.raises(UnroutableError):
        compile_design(design, _one_cell(1), placer=FAST)


def test_two_tracks_route_two_inputs():
    design = assign_hardening(parse_dfg(ADD_ONLY), "none")
    compiled = compile_design(design, _one_cell(2), placer=FAST)
    assert compiled.routing.track_of("x") == 0
    assert compiled.routing.track_of("y") == 1
    assert compiled.routing.net_map["y"].switches == (((0, 0), 2),)


@pytest.mark.slow
@pytest.mark.parametrize("kernel,mode", [("sobel", m) for m in HARDENED_MODES]
                         + [("conv3x3", "naive_tmr"), ("sad2x2", "naive_tmr")])
def test_builtin_kernels_route_on_minimal_fabrics(kernel, mode):
    compiled = compile_on_minimal(kernel, mode)
    netlist = build_netlist(compiled.placement, compiled.arch)
    assert check_routing(compiled.routing, netlist, compiled.arch) == []
    pinned = [(n.segment, n.track) for n in netlist if n.track is not None]
    assert len(set(pinned)) == len(pinned)


def test_net_takes_the_track_that_is_cheapest_for_the_whole_tree():
    arch = parse_fabric("fabric pair\nrows 1\ncols 2\nchannel_width 2\nfu 0 0 add\nfu 0 1 add\n")
    geo = geometry(arch)
    # `a` holds H(0,1) on track 0; `b` reaches H(0,0) equally well on either track
    # but also needs H(0,1), so only track 1 works for its whole tree
    a = Net("a", geo.v(0, 1), (NetSink(geo.h(0, 1), (0, 1), 1),), track=0)
    b = Net("b", geo.v(0, 0), (NetSink(geo.h(0, 0), (0, 0), 0), NetSink(geo.h(0, 1), (0, 1), 0)))
    routing = route(None, arch, netlist=[a, b])
    assert check_routing(routing, [a, b], arch) == []
    assert routing.track_of("b") == 1
    assert routing.iterations == 1


def test_moves_per_temperature_scale_with_placed_cells(conv2x2, tmrfu_4x4):
    one_step = PlacerConfig(inner_num=3.0, init_moves=0, max_temperatures=1)
    placement = place(assign_hardening(conv2x2, "tmr_fu"), tmrfu_4x4, config=one_step)
    assert placement.moves == 3 * len(placement.assignment)
