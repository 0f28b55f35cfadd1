import pytest

from relic_tools.arch import (
    CB_SELECT,
    FU_REPLICA,
    SB_SWITCH,
    Bitstream,
    FabricConfig,
    bit_layout,
    decode_bitstream,
    encode_config,
    geometry,
    parse_fabric,
)
from relic_tools.errors import BitstreamFormatError, InfeasibleError, InputError, ParseError
from relic_tools.harden import ResourceCounts, minimal_fabric


def test_fabric_text_round_trip(tmrfu_4x4):
    again = parse_fabric(tmrfu_4x4.to_text())
    assert again == tmrfu_4x4
    assert again.fabric_hash() == tmrfu_4x4.fabric_hash()
    assert len(tmrfu_4x4.cells) == 16
    assert tmrfu_4x4.inventory()[("mul", "tmr_fu")] == 6


def test_duplicate_cell_reports_line():
    text = "rows 2\ncols 2\nfu 0 0 mul\nfu 0 0 add\n"
    with pytest.raises(ParseError) as e:
        parse_fabric(text, source="dup.fab")
    assert e.value.line == 4
    assert "dup.fab:4:" in str(e.value)


def test_vote_cells_must_be_plain():
    with pytest.raises(ParseError):
        parse_fabric("rows 1\ncols 1\nfu 0 0 vote tmr_fu\n")


def test_layout_sizes_for_tmr_cells(tmrfu_4x4):
    layout = bit_layout(tmrfu_4x4)
    # per cell: 3 opcode copies of 4 bits, 3 selects of 3 bits, 8 tracks x 6 switch pairs
    assert layout.nbits == 16 * (12 + 9 + 48)
    assert layout.breakdown() == {"fu_op": 0, FU_REPLICA: 192, CB_SELECT: 144, SB_SWITCH: 768}
    assert layout.frame_bits == (276, 276, 276, 276)
    assert layout.frame_payload_bits == (320, 320, 320, 320)


def test_bit_info_is_column_major(tmrfu_4x4):
    layout = bit_layout(tmrfu_4x4)
    first = layout.bit_info(0)
    assert (first.frame, first.offset, first.row, first.col, first.kind) == (0, 0, 0, 0, FU_REPLICA)
    second_frame = layout.bit_info(276)
    assert (second_frame.frame, second_frame.offset, second_frame.col) == (1, 0, 1)


def test_encode_decode_round_trip(tmrfu_4x4):
    layout = bit_layout(tmrfu_4x4)
    config = FabricConfig.from_mapping({("op", 1, 2, 0): 2, ("in", 1, 2, 1): 5, ("sb", 3, 3, 7, 5): 1})
    bits = encode_config(layout, config)
    decoded = decode_bitstream(layout, bits)
    assert decoded == config
    assert decoded.errors == ()
    assert Bitstream.from_bytes(bits.to_bytes(), layout) == bits


def test_encode_rejects_bad_fields(tmrfu_4x4):
    layout = bit_layout(tmrfu_4x4)
    with pytest.raises(InputError):
        encode_config(layout, FabricConfig.from_mapping({("op", 0, 0, 0): 16}))
    with pytest.raises(InputError):
        encode_config(layout, FabricConfig.from_mapping({("op", 9, 9, 0): 1}))


def test_decode_reports_secded_errors(tmrfu_4x4):
    layout = bit_layout(tmrfu_4x4)
    bits = encode_config(layout, FabricConfig())
    flat = bits.flat_payload().copy()
    flat[5] ^= 1
    single = decode_bitstream(layout, bits.with_payload(flat))
    assert [(e.frame, e.word, e.kind, e.offset) for e in single.errors] == [(0, 0, "single", 5)]
    assert not single.uncorrectable
    flat[9] ^= 1
    assert decode_bitstream(layout, bits.with_payload(flat)).uncorrectable


def test_bitstream_for_other_fabric_is_rejected(tmrfu_4x4, plain_4x4):
    bits = encode_config(bit_layout(plain_4x4), FabricConfig())
    with pytest.raises(BitstreamFormatError):
        decode_bitstream(bit_layout(tmrfu_4x4), bits)
    with pytest.raises(BitstreamFormatError):
        Bitstream.from_bytes(b"XXXX" + bits.to_bytes()[4:], bit_layout(plain_4x4))


def test_pads_spread_over_tracks(tmrfu_4x4):
    geo = geometry(tmrfu_4x4)
    # the 4 north stubs fill first, any 8 consecutive ports on distinct tracks
    assert [geo.input_pad(k).track for k in range(8)] == list(range(8))
    assert [geo.input_pad(k).segment for k in range(5)] == [geo.v(0, 0), geo.v(0, 1), geo.v(0, 2), geo.v(0, 3), geo.v(0, 0)]
    assert geo.input_pad(8).track == 0
    assert geo.input_pad(8).segment == geo.v(0, 1)
    # west stubs, which FU (r, 0) also reads, only once the north ones are full
    assert geo.input_pad(32).segment == geo.h(0, 0)
    assert geo.output_pad(0).segment == geo.h(0, 4)
    assert geo.output_pad(32).segment == geo.v(4, 0)
    with pytest.raises(InfeasibleError):
        geo.input_pad(8 * 8)


def test_pads_never_share_a_wire_or_an_fu_pin(tmrfu_4x4):
    geo = geometry(tmrfu_4x4)
    inputs = [geo.input_pad(k) for k in range(64)]
    outputs = [geo.output_pad(k) for k in range(64)]
    assert len({(p.segment, p.track) for p in inputs}) == 64
    assert len({(p.segment, p.track) for p in outputs}) == 64
    pins = {geo.in_segment(c.coord) for c in tmrfu_4x4.cells} | {geo.out_segment(c.coord) for c in tmrfu_4x4.cells}
    assert not {p.segment for p in inputs[:32]} & pins
    assert not {p.segment for p in outputs[:32]} & pins


def test_minimal_fabric_fits_counts():
    counts = ResourceCounts.from_mapping({("mul", "plain"): 12, ("add", "plain"): 9, ("vote", "plain"): 7})
    arch = minimal_fabric(counts)
    assert (arch.rows, arch.cols) == (5, 6)
    assert arch.inventory() == {("mul", "plain"): 12, ("add", "plain"): 9, ("vote", "plain"): 7}
    assert all(c.variant == "plain" for c in arch.cells)


def test_single_plain_cell_layout():
    arch = parse_fabric("rows 1\ncols 1\nchannel_width 2\nfu 0 0 mul\n")
    layout = bit_layout(arch)
    # opcode 4, two input selects and one output select of 1 bit, 2 tracks x 6 pairs
    assert layout.nbits == 4 + 3 + 12
