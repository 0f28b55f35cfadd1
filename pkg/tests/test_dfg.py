import numpy as np
import pytest

from conftest import read_kernel
from relic_tools.dfg import (
    apply_op,
    eval_dfg,
    gen_conv,
    gen_sad,
    gen_sobel,
    merge_kernels,
    parse_dfg,
    random_vectors,
    to_text,
)
from relic_tools.errors import InputError, ParseError


@pytest.mark.parametrize("name,generated", [
    ("conv2x2", gen_conv(2)),
    ("conv3x3", gen_conv(3)),
    ("sad2x2", gen_sad(2)),
])
def test_bundled_kernels_match_generators(name, generated):
    assert read_kernel(name) == generated


def test_text_round_trip_keeps_constants_and_criticality():
    sobel = gen_sobel()
    assert parse_dfg(to_text(sobel)) == sobel
    mixed = read_kernel("diff_mixed")
    assert parse_dfg(to_text(mixed)) == mixed
    assert mixed.criticality_of("p0") == "low"
    assert mixed.criticality_of("o") == "high"


def test_arity_error_names_line():
    text = "kernel k\ninput x y\nnode a = add x\noutput o = a\n"
    with pytest.raises(ParseError) as e:
        parse_dfg(text, source="k.dfg")
    assert e.value.line == 3
    assert "arity" in str(e.value)


def test_cycle_is_rejected():
    text = "kernel k\ninput x\nnode a = add x b\nnode b = add a x\noutput o = b\n"
    with pytest.raises(ParseError, match="cycle"):
        parse_dfg(text)


def test_self_loop_is_rejected():
    with pytest.raises(ParseError, match="cycle"):
        parse_dfg("kernel k\ninput x\nnode a = add a x\noutput o = a\n")


def test_nodes_may_be_declared_out_of_order():
    dfg = parse_dfg("kernel k\ninput x y\nnode b = mul a y\nnode a = add x y\noutput o = b\n")
    assert [n.id for n in dfg.nodes] == ["a", "b"]
    assert eval_dfg(dfg, [2, 3]) == (15,)


@pytest.mark.parametrize("op,args,width,expected", [
    ("mul", (300, 300), 16, (300 * 300) & 0xFFFF),
    ("add", (0xFFFF, 1), 16, 0),
    ("sub", (0, 1), 8, 0xFF),
    ("subabs", (3, 10), 16, 7),
    ("subabs", (0x80, 0), 8, 0x80),
    ("vote", (0b1100, 0b1010, 0b0110), 8, 0b1110),
])
def test_reference_operations_wrap(op, args, width, expected):
    assert apply_op(op, args, width) == expected


def test_sobel_on_vertical_edge():
    dfg = gen_sobel()
    # left column dark, right column bright: gx = 4 * 10, gy = 0
    pixels = [0, 0, 10, 0, 0, 10, 0, 0, 10]
    assert eval_dfg(dfg, pixels) == (40,)


def test_sad_sums_absolute_differences():
    assert eval_dfg(gen_sad(2), [1, 5, 9, 4, 3, 5, 2, 10]) == (2 + 0 + 7 + 6,)


def test_merged_kernels_prefix_identifiers(conv2x2, sad2x2):
    merged = merge_kernels([conv2x2, sad2x2])
    assert merged.name == "conv2x2+sad2x2"
    assert "conv2x2.m0" in merged.node_map
    assert "sad2x2.d0" in merged.node_map
    assert len(merged.inputs) == 16
    assert merge_kernels([conv2x2]) is conv2x2


def test_random_vectors_are_seeded(conv2x2):
    a = random_vectors(conv2x2, 5, seed=3)
    b = random_vectors(conv2x2, 5, seed=3)
    assert a.shape == (5, 8)
    assert np.array_equal(a, b)
    assert int(a.max()) < (1 << 16)


def test_eval_checks_input_count(conv2x2):
    with pytest.raises(InputError):
        eval_dfg(conv2x2, [1, 2, 3])


def test_single_tap_convolution_has_no_adders():
    g = gen_conv(1)
    assert [n.op for n in g.nodes] == ["mul"]
    assert g.outputs == (("o0", "m0"),)
