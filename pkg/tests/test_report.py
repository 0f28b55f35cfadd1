import math

import pytest

from relic_tools.arch import bit_layout
from relic_tools.report import render_heatmap, sensitivity_grid, write_heatmap, write_summary_pdf
from relic_tools.seu import BENIGN, SDC, SensitivityMap


@pytest.fixture(scope="module")
def smap(tmrfu_4x4):
    layout = bit_layout(tmrfu_4x4)
    # every bit of (0, 0) is sdc, half of (1, 1) is, nothing else is classified
    a = layout.cell_bits((0, 0))
    b = layout.cell_bits((1, 1))
    pairs = sorted([(x, SDC) for x in a] + [(x, SDC if i % 2 else BENIGN) for i, x in enumerate(b)])
    return SensitivityMap(tuple(p for p, _ in pairs), tuple(c for _, c in pairs), layout.nbits)


def test_grid_fractions(tmrfu_4x4, smap):
    grid = sensitivity_grid(tmrfu_4x4, smap)
    assert grid.shape == (4, 4)
    assert grid[0, 0] == 1.0
    assert grid[1, 1] == pytest.approx(34 / 69)
    assert math.isnan(grid[3, 3])


def test_heatmap_image(tmp_path, tmrfu_4x4, smap):
    img = render_heatmap(tmrfu_4x4, smap, scale=10)
    assert img.size == (41, 41)
    assert img.mode == "L"
    # fully sensitive cell is black inside, unclassified cells stay light
    assert img.getpixel((5, 5)) == 0
    assert img.getpixel((35, 35)) > 128
    path = tmp_path / "heat.png"
    write_heatmap(str(path), tmrfu_4x4, smap, scale=10)
    assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_summary_pdf_is_reproducible(tmp_path, conv_tmr, tmrfu_4x4, smap):
    summary = smap.summary(bit_layout(tmrfu_4x4))
    heat = render_heatmap(tmrfu_4x4, smap)
    first, second = tmp_path / "a.pdf", tmp_path / "b.pdf"
    write_summary_pdf(str(first), conv_tmr.report(), summary, None, heat)
    write_summary_pdf(str(second), conv_tmr.report(), summary, None, heat)
    data = first.read_bytes()
    assert data.startswith(b"%PDF")
    assert data == second.read_bytes()


def test_summary_pdf_without_optional_sections(tmp_path, conv_plain):
    path = tmp_path / "plain.pdf"
    write_summary_pdf(str(path), conv_plain.report())
    assert path.stat().st_size > 0
