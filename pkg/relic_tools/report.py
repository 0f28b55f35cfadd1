#!/usr/bin/env python3
"""Human-readable summaries: a per-cell sensitivity heat map (PNG) and a one-document PDF report."""
from __future__ import annotations

import logging
from typing import List, Mapping, Optional

import numpy as np
from PIL import Image, ImageDraw
from reportlab.lib.pagesizes import A4
from reportlab.lib.units import inch
from reportlab.lib.utils import ImageReader
from reportlab.pdfgen import canvas

from .arch import FabricArch, bit_layout
from .seu import SDC, SensitivityMap

logger = logging.getLogger(__name__)


def sensitivity_grid(arch: FabricArch, smap: SensitivityMap) -> np.ndarray:
    """Fraction of classified bits per grid position that are sdc; NaN where nothing was classified."""
    layout = bit_layout(arch)
    total = np.zeros((arch.rows, arch.cols))
    sdc = np.zeros((arch.rows, arch.cols))
    for b, c in zip(smap.bits, smap.classes):
        f = layout.fields[int(layout.bit_field[b])]
        total[f.row, f.col] += 1
        if c == SDC:
            sdc[f.row, f.col] += 1
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(total > 0, sdc / np.maximum(total, 1), np.nan)


def render_heatmap(arch: FabricArch, smap: SensitivityMap, scale: int = 48) -> Image.Image:
    """Grayscale grid, darker = more sensitive; FU cells outlined, unclassified positions hatched."""
    grid = sensitivity_grid(arch, smap)
    img = Image.new("L", (arch.cols * scale + 1, arch.rows * scale + 1), color=255)
    draw = ImageDraw.Draw(img)
    for r in range(arch.rows):
        for c in range(arch.cols):
            box = (c * scale, r * scale, (c + 1) * scale, (r + 1) * scale)
            value = grid[r, c]
            if np.isnan(value):
                draw.rectangle(box, fill=255, outline=160)
                draw.line(box, fill=200)
                continue
            shade = int(round(255 * (1.0 - value)))
            draw.rectangle(box, fill=shade, outline=0 if arch.cell_at((r, c)) else 160)
    return img


def write_heatmap(path: str, arch: FabricArch, smap: SensitivityMap, scale: int = 48) -> None:
    render_heatmap(arch, smap, scale).save(path, format="PNG", optimize=False)


def _compile_lines(report: Mapping[str, object]) -> List[str]:
    bits = report["config_bits"]
    sep = report["separation"]
    routing = report["routing"]
    lines = [
        f"Kernel {report['kernel']}  mode {report['mode']}  fabric {report['fabric']} "
        f"{report['grid'][0]}x{report['grid'][1]} W={report['channel_width']}  seed {report['seed']}",
        f"Nodes {report['nodes']} (voters {report['voters']}), cells used {report['cells_used']}, "
        f"spares {len(report['spares'])}",
        f"Wirelength (HPWL) {report['wirelength_hpwl']}; routing: {routing['nets']} nets, "
        f"{routing['segments']} segments, {routing['switches']} switches, {routing['iterations']} iterations",
        f"Configuration bits {bits['total']} in {bits['frames']} frames, {bits['set']} set",
    ]
    lines += [f"    {kind:<12} {n:>8}" for kind, n in bits["by_kind"].items()]
    status = "ok" if sep["ok"] else f"{len(sep['violations'])} violations"
    lines.append(f"Replica separation d_min={sep['d_min']} over {sep['triples']} triples: {status}")
    return lines


def _campaign_lines(summary: Mapping[str, object]) -> List[str]:
    totals = summary["totals"]
    lines = [
        f"Bits classified {summary['bits_classified']} of {summary['layout_bits']} (scope {summary['scope']}), "
        f"{summary['vectors']} vectors",
        f"benign {totals['benign']}  detected {totals['detected']}  sdc {totals['sdc']}  "
        f"(sensitive fraction {summary['sensitive_fraction']:.4f})",
        f"    {'kind':<12} {'benign':>8} {'detected':>9} {'sdc':>8}",
    ]
    for kind, row in summary["by_resource_kind"].items():
        lines.append(f"    {kind:<12} {row['benign']:>8} {row['detected']:>9} {row['sdc']:>8}")
    return lines


def _scrub_lines(report: Mapping[str, object]) -> List[str]:
    cfg = report["config"]
    lines = [f"Schedule {cfg['schedule']}, T_f={cfg['t_f']} T_w={cfg['t_w']} period={cfg['period']}"]
    for level, stats in report["levels"].items():
        mean = stats["mean_detection_latency"]
        lines.append(
            f"{level}: {stats['frames']} frames, pass {stats['clean_pass_cycles']} cycles, "
            f"{stats['events']} events, mean latency {'-' if mean is None else f'{mean:.1f}'}, "
            f"max {stats['max_detection_latency']}, reconfigurations {stats['reconfigurations']}")
    return lines


def write_summary_pdf(
    path: str,
    compile_report: Mapping[str, object],
    campaign_summary: Optional[Mapping[str, object]] = None,
    scrub_report: Optional[Mapping[str, object]] = None,
    heatmap: Optional[Image.Image] = None,
) -> None:
    """A4 summary; byte-identical for identical inputs."""
    sections: List[tuple] = [("Compilation", _compile_lines(compile_report))]
    if campaign_summary is not None:
        sections.append(("Sensitivity campaign", _campaign_lines(campaign_summary)))
    if scrub_report is not None:
        sections.append(("Scrubbing", _scrub_lines(scrub_report)))

    c = canvas.Canvas(path, pagesize=A4, invariant=1)
    c.setTitle(f"{compile_report['kernel']} on {compile_report['fabric']}")
    _, height = A4
    c.setFont("Helvetica-Bold", 18)
    c.drawString(1 * inch, height - 1 * inch, f"Reliability report: {compile_report['kernel']}")
    y = height - 1.5 * inch
    for title, lines in sections:
        if y < 2 * inch:
            c.showPage()
            y = height - 1 * inch
        c.setFont("Helvetica-Bold", 13)
        c.drawString(1 * inch, y, title)
        y -= 0.3 * inch
        c.setFont("Courier", 8.5)
        for line in lines:
            if y < 1 * inch:
                c.showPage()
                c.setFont("Courier", 8.5)
                y = height - 1 * inch
            c.drawString(1 * inch, y, line)
            y -= 12
        y -= 0.2 * inch
    if heatmap is not None:
        side = 3.5 * inch
        if y - side < 1 * inch:
            c.showPage()
            y = height - 1 * inch
        w, h = heatmap.size
        draw_w, draw_h = (side, side * h / w) if w >= h else (side * w / h, side)
        c.setFont("Helvetica-Bold", 13)
        c.drawString(1 * inch, y, "Per-cell sdc fraction (darker = more sensitive)")
        c.drawImage(ImageReader(heatmap.convert("RGB")), 1 * inch, y - 0.2 * inch - draw_h, draw_w, draw_h)
    c.showPage()
    c.save()
    logger.info("wrote report %s (%d sections)", path, len(sections))
