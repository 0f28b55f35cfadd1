#!/usr/bin/env python3
"""
Command-line toolchain.

Usage:
    python -m relic_tools size -k conv2x2 -k sad2x2 --mode naive
    python -m relic_tools compile -k conv2x2 --mode tmrfu --fabric fabrics/tmrfu_4x4.fab --out conv.bit
    python -m relic_tools inject -k conv2x2 --mode tmrfu --bits all --jobs 4 --out conv_sens.csv

Every design-level subcommand recompiles the design from its kernels, fabric,
mode and seed (deterministic), so no intermediate state needs to be kept.
Environment: RELIC_SEED (default seed), RELIC_JOBS (campaign workers),
RELIC_LOG_LEVEL (stderr log level, default WARNING).
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import __version__
from .arch import Bitstream, Coord, FabricArch, bit_layout, decode_bitstream, parse_fabric
from .dfg import BUILTIN_KERNELS, DataflowGraph, merge_kernels, parse_dfg, random_vectors
from .errors import InputError, RelicError
from .harden import assign_hardening, minimal_fabric, normalize_mode, size_requirements
from .pnr import CompiledDesign, compile_design
from .repair import RepairPolicy, coverage, dynamic_repair, precompile, tradeoff_table
from .report import render_heatmap, write_heatmap, write_summary_pdf
from .scrub import ScrubConfig, UpsetTrace, random_trace, run_two_level
from .seu import (
    CampaignScope,
    SensitivityMap,
    build_device_model,
    lower_sensitivity,
    mbu_pairs,
    replica_mbu_violations,
    run_campaign,
)
from .sim import FaultState, compare_golden, read_vectors, simulate, write_results

logger = logging.getLogger(__name__)


def _env_int(name: str, default: int) -> int:
    raw = os.environ.get(name)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError as e:
        raise InputError(f"{name} must be an integer, got {raw!r}") from e


@dataclass
class RunManifest:
    command: str
    seed: int
    params: Dict[str, object] = field(default_factory=dict)
    inputs: List[Tuple[str, str]] = field(default_factory=list)
    outputs: List[str] = field(default_factory=list)
    version: str = __version__

    def add_input(self, path: str) -> None:
        with open(path, "rb") as f:
            self.inputs.append((path, hashlib.sha256(f.read()).hexdigest()))

    def to_json(self) -> Dict[str, object]:
        return {
            "tool": "relic_tools",
            "version": self.version,
            "command": self.command,
            "seed": self.seed,
            "params": {k: self.params[k] for k in sorted(self.params)},
            "inputs": [{"path": p, "sha256": h} for p, h in self.inputs],
            "outputs": list(self.outputs),
        }


def _write_json(path: str, payload: Dict[str, object], manifest: Optional[RunManifest] = None) -> None:
    if manifest is not None:
        manifest.outputs.append(path)
        payload = {**payload, "manifest": manifest.to_json()}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"Wrote {path}")


def _write_bytes(path: str, data: bytes, manifest: RunManifest) -> None:
    with open(path, "wb") as f:
        f.write(data)
    manifest.outputs.append(path)
    print(f"Wrote {path}")


def _write_text(path: str, text: str, manifest: RunManifest) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
    manifest.outputs.append(path)
    print(f"Wrote {path}")


def _sibling(path: str, suffix: str) -> str:
    base, _ = os.path.splitext(path)
    return base + suffix


# Input loading ------------------------------------------------------------------------------------


def load_kernel(ref: str, manifest: Optional[RunManifest] = None) -> DataflowGraph:
    """A `.dfg` path or the name of a built-in kernel."""
    if os.path.exists(ref):
        path = os.path.abspath(ref)
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
        if manifest is not None:
            manifest.add_input(ref)
        return parse_dfg(text, source=ref)
    if ref in BUILTIN_KERNELS:
        return BUILTIN_KERNELS[ref]()
    raise InputError(f"kernel not found: {ref} (built-ins: {', '.join(sorted(BUILTIN_KERNELS))})")


def load_fabric(path: str, manifest: Optional[RunManifest] = None) -> FabricArch:
    if not os.path.exists(path):
        raise InputError(f"fabric not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    if manifest is not None:
        manifest.add_input(path)
    return parse_fabric(text, source=path)


def parse_cell(text: str) -> Coord:
    """`fu:<row>,<col>` (the `fu:` prefix is optional)."""
    body = text[3:] if text.startswith("fu:") else text
    try:
        r, c = (int(x) for x in body.split(","))
    except ValueError as e:
        raise InputError(f"bad cell {text!r}; expected fu:<row>,<col>") from e
    return (r, c)


def _parse_overrides(items: Sequence[str]) -> Dict[str, str]:
    out = {}
    for item in items:
        node, sep, variant = item.partition("=")
        if not sep:
            raise InputError(f"bad --override {item!r}; expected <node>=<variant>")
        out[node] = variant
    return out


def _add_design_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("-k", "--kernel", action="append", required=True,
                   help="Kernel .dfg file or built-in name (repeat to map several kernels together)")
    p.add_argument("--fabric", help="Fabric .fab file (default: minimal fabric sized for the design)")
    p.add_argument("--mode", default="none", help="none|naive|tmrfu|dwc|edc|mixed")
    p.add_argument("--override", action="append", default=[], help="Per-node variant, <node>=<variant>")
    p.add_argument("--separation", type=int, help="Replica separation d_min (default: the fabric's)")
    p.add_argument("--channel-width", type=int, default=8, help="Tracks per channel for a minimal fabric")
    p.add_argument("--bitstream", help="Use this bitstream instead of the compiled one")


def build_design(args: argparse.Namespace, manifest: RunManifest) -> CompiledDesign:
    kernels = [load_kernel(k, manifest) for k in args.kernel]
    dfg = merge_kernels(kernels)
    mode = normalize_mode(args.mode)
    design = assign_hardening(dfg, mode, _parse_overrides(args.override) or None)
    if args.fabric:
        arch = load_fabric(args.fabric, manifest)
    else:
        sep = 2 if args.separation is None else args.separation
        arch = minimal_fabric(design.requirements(), args.channel_width, f"minimal_{dfg.name}", sep, dfg.data_width)
        logger.info("using minimal %dx%d fabric for %s", arch.rows, arch.cols, dfg.name)
    manifest.params.update(kernels=list(args.kernel), mode=mode, fabric=arch.name, separation=args.separation,
                           overrides=list(args.override))
    compiled = compile_design(design, arch, args.seed, separation=args.separation)
    if getattr(args, "bitstream", None):
        with open(args.bitstream, "rb") as f:
            data = f.read()
        manifest.add_input(args.bitstream)
        bits = Bitstream.from_bytes(data, bit_layout(arch))
        decode_bitstream(bit_layout(arch), bits)
        compiled = CompiledDesign(design, arch, compiled.placement, compiled.routing, bits, args.seed)
    return compiled


def _vectors(args: argparse.Namespace, compiled: CompiledDesign, manifest: RunManifest) -> np.ndarray:
    dfg = compiled.design.dfg
    if getattr(args, "vector_file", None):
        manifest.add_input(args.vector_file)
        return read_vectors(args.vector_file, dfg.inputs)
    manifest.params["vectors"] = args.vectors
    return random_vectors(dfg, args.vectors, args.seed)


# Subcommands --------------------------------------------------------------------------------------


def cmd_size(args: argparse.Namespace) -> None:
    manifest = RunManifest("size", args.seed)
    kernels = [load_kernel(k, manifest) for k in args.kernel]
    mode = normalize_mode(args.mode)
    counts = size_requirements(kernels, mode)
    width = kernels[0].data_width
    arch = minimal_fabric(counts, args.channel_width, "minimal", args.separation, width)
    layout = bit_layout(arch)
    breakdown = layout.breakdown()
    print(f"Requirements for {', '.join(k.name for k in kernels)} ({mode}):")
    for kind, n in counts.by_kind().items():
        print(f"  {kind:<8} {n:>5}")
    print(f"  {'total':<8} {counts.total:>5}")
    print(f"Minimal fabric {arch.rows}x{arch.cols}, W={arch.channel_width}: {layout.nbits} configuration bits")
    for kind, n in breakdown.items():
        print(f"  {kind:<12} {n:>8}  ({100.0 * n / layout.nbits:.1f}%)")
    manifest.params.update(kernels=list(args.kernel), mode=mode, channel_width=args.channel_width)
    if args.json:
        _write_json(args.json, {
            "mode": mode,
            "kernels": [k.name for k in kernels],
            "requirements": counts.to_json(),
            "minimal_fabric": {"grid": [arch.rows, arch.cols], "cells": len(arch.cells),
                               "config_bits": layout.nbits, "by_kind": breakdown},
        }, manifest)
    if args.fabric_out:
        _write_text(args.fabric_out, arch.to_text(), manifest)


def cmd_compile(args: argparse.Namespace) -> None:
    manifest = RunManifest("compile", args.seed)
    compiled = build_design(args, manifest)
    out = os.path.abspath(args.out)
    _write_bytes(out, compiled.bitstream.to_bytes(), manifest)
    if not args.fabric:
        _write_text(_sibling(out, ".fab"), compiled.arch.to_text(), manifest)
    _write_json(_sibling(out, ".json"), compiled.report(), manifest)


def cmd_sim(args: argparse.Namespace) -> None:
    manifest = RunManifest("sim", args.seed)
    compiled = build_design(args, manifest)
    vectors = _vectors(args, compiled, manifest)
    stuck = [parse_cell(c) for c in args.faulty]
    result = simulate(compiled.arch, compiled.bitstream, vectors, FaultState.of(stuck=stuck), compiled.io)
    report = compare_golden(result, compiled.design.dfg, vectors)
    print(f"{report.vectors} vectors: {report.mismatches} mismatches, "
          f"{sum(report.flagged)} flagged, status {report.status} (latency {result.latency})")
    if args.out:
        out = os.path.abspath(args.out)
        write_results(out, result, compiled.io.outputs)
        manifest.outputs.append(out)
        print(f"Wrote {out}")
    if args.report:
        _write_json(args.report, {
            "status": report.status,
            "vectors": report.vectors,
            "mismatches": report.mismatches,
            "flagged": int(sum(report.flagged)),
            "first_mismatch": report.first_mismatch,
            "latency": result.latency,
            "cycles": result.cycles,
        }, manifest)


def cmd_inject(args: argparse.Namespace) -> None:
    manifest = RunManifest("inject", args.seed)
    compiled = build_design(args, manifest)
    vectors = _vectors(args, compiled, manifest)
    scope = CampaignScope.parse(args.bits, args.seed)
    manifest.params.update(bits=scope.describe(), jobs=args.jobs)
    arch = compiled.arch
    smap = run_campaign(arch, compiled.bitstream, compiled.design.dfg, vectors, scope, args.jobs, args.seed)
    layout = bit_layout(arch)
    out = os.path.abspath(args.out)
    _write_text(out, smap.to_csv(layout), manifest)
    summary = smap.summary(layout)
    summary["mbu"] = {
        "adjacent_pairs": len(mbu_pairs(arch)),
        "replica_violations": replica_mbu_violations(arch, compiled.design, compiled.placement),
        "separation": compiled.placement.separation,
    }
    if args.device:
        model = build_device_model(arch, compiled.placement, compiled.routing)
        summary["device"] = {**model.to_json(), "classes": lower_sensitivity(model, smap).counts()}
    counts = smap.counts()
    print(f"{len(smap.bits)} bits: benign {counts['benign']}, detected {counts['detected']}, sdc {counts['sdc']}")
    _write_json(_sibling(out, "_summary.json"), summary, manifest)


def cmd_scrub(args: argparse.Namespace) -> None:
    manifest = RunManifest("scrub", args.seed)
    compiled = build_design(args, manifest)
    model = build_device_model(compiled.arch, compiled.placement, compiled.routing)
    cfg = ScrubConfig(args.level, args.schedule, args.tf, args.tw, args.period)
    if args.upsets:
        manifest.add_input(args.upsets)
        trace = UpsetTrace.read(args.upsets)
    else:
        levels = cfg.levels
        trace = random_trace(compiled.arch, model, args.random_upsets, args.seed, args.horizon, levels, args.doubles)
        manifest.params.update(random_upsets=args.random_upsets, doubles=args.doubles, horizon=args.horizon)
    manifest.params.update(level=cfg.level, schedule=cfg.schedule, t_f=cfg.t_f, t_w=cfg.t_w, period=cfg.period)
    report = run_two_level(compiled.arch, model, trace, cfg, compiled.bitstream)
    for level, stats in report.levels.items():
        mean = report.mean_latency(level)
        print(f"{level}: {len(report.records(level))} upsets, pass {stats.clean_pass_cycles} cycles, "
              f"mean detection latency {'-' if mean is None else f'{mean:.1f}'}")
    if args.trace_out:
        _write_text(args.trace_out, trace.to_csv(), manifest)
    _write_json(os.path.abspath(args.out), {**report.to_json(), "device": model.to_json()}, manifest)


def cmd_repair(args: argparse.Namespace) -> None:
    manifest = RunManifest("repair", args.seed)
    compiled = build_design(args, manifest)
    design, arch = compiled.design, compiled.arch
    policy = RepairPolicy(RepairPolicy.parse_spares(args.spares), args.granularity, args.tw)
    faulty = [parse_cell(c) for c in args.faulty]
    manifest.params.update(faulty=[list(c) for c in faulty], precompiled=args.precompiled,
                           spares=dict(policy.spares), granularity=policy.granularity)
    out = os.path.abspath(args.out)
    if args.sweep:
        rows = tradeoff_table(design, arch, seed=args.seed, t_w=args.tw)
        _write_json(_sibling(out, ".json"), {"tradeoff": rows}, manifest)
        return
    payload: Dict[str, object] = {}
    outcome = None
    if args.precompiled is not None:
        plan = precompile(design, arch, policy, args.precompiled, args.seed, baseline=compiled)
        plan_json = plan.to_json()
        for i, (entry, cfg) in enumerate(zip(plan_json["configs"], plan.configs)):
            path = _sibling(out, f"_alt{i}.bit")
            _write_bytes(path, cfg.compiled.bitstream.to_bytes(), manifest)
            entry["bitstream"] = path
        for kind in sorted({arch.cell_at(c).kind for c in compiled.placement.used_cells()}):
            plan_json.setdefault("coverage_by_kind", {})[kind] = coverage(plan, (kind,))
        payload["plan"] = plan_json
        if faulty:
            outcome = plan.lookup(faulty)
            if outcome is None:
                logger.warning("no precompiled configuration avoids %s; falling back to dynamic repair", faulty)
    if faulty and outcome is None:
        outcome = dynamic_repair(design, arch, faulty, args.seed, compiled, policy)
    if outcome is not None:
        payload["repair"] = outcome.to_json()
        _write_bytes(out, outcome.bitstream.to_bytes(), manifest)
        print(f"Repair via {outcome.method}: {outcome.frames_rewritten} frames, {outcome.latency_cycles} cycles")
    elif args.precompiled is None:
        raise InputError("repair needs --faulty, --precompiled or --sweep")
    _write_json(_sibling(out, ".json"), payload, manifest)


def cmd_report(args: argparse.Namespace) -> None:
    manifest = RunManifest("report", args.seed)
    with open(args.compile_report, "r", encoding="utf-8") as f:
        compile_report = json.load(f)
    manifest.add_input(args.compile_report)
    summary = scrub = heat = None
    if args.sensitivity:
        if not args.fabric:
            raise InputError("--sensitivity needs --fabric for the heat map")
        arch = load_fabric(args.fabric, manifest)
        with open(args.sensitivity, "r", encoding="utf-8") as f:
            smap = SensitivityMap.from_csv(f.read(), bit_layout(arch).nbits)
        manifest.add_input(args.sensitivity)
        summary = smap.summary(bit_layout(arch))
        heat = render_heatmap(arch, smap)
        if args.heatmap:
            write_heatmap(args.heatmap, arch, smap)
            manifest.outputs.append(args.heatmap)
            print(f"Wrote {args.heatmap}")
    if args.scrub_report:
        with open(args.scrub_report, "r", encoding="utf-8") as f:
            scrub = json.load(f)
        manifest.add_input(args.scrub_report)
    out = os.path.abspath(args.out)
    write_summary_pdf(out, compile_report, summary, scrub, heat)
    print(f"Wrote {out}")


def main(argv: Optional[list[str]] = None) -> None:
    parser = argparse.ArgumentParser(prog="relic_tools", description="Reliability-aware overlay toolchain")
    parser.add_argument("--seed", type=int, default=None, help="Random seed (default: $RELIC_SEED or 0)")
    parser.add_argument("--log-level", default=os.environ.get("RELIC_LOG_LEVEL", "WARNING"))
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("size", help="Per-kind FU requirements and minimal fabric cost")
    p.add_argument("-k", "--kernel", action="append", required=True)
    p.add_argument("--mode", default="none")
    p.add_argument("--channel-width", type=int, default=8)
    p.add_argument("--separation", type=int, default=2)
    p.add_argument("--json", help="Write the table as JSON")
    p.add_argument("--fabric-out", help="Write the minimal fabric as .fab")
    p.set_defaults(func=cmd_size)

    p = sub.add_parser("compile", help="Place, route and emit a bitstream plus JSON report")
    _add_design_args(p)
    p.add_argument("--out", required=True, help="Bitstream path; the report goes next to it as .json")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("sim", help="Simulate the configured fabric against the reference evaluator")
    _add_design_args(p)
    p.add_argument("--vectors", type=int, default=1000, help="Random vector count")
    p.add_argument("--vector-file", help="Vector CSV (overrides --vectors)")
    p.add_argument("--faulty", action="append", default=[], help="Stuck cell fu:<row>,<col>")
    p.add_argument("--out", help="Per-cycle result CSV")
    p.add_argument("--report", help="Equivalence summary JSON")
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("inject", help="Single-bit upset sensitivity campaign")
    _add_design_args(p)
    p.add_argument("--bits", default="all", help="all | random:<n> | kinds:<kind>[,<kind>...]")
    p.add_argument("--vectors", type=int, default=32)
    p.add_argument("--vector-file")
    p.add_argument("--jobs", type=int, default=None, help="Worker processes (default: $RELIC_JOBS or 1)")
    p.add_argument("--device", action="store_true", help="Also report the lower (device) level")
    p.add_argument("--out", required=True, help="Sensitivity CSV; summary goes to <out>_summary.json")
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("scrub", help="Two-level scrubbing simulation")
    _add_design_args(p)
    p.add_argument("--upsets", help="Upset trace CSV (cycle,level,bit_index)")
    p.add_argument("--random-upsets", type=int, default=100)
    p.add_argument("--doubles", type=int, default=0, help="Extra double-bit events in a random trace")
    p.add_argument("--horizon", type=int, default=100_000)
    p.add_argument("--level", choices=["upper", "lower", "both"], default="both")
    p.add_argument("--schedule", choices=["round_robin", "priority"], default="round_robin")
    p.add_argument("--period", type=int, default=1, help="Cycles between scrub pass starts")
    p.add_argument("--tf", type=int, default=64, help="Frame read-check cost")
    p.add_argument("--tw", type=int, default=64, help="Frame rewrite cost")
    p.add_argument("--trace-out", help="Write the upset trace used")
    p.add_argument("--out", required=True, help="Report JSON")
    p.set_defaults(func=cmd_scrub)

    p = sub.add_parser("repair", help="Spare-based permanent-fault repair")
    _add_design_args(p)
    p.add_argument("--faulty", action="append", default=[], help="Faulty cell fu:<row>,<col>")
    p.add_argument("--precompiled", type=int, help="Number of precompiled alternate configurations")
    p.add_argument("--spares", action="append", default=[], help="Required spares <kind>:<n>")
    p.add_argument("--granularity", choices=["per_cell", "full_overlay"], default="per_cell")
    p.add_argument("--tw", type=int, default=64)
    p.add_argument("--sweep", action="store_true", help="Spares x K x granularity tradeoff table")
    p.add_argument("--out", required=True, help="Repaired bitstream; plan/report go next to it")
    p.set_defaults(func=cmd_repair)

    p = sub.add_parser("report", help="PDF summary and sensitivity heat map")
    p.add_argument("--compile-report", required=True)
    p.add_argument("--sensitivity", help="Sensitivity CSV from inject")
    p.add_argument("--fabric", help="Fabric .fab the sensitivity CSV was produced on")
    p.add_argument("--scrub-report")
    p.add_argument("--heatmap", help="Also write the heat map PNG")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    args = parser.parse_args(argv)
    logging.basicConfig(level=str(args.log_level).upper(), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.seed is None:
            args.seed = _env_int("RELIC_SEED", 0)
        if getattr(args, "jobs", 0) is None:
            args.jobs = _env_int("RELIC_JOBS", 1)
        args.func(args)
    except RelicError as e:
        print(f"error: {e}", file=sys.stderr)
        sys.exit(e.exit_code)
    except FileNotFoundError as e:
        print(f"Input not found: {e.filename}", file=sys.stderr)
        sys.exit(1)


if __name__ == "__main__":
    main()
