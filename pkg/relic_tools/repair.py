#!/usr/bin/env python3
"""
Permanent-fault repair: spare allocation, precompiled alternate configurations
and dynamic re-place-and-route around diagnosed faulty cells.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .arch import FU_KINDS, Bitstream, Coord, FabricArch, bit_layout, decode_bitstream
from .dfg import random_vectors
from .errors import InfeasibleError, InputError, InvariantError
from .harden import HardenedDesign, ResourceCounts, minimal_fabric
from .pnr import CompiledDesign, PlacerConfig, compile_design
from .sim import EQUAL, FaultState, compare_golden, golden_outputs, simulate

logger = logging.getLogger(__name__)

GRANULARITIES = ("per_cell", "full_overlay")


@dataclass(frozen=True)
class RepairPolicy:
    # minimum spare cells required per FU kind
    spares: Tuple[Tuple[str, int], ...] = ()
    granularity: str = "per_cell"
    # cycles to rewrite one overlay frame
    t_w: int = 64
    check_vectors: int = 64

    def __post_init__(self) -> None:
        if self.granularity not in GRANULARITIES:
            raise InputError(f"unknown repair granularity {self.granularity!r}")
        for kind, n in self.spares:
            if kind not in FU_KINDS or n < 0:
                raise InputError(f"bad spare requirement {kind}:{n}")

    @staticmethod
    def parse_spares(items: Iterable[str]) -> Tuple[Tuple[str, int], ...]:
        """`kind:n` strings, e.g. `mul:1`."""
        out: Dict[str, int] = {}
        for text in items:
            kind, _, count = text.partition(":")
            try:
                out[kind] = int(count)
            except ValueError as e:
                raise InputError(f"bad --spares value {text!r}; expected <kind>:<n>") from e
        return tuple(sorted(out.items()))


@dataclass(frozen=True)
class RepairOutcome:
    method: str
    faulty: Tuple[Coord, ...]
    compiled: CompiledDesign
    frames_rewritten: int
    latency_cycles: int

    @property
    def bitstream(self) -> Bitstream:
        return self.compiled.bitstream

    def to_json(self) -> Dict[str, object]:
        return {
            "method": self.method,
            "faulty": [list(c) for c in self.faulty],
            "frames_rewritten": self.frames_rewritten,
            "latency_cycles": self.latency_cycles,
            "cells_used": [list(c) for c in self.compiled.placement.used_cells()],
        }


@dataclass(frozen=True)
class PrecompiledConfig:
    excluded: Tuple[Coord, ...]
    compiled: CompiledDesign = field(repr=False)
    # overlay frames whose payload differs from the baseline
    frames_changed: Tuple[int, ...] = ()

    def latency(self, policy: RepairPolicy) -> int:
        if policy.granularity == "per_cell":
            return len(self.frames_changed) * policy.t_w
        return len(self.compiled.bitstream.frames) * policy.t_w


@dataclass(frozen=True)
class RepairPlan:
    baseline: CompiledDesign = field(repr=False)
    policy: RepairPolicy
    spare_inventory: Tuple[Tuple[str, int], ...]
    configs: Tuple[PrecompiledConfig, ...] = ()

    def lookup(self, faulty: Iterable[Coord]) -> Optional[RepairOutcome]:
        """First precompiled configuration avoiding every faulty used cell."""
        faulty = tuple(sorted(set(map(tuple, faulty))))
        hit = set(faulty) & set(self.baseline.placement.used_cells())
        if not hit:
            return RepairOutcome("unaffected", faulty, self.baseline, 0, 0)
        for cfg in self.configs:
            if hit <= set(cfg.excluded):
                frames = len(cfg.frames_changed) if self.policy.granularity == "per_cell" else len(cfg.compiled.bitstream.frames)
                return RepairOutcome("precompiled", faulty, cfg.compiled, frames, cfg.latency(self.policy))
        return None

    def to_json(self) -> Dict[str, object]:
        return {
            "granularity": self.policy.granularity,
            "spares": dict(self.spare_inventory),
            "configs": [
                {"excluded": [list(c) for c in cfg.excluded], "frames_changed": list(cfg.frames_changed),
                 "latency_cycles": cfg.latency(self.policy)}
                for cfg in self.configs
            ],
            "coverage": coverage(self),
        }


def spare_inventory(design: HardenedDesign, arch: FabricArch, excluded: Iterable[Coord] = ()) -> Dict[str, int]:
    """Unused cells per kind after placing `design` (variants matching the design only)."""
    need = design.requirements().as_dict()
    inventory = arch.inventory(excluded)
    out = {k: 0 for k in FU_KINDS}
    for (kind, variant), have in inventory.items():
        if any(v == variant for (_, v) in need):
            out[kind] += max(0, have - need.get((kind, variant), 0))
    return out


def _verify(compiled: CompiledDesign, vectors: np.ndarray, golden: np.ndarray, stuck: Iterable[Coord] = ()) -> None:
    dfg = compiled.design.dfg
    result = simulate(compiled.arch, compiled.bitstream, vectors, FaultState.of(stuck=stuck), compiled.io)
    report = compare_golden(result, dfg, vectors, golden)
    if report.status != EQUAL:
        raise InvariantError(f"repaired {dfg.name} is {report.status} against the reference "
                             f"(first mismatch at vector {report.first_mismatch})")


def _check_avoids(compiled: CompiledDesign, cells: Iterable[Coord]) -> None:
    config = decode_bitstream(bit_layout(compiled.arch), compiled.bitstream)
    for key, value in config.values:
        if key[0] == "op" and (key[1], key[2]) in set(cells) and value:
            raise InvariantError(f"configuration enables excluded cell {(key[1], key[2])}")


def _changed_frames(a: Bitstream, b: Bitstream) -> Tuple[int, ...]:
    return tuple(i for i, (fa, fb) in enumerate(zip(a.frames, b.frames))
                 if not np.array_equal(fa.payload, fb.payload))


def _check_vectors(design: HardenedDesign, policy: RepairPolicy, seed: int) -> Tuple[np.ndarray, np.ndarray]:
    vectors = random_vectors(design.dfg, policy.check_vectors, seed)
    return vectors, golden_outputs(design.dfg, vectors)


def precompile(
    design: HardenedDesign,
    arch: FabricArch,
    policy: Optional[RepairPolicy] = None,
    k: int = 0,
    seed: int = 0,
    placer: Optional[PlacerConfig] = None,
    baseline: Optional[CompiledDesign] = None,
) -> RepairPlan:
    """Compile `k` alternates, each avoiding one used cell, taken round-robin over kinds, scarcest first."""
    policy = policy or RepairPolicy()
    spares = spare_inventory(design, arch)
    short = [f"{n} x {kind} (have {spares[kind]})" for kind, n in policy.spares if spares[kind] < n]
    if short:
        raise InfeasibleError(f"{arch.name} lacks spare cells: {', '.join(short)}")
    baseline = baseline or compile_design(design, arch, seed, placer)
    vectors, golden = _check_vectors(design, policy, seed)
    _verify(baseline, vectors, golden)

    wanted = {kind for kind, n in policy.spares if n > 0} or {kind for kind, n in spares.items() if n > 0}
    by_kind: Dict[str, List[Coord]] = {kind: [] for kind in FU_KINDS}
    for coord in baseline.placement.used_cells():
        cell = arch.cell_at(coord)
        if cell.kind in wanted:
            by_kind[cell.kind].append(coord)
    kinds = sorted((kd for kd in by_kind if by_kind[kd]), key=lambda kd: (spares[kd], FU_KINDS.index(kd)))
    candidates: List[Coord] = []
    while any(by_kind[kd] for kd in kinds):
        for kd in kinds:
            if by_kind[kd]:
                candidates.append(by_kind[kd].pop(0))
    if k > len(candidates):
        raise InputError(f"{k} precompiled configurations requested, only {len(candidates)} distinct exclusions")

    configs = []
    for coord in candidates[:k]:
        compiled = compile_design(design, arch, seed, placer, excluded=(coord,))
        _verify(compiled, vectors, golden, stuck=(coord,))
        _check_avoids(compiled, (coord,))
        changed = _changed_frames(baseline.bitstream, compiled.bitstream)
        logger.info("precompiled config avoiding %s: %d frames differ", coord, len(changed))
        configs.append(PrecompiledConfig((coord,), compiled, changed))
    return RepairPlan(baseline, policy, tuple(sorted(spares.items())), tuple(configs))


def coverage(plan: RepairPlan, kinds: Optional[Iterable[str]] = None) -> float:
    """Fraction of single-cell faults over used cells (optionally of `kinds`) some config avoids."""
    arch = plan.baseline.arch
    wanted = set(kinds) if kinds is not None else None
    cells = [c for c in plan.baseline.placement.used_cells() if wanted is None or arch.cell_at(c).kind in wanted]
    if not cells:
        return 0.0
    avoided = {c for cfg in plan.configs for c in cfg.excluded}
    return sum(1 for c in cells if c in avoided) / len(cells)


def dynamic_repair(
    design: HardenedDesign,
    arch: FabricArch,
    faulty: Iterable[Coord],
    seed: int = 0,
    baseline: Optional[CompiledDesign] = None,
    policy: Optional[RepairPolicy] = None,
    placer: Optional[PlacerConfig] = None,
) -> RepairOutcome:
    """Re-place and re-route on `arch` minus `faulty`; the result is checked against the reference."""
    policy = policy or RepairPolicy()
    faulty = tuple(sorted(set(tuple(c) for c in faulty)))
    for coord in faulty:
        if arch.cell_at(coord) is None:
            raise InputError(f"faulty position {coord} holds no FU in {arch.name}")
    if baseline is not None and not set(faulty) & set(baseline.placement.used_cells()):
        logger.info("faulty cells %s unused by the baseline; no repair needed", faulty)
        return RepairOutcome("unaffected", faulty, baseline, 0, 0)
    compiled = compile_design(design, arch, seed, placer, excluded=faulty)
    vectors, golden = _check_vectors(design, policy, seed)
    _verify(compiled, vectors, golden, stuck=faulty)
    _check_avoids(compiled, faulty)
    frames = len(compiled.bitstream.frames)
    latency = compiled.work_units + frames * policy.t_w
    logger.info("dynamic repair around %s: %d work units + %d frames", faulty, compiled.work_units, frames)
    return RepairOutcome("dynamic", faulty, compiled, frames, latency)


def tradeoff_table(
    design: HardenedDesign,
    arch: FabricArch,
    spares_options: Sequence[int] = (0, 1, 2),
    k_options: Sequence[int] = (0, 1, 2, 4),
    seed: int = 0,
    placer: Optional[PlacerConfig] = None,
    t_w: int = 64,
) -> List[Dict[str, object]]:
    """Sweep extra spares per used kind, precompiled count and granularity on minimal fabrics.

    `arch` supplies channel width, data width and separation for the generated fabrics.
    """
    need = design.requirements()
    rows: List[Dict[str, object]] = []
    for extra in spares_options:
        counts = ResourceCounts.from_mapping({key: n + extra for key, n in need.counts})
        fabric = minimal_fabric(counts, arch.channel_width, f"sweep_s{extra}", arch.separation, arch.data_width)
        area = {"spares_per_kind": extra, "cells": len(fabric.cells), "config_bits": bit_layout(fabric).nbits}
        try:
            baseline = compile_design(design, fabric, seed, placer)
        except (InfeasibleError, InputError) as e:
            rows.append({**area, "status": f"infeasible: {e}"})
            continue
        probe = baseline.placement.used_cells()[0]
        try:
            dyn = dynamic_repair(design, fabric, (probe,), seed, baseline, RepairPolicy(t_w=t_w), placer)
            dynamic_latency: Optional[int] = dyn.latency_cycles
        except InfeasibleError:
            dynamic_latency = None
        for granularity in GRANULARITIES:
            policy = RepairPolicy(granularity=granularity, t_w=t_w)
            for k in k_options:
                try:
                    plan = precompile(design, fabric, policy, k, seed, placer, baseline)
                except (InfeasibleError, InputError) as e:
                    rows.append({**area, "granularity": granularity, "k": k, "status": f"infeasible: {e}"})
                    continue
                lat = [c.latency(policy) for c in plan.configs]
                rows.append({
                    **area,
                    "granularity": granularity,
                    "k": k,
                    "status": "ok",
                    "coverage": coverage(plan),
                    "precompiled_latency_max": max(lat, default=0),
                    "dynamic_latency": dynamic_latency,
                })
    return rows
