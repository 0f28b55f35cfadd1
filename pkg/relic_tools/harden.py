#!/usr/bin/env python3
"""
Hardening transforms and fabric sizing.

Option (a) triplicates the kernel graph and inserts one majority voter per
node triple (naive TMR); option (b) keeps the graph and maps each node onto a
hardened functional unit (TMR/DWC/EDC FU), optionally mixed by criticality.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

from .arch import DEFAULT_CHANNEL_WIDTH, FU_KINDS, VARIANTS, Cell, FabricArch
from .dfg import DataflowGraph, Node
from .errors import InputError

logger = logging.getLogger(__name__)

MODES = ("none", "naive_tmr", "tmr_fu", "dwc_fu", "edc_fu", "mixed")
MODE_ALIASES = {
    "plain": "none",
    "naive": "naive_tmr",
    "tmr": "naive_tmr",
    "tmrfu": "tmr_fu",
    "dwc": "dwc_fu",
    "dwcfu": "dwc_fu",
    "edc": "edc_fu",
    "edcfu": "edc_fu",
}
DEFAULT_TABLE = {"high": "tmr_fu", "medium": "dwc_fu", "low": "edc_fu"}

ResourceKey = Tuple[str, str]


def normalize_mode(mode: str) -> str:
    mode = MODE_ALIASES.get(mode, mode)
    if mode not in MODES:
        raise InputError(f"unknown hardening mode {mode!r}; expected one of {', '.join(MODES)}")
    return mode


def compatible_kinds(op: str) -> Tuple[str, ...]:
    # a subtractor/abs cell runs plain subtraction with the abs stage off
    return ("sub", "subabs") if op == "sub" else (op,)


@dataclass(frozen=True)
class ResourceCounts:
    counts: Tuple[Tuple[ResourceKey, int], ...] = ()

    @classmethod
    def from_mapping(cls, mapping: Mapping[ResourceKey, int]) -> "ResourceCounts":
        order = {k: i for i, k in enumerate(FU_KINDS)}
        vorder = {v: i for i, v in enumerate(VARIANTS)}
        items = sorted(((k, int(n)) for k, n in mapping.items() if n > 0),
                       key=lambda kv: (order[kv[0][0]], vorder[kv[0][1]]))
        return cls(tuple(items))

    def as_dict(self) -> Dict[ResourceKey, int]:
        return dict(self.counts)

    def by_kind(self) -> Dict[str, int]:
        out = {k: 0 for k in FU_KINDS}
        for (kind, _), n in self.counts:
            out[kind] += n
        return out

    @property
    def total(self) -> int:
        return sum(n for _, n in self.counts)

    def shortfalls(self, inventory: Mapping[ResourceKey, int]) -> List[str]:
        """Human-readable list of missing cells; empty when the inventory suffices."""
        need = self.as_dict()
        missing: List[str] = []
        for variant in VARIANTS:
            for kind in FU_KINDS:
                if kind in ("sub", "subabs"):
                    continue
                want = need.get((kind, variant), 0)
                have = inventory.get((kind, variant), 0)
                if want > have:
                    missing.append(f"{want - have} x {kind}/{variant}")
            want_abs = need.get(("subabs", variant), 0)
            have_abs = inventory.get(("subabs", variant), 0)
            if want_abs > have_abs:
                missing.append(f"{want_abs - have_abs} x subabs/{variant}")
            spare_abs = max(0, have_abs - want_abs)
            want_sub = need.get(("sub", variant), 0)
            have_sub = inventory.get(("sub", variant), 0) + spare_abs
            if want_sub > have_sub:
                missing.append(f"{want_sub - have_sub} x sub/{variant}")
        return missing

    def to_json(self) -> Dict[str, object]:
        return {
            "by_kind": self.by_kind(),
            "cells": [{"kind": k, "variant": v, "count": n} for (k, v), n in self.counts],
            "total": self.total,
        }


@dataclass(frozen=True)
class HardenedDesign:
    kernel: DataflowGraph
    dfg: DataflowGraph
    mode: str
    variants: Tuple[Tuple[str, str], ...]
    replicas: Tuple[Tuple[str, int], ...] = ()
    # (original node, replica node ids, voter id)
    triples: Tuple[Tuple[str, Tuple[str, str, str], str], ...] = ()

    @cached_property
    def variant_map(self) -> Dict[str, str]:
        return dict(self.variants)

    @cached_property
    def replica_map(self) -> Dict[str, int]:
        return dict(self.replicas)

    @cached_property
    def triple_of(self) -> Dict[str, int]:
        out: Dict[str, int] = {}
        for i, (_, members, _) in enumerate(self.triples):
            for m in members:
                out[m] = i
        return out

    def variant_of(self, node: str) -> str:
        return self.variant_map[node]

    def requirement_key(self, node: Node) -> ResourceKey:
        return (node.op, self.variant_map[node.id])

    @property
    def fabric_mode(self) -> str:
        used = {v for _, v in self.variants if v != "plain"}
        if not used:
            return "plain"
        return used.pop() if len(used) == 1 else "mixed"

    def requirements(self) -> ResourceCounts:
        counts: Dict[ResourceKey, int] = {}
        for n in self.dfg.nodes:
            key = self.requirement_key(n)
            counts[key] = counts.get(key, 0) + 1
        return ResourceCounts.from_mapping(counts)


def tmr_naive(dfg: DataflowGraph) -> DataflowGraph:
    """Triplicate every node and merge each triple with one shared voter."""
    for n in dfg.nodes:
        if n.op == "vote":
            raise InputError(f"kernel {dfg.name}: already contains vote node {n.id!r}")
    ports = set(dfg.ports)
    levels = dict(dfg.criticality)
    nodes: List[Node] = []
    new_levels: List[Tuple[str, str]] = []

    def voted(a: str) -> str:
        return a if a in ports else f"{a}_v"

    for n in dfg.nodes:
        operands = tuple(voted(a) for a in n.operands)
        members = []
        for k in range(3):
            rid = f"{n.id}_r{k}"
            nodes.append(Node(rid, n.op, operands))
            members.append(rid)
        nodes.append(Node(f"{n.id}_v", "vote", tuple(members)))
        if n.id in levels:
            new_levels.extend((m, levels[n.id]) for m in members + [f"{n.id}_v"])
    outputs = tuple((o, voted(src)) for o, src in dfg.outputs)
    return DataflowGraph(f"{dfg.name}_tmr", dfg.data_width, dfg.inputs, tuple(nodes), outputs,
                         tuple(sorted(new_levels)), dfg.constants)


def assign_hardening(
    dfg: DataflowGraph,
    mode: str,
    overrides: Optional[Mapping[str, str]] = None,
    table: Optional[Mapping[str, str]] = None,
) -> HardenedDesign:
    """Annotate (or, for naive TMR, transform) a kernel for one hardening mode.

    `overrides` pins individual nodes to a variant (FU and mixed modes);
    `table` replaces entries of the criticality -> variant default table.
    """
    mode = normalize_mode(mode)
    overrides = dict(overrides or {})
    for node, variant in overrides.items():
        if node not in dfg.node_map:
            raise InputError(f"override for unknown node {node!r}")
        if variant not in VARIANTS:
            raise InputError(f"override for {node!r}: unknown variant {variant!r}")

    if mode in ("none", "naive_tmr"):
        if overrides:
            raise InputError(f"per-node overrides do not apply to mode {mode}")
        if mode == "none":
            return HardenedDesign(dfg, dfg, mode, tuple((n.id, "plain") for n in dfg.nodes))
        tmr = tmr_naive(dfg)
        replicas: List[Tuple[str, int]] = []
        triples = []
        for n in dfg.nodes:
            members = tuple(f"{n.id}_r{k}" for k in range(3))
            replicas.extend((m, k) for k, m in enumerate(members))
            triples.append((n.id, members, f"{n.id}_v"))
        logger.info("naive TMR %s: %d -> %d nodes", dfg.name, len(dfg.nodes), len(tmr.nodes))
        return HardenedDesign(dfg, tmr, mode, tuple((n.id, "plain") for n in tmr.nodes),
                              tuple(replicas), tuple(triples))

    resolved = dict(DEFAULT_TABLE)
    resolved.update(table or {})
    variants: List[Tuple[str, str]] = []
    for n in dfg.nodes:
        if n.op == "vote":
            variant = "plain"
        elif n.id in overrides:
            variant = overrides[n.id]
        elif mode == "mixed":
            level = dfg.criticality_of(n.id)
            if level not in resolved:
                raise InputError(f"node {n.id!r}: no variant for criticality {level!r}")
            variant = resolved[level]
        else:
            variant = mode
        if variant not in VARIANTS:
            raise InputError(f"node {n.id!r}: unknown variant {variant!r}")
        variants.append((n.id, variant))
    return HardenedDesign(dfg, dfg, mode, tuple(variants))


def size_requirements(kernels: Sequence[DataflowGraph], mode: str, **options) -> ResourceCounts:
    """Per-kind cell requirement of a fabric that runs the kernels alternately."""
    if not kernels:
        raise InputError("size_requirements needs at least one kernel")
    need: Dict[ResourceKey, int] = {}
    for k in kernels:
        for key, n in assign_hardening(k, mode, **options).requirements().counts:
            need[key] = max(need.get(key, 0), n)
    return ResourceCounts.from_mapping(need)


def minimal_fabric(
    counts: ResourceCounts,
    channel_width: int = DEFAULT_CHANNEL_WIDTH,
    name: str = "minimal",
    separation: int = 2,
    data_width: int = 16,
) -> FabricArch:
    """Smallest square-ish grid holding `counts`, filled row-major with kinds interleaved."""
    if counts.total == 0:
        raise InputError("cannot size a fabric for zero cells")
    n = counts.total
    cols = math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    queues = [[key] * count for key, count in counts.counts]
    sequence: List[ResourceKey] = []
    while any(queues):
        for q in queues:
            if q:
                sequence.append(q.pop())
    cells = [Cell(i // cols, i % cols, kind, variant) for i, (kind, variant) in enumerate(sequence)]
    variants = {v for _, v in (key for key, _ in counts.counts)}
    mode = variants.pop() if len(variants) == 1 else "mixed"
    if mode != "mixed" and any(k == "vote" for (k, _), _ in counts.counts) and mode != "plain":
        mode = "mixed"
    return FabricArch(name, rows, cols, channel_width, data_width, mode, tuple(cells), separation)
