#!/usr/bin/env python3
"""
SEU/MBU injection and sensitivity analysis.

- Upper level: every selected overlay configuration bit is flipped in turn,
  the fabric is simulated on the campaign vectors and the run is classified
  benign / detected / sdc against the reference evaluator.
- Lower level: a synthetic device (10 frames per overlay column) holding the
  static logic of every FU plus one device bit per overlay configuration bit;
  used static logic is conservatively sensitive, overlay bits inherit their
  upper-level class.
"""
from __future__ import annotations

import csv
import io as _io
import logging
import math
import multiprocessing
import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .arch import (
    CB_SELECT,
    FU_OP,
    FU_REPLICA,
    REPLICAS,
    RESOURCE_KINDS,
    Bitstream,
    BitstreamLayout,
    Cell,
    Coord,
    FabricArch,
    IoBinding,
    bit_layout,
)
from .dfg import DataflowGraph
from .ecc import WORD_BITS
from .errors import InputError, InvariantError, SimulationRefused
from .harden import HardenedDesign
from .pnr import Placement, Routing, chebyshev
from .sim import EQUAL, FaultState, compare_golden, golden_outputs, simulate

logger = logging.getLogger(__name__)

BENIGN = "benign"
DETECTED = "detected"
SDC = "sdc"
CLASSES = (BENIGN, DETECTED, SDC)


def inject(bitstream: Bitstream, bits: Iterable[int]) -> Bitstream:
    """Copy of `bitstream` with `bits` flipped; check bits stay stale."""
    flat = bitstream.flat_payload().copy()
    for b in bits:
        if not 0 <= int(b) < flat.size:
            raise InputError(f"bit {b} outside the {flat.size}-bit configuration")
        flat[int(b)] ^= 1
    return bitstream.with_payload(flat)


# Multi-bit upsets ---------------------------------------------------------------------------------


def mbu_pairs(arch: FabricArch) -> List[Tuple[Coord, Coord]]:
    """FU cell pairs at Chebyshev distance 1 (one MBU footprint apart)."""
    coords = sorted(c.coord for c in arch.cells)
    return [(a, b) for i, a in enumerate(coords) for b in coords[i + 1:] if chebyshev(a, b) == 1]


def _replica_bits(layout: BitstreamLayout, coord: Coord) -> List[int]:
    return layout.cell_bits(coord, (FU_OP, FU_REPLICA, CB_SELECT))


def adjacent_mbu(layout: BitstreamLayout, a: Coord, b: Coord, rng: np.random.Generator) -> Tuple[int, int]:
    """One random FU/CB bit in each of two adjacent cells."""
    bits_a, bits_b = _replica_bits(layout, a), _replica_bits(layout, b)
    if not bits_a or not bits_b:
        raise InputError(f"cells {a} and {b} need FU configuration bits for an adjacent MBU")
    return int(rng.choice(bits_a)), int(rng.choice(bits_b))


def cell_mbu(layout: BitstreamLayout, coord: Coord, k: int, rng: np.random.Generator) -> Tuple[int, ...]:
    """k distinct random bits inside one cell (FU, CB and SB bits)."""
    bits = layout.cell_bits(coord)
    if k > len(bits):
        raise InputError(f"cell {coord} has only {len(bits)} bits")
    return tuple(sorted(int(b) for b in rng.choice(bits, size=k, replace=False)))


def replica_mbu_violations(arch: FabricArch, design: HardenedDesign, placement: Placement) -> int:
    """Number of 2-bit adjacent-cell MBUs that hit two different replicas of one TMR triple."""
    layout = bit_layout(arch)
    occupant = placement.occupant
    triple_of = design.triple_of
    replica_of = design.replica_map
    cases = 0
    for a, b in mbu_pairs(arch):
        na, nb = occupant.get(a), occupant.get(b)
        if na is None or nb is None or na not in triple_of or nb not in triple_of:
            continue
        if triple_of[na] == triple_of[nb] and replica_of[na] != replica_of[nb]:
            n = len(_replica_bits(layout, a)) * len(_replica_bits(layout, b))
            logger.debug("MBU exposure: %s@%s and %s@%s (%d cases)", na, a, nb, b, n)
            cases += n
    return cases


def replica_exclusive_bits(arch: FabricArch, design: HardenedDesign, placement: Placement) -> List[int]:
    """Bits whose upset can only disturb the replica domain of the cell holding them.

    These are the opcode and input-select fields of every cell that holds a
    naive-TMR replica: a wrong opcode or operand track changes that replica's
    result and nothing else. Output selects and switch bits are left out, as
    a flipped one drives or joins a wire the replica does not own.
    """
    layout = bit_layout(arch)
    bits: List[int] = []
    for field_ in layout.fields:
        if field_.key[0] not in ("op", "in"):
            continue
        node = placement.occupant.get((field_.row, field_.col))
        if node in design.triple_of:
            bits.extend(range(field_.index, field_.index + field_.width))
    return sorted(bits)


# Campaigns ----------------------------------------------------------------------------------------


@dataclass(frozen=True)
class CampaignScope:
    mode: str = "all"
    count: int = 0
    seed: int = 0
    kinds: Tuple[str, ...] = ()

    @classmethod
    def parse(cls, text: str, seed: int = 0) -> "CampaignScope":
        """`all`, `random:<n>` or `kinds:<kind>[,<kind>...]`."""
        head, _, rest = text.partition(":")
        if head == "all" and not rest:
            return cls()
        if head == "random":
            try:
                return cls("random", int(rest), seed)
            except ValueError as e:
                raise InputError(f"bad campaign scope {text!r}") from e
        if head == "kinds":
            kinds = tuple(k for k in rest.split(",") if k)
            unknown = [k for k in kinds if k not in RESOURCE_KINDS]
            if unknown or not kinds:
                raise InputError(f"bad resource kinds in {text!r}; expected {', '.join(RESOURCE_KINDS)}")
            return cls("kinds", kinds=kinds)
        raise InputError(f"bad campaign scope {text!r}")

    def select(self, layout: BitstreamLayout) -> np.ndarray:
        if self.mode == "all":
            return np.arange(layout.nbits, dtype=np.int64)
        if self.mode == "random":
            rng = np.random.default_rng(self.seed)
            n = min(self.count, layout.nbits)
            return np.sort(rng.choice(layout.nbits, size=n, replace=False)).astype(np.int64)
        picked: List[int] = []
        for kind in self.kinds:
            picked.extend(layout.bits_of_kind(kind))
        return np.array(sorted(picked), dtype=np.int64)

    def describe(self) -> str:
        if self.mode == "random":
            return f"random:{self.count}"
        if self.mode == "kinds":
            return "kinds:" + ",".join(self.kinds)
        return "all"


@dataclass(frozen=True)
class SensitivityMap:
    bits: Tuple[int, ...]
    classes: Tuple[str, ...]
    nbits: int
    vectors: int = 0
    seed: int = 0
    scope: str = "all"
    simulations: int = field(default=0, compare=False)

    @cached_property
    def as_dict(self) -> Dict[int, str]:
        return dict(zip(self.bits, self.classes))

    def class_of(self, bit: int) -> Optional[str]:
        return self.as_dict.get(bit)

    def counts(self) -> Dict[str, int]:
        out = {c: 0 for c in CLASSES}
        for c in self.classes:
            out[c] += 1
        return out

    def bits_of_class(self, cls: str) -> List[int]:
        return [b for b, c in zip(self.bits, self.classes) if c == cls]

    def by_kind(self, layout: BitstreamLayout) -> Dict[str, Dict[str, int]]:
        out = {k: {c: 0 for c in CLASSES} for k in RESOURCE_KINDS}
        fields = layout.fields
        for b, c in zip(self.bits, self.classes):
            out[fields[int(layout.bit_field[b])].kind][c] += 1
        return out

    def to_csv(self, layout: BitstreamLayout) -> str:
        buf = _io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["bit_index", "frame", "offset", "resource_kind", "row", "col", "class"])
        for b, c in zip(self.bits, self.classes):
            info = layout.bit_info(b)
            writer.writerow([b, info.frame, info.offset, info.kind, info.row, info.col, c])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, nbits: int) -> "SensitivityMap":
        rows = list(csv.DictReader(_io.StringIO(text)))
        try:
            pairs = sorted((int(r["bit_index"]), r["class"]) for r in rows)
        except (KeyError, ValueError) as e:
            raise InputError("sensitivity CSV needs bit_index and class columns") from e
        for _, c in pairs:
            if c not in CLASSES:
                raise InputError(f"unknown sensitivity class {c!r}")
        return cls(tuple(b for b, _ in pairs), tuple(c for _, c in pairs), nbits)

    def summary(self, layout: BitstreamLayout) -> Dict[str, object]:
        counts = self.counts()
        return {
            "bits_classified": len(self.bits),
            "layout_bits": self.nbits,
            "scope": self.scope,
            "totals": counts,
            "sensitive_fraction": counts[SDC] / len(self.bits) if self.bits else 0.0,
            "by_resource_kind": self.by_kind(layout),
            "vectors": self.vectors,
            "seed": self.seed,
            # deterministic effort counters; wall time goes to the log only
            "runtime": {"simulations": self.simulations, "vector_evaluations": self.simulations * self.vectors},
            "assumptions": ["voter, comparator and residue-checker logic inside hardened FUs is fault-free"],
        }


def classify_upset(
    arch: FabricArch,
    bitstream: Bitstream,
    dfg: DataflowGraph,
    vectors: np.ndarray,
    bits: Iterable[int],
    golden: Optional[np.ndarray] = None,
    io: Optional[IoBinding] = None,
) -> str:
    """Class of one upset (a set of flipped bits) over all vectors."""
    io = io or IoBinding.for_kernel(dfg)
    try:
        result = simulate(arch, bitstream, vectors, FaultState.of(bits), io)
    except SimulationRefused as e:
        logger.debug("upset %s refused: %s", tuple(bits), e)
        return SDC
    return compare_golden(result, dfg, vectors, golden).outcome


_WORKER: Dict[str, object] = {}


def _init_worker(arch, bitstream, dfg, vectors, golden) -> None:
    _WORKER.update(arch=arch, bitstream=bitstream, dfg=dfg, vectors=vectors, golden=golden)


def _classify_chunk(bits: Sequence[int]) -> List[str]:
    w = _WORKER
    return [classify_upset(w["arch"], w["bitstream"], w["dfg"], w["vectors"], (b,), w["golden"]) for b in bits]


def run_campaign(
    arch: FabricArch,
    bitstream: Bitstream,
    dfg: DataflowGraph,
    vectors: np.ndarray,
    scope: Optional[CampaignScope] = None,
    jobs: int = 1,
    seed: int = 0,
) -> SensitivityMap:
    """Flip each selected bit in turn and classify the run; results are ordered by bit index."""
    scope = scope or CampaignScope()
    layout = bit_layout(arch)
    vectors = np.asarray(vectors, dtype=np.uint64)
    golden = golden_outputs(dfg, vectors)
    io = IoBinding.for_kernel(dfg)
    baseline = compare_golden(simulate(arch, bitstream, vectors, None, io), dfg, vectors, golden)
    if baseline.status != EQUAL:
        raise InvariantError(f"fault-free run of {dfg.name} is {baseline.status}; the design is broken")
    bits = [int(b) for b in scope.select(layout)]
    started = time.perf_counter()
    if jobs <= 1 or len(bits) < 2:
        _init_worker(arch, bitstream, dfg, vectors, golden)
        classes = _classify_chunk(bits)
    else:
        size = max(1, math.ceil(len(bits) / (jobs * 8)))
        chunks = [bits[i:i + size] for i in range(0, len(bits), size)]
        with multiprocessing.Pool(jobs, initializer=_init_worker,
                                  initargs=(arch, bitstream, dfg, vectors, golden)) as pool:
            classes = [c for part in pool.imap(_classify_chunk, chunks) for c in part]
    smap = SensitivityMap(tuple(bits), tuple(classes), layout.nbits, len(vectors), seed, scope.describe(),
                          len(bits) + 1)
    counts = smap.counts()
    logger.info("campaign %s: %d bits, benign=%d detected=%d sdc=%d (%.1fs, %d jobs)", dfg.name, len(bits),
                counts[BENIGN], counts[DETECTED], counts[SDC], time.perf_counter() - started, jobs)
    return smap


# Device (lower) level -----------------------------------------------------------------------------


@dataclass(frozen=True)
class DeviceCosts:
    """Synthetic static-logic cost of one FU in device configuration bits."""

    mul: int = 600
    add: int = 150
    sub: int = 150
    subabs: int = 180
    vote: int = 60
    # embedded voter / comparator / residue checker of a hardened FU
    hardened_extra: int = 60
    frames_per_column: int = 10

    def static_bits(self, cell: Cell) -> int:
        base = getattr(self, cell.kind) * REPLICAS[cell.variant]
        return base + (self.hardened_extra if cell.variant != "plain" else 0)


@dataclass(frozen=True, eq=False)
class DeviceModel:
    arch: FabricArch
    costs: DeviceCosts
    frame_count: int
    frame_bits: int
    # overlay configuration bit -> device bit
    overlay_map: np.ndarray
    # (cell, first device bit of each static run, run length) in device order
    static_runs: Tuple[Tuple[Coord, int, int], ...]
    used_cells: Tuple[Coord, ...]
    essential: np.ndarray

    @property
    def nbits(self) -> int:
        return self.frame_count * self.frame_bits

    def frame_of(self, device_bit: int) -> int:
        return int(device_bit) // self.frame_bits

    @cached_property
    def static_mask(self) -> np.ndarray:
        mask = np.zeros(self.nbits, dtype=bool)
        for _, start, length in self.static_runs:
            mask[start:start + length] = True
        return mask

    @property
    def essential_static_bits(self) -> int:
        return int((self.essential & self.static_mask).sum())

    @property
    def essential_config_bits(self) -> int:
        return int(self.essential[self.overlay_map].sum())

    def essential_frames(self) -> Tuple[int, ...]:
        hit = np.flatnonzero(self.essential)
        return tuple(sorted({int(b) // self.frame_bits for b in hit}))

    def essential_overlay_frames(self) -> Tuple[int, ...]:
        layout = bit_layout(self.arch)
        hit = np.flatnonzero(self.essential[self.overlay_map])
        return tuple(sorted({layout.locate(int(b))[0] for b in hit}))

    def to_json(self) -> Dict[str, object]:
        return {
            "frames": self.frame_count,
            "frame_bits": self.frame_bits,
            "device_bits": self.nbits,
            "overlay_bits": int(self.overlay_map.size),
            "static_bits": int(self.static_mask.sum()),
            "essential_static_bits": self.essential_static_bits,
            "essential_config_bits": self.essential_config_bits,
            "essential_frames": len(self.essential_frames()),
            "cost_table": {k: getattr(self.costs, k) for k in ("mul", "add", "sub", "subabs", "vote", "hardened_extra")},
            "synthetic": True,
        }


def build_device_model(
    arch: FabricArch,
    placement: Optional[Placement] = None,
    routing: Optional[Routing] = None,
    costs: Optional[DeviceCosts] = None,
) -> DeviceModel:
    """Lay the overlay onto synthetic device frames, `frames_per_column` per overlay column.

    Within a column each cell contributes its static logic followed by its own
    overlay configuration bits, packed into equally sized 64-bit-aligned frames.
    """
    costs = costs or DeviceCosts()
    layout = bit_layout(arch)
    per_col = costs.frames_per_column
    columns: List[List[Tuple[str, object, int]]] = []
    for c in range(arch.cols):
        items: List[Tuple[str, object, int]] = []
        for r in range(arch.rows):
            cell = arch.cell_at((r, c))
            if cell is not None:
                items.append(("static", cell.coord, costs.static_bits(cell)))
            bits = layout.cell_bits((r, c))
            items.append(("config", bits, len(bits)))
        columns.append(items)
    longest = max(sum(n for _, _, n in items) for items in columns)
    frame_bits = max(WORD_BITS, -(-longest // (per_col * WORD_BITS)) * WORD_BITS)
    overlay_map = np.zeros(layout.nbits, dtype=np.int64)
    runs: List[Tuple[Coord, int, int]] = []
    for c, items in enumerate(columns):
        pos = c * per_col * frame_bits
        for what, ref, n in items:
            if what == "static":
                runs.append((ref, pos, n))
            else:
                overlay_map[np.asarray(ref, dtype=np.int64)] = np.arange(pos, pos + n)
            pos += n
    used = tuple(placement.used_cells()) if placement is not None else ()
    essential = np.zeros(arch.cols * per_col * frame_bits, dtype=bool)
    used_set = set(used)
    for coord, start, n in runs:
        if coord in used_set:
            essential[start:start + n] = True
    for coord in used:
        essential[overlay_map[layout.cell_bits(coord, (FU_OP, FU_REPLICA, CB_SELECT))]] = True
    if routing is not None:
        for net in routing.nets:
            for (r, c), pair in net.switches:
                g = layout.fields[layout.key_index[("sb", r, c, net.track, pair)]].index
                essential[overlay_map[g]] = True
    model = DeviceModel(arch, costs, arch.cols * per_col, frame_bits, overlay_map, tuple(runs), used, essential)
    logger.info("device model: %d frames x %d bits, %d essential bits", model.frame_count, frame_bits,
                int(essential.sum()))
    return model


@dataclass(frozen=True, eq=False)
class DeviceSensitivity:
    classes: np.ndarray

    def counts(self) -> Dict[str, int]:
        return {c: int((self.classes == c).sum()) for c in CLASSES}


def lower_sensitivity(model: DeviceModel, upper: Optional[SensitivityMap] = None) -> DeviceSensitivity:
    """Per-device-bit class: used static logic is sdc, overlay bits inherit the upper map."""
    classes = np.full(model.nbits, BENIGN, dtype=object)
    used = set(model.used_cells)
    for coord, start, n in model.static_runs:
        if coord in used:
            classes[start:start + n] = SDC
    # overlay bits outside a partial upper map are assumed sensitive
    inherited = np.full(model.overlay_map.size, SDC, dtype=object)
    if upper is not None:
        for b, c in zip(upper.bits, upper.classes):
            inherited[b] = c
    classes[model.overlay_map] = inherited
    return DeviceSensitivity(classes)
