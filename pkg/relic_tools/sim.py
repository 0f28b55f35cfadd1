#!/usr/bin/env python3
"""
Functional simulation of a configured fabric.

The configuration is read straight from the (possibly upset) bitstream
payload: switch boxes merge (segment, track) nodes into wires, connection
boxes attach FU pins to wires, and every enabled FU is evaluated once per
input vector in dependency order. FUs are registered (latency 1 each) and
routing is combinational, so holding each vector for `latency` cycles and
sampling at the end is equivalent to one combinational sweep; that sweep is
vectorised over all input vectors with numpy. An upset that closes a loop
through FU registers falls back to stepping the registers cycle by cycle.

Hardened cells:
- tmr_fu: three replicas, each with its own opcode copy; enable and result
  are bitwise majorities.
- dwc_fu: two replicas; replica 0 drives, any difference raises the flag.
- edc_fu: drives the wrapped result; a mod-3 residue predictor selected by
  the checker field flags mismatches against the exact (unwrapped) result.
"""
from __future__ import annotations

import csv
import functools
import io as _io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np

from .arch import (
    OPCODES,
    REPLICAS,
    SB_PAIRS,
    SB_SWITCH,
    Bitstream,
    Coord,
    FabricArch,
    IoBinding,
    bit_layout,
    geometry,
    validate_bitstream,
)
from .dfg import DataflowGraph, eval_dfg
from .errors import InputError, SimulationRefused

logger = logging.getLogger(__name__)

# opcodes each FU kind implements; anything else decodes to nop-zero
CAPABILITY = {
    "mul": frozenset({OPCODES["mul"]}),
    "add": frozenset({OPCODES["add"]}),
    "sub": frozenset({OPCODES["sub"]}),
    "subabs": frozenset({OPCODES["sub"], OPCODES["subabs"]}),
    "vote": frozenset({OPCODES["vote"]}),
}

EQUAL = "equal"
CORRUPTED = "corrupted"
DETECTED_ONLY = "detected-only"


@dataclass(frozen=True)
class FaultState:
    flipped: FrozenSet[int] = frozenset()
    # permanently faulty cells; their result is stuck at 0
    stuck: FrozenSet[Coord] = frozenset()

    @classmethod
    def of(cls, flipped: Iterable[int] = (), stuck: Iterable[Coord] = ()) -> "FaultState":
        return cls(frozenset(int(b) for b in flipped), frozenset(tuple(c) for c in stuck))


@dataclass(frozen=True, eq=False)
class SimResult:
    # (vectors, outputs) sampled words
    outputs: np.ndarray
    # (vectors, flag cells) detection flags
    flags: np.ndarray
    flag_cells: Tuple[Coord, ...]
    latency: int
    cycles: int

    def sample_cycle(self, k: int) -> int:
        return (k + 1) * max(self.latency, 1)

    @property
    def flagged(self) -> np.ndarray:
        if self.flags.size == 0:
            return np.zeros(self.outputs.shape[0], dtype=bool)
        return self.flags.any(axis=1)


@dataclass(frozen=True)
class _CellPlan:
    coord: Coord
    kind: str
    variant: str
    ops: Tuple[int, ...]
    chk: Optional[int]
    ins: Tuple[Optional[int], ...]
    out: Optional[int]
    in_segment: int
    out_segment: int


@dataclass(frozen=True, eq=False)
class _Plan:
    width: int
    sb_fields: np.ndarray
    sb_ends: np.ndarray
    cells: Tuple[_CellPlan, ...]
    flag_cells: Tuple[Coord, ...]


@functools.lru_cache(maxsize=32)
def _plan(arch: FabricArch) -> _Plan:
    layout = bit_layout(arch)
    geo = geometry(arch)
    w = arch.channel_width
    index = layout.key_index
    sb_fields, sb_ends = [], []
    for i, f in enumerate(layout.fields):
        if f.kind != SB_SWITCH:
            continue
        _, r, c, track, pair = f.key
        sides = geo.sb_sides(r, c)
        a, b = (sides[s] for s in SB_PAIRS[pair])
        sb_fields.append(i)
        sb_ends.append((a * w + track, b * w + track))
    cells = []
    for cell in arch.cells:
        r, c = cell.coord
        ops = tuple(index[("op", r, c, k)] for k in range(REPLICAS[cell.variant] if cell.variant in ("tmr_fu", "dwc_fu") else 1))
        cells.append(_CellPlan(
            cell.coord, cell.kind, cell.variant, ops,
            index.get(("chk", r, c)),
            tuple(index.get(("in", r, c, p)) for p in range(cell.pins)),
            index.get(("out", r, c)),
            geo.in_segment(cell.coord),
            geo.out_segment(cell.coord),
        ))
    flag_cells = tuple(c.coord for c in arch.cells if c.variant in ("dwc_fu", "edc_fu"))
    return _Plan(w, np.array(sb_fields, dtype=np.int64), np.array(sb_ends, dtype=np.int64).reshape(-1, 2),
                 tuple(cells), flag_cells)


def _majority(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    return (a & b) | (a & c) | (b & c)


def _compute(opcode: int, kind: str, args: List[np.ndarray], width: int) -> Tuple[np.ndarray, np.ndarray]:
    """(wrapped result, residue mod 3 of the exact result) of one replica."""
    mask = np.uint64((1 << width) - 1)
    zero = np.zeros_like(args[0])
    if opcode not in CAPABILITY[kind]:
        return zero, zero.astype(np.int64)
    a, b = args[0], args[1]
    if opcode == OPCODES["mul"]:
        exact = a * b
        return exact & mask, (exact % np.uint64(3)).astype(np.int64)
    if opcode == OPCODES["add"]:
        exact = a + b
        return exact & mask, (exact % np.uint64(3)).astype(np.int64)
    if opcode in (OPCODES["sub"], OPCODES["subabs"]):
        diff = (a - b) & mask
        # residue check covers the subtract stage only
        residue = (a.astype(np.int64) - b.astype(np.int64)) % 3
        if opcode == OPCODES["sub"]:
            return diff, residue
        negative = (diff >> np.uint64(width - 1)) & np.uint64(1)
        return np.where(negative == 1, (np.uint64(0) - diff) & mask, diff), residue
    out = _majority(a, b, args[2] if len(args) > 2 else zero)
    return out, (out % np.uint64(3)).astype(np.int64)


def _predict(checker: int, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ra = (a % np.uint64(3)).astype(np.int64)
    rb = (b % np.uint64(3)).astype(np.int64)
    if checker == 1:
        return (ra * rb) % 3
    if checker == 2:
        return (ra + rb) % 3
    return (ra - rb) % 3


def simulate(
    arch: FabricArch,
    bitstream: Bitstream,
    vectors: np.ndarray,
    fault_state: Optional[FaultState] = None,
    io: Optional[IoBinding] = None,
) -> SimResult:
    """Run `vectors` (one row per issued input vector) through the configured fabric.

    Raises SimulationRefused for driver contention, which the injection
    campaigns count as silent corruption. A loop through FU registers is not
    refused: every register is stepped from cleared state for as many cycles
    as there are active cells, and the outputs are sampled after the last one.
    """
    layout = bit_layout(arch)
    validate_bitstream(layout, bitstream)
    vectors = np.asarray(vectors, dtype=np.uint64)
    if vectors.ndim != 2:
        raise InputError("vectors must be a 2-D array (vectors x input ports)")
    if io is None:
        io = IoBinding(tuple(f"in{k}" for k in range(vectors.shape[1])), ("out0",))
    if vectors.shape[1] != len(io.inputs):
        raise InputError(f"vectors have {vectors.shape[1]} columns, the design has {len(io.inputs)} inputs")
    fault_state = fault_state or FaultState()

    flat = bitstream.flat_payload().copy()
    if fault_state.flipped:
        flipped = np.fromiter(sorted(fault_state.flipped), dtype=np.int64)
        if flipped.min() < 0 or flipped.max() >= layout.nbits:
            raise InputError(f"flipped bit outside the {layout.nbits}-bit layout")
        flat[flipped] ^= 1
    values = layout.field_values(flat)

    plan = _plan(arch)
    geo = geometry(arch)
    w = plan.width
    width = arch.data_width
    mask = np.uint64((1 << width) - 1)
    n = vectors.shape[0]

    wires = nx.utils.UnionFind()
    for a, b in plan.sb_ends[values[plan.sb_fields] != 0]:
        wires.union(int(a), int(b))

    drivers: Dict[int, object] = {}

    def drive(node: int, who: object) -> None:
        root = wires[node]
        if root in drivers:
            raise SimulationRefused(f"contention on {geo.segment_name(node // w)} track {node % w}: "
                                    f"{drivers[root]} and {who}")
        drivers[root] = who

    wire_value: Dict[int, np.ndarray] = {}
    constants = dict(io.constants)
    for k, (port, pad) in enumerate(zip(io.ports, io.input_pads(geo))):
        node = pad.segment * w + pad.track
        drive(node, f"pad {port}")
        column = vectors[:, k] if k < len(io.inputs) else np.full(n, constants[port], dtype=np.uint64)
        wire_value[wires[node]] = column & mask

    active: Dict[Coord, _CellPlan] = {}
    opcodes: Dict[Coord, List[int]] = {}
    enabled: Dict[Coord, bool] = {}
    pin_wires: Dict[Coord, List[Optional[int]]] = {}
    out_wire: Dict[Coord, Optional[int]] = {}
    for cp in plan.cells:
        ops = [int(values[i]) for i in cp.ops]
        if not any(ops):
            continue
        active[cp.coord] = cp
        opcodes[cp.coord] = ops
        en = [op != 0 for op in ops]
        if cp.variant == "tmr_fu":
            enabled[cp.coord] = sum(en) >= 2
        else:
            enabled[cp.coord] = en[0]
        sel = int(values[cp.out]) if cp.out is not None else 0
        out_wire[cp.coord] = None
        if enabled[cp.coord] and sel < w:
            node = cp.out_segment * w + sel
            drive(node, f"fu{cp.coord}")
            out_wire[cp.coord] = wires[node]
        pins: List[Optional[int]] = []
        for i in cp.ins:
            s = int(values[i]) if i is not None else 0
            pins.append(wires[cp.in_segment * w + s] if s < w else None)
        pin_wires[cp.coord] = pins

    driver_cell = {wire: coord for coord, wire in out_wire.items() if wire is not None}
    deps = nx.DiGraph()
    deps.add_nodes_from(active)
    for coord, pins in pin_wires.items():
        for wire in pins:
            if wire in driver_cell:
                deps.add_edge(driver_cell[wire], coord)

    zeros = np.zeros(n, dtype=np.uint64)
    flag_index = {c: i for i, c in enumerate(plan.flag_cells)}
    flags = np.zeros((n, len(plan.flag_cells)), dtype=bool)

    def step(coord: Coord, values_on: Dict[int, np.ndarray]) -> np.ndarray:
        """One evaluation of a cell from the wire values it sees; records its flag."""
        cp = active[coord]
        args = [values_on.get(p, zeros) if p is not None else zeros for p in pin_wires[coord]]
        ops = opcodes[coord]
        results = [_compute(op, cp.kind, args, width) if op else (zeros, zeros.astype(np.int64)) for op in ops]
        if cp.variant == "tmr_fu":
            out = _majority(results[0][0], results[1][0], results[2][0])
        else:
            out = results[0][0]
        if cp.variant == "dwc_fu":
            mismatch = (results[0][0] != results[1][0]) | ((ops[0] != 0) != (ops[1] != 0))
            flags[:, flag_index[coord]] = mismatch
        elif cp.variant == "edc_fu" and enabled[coord] and cp.chk is not None:
            checker = int(values[cp.chk])
            if checker:
                flags[:, flag_index[coord]] = results[0][1] != _predict(checker, args[0], args[1])
        # a stuck cell's checkers still watch its replicas; only the driven value is lost
        if coord in fault_state.stuck:
            return zeros
        return out

    if nx.is_directed_acyclic_graph(deps):
        depth: Dict[Coord, int] = {}
        for coord in nx.lexicographical_topological_sort(deps):
            depth[coord] = 1 + max((depth[driver_cell[p]] for p in pin_wires[coord] if p in driver_cell), default=0)
            out = step(coord, wire_value)
            if out_wire[coord] is not None:
                wire_value[out_wire[coord]] = out
        latency = max((depth[driver_cell[wire]] for wire in _output_wires(io, geo, wires, w) if wire in driver_cell),
                      default=0)
    else:
        # a loop through FU output registers: step every register from cleared
        # state, once per active cell, then sample
        cycle = nx.find_cycle(deps)
        logger.debug("register loop through %s", " -> ".join(str(u) for u, _ in cycle))
        latency = len(active)
        order = sorted(active)
        for _ in range(latency):
            outs = {coord: step(coord, wire_value) for coord in order}
            for coord, out in outs.items():
                if out_wire[coord] is not None:
                    wire_value[out_wire[coord]] = out

    outputs = np.zeros((n, len(io.outputs)), dtype=np.uint64)
    for j, wire in enumerate(_output_wires(io, geo, wires, w)):
        outputs[:, j] = wire_value.get(wire, zeros)
    logger.debug("simulated %d vectors over %d active cells, latency %d", n, len(active), latency)
    return SimResult(outputs, flags, plan.flag_cells, latency, n * max(latency, 1))


def _output_wires(io: IoBinding, geo, wires: nx.utils.UnionFind, w: int) -> List[int]:
    return [wires[pad.segment * w + pad.track] for pad in io.output_pads(geo)]


# Oracle comparison --------------------------------------------------------------------------------


@dataclass(frozen=True)
class EquivalenceReport:
    matches: Tuple[bool, ...]
    flagged: Tuple[bool, ...]
    status: str
    # vectors used and the first mismatching vector, for reports
    vectors: int = 0
    first_mismatch: Optional[int] = field(default=None)

    @property
    def mismatches(self) -> int:
        return sum(1 for m in self.matches if not m)

    @property
    def outcome(self) -> str:
        return {EQUAL: "benign", DETECTED_ONLY: "detected", CORRUPTED: "sdc"}[self.status]


def golden_outputs(dfg: DataflowGraph, vectors: np.ndarray) -> np.ndarray:
    rows = [eval_dfg(dfg, [int(v) for v in row]) for row in np.asarray(vectors)]
    return np.array(rows, dtype=np.uint64).reshape(len(rows), len(dfg.outputs))


def compare_golden(
    result: SimResult,
    dfg: DataflowGraph,
    vectors: np.ndarray,
    golden: Optional[np.ndarray] = None,
) -> EquivalenceReport:
    """Per-vector match against the reference evaluator; any raised flag makes the run detected."""
    expected = golden_outputs(dfg, vectors) if golden is None else golden
    if expected.shape != result.outputs.shape:
        raise InputError(f"result shape {result.outputs.shape} does not match the oracle {expected.shape}")
    matches = (expected == result.outputs).all(axis=1)
    flagged = result.flagged
    if flagged.any():
        status = DETECTED_ONLY
    elif not matches.all():
        status = CORRUPTED
    else:
        status = EQUAL
    bad = np.flatnonzero(~matches)
    return EquivalenceReport(tuple(bool(m) for m in matches), tuple(bool(f) for f in flagged), status,
                             len(matches), int(bad[0]) if bad.size else None)


# Vector and result files --------------------------------------------------------------------------


def read_vectors(source: Union[str, Path], inputs: Optional[Sequence[str]] = None) -> np.ndarray:
    """Read a vector CSV (one row per issued vector); a non-numeric first row is a header."""
    text = Path(source).read_text(encoding="utf-8")
    rows = [r for r in csv.reader(_io.StringIO(text)) if r and any(x.strip() for x in r)]
    if rows and not all(x.strip().lstrip("-").isdigit() for x in rows[0]):
        header = [x.strip() for x in rows[0]]
        rows = rows[1:]
        if inputs is not None and header != list(inputs):
            raise InputError(f"{source}: columns {header} do not match inputs {list(inputs)}")
    try:
        data = [[int(x, 0) for x in r] for r in rows]
    except ValueError as e:
        raise InputError(f"{source}: non-integer vector value") from e
    width = len(inputs) if inputs is not None else (len(data[0]) if data else 0)
    for i, r in enumerate(data, start=1):
        if len(r) != width:
            raise InputError(f"{source}: row {i} has {len(r)} values, expected {width}")
    return np.array(data, dtype=np.uint64).reshape(len(data), width)


def write_vectors(path: Union[str, Path], vectors: np.ndarray, inputs: Sequence[str]) -> None:
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(inputs)
    for row in np.asarray(vectors):
        writer.writerow(int(v) for v in row)
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def write_results(path: Union[str, Path], result: SimResult, outputs: Sequence[str]) -> None:
    """Result CSV: sampling cycle, output words, one 0/1 column per flag-capable cell."""
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["cycle", *outputs, *(f"flag_{r}_{c}" for r, c in result.flag_cells)])
    for k in range(result.outputs.shape[0]):
        writer.writerow([result.sample_cycle(k), *(int(v) for v in result.outputs[k]),
                         *(int(f) for f in result.flags[k])])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")
