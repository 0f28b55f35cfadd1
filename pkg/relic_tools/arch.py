#!/usr/bin/env python3
"""
Island-style overlay fabric model.

- `.fab` parsing and validation into an immutable FabricArch.
- Routing geometry (segments, switch boxes, connection boxes, I/O pads).
- Canonical configuration-bit layout, one frame per fabric column.
- Bit-exact bitstream encoding/decoding with SECDED check bits per 64-bit word.
"""
from __future__ import annotations

import functools
import hashlib
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Tuple

import numpy as np

from . import ecc
from .errors import BitstreamFormatError, InfeasibleError, InputError, ParseError

logger = logging.getLogger(__name__)

Coord = Tuple[int, int]
FieldKey = Tuple

FU_KINDS = ("mul", "add", "sub", "subabs", "vote")
VARIANTS = ("plain", "tmr_fu", "dwc_fu", "edc_fu")
HARDENING_MODES = ("plain", "tmr_fu", "dwc_fu", "edc_fu", "mixed")
DATA_WIDTHS = (8, 16, 32)
DEFAULT_CHANNEL_WIDTH = 8

OP_BITS = 4
CHECKER_BITS = 2
OPCODES = {"mul": 1, "add": 2, "sub": 3, "subabs": 4, "vote": 5}
OPCODE_NAMES = {v: k for k, v in OPCODES.items()}
OP_OFF = 0
# residue predictor selected by the EDC checker field
CHECKER_CLASS = {"mul": 1, "add": 2, "sub": 3, "subabs": 3, "vote": 0}
REPLICAS = {"plain": 1, "tmr_fu": 3, "dwc_fu": 2, "edc_fu": 1}

FU_OP = "fu_op"
FU_REPLICA = "fu_replica"
CB_SELECT = "cb_select"
SB_SWITCH = "sb_switch"
RESOURCE_KINDS = (FU_OP, FU_REPLICA, CB_SELECT, SB_SWITCH)

SIDES = ("N", "E", "S", "W")
SB_PAIRS = (("N", "E"), ("N", "S"), ("N", "W"), ("E", "S"), ("E", "W"), ("S", "W"))
SB_PAIR_INDEX = {frozenset(p): i for i, p in enumerate(SB_PAIRS)}

MAGIC = b"ROVB"
VERSION = 1
HASH_BYTES = 8


@dataclass(frozen=True)
class Cell:
    row: int
    col: int
    kind: str
    variant: str = "plain"

    @property
    def coord(self) -> Coord:
        return (self.row, self.col)

    @property
    def pins(self) -> int:
        return 3 if self.kind == "vote" else 2


@dataclass(frozen=True)
class FabricArch:
    name: str
    rows: int
    cols: int
    channel_width: int = DEFAULT_CHANNEL_WIDTH
    data_width: int = 16
    hardening_mode: str = "plain"
    cells: Tuple[Cell, ...] = ()
    separation: int = 2

    def __post_init__(self) -> None:
        if self.rows < 1 or self.cols < 1:
            raise InputError(f"fabric {self.name}: grid must be at least 1x1")
        if self.channel_width < 1:
            raise InputError(f"fabric {self.name}: channel_width must be >= 1")
        if self.data_width not in DATA_WIDTHS:
            raise InputError(f"fabric {self.name}: data_width must be one of {DATA_WIDTHS}")
        if self.hardening_mode not in HARDENING_MODES:
            raise InputError(f"fabric {self.name}: unknown hardening mode {self.hardening_mode!r}")
        if self.separation < 0:
            raise InputError(f"fabric {self.name}: separation must be >= 0")
        seen = set()
        for cell in self.cells:
            if not (0 <= cell.row < self.rows and 0 <= cell.col < self.cols):
                raise InputError(f"fabric {self.name}: cell {cell.coord} outside {self.rows}x{self.cols} grid")
            if cell.coord in seen:
                raise InputError(f"fabric {self.name}: duplicate cell {cell.coord}")
            if cell.kind not in FU_KINDS:
                raise InputError(f"fabric {self.name}: unknown FU kind {cell.kind!r}")
            if cell.variant not in VARIANTS:
                raise InputError(f"fabric {self.name}: unknown FU variant {cell.variant!r}")
            if cell.kind == "vote" and cell.variant != "plain":
                raise InputError(f"fabric {self.name}: vote cell {cell.coord} must be plain")
            seen.add(cell.coord)
        object.__setattr__(self, "cells", tuple(sorted(self.cells, key=lambda c: (c.col, c.row))))

    @cached_property
    def cell_map(self) -> Dict[Coord, Cell]:
        return {c.coord: c for c in self.cells}

    def cell_at(self, coord: Coord) -> Optional[Cell]:
        return self.cell_map.get(coord)

    @property
    def select_bits(self) -> int:
        return (self.channel_width - 1).bit_length()

    @property
    def frame_count(self) -> int:
        return self.cols

    def inventory(self, excluded: Iterable[Coord] = ()) -> Dict[Tuple[str, str], int]:
        skip = set(excluded)
        counts: Dict[Tuple[str, str], int] = {}
        for c in self.cells:
            if c.coord in skip:
                continue
            counts[(c.kind, c.variant)] = counts.get((c.kind, c.variant), 0) + 1
        return counts

    def to_text(self) -> str:
        lines = [
            f"fabric {self.name}",
            f"rows {self.rows}",
            f"cols {self.cols}",
            f"channel_width {self.channel_width}",
            f"data_width {self.data_width}",
            f"hardening {self.hardening_mode}",
            f"separation {self.separation}",
        ]
        for c in sorted(self.cells, key=lambda c: (c.row, c.col)):
            lines.append(f"fu {c.row} {c.col} {c.kind} {c.variant}")
        return "\n".join(lines) + "\n"

    def fabric_hash(self) -> bytes:
        return hashlib.sha256(self.to_text().encode("utf-8")).digest()[:HASH_BYTES]


def default_variant(mode: str) -> str:
    return mode if mode in VARIANTS else "tmr_fu"


def parse_fabric(text: str, source: Optional[str] = None) -> FabricArch:
    """Parse the line-oriented `.fab` grammar into a validated FabricArch."""
    settings: Dict[str, object] = {}
    raw_cells: List[Tuple[int, int, int, str, Optional[str]]] = []
    ints = {"rows", "cols", "channel_width", "data_width", "separation"}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        key = parts[0]
        try:
            if key == "fabric" and len(parts) == 2:
                settings["name"] = parts[1]
            elif key in ints and len(parts) == 2:
                settings[key] = int(parts[1])
            elif key == "hardening" and len(parts) == 2:
                if parts[1] not in HARDENING_MODES:
                    raise ParseError(f"unknown hardening mode {parts[1]!r}", lineno, source)
                settings["hardening_mode"] = parts[1]
            elif key == "fu" and len(parts) in (4, 5):
                variant = parts[4] if len(parts) == 5 else None
                raw_cells.append((lineno, int(parts[1]), int(parts[2]), parts[3], variant))
            else:
                raise ParseError(f"syntax error: {line!r}", lineno, source)
        except ValueError as e:
            raise ParseError(f"expected integer in {line!r}", lineno, source) from e

    for required in ("rows", "cols"):
        if required not in settings:
            raise ParseError(f"missing `{required}`", None, source)
    mode = str(settings.get("hardening_mode", "plain"))
    rows, cols = int(settings["rows"]), int(settings["cols"])
    cells: List[Cell] = []
    seen: Dict[Coord, int] = {}
    for lineno, r, c, kind, variant in raw_cells:
        if (r, c) in seen:
            raise ParseError(f"duplicate cell ({r}, {c}), first declared on line {seen[(r, c)]}", lineno, source)
        if not (0 <= r < rows and 0 <= c < cols):
            raise ParseError(f"cell ({r}, {c}) outside {rows}x{cols} grid", lineno, source)
        if kind not in FU_KINDS:
            raise ParseError(f"unknown FU kind {kind!r}", lineno, source)
        if variant is None:
            variant = "plain" if kind == "vote" else default_variant(mode)
        if variant not in VARIANTS:
            raise ParseError(f"unknown FU variant {variant!r}", lineno, source)
        seen[(r, c)] = lineno
        cells.append(Cell(r, c, kind, variant))
    try:
        return FabricArch(
            name=str(settings.get("name", "fabric")),
            rows=rows,
            cols=cols,
            channel_width=int(settings.get("channel_width", DEFAULT_CHANNEL_WIDTH)),
            data_width=int(settings.get("data_width", 16)),
            hardening_mode=mode,
            cells=tuple(cells),
            separation=int(settings.get("separation", 2)),
        )
    except ParseError:
        raise
    except InputError as e:
        raise ParseError(str(e), None, source) from e


# Routing geometry ---------------------------------------------------------------------------------


@dataclass(frozen=True)
class Pad:
    segment: int
    track: int
    # grid position used for wirelength estimates (one step outside the grid)
    row: int
    col: int


class Geometry:
    """Segments, switch boxes and pads of an arch.

    Horizontal segment H(r, c), c in [0, cols], lies west of SB(r, c); vertical
    segment V(r, c), r in [0, rows], lies north of SB(r, c). FU (r, c) reads
    H(r, c) and drives V(r + 1, c).
    """

    def __init__(self, arch: FabricArch) -> None:
        self.rows = arch.rows
        self.cols = arch.cols
        self.width = arch.channel_width
        self.n_h = self.rows * (self.cols + 1)
        self.n_v = (self.rows + 1) * self.cols
        self.n_segments = self.n_h + self.n_v
        # (segment_a, segment_b, sb coord, pair index) per SB pair
        self.sb_links: List[Tuple[int, int, Coord, int]] = []
        self.neighbors: List[List[Tuple[int, Coord, int]]] = [[] for _ in range(self.n_segments)]
        for r in range(self.rows):
            for c in range(self.cols):
                sides = self.sb_sides(r, c)
                for pair_index, (a, b) in enumerate(SB_PAIRS):
                    sa, sb = sides[a], sides[b]
                    self.sb_links.append((sa, sb, (r, c), pair_index))
                    self.neighbors[sa].append((sb, (r, c), pair_index))
                    self.neighbors[sb].append((sa, (r, c), pair_index))
        # north and east stubs touch no FU pin; west and south ones double as FU in/out segments
        self.input_stubs = ([self.v(0, c) for c in range(self.cols)], [self.h(r, 0) for r in range(self.rows)])
        self.output_stubs = ([self.h(r, self.cols) for r in range(self.rows)], [self.v(self.rows, c) for c in range(self.cols)])

    def h(self, r: int, c: int) -> int:
        return r * (self.cols + 1) + c

    def v(self, r: int, c: int) -> int:
        return self.n_h + r * self.cols + c

    def sb_sides(self, r: int, c: int) -> Dict[str, int]:
        return {"N": self.v(r, c), "E": self.h(r, c + 1), "S": self.v(r + 1, c), "W": self.h(r, c)}

    def in_segment(self, coord: Coord) -> int:
        return self.h(coord[0], coord[1])

    def out_segment(self, coord: Coord) -> int:
        return self.v(coord[0] + 1, coord[1])

    def segment_name(self, seg: int) -> str:
        if seg < self.n_h:
            r, c = divmod(seg, self.cols + 1)
            return f"H({r},{c})"
        r, c = divmod(seg - self.n_h, self.cols)
        return f"V({r},{c})"

    def segment_xy(self, seg: int) -> Tuple[int, int]:
        """Doubled coordinates; one SB hop moves the Manhattan distance by at most 2."""
        if seg < self.n_h:
            r, c = divmod(seg, self.cols + 1)
            return (2 * r, 2 * c - 1)
        r, c = divmod(seg - self.n_h, self.cols)
        return (2 * r - 1, 2 * c)

    def _stub_position(self, seg: int) -> Coord:
        if seg < self.n_h:
            r, c = divmod(seg, self.cols + 1)
            return (r, -1) if c == 0 else (r, self.cols)
        r, c = divmod(seg - self.n_h, self.cols)
        return (-1, c) if r == 0 else (self.rows, c)

    def _pad(self, stubs: Tuple[List[int], List[int]], index: int, what: str) -> Pad:
        """Pad of port `index`: primary stubs fill first, one (stub, track) per port.

        Within a stub group port k takes track k mod W, so any W consecutive
        ports sit on distinct tracks; the stub rotates with the lap.
        """
        k = index
        for group in stubs:
            capacity = len(group) * self.width
            if k < capacity:
                lap, track = divmod(k, self.width)
                seg = group[(lap + track) % len(group)]
                r, c = self._stub_position(seg)
                return Pad(seg, track, r, c)
            k -= capacity
        total = sum(len(group) for group in stubs) * self.width
        raise InfeasibleError(f"{what} port {index} exceeds the {total} available pads")

    def input_pad(self, index: int) -> Pad:
        return self._pad(self.input_stubs, index, "input")

    def output_pad(self, index: int) -> Pad:
        return self._pad(self.output_stubs, index, "output")


@functools.lru_cache(maxsize=64)
def geometry(arch: FabricArch) -> Geometry:
    return Geometry(arch)


@dataclass(frozen=True)
class IoBinding:
    """Port-to-pad assignment: inputs then constants on input pads, outputs on output pads."""

    inputs: Tuple[str, ...]
    outputs: Tuple[str, ...]
    constants: Tuple[Tuple[str, int], ...] = ()

    @classmethod
    def for_kernel(cls, dfg) -> "IoBinding":
        return cls(tuple(dfg.inputs), tuple(o for o, _ in dfg.outputs), tuple(dfg.constants))

    @property
    def ports(self) -> Tuple[str, ...]:
        return self.inputs + tuple(c for c, _ in self.constants)

    def input_pads(self, geo: Geometry) -> List[Pad]:
        return [geo.input_pad(k) for k in range(len(self.ports))]

    def output_pads(self, geo: Geometry) -> List[Pad]:
        return [geo.output_pad(k) for k in range(len(self.outputs))]


# Bit layout ---------------------------------------------------------------------------------------


@dataclass(frozen=True)
class LayoutField:
    key: FieldKey
    width: int
    kind: str
    replica: Optional[int]
    row: int
    col: int
    frame: int
    offset: int
    # global index of the field's least-significant bit
    index: int


@dataclass(frozen=True)
class BitInfo:
    global_index: int
    frame: int
    offset: int
    kind: str
    replica: Optional[int]
    row: int
    col: int
    key: FieldKey
    bit: int


@dataclass(frozen=True, eq=False)
class BitstreamLayout:
    fabric_hash: bytes
    fields: Tuple[LayoutField, ...]
    frame_bits: Tuple[int, ...]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BitstreamLayout):
            return NotImplemented
        return (self.fabric_hash, self.fields, self.frame_bits) == (other.fabric_hash, other.fields, other.frame_bits)

    def __hash__(self) -> int:
        return hash((self.fabric_hash, self.frame_bits, len(self.fields)))

    @property
    def nbits(self) -> int:
        return sum(self.frame_bits)

    @property
    def frame_payload_bits(self) -> Tuple[int, ...]:
        return tuple(-(-n // ecc.WORD_BITS) * ecc.WORD_BITS for n in self.frame_bits)

    @cached_property
    def frame_starts(self) -> Tuple[int, ...]:
        starts, acc = [], 0
        for n in self.frame_bits:
            starts.append(acc)
            acc += n
        return tuple(starts)

    @cached_property
    def key_index(self) -> Dict[FieldKey, int]:
        return {f.key: i for i, f in enumerate(self.fields)}

    @cached_property
    def bit_field(self) -> np.ndarray:
        out = np.empty(self.nbits, dtype=np.int64)
        for i, f in enumerate(self.fields):
            out[f.index:f.index + f.width] = i
        return out

    @cached_property
    def bit_position(self) -> np.ndarray:
        out = np.empty(self.nbits, dtype=np.int64)
        for f in self.fields:
            out[f.index:f.index + f.width] = np.arange(f.width)
        return out

    @cached_property
    def _field_starts(self) -> np.ndarray:
        return np.array([f.index for f in self.fields], dtype=np.int64)

    def locate(self, global_index: int) -> Tuple[int, int]:
        if not 0 <= global_index < self.nbits:
            raise IndexError(f"bit {global_index} outside layout of {self.nbits} bits")
        frame = int(np.searchsorted(self.frame_starts, global_index, side="right")) - 1
        return frame, global_index - self.frame_starts[frame]

    def bit_info(self, global_index: int) -> BitInfo:
        frame, offset = self.locate(global_index)
        f = self.fields[int(self.bit_field[global_index])]
        return BitInfo(global_index, frame, offset, f.kind, f.replica, f.row, f.col, f.key,
                       int(self.bit_position[global_index]))

    def iter_bits(self) -> Iterator[BitInfo]:
        for i in range(self.nbits):
            yield self.bit_info(i)

    def cell_bits(self, coord: Coord, kinds: Optional[Iterable[str]] = None) -> List[int]:
        wanted = set(kinds) if kinds is not None else None
        out: List[int] = []
        for f in self.fields:
            if (f.row, f.col) == coord and (wanted is None or f.kind in wanted):
                out.extend(range(f.index, f.index + f.width))
        return out

    def bits_of_kind(self, kind: str) -> List[int]:
        out: List[int] = []
        for f in self.fields:
            if f.kind == kind:
                out.extend(range(f.index, f.index + f.width))
        return out

    def breakdown(self) -> Dict[str, int]:
        counts = {k: 0 for k in RESOURCE_KINDS}
        for f in self.fields:
            counts[f.kind] += f.width
        return counts

    def describe(self) -> str:
        lines = ["bit_index,frame,offset,resource_kind,replica,row,col,field"]
        for f in self.fields:
            for b in range(f.width):
                g = f.index + b
                replica = "" if f.replica is None else str(f.replica)
                key = ":".join(str(k) for k in f.key)
                lines.append(f"{g},{f.frame},{f.offset + b},{f.kind},{replica},{f.row},{f.col},{key}[{b}]")
        return "\n".join(lines) + "\n"

    def field_values(self, flat_bits: np.ndarray) -> np.ndarray:
        """Little-endian value of every field from the concatenated payload bits."""
        if not self.fields:
            return np.zeros(0, dtype=np.int64)
        weighted = flat_bits.astype(np.int64) << self.bit_position
        return np.add.reduceat(weighted, self._field_starts)


def _cell_fields(arch: FabricArch, r: int, c: int) -> List[Tuple[FieldKey, int, str, Optional[int]]]:
    out: List[Tuple[FieldKey, int, str, Optional[int]]] = []
    cell = arch.cell_at((r, c))
    if cell is not None:
        if cell.variant in ("tmr_fu", "dwc_fu"):
            for k in range(REPLICAS[cell.variant]):
                out.append((("op", r, c, k), OP_BITS, FU_REPLICA, k))
        else:
            out.append((("op", r, c, 0), OP_BITS, FU_OP, None))
            if cell.variant == "edc_fu":
                out.append((("chk", r, c), CHECKER_BITS, FU_OP, None))
        if arch.select_bits:
            for pin in range(cell.pins):
                out.append((("in", r, c, pin), arch.select_bits, CB_SELECT, None))
            out.append((("out", r, c), arch.select_bits, CB_SELECT, None))
    for track in range(arch.channel_width):
        for pair in range(len(SB_PAIRS)):
            out.append((("sb", r, c, track, pair), 1, SB_SWITCH, None))
    return out


@functools.lru_cache(maxsize=64)
def bit_layout(arch: FabricArch) -> BitstreamLayout:
    """Canonical layout: column-major frames, rows in order, FU -> CB -> SB within a cell."""
    fields: List[LayoutField] = []
    frame_bits: List[int] = []
    index = 0
    for c in range(arch.cols):
        offset = 0
        for r in range(arch.rows):
            for key, width, kind, replica in _cell_fields(arch, r, c):
                fields.append(LayoutField(key, width, kind, replica, r, c, c, offset, index))
                offset += width
                index += width
        frame_bits.append(offset)
    logger.debug("layout %s: %d bits in %d frames", arch.name, index, len(frame_bits))
    return BitstreamLayout(arch.fabric_hash(), tuple(fields), tuple(frame_bits))


# Configurations and bitstreams -------------------------------------------------------------------


@dataclass(frozen=True)
class WordError:
    frame: int
    word: int
    kind: str
    # payload offset within the frame for a single data-bit error
    offset: Optional[int] = None


@dataclass(frozen=True)
class FabricConfig:
    """Nonzero field values keyed by layout field key."""

    values: Tuple[Tuple[FieldKey, int], ...] = ()
    errors: Tuple[WordError, ...] = field(default=(), compare=False)

    @classmethod
    def from_mapping(cls, mapping: Mapping[FieldKey, int], errors: Tuple[WordError, ...] = ()) -> "FabricConfig":
        items = tuple(sorted((k, int(v)) for k, v in mapping.items() if int(v) != 0))
        return cls(items, errors)

    @cached_property
    def as_dict(self) -> Dict[FieldKey, int]:
        return dict(self.values)

    def get(self, key: FieldKey, default: int = 0) -> int:
        return self.as_dict.get(key, default)

    @property
    def uncorrectable(self) -> bool:
        return any(e.kind == ecc.DOUBLE for e in self.errors)


@dataclass(frozen=True, eq=False)
class Frame:
    payload: np.ndarray
    check: np.ndarray


@dataclass(frozen=True, eq=False)
class Bitstream:
    fabric_hash: bytes
    frames: Tuple[Frame, ...]
    # unpadded payload length per frame
    frame_bits: Tuple[int, ...]
    version: int = VERSION

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Bitstream):
            return NotImplemented
        return self.to_bytes() == other.to_bytes()

    def __hash__(self) -> int:
        return hash(self.to_bytes())

    @property
    def nbits(self) -> int:
        return sum(self.frame_bits)

    def locate(self, global_index: int) -> Tuple[int, int]:
        if not 0 <= global_index < self.nbits:
            raise IndexError(f"bit {global_index} outside bitstream of {self.nbits} bits")
        acc = 0
        for frame, n in enumerate(self.frame_bits):
            if global_index < acc + n:
                return frame, global_index - acc
            acc += n
        raise IndexError(global_index)

    def flat_payload(self) -> np.ndarray:
        parts = [f.payload[:n] for f, n in zip(self.frames, self.frame_bits)]
        return np.concatenate(parts) if parts else np.zeros(0, dtype=np.uint8)

    def to_bytes(self) -> bytes:
        chunks = [MAGIC, bytes([self.version]), self.fabric_hash]
        for f in self.frames:
            chunks.append(np.packbits(f.payload, bitorder="little").tobytes())
            chunks.append(f.check.astype(np.uint8).tobytes())
        return b"".join(chunks)

    @classmethod
    def from_bytes(cls, data: bytes, layout: BitstreamLayout) -> "Bitstream":
        head = len(MAGIC) + 1 + HASH_BYTES
        if data[:len(MAGIC)] != MAGIC:
            raise BitstreamFormatError("bad magic, expected ROVB")
        if len(data) < head:
            raise BitstreamFormatError("truncated header")
        version = data[len(MAGIC)]
        if version != VERSION:
            raise BitstreamFormatError(f"unsupported bitstream version {version}")
        fabric_hash = bytes(data[len(MAGIC) + 1:head])
        pos = head
        frames = []
        for padded in layout.frame_payload_bits:
            nbytes, nwords = padded // 8, padded // ecc.WORD_BITS
            chunk = data[pos:pos + nbytes + nwords]
            if len(chunk) != nbytes + nwords:
                raise BitstreamFormatError("bitstream shorter than its layout")
            payload = np.unpackbits(np.frombuffer(chunk[:nbytes], dtype=np.uint8), bitorder="little")
            check = np.frombuffer(chunk[nbytes:], dtype=np.uint8).copy()
            frames.append(_frozen_frame(payload, check))
            pos += nbytes + nwords
        if pos != len(data):
            raise BitstreamFormatError(f"{len(data) - pos} trailing bytes after last frame")
        return cls(fabric_hash, tuple(frames), layout.frame_bits, version)

    def with_payload(self, flat: np.ndarray) -> "Bitstream":
        """Copy with a new concatenated payload; check bits are kept as they are."""
        frames, acc = [], 0
        for f, n in zip(self.frames, self.frame_bits):
            payload = np.array(f.payload, copy=True)
            payload[:n] = flat[acc:acc + n]
            frames.append(_frozen_frame(payload, np.array(f.check, copy=True)))
            acc += n
        return Bitstream(self.fabric_hash, tuple(frames), self.frame_bits, self.version)


def _frozen_frame(payload: np.ndarray, check: np.ndarray) -> Frame:
    payload = np.asarray(payload, dtype=np.uint8)
    check = np.asarray(check, dtype=np.uint8)
    payload.flags.writeable = False
    check.flags.writeable = False
    return Frame(payload, check)


def encode_config(layout: BitstreamLayout, config: FabricConfig) -> Bitstream:
    flat = np.zeros(layout.nbits, dtype=np.uint8)
    index = layout.key_index
    for key, value in config.values:
        i = index.get(key)
        if i is None:
            raise InputError(f"configuration references {key!r}, which is not in the layout")
        f = layout.fields[i]
        if value < 0 or value >= (1 << f.width):
            raise InputError(f"value {value} does not fit the {f.width}-bit field {key!r}")
        for b in range(f.width):
            flat[f.index + b] = (value >> b) & 1
    frames = []
    for start, n, padded in zip(layout.frame_starts, layout.frame_bits, layout.frame_payload_bits):
        payload = np.zeros(padded, dtype=np.uint8)
        payload[:n] = flat[start:start + n]
        frames.append(_frozen_frame(payload, ecc.encode_words(payload)))
    return Bitstream(layout.fabric_hash, tuple(frames), layout.frame_bits)


def check_frames(bits: Bitstream) -> Tuple[WordError, ...]:
    errors: List[WordError] = []
    for fi, frame in enumerate(bits.frames):
        for wi, status in enumerate(ecc.check_words(frame.payload, frame.check)):
            if status.kind == ecc.CLEAN:
                continue
            offset = None if status.data_bit is None else wi * ecc.WORD_BITS + status.data_bit
            errors.append(WordError(fi, wi, status.kind, offset))
    return tuple(errors)


def validate_bitstream(layout: BitstreamLayout, bits: Bitstream) -> None:
    if bits.fabric_hash != layout.fabric_hash:
        raise BitstreamFormatError("bitstream was generated for a different fabric")
    if len(bits.frames) != len(layout.frame_bits):
        raise BitstreamFormatError(f"expected {len(layout.frame_bits)} frames, got {len(bits.frames)}")
    for fi, (frame, padded) in enumerate(zip(bits.frames, layout.frame_payload_bits)):
        if frame.payload.size != padded or frame.check.size != padded // ecc.WORD_BITS:
            raise BitstreamFormatError(f"frame {fi} length does not match the layout")


def decode_bitstream(layout: BitstreamLayout, bits: Bitstream) -> FabricConfig:
    """Decode a bitstream; SECDED syndromes are reported in `errors`, never corrected."""
    validate_bitstream(layout, bits)
    errors = check_frames(bits)
    if errors:
        logger.info("decode: %d nonzero syndromes (%d uncorrectable)", len(errors),
                    sum(e.kind == ecc.DOUBLE for e in errors))
    values = layout.field_values(bits.flat_payload())
    mapping = {layout.fields[i].key: int(v) for i, v in enumerate(values) if v}
    return FabricConfig.from_mapping(mapping, errors)
