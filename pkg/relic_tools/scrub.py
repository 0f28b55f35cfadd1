#!/usr/bin/env python3
"""
Two-level configuration scrubbing.

Each level (overlay configuration memory, synthetic device memory) is a set of
SECDED-protected frames walked by an ideal blind-read scrubber: every frame
visit reads and checks all of its 64-bit words (T_f cycles) and rewrites the
frame when a word was corrected (T_w cycles). A word holding two or more live
upsets is uncorrectable and forces a full reconfiguration of that level from
the golden image. The two levels run independently on their own clocks.
"""
from __future__ import annotations

import csv
import io as _io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import ecc
from .arch import Bitstream, FabricArch, bit_layout
from .errors import InputError
from .seu import DeviceModel

logger = logging.getLogger(__name__)

LEVELS = ("upper", "lower")
SCHEDULES = ("round_robin", "priority")

CORRECTED = "corrected"
UNCORRECTABLE = "uncorrectable"
RECONFIGURED = "reconfigured"
# the same bit flipped twice before any visit: memory is clean again
CANCELLED = "cancelled"
OUTCOMES = (CORRECTED, UNCORRECTABLE, RECONFIGURED, CANCELLED)


@dataclass(frozen=True)
class ScrubConfig:
    level: str = "both"
    schedule: str = "round_robin"
    t_f: int = 64
    t_w: int = 64
    # cycles between pass starts; passes never overlap
    period: int = 1

    def __post_init__(self) -> None:
        if self.level not in ("upper", "lower", "both"):
            raise InputError(f"unknown scrub level {self.level!r}")
        if self.schedule not in SCHEDULES:
            raise InputError(f"unknown scrub schedule {self.schedule!r}; expected {', '.join(SCHEDULES)}")
        for name in ("t_f", "t_w", "period"):
            if getattr(self, name) <= 0:
                raise InputError(f"scrub {name} must be positive, got {getattr(self, name)}")

    @property
    def levels(self) -> Tuple[str, ...]:
        return LEVELS if self.level == "both" else (self.level,)


# Upset traces -------------------------------------------------------------------------------------


@dataclass(frozen=True)
class Upset:
    cycle: int
    level: str
    bit_index: int


@dataclass(frozen=True)
class UpsetTrace:
    events: Tuple[Upset, ...] = ()

    def __post_init__(self) -> None:
        last = 0
        for e in self.events:
            if e.level not in LEVELS:
                raise InputError(f"upset at cycle {e.cycle}: unknown level {e.level!r}")
            if e.cycle < last:
                raise InputError(f"upset trace cycles must be non-decreasing (cycle {e.cycle} after {last})")
            if e.bit_index < 0:
                raise InputError(f"negative bit index {e.bit_index} in upset trace")
            last = e.cycle

    def for_level(self, level: str) -> List[Tuple[int, Upset]]:
        return [(i, e) for i, e in enumerate(self.events) if e.level == level]

    def to_csv(self) -> str:
        buf = _io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["cycle", "level", "bit_index"])
        for e in self.events:
            writer.writerow([e.cycle, e.level, e.bit_index])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, source: str = "<trace>") -> "UpsetTrace":
        events = []
        for i, row in enumerate(csv.DictReader(_io.StringIO(text)), start=2):
            try:
                events.append(Upset(int(row["cycle"]), row["level"].strip(), int(row["bit_index"])))
            except (KeyError, TypeError, ValueError) as e:
                raise InputError(f"{source}:{i}: expected cycle,level,bit_index") from e
        return cls(tuple(events))

    @classmethod
    def read(cls, path: Union[str, Path]) -> "UpsetTrace":
        return cls.from_csv(Path(path).read_text(encoding="utf-8"), str(path))


def _partner_bit(real_bits: int, offset: int, rng: np.random.Generator) -> Optional[int]:
    base = offset - offset % ecc.WORD_BITS
    options = [o for o in range(base, min(base + ecc.WORD_BITS, real_bits)) if o != offset]
    return int(rng.choice(options)) if options else None


def random_trace(
    arch: FabricArch,
    device_model: Optional[DeviceModel] = None,
    count: int = 100,
    seed: int = 0,
    horizon: int = 100_000,
    levels: Sequence[str] = ("upper",),
    doubles: int = 0,
) -> UpsetTrace:
    """`count` single-bit upsets on distinct bits at uniform cycles in [0, horizon).

    `doubles` extra events each flip two bits of one codeword at the same cycle.
    """
    rng = np.random.default_rng(seed)
    layout = bit_layout(arch)
    sizes = {"upper": layout.nbits}
    if device_model is not None:
        sizes["lower"] = device_model.nbits
    for level in levels:
        if level not in sizes:
            raise InputError(f"a {level}-level trace needs a device model")
    picked: List[Upset] = []
    used = {level: set() for level in levels}
    for _ in range(count):
        level = levels[int(rng.integers(len(levels)))]
        n = sizes[level]
        if len(used[level]) >= n:
            raise InputError(f"more upsets than {level}-level bits")
        bit = int(rng.integers(n))
        while bit in used[level]:
            bit = int(rng.integers(n))
        used[level].add(bit)
        picked.append(Upset(int(rng.integers(horizon)), level, bit))
    for _ in range(doubles):
        level = levels[int(rng.integers(len(levels)))]
        cycle = int(rng.integers(horizon))
        if level == "upper":
            bit = int(rng.integers(layout.nbits))
            frame, offset = layout.locate(bit)
            partner = _partner_bit(layout.frame_bits[frame], offset, rng)
            if partner is None:
                continue
            second = layout.frame_starts[frame] + partner
        else:
            fb = device_model.frame_bits
            bit = int(rng.integers(device_model.nbits))
            second = bit - bit % fb + _partner_bit(fb, bit % fb, rng)
        picked.extend([Upset(cycle, level, bit), Upset(cycle, level, int(second))])
    picked.sort(key=lambda e: (e.cycle, LEVELS.index(e.level), e.bit_index))
    return UpsetTrace(tuple(picked))


# Memory -------------------------------------------------------------------------------------------


class ScrubMemory:
    """Mutable SECDED-protected frames plus the golden image used for reconfiguration."""

    def __init__(self, payloads: Sequence[np.ndarray], checks: Sequence[np.ndarray], frame_bits: Sequence[int]) -> None:
        self.golden = [(np.array(p, dtype=np.uint8), np.array(c, dtype=np.uint8)) for p, c in zip(payloads, checks)]
        self.frame_bits = tuple(int(n) for n in frame_bits)
        self.payloads: List[np.ndarray] = []
        self.checks: List[np.ndarray] = []
        self.reload()

    @classmethod
    def from_bitstream(cls, bitstream: Bitstream) -> "ScrubMemory":
        return cls([f.payload for f in bitstream.frames], [f.check for f in bitstream.frames], bitstream.frame_bits)

    @classmethod
    def blank(cls, frames: int, frame_bits: int) -> "ScrubMemory":
        zeros = np.zeros(frame_bits, dtype=np.uint8)
        return cls([zeros] * frames, [ecc.encode_words(zeros)] * frames, [frame_bits] * frames)

    @property
    def frame_count(self) -> int:
        return len(self.payloads)

    def reload(self) -> None:
        self.payloads = [p.copy() for p, _ in self.golden]
        self.checks = [c.copy() for _, c in self.golden]

    def flip(self, frame: int, offset: int) -> None:
        if not 0 <= offset < self.frame_bits[frame]:
            raise InputError(f"offset {offset} outside frame {frame}")
        self.payloads[frame][offset] ^= 1

    def check(self, frame: int) -> Tuple[ecc.WordStatus, ...]:
        return ecc.check_words(self.payloads[frame], self.checks[frame])

    def correct(self, frame: int, word: int, status: ecc.WordStatus) -> None:
        lo = word * ecc.WORD_BITS
        fixed, check = ecc.correct_word(self.payloads[frame][lo:lo + ecc.WORD_BITS], self.checks[frame][word], status)
        self.payloads[frame][lo:lo + ecc.WORD_BITS] = fixed
        self.checks[frame][word] = check

    def is_golden(self) -> bool:
        return all(np.array_equal(p, g) and np.array_equal(c, gc)
                   for p, c, (g, gc) in zip(self.payloads, self.checks, self.golden))


# Scrubbing ----------------------------------------------------------------------------------------


@dataclass
class EventRecord:
    cycle: int
    level: str
    bit_index: int
    frame: int
    outcome: Optional[str] = None
    detection: Optional[int] = None
    correction: Optional[int] = None
    visits_to_detect: Optional[int] = None

    @property
    def latency(self) -> Optional[int]:
        return None if self.detection is None else self.detection - self.cycle

    def to_json(self) -> Dict[str, object]:
        return {
            "cycle": self.cycle,
            "level": self.level,
            "bit_index": self.bit_index,
            "frame": self.frame,
            "outcome": self.outcome,
            "detection_cycle": self.detection,
            "correction_cycle": self.correction,
            "detection_latency": self.latency,
            "visits_to_detect": self.visits_to_detect,
        }


@dataclass
class _Live:
    record: EventRecord
    offset: int
    # global visit index of the first visit that could see the upset
    first_visit: int


@dataclass
class FrameVisits:
    start: int
    end: int
    visits: int = 0
    corrections: int = 0
    reconfigured: bool = False


class LevelScrubber:
    """Scrub state of one level: live upsets per frame and a running count of frame visits."""

    def __init__(self, level: str, memory: ScrubMemory, order: Sequence[int], cfg: ScrubConfig) -> None:
        self.level = level
        self.memory = memory
        self.order = tuple(order)
        self.cfg = cfg
        self.live: Dict[int, List[_Live]] = {}
        self.visit_index = 0

    def _resolve(self, items: Iterable[_Live], outcome: str, detection: int, correction: int) -> None:
        for item in items:
            rec = item.record
            rec.outcome, rec.detection, rec.correction = outcome, detection, correction
            rec.visits_to_detect = self.visit_index - item.first_visit + 1

    def arrive(self, rec: EventRecord, offset: int) -> None:
        frame_live = self.live.setdefault(rec.frame, [])
        twin = next((x for x in frame_live if x.offset == offset), None)
        self.memory.flip(rec.frame, offset)
        if twin is not None:
            frame_live.remove(twin)
            twin.record.outcome = rec.outcome = CANCELLED
            return
        frame_live.append(_Live(rec, offset, self.visit_index))

    def visit(self, frame: int, t: int) -> Tuple[int, bool, int]:
        """One frame visit starting at `t`; returns (cost, reconfigured, corrections)."""
        cfg = self.cfg
        detect = t + cfg.t_f
        statuses = self.memory.check(frame)
        live = self.live.get(frame, [])
        by_word: Dict[int, List[_Live]] = {}
        for item in live:
            by_word.setdefault(item.offset // ecc.WORD_BITS, []).append(item)
        bad = [w for w, s in enumerate(statuses) if s.kind != ecc.CLEAN]
        broken = sorted({w for w in bad if statuses[w].kind == ecc.DOUBLE} | {w for w, v in by_word.items() if len(v) > 1})
        if broken:
            done = detect + self.memory.frame_count * cfg.t_w
            hit = [x for w in broken for x in by_word.get(w, [])]
            self._resolve(hit, UNCORRECTABLE, detect, done)
            hit_ids = {id(x) for x in hit}
            others = [x for items in self.live.values() for x in items if id(x) not in hit_ids]
            self._resolve(others, RECONFIGURED, detect, done)
            logger.warning("%s scrub: uncorrectable word in frame %d at cycle %d; reconfiguring %d frames",
                           self.level, frame, detect, self.memory.frame_count)
            self.memory.reload()
            self.live.clear()
            return done - t, True, 0
        if not bad:
            return cfg.t_f, False, 0
        for w in bad:
            self.memory.correct(frame, w, statuses[w])
        self._resolve(live, CORRECTED, detect, detect + cfg.t_w)
        self.live.pop(frame, None)
        return cfg.t_f + cfg.t_w, False, len(bad)

    def wipe(self, done: int) -> None:
        """Golden image written back at `done`: upsets that landed during the rewrite are gone."""
        late = [x for items in self.live.values() for x in items]
        self._resolve(late, RECONFIGURED, done, done)
        self.memory.reload()
        self.live.clear()

    def pending(self) -> bool:
        return any(self.live.values())


def scrub_pass(
    scrubber: LevelScrubber,
    start: int,
    before_visit: Optional[Callable[[int], None]] = None,
) -> FrameVisits:
    """Visit every frame in schedule order starting at cycle `start`.

    A frame's words are checked when its read completes, so `before_visit(t)`
    delivers every upset arriving at or before the end of the read. A
    reconfiguration ends the pass early; upsets arriving before the golden
    image is written back are wiped by it.
    """
    t = start
    result = FrameVisits(start, start)
    for frame in scrubber.order:
        if before_visit is not None:
            before_visit(t + scrubber.cfg.t_f)
        cost, reconfigured, corrections = scrubber.visit(frame, t)
        scrubber.visit_index += 1
        result.visits += 1
        result.corrections += corrections
        t += cost
        if reconfigured:
            if before_visit is not None:
                before_visit(t)
            scrubber.wipe(t)
            result.reconfigured = True
            break
    result.end = t
    return result


@dataclass
class LevelStats:
    level: str
    frames: int
    passes: int = 0
    clean_pass_cycles: int = 0
    pass_durations: List[int] = field(default_factory=list)
    reconfigurations: int = 0

    def to_json(self, records: Sequence[EventRecord]) -> Dict[str, object]:
        lat = [r.latency for r in records if r.latency is not None]
        counts = {o: 0 for o in OUTCOMES}
        for r in records:
            if r.outcome is not None:
                counts[r.outcome] += 1
        return {
            "frames": self.frames,
            "passes": self.passes,
            "clean_pass_cycles": self.clean_pass_cycles,
            "max_pass_cycles": max(self.pass_durations, default=self.clean_pass_cycles),
            "reconfigurations": self.reconfigurations,
            "events": len(records),
            "outcomes": counts,
            "mean_detection_latency": float(np.mean(lat)) if lat else None,
            "max_detection_latency": int(max(lat)) if lat else None,
        }


@dataclass
class ScrubReport:
    config: ScrubConfig
    events: List[EventRecord]
    levels: Dict[str, LevelStats]

    def records(self, level: str) -> List[EventRecord]:
        return [r for r in self.events if r.level == level]

    def mean_latency(self, level: str) -> Optional[float]:
        lat = [r.latency for r in self.records(level) if r.latency is not None]
        return float(np.mean(lat)) if lat else None

    def to_json(self) -> Dict[str, object]:
        cfg = self.config
        return {
            "config": {"level": cfg.level, "schedule": cfg.schedule, "t_f": cfg.t_f, "t_w": cfg.t_w,
                       "period": cfg.period},
            "levels": {name: stats.to_json(self.records(name)) for name, stats in self.levels.items()},
            "events": [r.to_json() for r in self.events],
            "assumptions": ["the scrub controller is ideal (never upset)"],
        }


def schedule_order(frames: int, schedule: str, essential: Iterable[int] = ()) -> Tuple[int, ...]:
    if schedule == "round_robin":
        return tuple(range(frames))
    first = sorted({int(f) for f in essential if 0 <= int(f) < frames})
    picked = set(first)
    return tuple(first) + tuple(f for f in range(frames) if f not in picked)


def _run_level(
    level: str,
    memory: ScrubMemory,
    order: Sequence[int],
    events: List[Tuple[EventRecord, int]],
    cfg: ScrubConfig,
) -> LevelStats:
    scrubber = LevelScrubber(level, memory, order, cfg)
    stats = LevelStats(level, memory.frame_count, clean_pass_cycles=memory.frame_count * cfg.t_f)
    stride = max(cfg.period, stats.clean_pass_cycles)
    cursor = 0

    def deliver(t: int) -> None:
        nonlocal cursor
        while cursor < len(events) and events[cursor][0].cycle <= t:
            rec, offset = events[cursor]
            scrubber.arrive(rec, offset)
            cursor += 1

    start = 0
    while cursor < len(events) or scrubber.pending():
        if not scrubber.pending():
            # nothing live: skip whole clean passes that end before the next arrival
            nxt = events[cursor][0].cycle
            skip = max(0, (nxt - start) // stride - 1)
            start += skip * stride
            stats.passes += skip
            scrubber.visit_index += skip * memory.frame_count
        visits = scrub_pass(scrubber, start, deliver)
        stats.passes += 1
        stats.pass_durations.append(visits.end - visits.start)
        stats.reconfigurations += int(visits.reconfigured)
        start = max(start + cfg.period, visits.end)
    logger.info("%s scrub: %d events over %d passes (%d frames, %d reconfigurations)", level, len(events),
                stats.passes, memory.frame_count, stats.reconfigurations)
    return stats


def run_two_level(
    arch: FabricArch,
    device_model: Optional[DeviceModel],
    trace: UpsetTrace,
    cfg: Optional[ScrubConfig] = None,
    bitstream: Optional[Bitstream] = None,
) -> ScrubReport:
    """Simulate both scrubbing levels against `trace`; levels not in `cfg.level` are ignored."""
    cfg = cfg or ScrubConfig()
    layout = bit_layout(arch)
    records: List[EventRecord] = []
    stats: Dict[str, LevelStats] = {}
    for level in cfg.levels:
        picked = trace.for_level(level)
        if level == "upper":
            if bitstream is not None:
                memory = ScrubMemory.from_bitstream(bitstream)
            else:
                memory = ScrubMemory([np.zeros(n, dtype=np.uint8) for n in layout.frame_payload_bits],
                                     [np.zeros(n // ecc.WORD_BITS, dtype=np.uint8) for n in layout.frame_payload_bits],
                                     layout.frame_bits)
            essential = device_model.essential_overlay_frames() if device_model is not None else ()
            nbits = layout.nbits
        else:
            if device_model is None:
                raise InputError("lower-level scrubbing needs a device model")
            memory = ScrubMemory.blank(device_model.frame_count, device_model.frame_bits)
            essential = device_model.essential_frames()
            nbits = device_model.nbits
        events: List[Tuple[EventRecord, int]] = []
        for _, e in picked:
            if e.bit_index >= nbits:
                raise InputError(f"{level}-level upset bit {e.bit_index} outside the {nbits}-bit memory")
            if level == "upper":
                frame, offset = layout.locate(e.bit_index)
            else:
                frame, offset = divmod(e.bit_index, device_model.frame_bits)
            rec = EventRecord(e.cycle, level, e.bit_index, frame)
            events.append((rec, offset))
            records.append(rec)
        order = schedule_order(memory.frame_count, cfg.schedule, essential)
        stats[level] = _run_level(level, memory, order, events, cfg)
    skipped = sum(1 for e in trace.events if e.level not in cfg.levels)
    if skipped:
        logger.warning("ignored %d upsets on levels outside %s", skipped, cfg.level)
    records.sort(key=lambda r: (r.cycle, LEVELS.index(r.level), r.bit_index))
    return ScrubReport(cfg, records, stats)
