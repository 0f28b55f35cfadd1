#!/usr/bin/env python3
"""
Placement, routing and bitstream generation.

- Simulated-annealing placement on half-perimeter wirelength, with a penalty
  for naive-TMR replicas closer than the separation distance, followed by a
  greedy legalisation pass.
- PathFinder negotiated-congestion routing over (segment, track) nodes; a
  disjoint switch box keeps every net on a single track.
- Configuration assembly (opcodes, CB selects, SB switches) and SECDED
  bitstream encoding.
"""
from __future__ import annotations

import heapq
import logging
import math
import random
import time
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

import networkx as nx
import numpy as np

from .arch import (
    CHECKER_CLASS,
    OPCODES,
    REPLICAS,
    SB_PAIRS,
    Bitstream,
    Coord,
    FabricArch,
    FabricConfig,
    IoBinding,
    bit_layout,
    decode_bitstream,
    encode_config,
    geometry,
)
from .errors import InfeasibleError, InputError, InvariantError, UnroutableError
from .harden import HardenedDesign, compatible_kinds

logger = logging.getLogger(__name__)


def chebyshev(a: Coord, b: Coord) -> int:
    return max(abs(a[0] - b[0]), abs(a[1] - b[1]))


# Placement ----------------------------------------------------------------------------------------


@dataclass(frozen=True)
class PlacerConfig:
    # moves per temperature = inner_num * placed cells
    inner_num: float = 100.0
    cooling: float = 0.95
    # random swaps used to estimate the initial temperature
    init_moves: int = 20
    exit_acceptance: float = 0.01
    max_temperatures: int = 400
    # cost of one missing unit of replica distance, in wirelength units
    separation_weight: float = 8.0


@dataclass(frozen=True)
class Placement:
    design: HardenedDesign = field(compare=False, repr=False)
    assignment: Tuple[Tuple[str, Coord], ...]
    # cells left unused (excluded cells are not spares)
    spares: Tuple[Coord, ...] = ()
    excluded: Tuple[Coord, ...] = ()
    separation: int = 0
    moves: int = field(default=0, compare=False)

    @cached_property
    def nodes(self) -> Dict[str, Coord]:
        return dict(self.assignment)

    @cached_property
    def occupant(self) -> Dict[Coord, str]:
        return {coord: node for node, coord in self.assignment}

    def used_cells(self) -> Tuple[Coord, ...]:
        return tuple(sorted(self.occupant))


def check_separation(placement: Placement, d_min: Optional[int] = None) -> List[Tuple[str, str, int]]:
    """Replica pairs of one triple closer than `d_min` (Chebyshev distance)."""
    d = placement.separation if d_min is None else d_min
    pos = placement.nodes
    out = []
    for _, members, _ in placement.design.triples:
        for i in range(3):
            for j in range(i + 1, 3):
                dist = chebyshev(pos[members[i]], pos[members[j]])
                if dist < d:
                    out.append((members[i], members[j], dist))
    return out


def _placement_nets(design: HardenedDesign, arch: FabricArch) -> List[Tuple[Tuple[Coord, ...], Tuple[str, ...]]]:
    """Per net: (fixed pad positions, placed nodes on the net)."""
    dfg = design.dfg
    geo = geometry(arch)
    io = IoBinding.for_kernel(dfg)
    fixed: Dict[str, List[Coord]] = {}
    members: Dict[str, List[str]] = {}
    for port, pad in zip(io.ports, io.input_pads(geo)):
        fixed[port] = [(pad.row, pad.col)]
        members[port] = []
    for n in dfg.nodes:
        fixed[n.id] = []
        members[n.id] = [n.id]
    for n in dfg.nodes:
        for a in n.operands:
            members[a].append(n.id)
    for (_, src), pad in zip(dfg.outputs, io.output_pads(geo)):
        fixed[src].append((pad.row, pad.col))
    nets = []
    for name, nodes in members.items():
        unique = tuple(dict.fromkeys(nodes))
        if len(fixed[name]) + len(unique) >= 2:
            nets.append((tuple(fixed[name]), unique))
    return nets


def _hpwl(fixed: Sequence[Coord], nodes: Sequence[str], pos: Dict[str, Coord]) -> int:
    rows = [p[0] for p in fixed] + [pos[n][0] for n in nodes]
    cols = [p[1] for p in fixed] + [pos[n][1] for n in nodes]
    return max(rows) - min(rows) + max(cols) - min(cols)


def placement_wirelength(placement: Placement, arch: FabricArch) -> int:
    return sum(_hpwl(f, m, placement.nodes) for f, m in _placement_nets(placement.design, arch))


class _Annealer:
    def __init__(
        self,
        design: HardenedDesign,
        arch: FabricArch,
        cands: Dict[str, List[Coord]],
        pos: Dict[str, Coord],
        d_min: int,
        config: PlacerConfig,
        rng: random.Random,
    ) -> None:
        self.cands = cands
        self.cand_sets = {n: set(c) for n, c in cands.items()}
        self.pos = pos
        self.occupant = {c: n for n, c in pos.items()}
        self.d_min = d_min
        self.config = config
        self.rng = rng
        self.weight = config.separation_weight
        self.nets = _placement_nets(design, arch)
        self.nets_of: Dict[str, List[int]] = {n: [] for n in pos}
        for i, (_, nodes) in enumerate(self.nets):
            for n in nodes:
                self.nets_of[n].append(i)
        self.triples = [members for _, members, _ in design.triples]
        self.triple_of = {m: i for i, members in enumerate(self.triples) for m in members}
        self.net_cost = [self._net_hpwl(i) for i in range(len(self.nets))]
        self.tri_cost = [self._tri_penalty(i) for i in range(len(self.triples))]
        self.moves = 0

    def _net_hpwl(self, i: int) -> int:
        fixed, nodes = self.nets[i]
        return _hpwl(fixed, nodes, self.pos)

    def _tri_penalty(self, i: int) -> int:
        m = self.triples[i]
        pairs = ((m[0], m[1]), (m[0], m[2]), (m[1], m[2]))
        return sum(max(0, self.d_min - chebyshev(self.pos[a], self.pos[b])) for a, b in pairs)

    def violation(self) -> int:
        return sum(self.tri_cost)

    def total(self) -> float:
        return sum(self.net_cost) + self.weight * self.violation()

    def _relocate(self, node: str, other: Optional[str], src: Coord, dst: Coord) -> None:
        self.pos[node] = dst
        self.occupant[dst] = node
        if other is None:
            del self.occupant[src]
        else:
            self.pos[other] = src
            self.occupant[src] = other

    def try_move(self, node: str, cell: Coord):
        """Move `node` to `cell`, swapping with its occupant; return (delta, undo) or None."""
        src = self.pos[node]
        if cell == src:
            return None
        other = self.occupant.get(cell)
        if other is not None and src not in self.cand_sets[other]:
            return None
        touched = [node] if other is None else [node, other]
        nets = sorted({i for t in touched for i in self.nets_of[t]})
        tris = sorted({self.triple_of[t] for t in touched if t in self.triple_of})
        old_nets = [self.net_cost[i] for i in nets]
        old_tris = [self.tri_cost[i] for i in tris]
        self._relocate(node, other, src, cell)
        for i in nets:
            self.net_cost[i] = self._net_hpwl(i)
        for i in tris:
            self.tri_cost[i] = self._tri_penalty(i)
        delta = (sum(self.net_cost[i] for i in nets) - sum(old_nets)
                 + self.weight * (sum(self.tri_cost[i] for i in tris) - sum(old_tris)))

        def undo() -> None:
            self._relocate(node, other, cell, src)
            for i, v in zip(nets, old_nets):
                self.net_cost[i] = v
            for i, v in zip(tris, old_tris):
                self.tri_cost[i] = v

        return delta, undo

    def _restore(self, pos: Dict[str, Coord]) -> None:
        self.pos.clear()
        self.pos.update(pos)
        self.occupant = {c: n for n, c in pos.items()}
        self.net_cost = [self._net_hpwl(i) for i in range(len(self.nets))]
        self.tri_cost = [self._tri_penalty(i) for i in range(len(self.triples))]

    def anneal(self) -> None:
        movable = sorted(n for n in self.pos if len(self.cands[n]) > 1)
        if not movable:
            return
        cfg = self.config

        def random_move():
            self.moves += 1
            node = self.rng.choice(movable)
            return self.try_move(node, self.rng.choice(self.cands[node]))

        samples = []
        for _ in range(cfg.init_moves):
            random_move()
            samples.append(self.total())
        t = float(np.std(samples)) if samples else 0.0
        if t <= 0:
            t = 1.0
        inner = max(1, int(cfg.inner_num * len(self.pos)))
        best = (self.violation(), self.total(), dict(self.pos))
        steps = 0
        for steps in range(1, cfg.max_temperatures + 1):
            accepted = 0
            for _ in range(inner):
                res = random_move()
                if res is None:
                    continue
                delta, undo = res
                if delta <= 0 or self.rng.random() < math.exp(-delta / t):
                    accepted += 1
                else:
                    undo()
            if (self.violation(), self.total()) < best[:2]:
                best = (self.violation(), self.total(), dict(self.pos))
            rate = accepted / inner
            logger.debug("anneal T=%.3f cost=%.1f acceptance=%.3f", t, self.total(), rate)
            t *= cfg.cooling
            if rate < cfg.exit_acceptance:
                break
        self._restore(best[2])
        logger.info("annealing: %d temperatures, %d moves, cost %.1f, separation deficit %d",
                    steps, self.moves, self.total(), self.violation())

    def legalize(self) -> None:
        """Greedy moves/swaps until no replica pair is too close or nothing improves."""
        while self.violation() > 0:
            current = (self.violation(), self.total())
            best = None
            for node in self._violating_nodes():
                for cell in self.cands[node]:
                    res = self.try_move(node, cell)
                    if res is None:
                        continue
                    key = (self.violation(), self.total(), node, cell)
                    res[1]()
                    if key[:2] < current and (best is None or key < best):
                        best = key
            if best is None:
                return
            self.try_move(best[2], best[3])
            logger.debug("legalize: moved %s to %s, deficit now %d", best[2], best[3], self.violation())

    def _violating_nodes(self) -> List[str]:
        out: Set[str] = set()
        for i, members in enumerate(self.triples):
            if not self.tri_cost[i]:
                continue
            for a in members:
                for b in members:
                    if a < b and chebyshev(self.pos[a], self.pos[b]) < self.d_min:
                        out.update((a, b))
        return sorted(out)


def place(
    design: HardenedDesign,
    arch: FabricArch,
    seed: int = 0,
    excluded: Iterable[Coord] = (),
    config: Optional[PlacerConfig] = None,
    separation: Optional[int] = None,
) -> Placement:
    """Place every node of `design` on a compatible, non-excluded cell of `arch`."""
    config = config or PlacerConfig()
    d_min = arch.separation if separation is None else separation
    if design.dfg.data_width != arch.data_width:
        raise InputError(f"{design.dfg.name} is {design.dfg.data_width}-bit, {arch.name} is {arch.data_width}-bit")
    excluded = tuple(sorted(set(excluded)))
    for coord in excluded:
        if arch.cell_at(coord) is None:
            raise InputError(f"excluded position {coord} holds no FU in {arch.name}")
    missing = design.requirements().shortfalls(arch.inventory(excluded))
    if missing:
        raise InfeasibleError(f"{design.dfg.name} does not fit {arch.name}: missing {', '.join(missing)}")
    if design.triples and d_min > max(arch.rows, arch.cols) - 1:
        raise InfeasibleError(
            f"replica separation {d_min} exceeds the diameter of the {arch.rows}x{arch.cols} grid")

    skip = set(excluded)
    free = [c for c in arch.cells if c.coord not in skip]
    cands: Dict[str, List[Coord]] = {}
    for n in design.dfg.nodes:
        kinds = compatible_kinds(n.op)
        variant = design.variant_of(n.id)
        cands[n.id] = sorted(c.coord for c in free if c.kind in kinds and c.variant == variant)
    index = {n.id: i for i, n in enumerate(design.dfg.nodes)}
    pos: Dict[str, Coord] = {}
    taken: Set[Coord] = set()
    for node in sorted(cands, key=lambda n: (len(cands[n]), index[n])):
        cell = next((c for c in cands[node] if c not in taken), None)
        if cell is None:
            raise InfeasibleError(f"no free cell left for node {node!r}")
        pos[node] = cell
        taken.add(cell)

    started = time.perf_counter()
    annealer = _Annealer(design, arch, cands, pos, d_min, config, random.Random(seed))
    annealer.anneal()
    annealer.legalize()
    if annealer.violation():
        raise InfeasibleError(
            f"replica separation {d_min} not satisfiable on {arch.name}: deficit {annealer.violation()} remains")
    assignment = tuple((n.id, annealer.pos[n.id]) for n in design.dfg.nodes)
    used = set(annealer.pos.values())
    spares = tuple(sorted(c.coord for c in free if c.coord not in used))
    logger.info("placed %s on %s: hpwl=%d, %d spare cells (%.2fs)", design.dfg.name, arch.name,
                sum(annealer.net_cost), len(spares), time.perf_counter() - started)
    return Placement(design, assignment, spares, excluded, d_min, annealer.moves)


# Routing ------------------------------------------------------------------------------------------


@dataclass(frozen=True)
class RouterConfig:
    max_iterations: int = 50
    initial_pres_fac: float = 0.5
    pres_fac_mult: float = 1.5
    hist_fac: float = 1.0
    base_cost: float = 1.0


@dataclass(frozen=True)
class NetSink:
    segment: int
    coord: Optional[Coord] = None
    pin: Optional[int] = None
    pad: Optional[int] = None
    # fixed for output pads
    track: Optional[int] = None

    @property
    def label(self) -> str:
        if self.pad is not None:
            return f"pad.out{self.pad}"
        return f"fu({self.coord[0]},{self.coord[1]}).in{self.pin}"


@dataclass(frozen=True)
class Net:
    name: str
    segment: int
    sinks: Tuple[NetSink, ...]
    cell: Optional[Coord] = None
    pad: Optional[int] = None
    track: Optional[int] = None

    @property
    def label(self) -> str:
        if self.pad is not None:
            return f"pad.in{self.pad}"
        return f"fu({self.cell[0]},{self.cell[1]}).out"


def build_netlist(placement: Placement, arch: FabricArch) -> Tuple[Net, ...]:
    """One net per port and per node, ports first in pad order."""
    dfg = placement.design.dfg
    geo = geometry(arch)
    io = IoBinding.for_kernel(dfg)
    pos = placement.nodes
    readers = dfg.consumers()
    out_pads = io.output_pads(geo)
    outputs_of: Dict[str, List[int]] = {}
    for j, (_, src) in enumerate(dfg.outputs):
        outputs_of.setdefault(src, []).append(j)

    def pin_sinks(name: str) -> List[NetSink]:
        return [NetSink(geo.in_segment(pos[n]), pos[n], p) for n, p in readers[name]]

    nets: List[Net] = []
    for k, (port, pad) in enumerate(zip(io.ports, io.input_pads(geo))):
        nets.append(Net(port, pad.segment, tuple(pin_sinks(port)), None, k, pad.track))
    for n in dfg.nodes:
        sinks = pin_sinks(n.id)
        for j in outputs_of.get(n.id, []):
            sinks.append(NetSink(out_pads[j].segment, pad=j, track=out_pads[j].track))
        pinned = {s.track for s in sinks if s.track is not None}
        if len(pinned) > 1:
            raise UnroutableError(f"node {n.id!r} drives output pads on different tracks {sorted(pinned)}")
        nets.append(Net(n.id, geo.out_segment(pos[n.id]), tuple(sinks), pos[n.id], None,
                        pinned.pop() if pinned else None))
    return tuple(nets)


@dataclass(frozen=True)
class RoutedNet:
    name: str
    track: int
    # source segment first, then in the order the tree grew
    segments: Tuple[int, ...]
    switches: Tuple[Tuple[Coord, int], ...]
    # readable resource-graph edges: source pin -> segments -> sink pins
    edges: Tuple[Tuple[str, str], ...] = field(default=(), compare=False)


@dataclass(frozen=True)
class Routing:
    nets: Tuple[RoutedNet, ...] = ()
    iterations: int = 0
    expansions: int = field(default=0, compare=False)

    @cached_property
    def net_map(self) -> Dict[str, RoutedNet]:
        return {n.name: n for n in self.nets}

    def track_of(self, name: str) -> int:
        return self.net_map[name].track

    @property
    def segment_count(self) -> int:
        return sum(len(n.segments) for n in self.nets)

    @property
    def switch_count(self) -> int:
        return sum(len(n.switches) for n in self.nets)

    def switch_sets(self, channel_width: int) -> Dict[int, Tuple[Tuple[Coord, int], ...]]:
        out: Dict[int, List[Tuple[Coord, int]]] = {t: [] for t in range(channel_width)}
        for n in self.nets:
            out[n.track].extend(n.switches)
        return {t: tuple(sorted(s)) for t, s in out.items()}


class _Tree:
    def __init__(self, track: int, source: int) -> None:
        self.track = track
        self.segments = [source]
        self.seen = {source}
        self.switches: List[Tuple[Coord, int]] = []
        self.hops: List[Tuple[int, int]] = []

    def add_path(self, path: List[Tuple[int, Optional[Coord], Optional[int]]]) -> None:
        prev = None
        for seg, coord, pair in path:
            if seg not in self.seen:
                self.seen.add(seg)
                self.segments.append(seg)
                self.switches.append((coord, pair))
                self.hops.append((prev, seg))
            prev = seg

    def nodes(self, width: int) -> List[int]:
        return [s * width + self.track for s in self.segments]


class _Router:
    def __init__(self, arch: FabricArch, config: RouterConfig) -> None:
        self.geo = geometry(arch)
        self.width = arch.channel_width
        self.config = config
        size = self.geo.n_segments * self.width
        self.occ = [0] * size
        self.hist = [0.0] * size
        self.xy = [self.geo.segment_xy(s) for s in range(self.geo.n_segments)]
        self.pres = config.initial_pres_fac
        self.expansions = 0

    def cost(self, node: int) -> float:
        return (self.config.base_cost + self.hist[node]) * (1.0 + self.pres * self.occ[node])

    def _distance(self, a: int, b: int) -> int:
        (xa, ya), (xb, yb) = self.xy[a], self.xy[b]
        return abs(xa - xb) + abs(ya - yb)

    def _search(self, starts: Sequence[int], target: int) -> Tuple[int, List[Tuple[int, Optional[Coord], Optional[int]]]]:
        """A* from any start node to `target` on the start's track; returns (track, [(segment, switch, pair)])."""
        w = self.width
        scale = self.config.base_cost / 2.0
        best: Dict[int, float] = {}
        prev: Dict[int, Optional[Tuple[int, Coord, int]]] = {}
        heap: List[Tuple[float, float, int]] = []
        for s in starts:
            best[s] = 0.0
            prev[s] = None
            heapq.heappush(heap, (self._distance(s // w, target) * scale, 0.0, s))
        while heap:
            _, g, node = heapq.heappop(heap)
            if g > best[node]:
                continue
            seg, track = divmod(node, w)
            if seg == target:
                steps = []
                while prev[node] is not None:
                    parent, coord, pair = prev[node]
                    steps.append((node // w, coord, pair))
                    node = parent
                steps.append((node // w, None, None))
                return track, steps[::-1]
            self.expansions += 1
            for seg2, coord, pair in self.geo.neighbors[seg]:
                nxt = seg2 * w + track
                ng = g + self.cost(nxt)
                if ng < best.get(nxt, math.inf):
                    best[nxt] = ng
                    prev[nxt] = (node, coord, pair)
                    heapq.heappush(heap, (ng + self._distance(seg2, target) * scale, ng, nxt))
        raise UnroutableError(f"segment {self.geo.segment_name(target)} is unreachable")

    def _grow(self, net: Net, sinks: Sequence[NetSink], track: int, bound: float) -> Tuple[float, Optional[_Tree]]:
        """Steiner-ish tree on one track; gives up (None) once its cost reaches `bound`."""
        w = self.width
        tree = _Tree(track, net.segment)
        total = self.cost(net.segment * w + track)
        for sink in sinks:
            if total >= bound:
                return total, None
            if sink.segment in tree.seen:
                continue
            added = len(tree.segments)
            tree.add_path(self._search(tree.nodes(w), sink.segment)[1])
            total += sum(self.cost(s * w + track) for s in tree.segments[added:])
        return (total, tree) if total < bound else (total, None)

    def route_net(self, net: Net) -> _Tree:
        """Cheapest whole tree over the candidate tracks; ties go to the lower track."""
        tracks = [net.track] if net.track is not None else list(range(self.width))
        sinks = sorted(net.sinks, key=lambda s: (self._distance(net.segment, s.segment), s.segment, s.pin or 0))
        best_cost, best = math.inf, None
        for track in tracks:
            total, tree = self._grow(net, sinks, track, best_cost)
            if tree is not None:
                best_cost, best = total, tree
        return best

    def claim(self, tree: _Tree, sign: int = 1) -> None:
        for node in tree.nodes(self.width):
            self.occ[node] += sign

    def overused(self) -> List[int]:
        return [i for i, o in enumerate(self.occ) if o > 1]

    def update_history(self, overused: Iterable[int]) -> None:
        for i in overused:
            self.hist[i] += self.config.hist_fac * (self.occ[i] - 1)


def _routed(net: Net, tree: _Tree, geo, width: int) -> RoutedNet:
    def name(seg: int) -> str:
        return f"{geo.segment_name(seg)}.t{tree.track}"

    edges = [(net.label, name(tree.segments[0]))]
    edges.extend((name(a), name(b)) for a, b in tree.hops)
    edges.extend((name(s.segment), s.label) for s in net.sinks)
    return RoutedNet(net.name, tree.track, tuple(tree.segments), tuple(tree.switches), tuple(edges))


def route(
    placement: Placement,
    arch: FabricArch,
    seed: int = 0,
    config: Optional[RouterConfig] = None,
    netlist: Optional[Sequence[Net]] = None,
) -> Routing:
    """PathFinder: rip up and reroute congested nets with growing present and history costs."""
    config = config or RouterConfig()
    nets = list(netlist) if netlist is not None else list(build_netlist(placement, arch))
    if not nets:
        return Routing()
    router = _Router(arch, config)
    rng = random.Random(seed)
    trees: Dict[str, _Tree] = {}
    order = list(nets)
    overused: List[int] = []
    started = time.perf_counter()
    for iteration in range(1, config.max_iterations + 1):
        if iteration == 1:
            batch = order
        else:
            rng.shuffle(order)
            hot = set(overused)
            batch = [n for n in order if any(x in hot for x in trees[n.name].nodes(router.width))]
        for net in batch:
            old = trees.get(net.name)
            if old is not None:
                router.claim(old, -1)
            tree = router.route_net(net)
            router.claim(tree)
            trees[net.name] = tree
        overused = router.overused()
        logger.info("route iteration %d: pres_fac=%.2f rerouted=%d overused=%d",
                    iteration, router.pres, len(batch), len(overused))
        if not overused:
            logger.info("routed %d nets in %d iterations (%.2fs)", len(nets), iteration,
                        time.perf_counter() - started)
            return Routing(tuple(_routed(n, trees[n.name], router.geo, router.width) for n in nets),
                           iteration, router.expansions)
        router.update_history(overused)
        router.pres *= config.pres_fac_mult
    logger.warning("routing stalled with %d overused nodes", len(overused))
    raise UnroutableError(
        f"{len(overused)} routing nodes still shared after {config.max_iterations} iterations; "
        f"channel_width {arch.channel_width} is too small")


def check_routing(routing: Routing, netlist: Sequence[Net], arch: FabricArch) -> List[str]:
    """Independent legality check; returns a list of problems (empty when legal)."""
    geo = geometry(arch)
    problems: List[str] = []
    owner: Dict[Tuple[int, int], str] = {}
    for net in netlist:
        routed = routing.net_map.get(net.name)
        if routed is None:
            problems.append(f"net {net.name} is not routed")
            continue
        if net.track is not None and routed.track != net.track:
            problems.append(f"net {net.name} must use track {net.track}, uses {routed.track}")
        for seg in routed.segments:
            key = (seg, routed.track)
            if key in owner:
                problems.append(f"{geo.segment_name(seg)} track {routed.track} shared by {owner[key]} and {net.name}")
            owner[key] = net.name
        if not routed.segments or routed.segments[0] != net.segment:
            problems.append(f"net {net.name} does not start at its source segment")
        g = nx.Graph()
        g.add_nodes_from(routed.segments)
        for (r, c), pair in routed.switches:
            sides = geo.sb_sides(r, c)
            a, b = (sides[s] for s in SB_PAIRS[pair])
            if a not in g or b not in g:
                problems.append(f"net {net.name} uses SB({r},{c}) pair {pair} off its segments")
                continue
            g.add_edge(a, b)
        if g.number_of_nodes() and not nx.is_tree(g):
            problems.append(f"net {net.name} is not a tree")
        reached = set(routed.segments)
        for sink in net.sinks:
            if sink.segment not in reached:
                problems.append(f"net {net.name} misses sink {sink.label}")
    return problems


# Configuration and bitstream ----------------------------------------------------------------------


def config_from_design(placement: Placement, routing: Routing, arch: FabricArch) -> FabricConfig:
    node_map = placement.design.dfg.node_map
    values: Dict[tuple, int] = {}
    for node, (r, c) in placement.assignment:
        n = node_map[node]
        cell = arch.cell_at((r, c))
        if cell is None:
            raise InputError(f"node {node!r} placed on empty position {(r, c)}")
        opcode = OPCODES[n.op]
        if cell.variant in ("tmr_fu", "dwc_fu"):
            for k in range(REPLICAS[cell.variant]):
                values[("op", r, c, k)] = opcode
        else:
            values[("op", r, c, 0)] = opcode
            if cell.variant == "edc_fu":
                values[("chk", r, c)] = CHECKER_CLASS[n.op]
        if arch.select_bits:
            for pin, a in enumerate(n.operands):
                values[("in", r, c, pin)] = routing.track_of(a)
            values[("out", r, c)] = routing.track_of(node)
    for net in routing.nets:
        for (r, c), pair in net.switches:
            values[("sb", r, c, net.track, pair)] = 1
    return FabricConfig.from_mapping(values)


def generate_bitstream(placement: Placement, routing: Routing, arch: FabricArch) -> Bitstream:
    return encode_config(bit_layout(arch), config_from_design(placement, routing, arch))


def configured_routes(arch: FabricArch, config: FabricConfig) -> Dict[int, Tuple[Tuple[Coord, int], ...]]:
    """ON switches per track, recovered from a (decoded) configuration."""
    out: Dict[int, List[Tuple[Coord, int]]] = {t: [] for t in range(arch.channel_width)}
    for key, value in config.values:
        if key[0] == "sb" and value:
            _, r, c, track, pair = key
            out[track].append(((r, c), pair))
    return {t: tuple(sorted(s)) for t, s in out.items()}


# Compile flow -------------------------------------------------------------------------------------


@dataclass(frozen=True)
class CompiledDesign:
    design: HardenedDesign
    arch: FabricArch
    placement: Placement
    routing: Routing
    bitstream: Bitstream
    seed: int = 0

    @property
    def io(self) -> IoBinding:
        return IoBinding.for_kernel(self.design.dfg)

    @property
    def work_units(self) -> int:
        return self.placement.moves + self.routing.expansions

    def report(self) -> Dict[str, object]:
        design, arch, placement = self.design, self.arch, self.placement
        layout = bit_layout(arch)
        violations = check_separation(placement)
        node_map = design.dfg.node_map
        return {
            "kernel": design.kernel.name,
            "mode": design.mode,
            "fabric": arch.name,
            "grid": [arch.rows, arch.cols],
            "channel_width": arch.channel_width,
            "seed": self.seed,
            "nodes": len(design.dfg.nodes),
            "voters": sum(1 for n in design.dfg.nodes if n.op == "vote"),
            "cells_used": len(placement.assignment),
            "spares": [list(c) for c in placement.spares],
            "excluded": [list(c) for c in placement.excluded],
            "placement": [
                {"node": node, "op": node_map[node].op, "variant": design.variant_of(node), "row": r, "col": c}
                for node, (r, c) in placement.assignment
            ],
            "wirelength_hpwl": placement_wirelength(placement, arch),
            "routing": {
                "iterations": self.routing.iterations,
                "nets": len(self.routing.nets),
                "segments": self.routing.segment_count,
                "switches": self.routing.switch_count,
            },
            "config_bits": {
                "total": layout.nbits,
                "frames": len(layout.frame_bits),
                "by_kind": layout.breakdown(),
                "set": int(self.bitstream.flat_payload().sum()),
            },
            "separation": {
                "d_min": placement.separation,
                "triples": len(design.triples),
                "violations": [list(v) for v in violations],
                "ok": not violations,
            },
            "work": {"placer_moves": placement.moves, "router_expansions": self.routing.expansions},
        }


def compile_design(
    design: HardenedDesign,
    arch: FabricArch,
    seed: int = 0,
    placer: Optional[PlacerConfig] = None,
    router: Optional[RouterConfig] = None,
    excluded: Iterable[Coord] = (),
    separation: Optional[int] = None,
) -> CompiledDesign:
    """place -> route -> bitstream, with routing legality and decode round trip checked."""
    placement = place(design, arch, seed, excluded, placer, separation)
    netlist = build_netlist(placement, arch)
    routing = route(placement, arch, seed, router, netlist)
    problems = check_routing(routing, netlist, arch)
    if problems:
        raise InvariantError("illegal routing: " + "; ".join(problems[:5]))
    config = config_from_design(placement, routing, arch)
    layout = bit_layout(arch)
    bits = encode_config(layout, config)
    if decode_bitstream(layout, bits) != config:
        raise InvariantError("bitstream does not decode to the configuration it was built from")
    return CompiledDesign(design, arch, placement, routing, bits, seed)
