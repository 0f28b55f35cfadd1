#!/usr/bin/env python3
"""
Kernel dataflow graphs: `.dfg` parsing, the built-in image-processing kernel
generators, and the golden reference evaluator every fabric run is checked
against.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import networkx as nx
import numpy as np

from .errors import InputError, ParseError

logger = logging.getLogger(__name__)

OPS = ("mul", "add", "sub", "subabs", "vote")
ARITY = {"mul": 2, "add": 2, "sub": 2, "subabs": 2, "vote": 3}
CRITICALITY_LEVELS = ("high", "medium", "low")

SOBEL_X = (-1, 0, 1, -2, 0, 2, -1, 0, 1)
SOBEL_Y = (-1, -2, -1, 0, 0, 0, 1, 2, 1)


def wrap(value: int, width: int) -> int:
    return value & ((1 << width) - 1)


def to_signed(value: int, width: int) -> int:
    value = wrap(value, width)
    return value - (1 << width) if value >> (width - 1) else value


def majority(a: int, b: int, c: int) -> int:
    return (a & b) | (a & c) | (b & c)


def apply_op(op: str, args: Sequence[int], width: int) -> int:
    """Reference semantics of one operation on `width`-bit words."""
    if op == "mul":
        return wrap(args[0] * args[1], width)
    if op == "add":
        return wrap(args[0] + args[1], width)
    if op == "sub":
        return wrap(args[0] - args[1], width)
    if op == "subabs":
        # |MIN| stays MIN after wrapping
        return wrap(abs(to_signed(args[0] - args[1], width)), width)
    if op == "vote":
        return majority(args[0], args[1], args[2])
    raise ValueError(f"unknown op {op!r}")


@dataclass(frozen=True)
class Node:
    id: str
    op: str
    operands: Tuple[str, ...]


@dataclass(frozen=True)
class DataflowGraph:
    name: str
    data_width: int
    inputs: Tuple[str, ...]
    nodes: Tuple[Node, ...]
    outputs: Tuple[Tuple[str, str], ...]
    criticality: Tuple[Tuple[str, str], ...] = ()
    constants: Tuple[Tuple[str, int], ...] = ()

    def __post_init__(self) -> None:
        if self.data_width not in (8, 16, 32):
            raise InputError(f"kernel {self.name}: width must be 8, 16 or 32")
        ports = list(self.inputs) + [c for c, _ in self.constants]
        defined = set()
        for p in ports:
            if p in defined:
                raise InputError(f"kernel {self.name}: port {p!r} declared twice")
            defined.add(p)
        for n in self.nodes:
            if n.id in defined:
                raise InputError(f"kernel {self.name}: {n.id!r} defined twice")
            if n.op not in OPS:
                raise InputError(f"kernel {self.name}: unknown op {n.op!r}")
            if len(n.operands) != ARITY[n.op]:
                raise InputError(f"kernel {self.name}: {n.op} {n.id!r} takes {ARITY[n.op]} operands")
            for a in n.operands:
                if a not in defined:
                    raise InputError(f"kernel {self.name}: operand {a!r} of {n.id!r} is not an earlier node or port")
            defined.add(n.id)
        node_ids = {n.id for n in self.nodes}
        for out, src in self.outputs:
            if src not in node_ids:
                raise InputError(f"kernel {self.name}: output {out!r} reads unknown node {src!r}")
        for node, level in self.criticality:
            if node not in node_ids:
                raise InputError(f"kernel {self.name}: criticality for unknown node {node!r}")
            if level not in CRITICALITY_LEVELS:
                raise InputError(f"kernel {self.name}: unknown criticality {level!r}")
        object.__setattr__(self, "constants", tuple((c, wrap(v, self.data_width)) for c, v in self.constants))

    @cached_property
    def node_map(self) -> Dict[str, Node]:
        return {n.id: n for n in self.nodes}

    @property
    def ports(self) -> Tuple[str, ...]:
        return self.inputs + tuple(c for c, _ in self.constants)

    @cached_property
    def graph(self) -> nx.DiGraph:
        g = nx.DiGraph()
        for p in self.ports:
            g.add_node(p, op="port")
        for n in self.nodes:
            g.add_node(n.id, op=n.op)
            for a in n.operands:
                g.add_edge(a, n.id)
        return g

    def criticality_of(self, node: str) -> str:
        return dict(self.criticality).get(node, "high")

    def with_criticality(self, levels: Mapping[str, str]) -> "DataflowGraph":
        merged = dict(self.criticality)
        merged.update(levels)
        return replace(self, criticality=tuple(sorted(merged.items())))

    def op_counts(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for n in self.nodes:
            counts[n.op] = counts.get(n.op, 0) + 1
        return counts

    def consumers(self) -> Dict[str, List[Tuple[str, int]]]:
        """Map each port/node to the (node, operand position) pairs reading it."""
        out: Dict[str, List[Tuple[str, int]]] = {p: [] for p in self.ports}
        for n in self.nodes:
            out.setdefault(n.id, [])
            for pos, a in enumerate(n.operands):
                out[a].append((n.id, pos))
        return out

    def depth(self) -> int:
        level: Dict[str, int] = {p: 0 for p in self.ports}
        for n in self.nodes:
            level[n.id] = 1 + max(level[a] for a in n.operands)
        return max((level[src] for _, src in self.outputs), default=0)


def _topological(name: str, nodes: List[Node], ports: Iterable[str]) -> List[Node]:
    g = nx.DiGraph()
    order = {n.id: i for i, n in enumerate(nodes)}
    for n in nodes:
        g.add_node(n.id)
    port_set = set(ports)
    for n in nodes:
        for a in n.operands:
            if a in order:
                g.add_edge(a, n.id)
            elif a not in port_set:
                raise InputError(f"kernel {name}: undefined operand {a!r} in node {n.id!r}")
    try:
        cycle = nx.find_cycle(g)
    except nx.NetworkXNoCycle:
        cycle = None
    if cycle:
        path = " -> ".join(u for u, _ in cycle)
        raise InputError(f"kernel {name}: cycle through {path}")
    by_id = {n.id: n for n in nodes}
    return [by_id[i] for i in nx.lexicographical_topological_sort(g, key=lambda i: order[i])]


def parse_dfg(text: str, source: Optional[str] = None) -> DataflowGraph:
    """Parse the `.dfg` grammar into a validated DAG."""
    name, width = "kernel", 16
    inputs: List[str] = []
    constants: List[Tuple[str, int]] = []
    nodes: List[Node] = []
    node_lines: Dict[str, int] = {}
    outputs: List[Tuple[str, str]] = []
    levels: Dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        key = parts[0]
        try:
            if key == "kernel" and len(parts) == 2:
                name = parts[1]
            elif key == "width" and len(parts) == 2:
                width = int(parts[1])
            elif key == "input" and len(parts) >= 2:
                inputs.extend(parts[1:])
            elif key == "const" and len(parts) == 3:
                constants.append((parts[1], int(parts[2], 0)))
            elif key == "node" and len(parts) >= 5 and parts[2] == "=":
                nid, op, args = parts[1], parts[3], tuple(parts[4:])
                if op not in OPS:
                    raise ParseError(f"unknown op {op!r}", lineno, source)
                if len(args) != ARITY[op]:
                    raise ParseError(f"arity error: {op} takes {ARITY[op]} operands, got {len(args)}", lineno, source)
                if nid in args:
                    raise ParseError(f"cycle: node {nid!r} reads itself", lineno, source)
                if nid in node_lines:
                    raise ParseError(f"node {nid!r} already defined on line {node_lines[nid]}", lineno, source)
                node_lines[nid] = lineno
                nodes.append(Node(nid, op, args))
            elif key == "output" and len(parts) == 4 and parts[2] == "=":
                outputs.append((parts[1], parts[3]))
            elif key == "criticality" and len(parts) == 3:
                if parts[2] not in CRITICALITY_LEVELS:
                    raise ParseError(f"unknown criticality {parts[2]!r}", lineno, source)
                levels[parts[1]] = parts[2]
            else:
                raise ParseError(f"syntax error: {line!r}", lineno, source)
        except ValueError as e:
            raise ParseError(f"expected integer in {line!r}", lineno, source) from e

    ports = inputs + [c for c, _ in constants]
    try:
        ordered = _topological(name, nodes, ports)
    except InputError as e:
        raise ParseError(str(e), None, source) from e
    for nid, src in outputs:
        if src not in node_lines:
            raise ParseError(f"output {nid!r} reads undefined node {src!r}", None, source)
    logger.debug("parsed %s: %d nodes, %d inputs", name, len(ordered), len(inputs))
    try:
        return DataflowGraph(name, width, tuple(inputs), tuple(ordered), tuple(outputs),
                             tuple(sorted(levels.items())), tuple(constants))
    except ParseError:
        raise
    except InputError as e:
        raise ParseError(str(e), None, source) from e


def to_text(dfg: DataflowGraph) -> str:
    lines = [f"kernel {dfg.name}", f"width {dfg.data_width}"]
    if dfg.inputs:
        lines.append("input " + " ".join(dfg.inputs))
    for c, v in dfg.constants:
        lines.append(f"const {c} {v}")
    for n in dfg.nodes:
        lines.append(f"node {n.id} = {n.op} " + " ".join(n.operands))
    for out, src in dfg.outputs:
        lines.append(f"output {out} = {src}")
    for node, level in dfg.criticality:
        lines.append(f"criticality {node} {level}")
    return "\n".join(lines) + "\n"


# Generators ---------------------------------------------------------------------------------------


def _adder_tree(leaves: List[str], prefix: str, nodes: List[Node]) -> str:
    """Balanced pairwise reduction; an odd leftover moves up a level unchanged."""
    level = list(leaves)
    count = 0
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level) - 1, 2):
            nid = f"{prefix}{count}"
            count += 1
            nodes.append(Node(nid, "add", (level[i], level[i + 1])))
            nxt.append(nid)
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


def gen_conv(n: int, width: int = 16) -> DataflowGraph:
    """n x n 2D convolution: n^2 multipliers feeding a balanced adder tree."""
    if n < 1:
        raise InputError("window side must be >= 1")
    k = n * n
    nodes: List[Node] = []
    products = []
    for i in range(k):
        nodes.append(Node(f"m{i}", "mul", (f"i{i}", f"c{i}")))
        products.append(f"m{i}")
    root = _adder_tree(products, "a", nodes)
    inputs = tuple(f"i{i}" for i in range(k)) + tuple(f"c{i}" for i in range(k))
    return DataflowGraph(f"conv{n}x{n}", width, inputs, tuple(nodes), (("o0", root),))


def gen_sad(n: int, width: int = 16) -> DataflowGraph:
    """Sum of absolute differences over an n x n block."""
    if n < 1:
        raise InputError("window side must be >= 1")
    k = n * n
    nodes: List[Node] = []
    diffs = []
    for i in range(k):
        nodes.append(Node(f"d{i}", "subabs", (f"a{i}", f"b{i}")))
        diffs.append(f"d{i}")
    root = _adder_tree(diffs, "s", nodes)
    inputs = tuple(f"a{i}" for i in range(k)) + tuple(f"b{i}" for i in range(k))
    return DataflowGraph(f"sad{n}x{n}", width, inputs, tuple(nodes), (("o0", root),))


def gen_sobel(width: int = 16) -> DataflowGraph:
    """3x3 Sobel gradient magnitude approximated as |gx| + |gy|."""
    nodes: List[Node] = []
    constants: List[Tuple[str, int]] = []
    roots = []
    for axis, coeffs in (("x", SOBEL_X), ("y", SOBEL_Y)):
        products = []
        for i, coeff in enumerate(coeffs):
            constants.append((f"k{axis}{i}", coeff))
            nodes.append(Node(f"m{axis}{i}", "mul", (f"p{i}", f"k{axis}{i}")))
            products.append(f"m{axis}{i}")
        roots.append(_adder_tree(products, f"a{axis}", nodes))
    constants.append(("zero", 0))
    nodes.append(Node("gx", "subabs", (roots[0], "zero")))
    nodes.append(Node("gy", "subabs", (roots[1], "zero")))
    nodes.append(Node("mag", "add", ("gx", "gy")))
    inputs = tuple(f"p{i}" for i in range(9))
    return DataflowGraph("sobel", width, inputs, tuple(nodes), (("o0", "mag"),), (), tuple(constants))


BUILTIN_KERNELS = {
    "conv2x2": lambda: gen_conv(2),
    "conv3x3": lambda: gen_conv(3),
    "sad2x2": lambda: gen_sad(2),
    "sobel": gen_sobel,
}


def merge_kernels(kernels: Sequence[DataflowGraph], name: Optional[str] = None) -> DataflowGraph:
    """Union of several kernels with every identifier prefixed by its kernel name."""
    if len(kernels) == 1:
        return kernels[0]
    widths = {k.data_width for k in kernels}
    if len(widths) != 1:
        raise InputError("merged kernels must share one data width")
    inputs: List[str] = []
    constants: List[Tuple[str, int]] = []
    nodes: List[Node] = []
    outputs: List[Tuple[str, str]] = []
    levels: List[Tuple[str, str]] = []
    for k in kernels:
        p = f"{k.name}."
        inputs.extend(p + i for i in k.inputs)
        constants.extend((p + c, v) for c, v in k.constants)
        nodes.extend(Node(p + n.id, n.op, tuple(p + a for a in n.operands)) for n in k.nodes)
        outputs.extend((p + o, p + s) for o, s in k.outputs)
        levels.extend((p + n, lv) for n, lv in k.criticality)
    return DataflowGraph(name or "+".join(k.name for k in kernels), widths.pop(), tuple(inputs),
                         tuple(nodes), tuple(outputs), tuple(levels), tuple(constants))


# Reference evaluation -----------------------------------------------------------------------------


def eval_dfg(dfg: DataflowGraph, inputs: Sequence[int]) -> Tuple[int, ...]:
    """Golden output words for one input vector (constants are implied)."""
    if len(inputs) != len(dfg.inputs):
        raise InputError(f"kernel {dfg.name} takes {len(dfg.inputs)} inputs, got {len(inputs)}")
    w = dfg.data_width
    values: Dict[str, int] = {p: wrap(int(v), w) for p, v in zip(dfg.inputs, inputs)}
    values.update(dfg.constants)
    for n in dfg.nodes:
        values[n.id] = apply_op(n.op, [values[a] for a in n.operands], w)
    return tuple(values[src] for _, src in dfg.outputs)


def random_vectors(dfg: DataflowGraph, count: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return rng.integers(0, 1 << dfg.data_width, size=(count, len(dfg.inputs)), dtype=np.uint64)
