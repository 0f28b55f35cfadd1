from __future__ import annotations

import functools
import os

import pytest

from relic_tools.arch import FabricArch, parse_fabric
from relic_tools.dfg import BUILTIN_KERNELS, DataflowGraph, parse_dfg
from relic_tools.harden import assign_hardening, minimal_fabric, size_requirements
from relic_tools.pnr import CompiledDesign, PlacerConfig, compile_design

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
KERNELS = os.path.join(ROOT, "kernels")
FABRICS = os.path.join(ROOT, "fabrics")

# short annealing schedule; the test designs are small
FAST = PlacerConfig(inner_num=10.0)


def read_kernel(name: str) -> DataflowGraph:
    path = os.path.join(KERNELS, f"{name}.dfg")
    with open(path, "r", encoding="utf-8") as f:
        return parse_dfg(f.read(), source=path)


def read_fabric(name: str) -> FabricArch:
    path = os.path.join(FABRICS, f"{name}.fab")
    with open(path, "r", encoding="utf-8") as f:
        return parse_fabric(f.read(), source=path)


@pytest.fixture(scope="session")
def conv2x2() -> DataflowGraph:
    return read_kernel("conv2x2")


@pytest.fixture(scope="session")
def sad2x2() -> DataflowGraph:
    return read_kernel("sad2x2")


@pytest.fixture(scope="session")
def tmrfu_4x4() -> FabricArch:
    return read_fabric("tmrfu_4x4")


@pytest.fixture(scope="session")
def plain_4x4() -> FabricArch:
    return read_fabric("plain_4x4")


@pytest.fixture(scope="session")
def conv_tmr(conv2x2, tmrfu_4x4) -> CompiledDesign:
    """conv2x2 mapped onto TMR functional units (7 of 16 cells used)."""
    return compile_design(assign_hardening(conv2x2, "tmr_fu"), tmrfu_4x4, seed=0, placer=FAST)


@pytest.fixture(scope="session")
def conv_plain(conv2x2, plain_4x4) -> CompiledDesign:
    return compile_design(assign_hardening(conv2x2, "none"), plain_4x4, seed=0, placer=FAST)


HARDENED_MODES = ("none", "naive_tmr", "tmr_fu", "dwc_fu", "edc_fu")


@functools.lru_cache(maxsize=None)
def compile_on_minimal(kernel: str, mode: str) -> CompiledDesign:
    """Built-in kernel compiled onto the smallest fabric sized for it."""
    dfg = BUILTIN_KERNELS[kernel]()
    arch = minimal_fabric(size_requirements([dfg], mode), name=f"{kernel}_{mode}_min")
    return compile_design(assign_hardening(dfg, mode), arch, seed=0, placer=FAST)
