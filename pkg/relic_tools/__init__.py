"""Reliability-aware FPGA overlay toolchain."""

__version__ = "0.1.0"
