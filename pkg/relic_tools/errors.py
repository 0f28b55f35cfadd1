from __future__ import annotations

from typing import Optional


class RelicError(RuntimeError):
    """Base class for toolchain failures; `exit_code` is what the CLI returns."""

    exit_code = 4


class InputError(RelicError):
    exit_code = 1


class ParseError(InputError):
    def __init__(self, message: str, line: Optional[int] = None, source: Optional[str] = None) -> None:
        self.line = line
        self.source = source
        where = ""
        if source:
            where = f"{source}:"
        if line is not None:
            where = f"{where}{line}:"
        super().__init__(f"{where} {message}" if where else message)


class BitstreamFormatError(InputError):
    pass


class InfeasibleError(RelicError):
    exit_code = 2


class UnroutableError(RelicError):
    exit_code = 3


class InvariantError(RelicError):
    exit_code = 4


class SimulationRefused(RelicError):
    """The configured fabric has no defined behaviour (two drivers on one wire)."""

    exit_code = 4
