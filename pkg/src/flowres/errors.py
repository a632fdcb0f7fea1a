"""Exception hierarchy shared by every flowres module."""

from typing import Optional


class FlowresError(Exception):
    """Base error. Optionally located at a file path and 1-based line."""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        super().__init__(message)
        self.message = message
        self.path = path
        self.line = line

    def at(self, path: str, line: Optional[int] = None) -> 'FlowresError':
        """Attach a file location and return self, for re-raising."""
        self.path = str(path)
        self.line = line
        return self

    def __str__(self) -> str:
        if self.path is None:
            return self.message
        if self.line is None:
            return f"{self.path}: {self.message}"
        return f"{self.path}:{self.line}: {self.message}"


# graph store
class DanglingParent(FlowresError):
    pass


class LevelCycle(FlowresError):
    """Parent level does not sit directly above the child level."""


class InvalidRegion(FlowresError):
    pass


class UnknownRegion(FlowresError):
    pass


class UnknownCode(FlowresError):
    pass


class DuplicateFlow(FlowresError):
    pass


class NegativeValue(FlowresError):
    pass


class LevelMismatch(FlowresError):
    pass


class EmptySelection(FlowresError):
    pass


class SinkWrite(FlowresError):
    pass


# ingest
class ParseError(FlowresError):
    pass


class CycleDetected(FlowresError):
    pass


class MissingParent(FlowresError):
    pass


# geo adjacency
class MissingGeometry(FlowresError):
    pass


class InvalidRing(FlowresError):
    pass


class SelfPair(FlowresError):
    pass


# metrics / query
class AllZero(FlowresError):
    pass


class NoFlows(FlowresError):
    pass


class DegenerateNetwork(FlowresError):
    pass


class BadParams(FlowresError):
    pass
