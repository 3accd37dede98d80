#
# Copyright (C) 2025 Kris Kirby
#
# This file is part of PySpatialCtx.
#
# PySpatialCtx is free software: you can redistribute it and/or modify
# it under the terms of the GNU General Public License as published by
# the Free Software Foundation, either version 3 of the License, or
# (at your option) any later version.
#
# You should have received a copy of the GNU General Public License
# along with PySpatialCtx. If not, see <http://www.gnu.org/licenses/>.
#

"""
Exception hierarchy shared by every PySpatialCtx module.

All errors derive from :py:class:`SpatialContextError` so callers (and the CLI)
can catch domain failures with a single ``except`` clause.
"""


class SpatialContextError(Exception):
    """Base class for all domain errors."""


# --- Context / Instance Errors ---

class UnknownInstance(SpatialContextError, LookupError):
    """Instance id (or name) is not present in the scene hypergraph."""

    def __init__(self, label, message: str = None):
        self.label = label
        super().__init__(message or f"instance {label!r} is not in the scene hypergraph")


class EmptyInstance(SpatialContextError):
    """Hypergraph node exists but no cloud point carries its label."""

    def __init__(self, label):
        self.label = label
        super().__init__(f"instance {label} has no points in the cloud")


class DuplicateInstance(SpatialContextError, ValueError):
    """An instance id is declared twice."""


class LabelMismatch(SpatialContextError, ValueError):
    """Replacement points carry a label different from the target instance."""


class AmbiguousName(SpatialContextError, LookupError):
    """A case-insensitive name resolves to more than one instance."""


class ValidationFailed(SpatialContextError):
    """A context failed validation; the report is attached."""

    def __init__(self, report, message: str = None):
        self.report = report
        lines = [str(f) for f in report.findings]
        super().__init__(message or "context failed validation: " + "; ".join(lines))


# --- Geometry Errors ---

class DegenerateGeometry(SpatialContextError, ValueError):
    """Too few points, rank-deficient covariance or zero-area surfaces."""


class EmptyPointSet(SpatialContextError, ValueError):
    """An operation that needs points received none."""


class EmptyCloud(EmptyPointSet):
    """A point cloud operation received an empty cloud."""


class InvalidTransform(SpatialContextError, ValueError):
    """Non-positive scale or a rotation that is not a proper orthonormal matrix."""


class NonFinite(SpatialContextError, ArithmeticError):
    """An objective or coordinate became NaN or infinite."""


# --- Ergonomic Loss Errors ---

class DuplicateMembers(SpatialContextError, ValueError):
    """A ternary relation names the same instance twice."""


class NonUnitAxis(SpatialContextError, ValueError):
    """An equidistance axis does not have unit norm."""


class MissingPose(SpatialContextError, LookupError):
    """An edge member has no pose in the supplied pose set."""


class MissingMesh(SpatialContextError, LookupError):
    """A contact edge references an instance without a mesh."""


# --- Parsing / Protocol Errors ---

class ParseError(SpatialContextError, ValueError):
    """Malformed text input. ``line`` and ``column`` are 1-based (0 = unknown)."""

    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.line = line
        self.column = column
        self.detail = message
        where = f"line {line}, column {column}: " if line else ""
        super().__init__(where + message)


class UnknownRelation(ParseError):
    """Relation keyword is not one of the five supported relations."""


class ArityMismatch(ParseError):
    """Hyperedge member count does not match its relation."""


class VersionMismatch(SpatialContextError):
    """Bundle manifest declares an unsupported format version."""


class IoError(SpatialContextError, OSError):
    """Reading or writing an artifact failed."""


class UnknownEdge(SpatialContextError, IndexError):
    """An edge ordinal is out of range."""


class ScriptExhausted(SpatialContextError):
    """The scripted agent was asked for more responses than it holds."""


class SessionAborted(SpatialContextError):
    """A session failed; the partial transcript is attached."""

    def __init__(self, cause: Exception, transcript):
        self.cause = cause
        self.transcript = transcript
        super().__init__(f"session aborted: {type(cause).__name__}: {cause}")


# --- Planning Errors ---

class PlanningError(SpatialContextError):
    """Per-instance failure raised while planning a layout."""

    def __init__(self, label: int, cause: Exception):
        self.label = label
        self.cause = cause
        super().__init__(f"instance {label}: {type(cause).__name__}: {cause}")


class StartOccupied(SpatialContextError):
    """Path start lies in an occupied cell."""


class GoalOccupied(SpatialContextError):
    """Path goal lies in an occupied cell."""


class OutOfBounds(SpatialContextError, ValueError):
    """A world coordinate falls outside the occupancy grid."""


class NoPath(SpatialContextError):
    """No collision-free path connects start and goal."""
