"""Exception hierarchy shared across the package.

Every error raised by the library derives from :class:`DmpcError` so callers
can catch one base class.  The command-line tool maps subfamilies to exit
codes: configuration and validation problems to 1, runtime infeasibility
signals to 2, and I/O failures to 3.
"""

from __future__ import annotations


class DmpcError(Exception):
    """Base class for all library errors."""


# --- graph construction ---------------------------------------------------

class TopologyError(DmpcError):
    """Invalid communication graph."""


class NonSquareAdjacency(TopologyError):
    pass


class SelfLoopPresent(TopologyError):
    pass


class IsolatedAgent(TopologyError):
    """Some agent has neither in-neighbors nor a leader pin."""


class SingularPinnedDegree(TopologyError):
    pass


# --- model construction ---------------------------------------------------

class ModelError(DmpcError):
    """Invalid system model or parameters."""


class DimensionMismatch(ModelError):
    pass


class DegenerateInertia(ModelError):
    """Zero pitch-dynamics denominator in the underwater vehicle model."""


class BoxNotInterior(ModelError):
    """Input box does not contain the origin in its interior."""


class UncontrollablePair(ModelError):
    pass


# --- terminal gain synthesis ----------------------------------------------

class GainError(DmpcError):
    """Terminal gain synthesis failure."""


class NonConvergence(GainError):
    """Riccati fixed-point iteration hit its budget without converging."""


class NotPositiveDefinite(GainError):
    pass


class DiscUnstable(GainError):
    """Closed loop unstable for some sampled disc perturbation.

    Carries the offending report in ``args[1]`` when available.
    """

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


# --- local optimal control problem ----------------------------------------

class OcpError(DmpcError):
    pass


class HorizonMismatch(OcpError):
    pass


class MissingNeighborTrajectory(OcpError):
    pass


class Infeasible(OcpError):
    """Terminal equality unreachable under the input box."""

    def __init__(self, message: str, agent: int | None = None, round_index: int | None = None):
        super().__init__(message)
        self.agent = agent
        self.round_index = round_index


class SolverStall(OcpError):
    """Conic solver stopped before reaching the requested tolerance."""


# --- engine ----------------------------------------------------------------

class EngineError(DmpcError):
    pass


class InitInputOutOfBounds(EngineError):
    pass


class LocalInfeasible(EngineError):
    """An agent's round problem had no feasible solution."""

    def __init__(self, message: str, agent: int, round_index: int):
        super().__init__(message)
        self.agent = agent
        self.round_index = round_index


class TerminalInputOutOfBounds(EngineError):
    """The appended consensus input left the input box.

    Signals that the terminal errors have left the recursively feasible
    region; surfaced instead of clipping.
    """

    def __init__(self, message: str, agent: int, round_index: int):
        super().__init__(message)
        self.agent = agent
        self.round_index = round_index


# --- scenario ingestion and outputs ----------------------------------------

class ParseError(DmpcError):
    """Scenario file is malformed."""


class ValidationError(DmpcError):
    """A scenario violates a precondition of the control scheme.

    ``reason`` is one of ``box_interior``, ``controllability``,
    ``leader_reachability``, ``terminal_contraction``, ``weight_condition``.
    """

    def __init__(self, reason: str, message: str):
        super().__init__(f"{reason}: {message}")
        self.reason = reason


class DynamicLeaderUnsupported(DmpcError):
    """Requested analysis assumes a zero-input leader."""


class DivergentSeries(DmpcError):
    """Cost-to-go series does not converge (unstable terminal recursion)."""


class IoError(DmpcError):
    """Output writing failed or was refused."""
