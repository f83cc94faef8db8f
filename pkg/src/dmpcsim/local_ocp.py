"""Per-agent open-loop optimal control problem.

Each agent minimizes a sum of weighted square-root norms over its input
sequence: input effort, deviation from its own previously communicated plan,
and deviation from each information source's communicated plan, subject to
the dynamics, an input box, and a terminal equality pinning the plan end
point.  The problem is condensed onto the stacked input vector and solved as
a second-order cone program via an epigraph reformulation.

Norms here are square roots, ||v||_P = sqrt(v' P v), not squared forms; the
convergence argument of the scheme depends on the triangle inequality, which
only the square-root form satisfies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

import clarabel

from .errors import (
    DimensionMismatch,
    HorizonMismatch,
    Infeasible,
    MissingNeighborTrajectory,
    SolverStall,
)
from .plant_models import FormationOffset, SystemModel, Trajectory
from .topology import Topology

WEIGHT_EIG_TOL = -1e-10


@dataclass(frozen=True)
class Weights:
    """Per-agent cost weights: input R, self-deviation F, neighbor-deviation G.

    All three must be symmetric positive semidefinite; zero matrices are
    allowed and simply silence the corresponding terms.
    """

    R: np.ndarray
    F: np.ndarray
    G: np.ndarray

    def __post_init__(self):
        for name in ("R", "F", "G"):
            W = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if W.shape[0] != W.shape[1]:
                raise DimensionMismatch(f"{name} must be square, got {W.shape}")
            if not np.allclose(W, W.T, atol=1e-12):
                raise DimensionMismatch(f"{name} must be symmetric")
            if np.any(np.linalg.eigvalsh(0.5 * (W + W.T)) < WEIGHT_EIG_TOL):
                raise DimensionMismatch(f"{name} must be positive semidefinite")
            object.__setattr__(self, name, W)


@dataclass(frozen=True)
class WeightReport:
    """Outcome of the out-neighbor weight-dominance condition."""

    holds: bool
    min_eigenvalues: tuple[float, ...]


def check_weight_condition(topology: Topology, weights: list[Weights]) -> WeightReport:
    """Check F_i >= |O_i| * sum of out-neighbors' G in the semidefinite order.

    Returns the per-agent minimum eigenvalue of the residual matrix; the
    condition holds when every residual is positive semidefinite up to a
    -1e-10 eigenvalue floor.
    """
    if len(weights) != topology.follower_count:
        raise DimensionMismatch("one Weights triple required per follower")
    mins = []
    for i in range(topology.follower_count):
        out = sorted(topology.out_neighbors[i])
        residual = weights[i].F.copy()
        if out:
            bound = sum(weights[j - 1].G for j in out)
            residual = residual - len(out) * bound
        residual = 0.5 * (residual + residual.T)
        mins.append(float(np.linalg.eigvalsh(residual).min()))
    return WeightReport(
        holds=all(v >= WEIGHT_EIG_TOL for v in mins), min_eigenvalues=tuple(mins)
    )


def weighted_norm(W: np.ndarray, v: np.ndarray) -> float:
    """sqrt(v' W v), clamped at zero against rounding."""
    q = float(v @ W @ v)
    return math.sqrt(q) if q > 0.0 else 0.0


def stage_cost(weights: Weights, u, x_pred, x_assumed_self, neighbor_targets) -> float:
    """One stage of the objective at given input and predicted state.

    ``neighbor_targets`` iterates over the offset-corrected plans of the
    agent's information sources at this stage.
    """
    u = np.asarray(u, dtype=float).ravel()
    x_pred = np.asarray(x_pred, dtype=float).ravel()
    x_self = np.asarray(x_assumed_self, dtype=float).ravel()
    total = weighted_norm(weights.R, u) + weighted_norm(weights.F, x_pred - x_self)
    for target in neighbor_targets:
        total += weighted_norm(weights.G, x_pred - np.asarray(target, dtype=float).ravel())
    return total


_factor_cache: dict[bytes, np.ndarray | None] = {}


def _weight_factor(W: np.ndarray) -> np.ndarray | None:
    """Thin square-root factor of a PSD matrix, cached by contents."""
    key = W.tobytes() + bytes(str(W.shape), "ascii")
    if key in _factor_cache:
        return _factor_cache[key]
    w, V = np.linalg.eigh(0.5 * (W + W.T))
    w = np.clip(w, 0.0, None)
    keep = w > 0.0
    L = (V[:, keep] * np.sqrt(w[keep])).T if np.any(keep) else None
    if len(_factor_cache) < 4096:
        _factor_cache[key] = L
    return L


@dataclass(frozen=True)
class NormTerm:
    """One objective term sqrt((M z + c)' W (M z + c)) on stacked inputs z."""

    weight: np.ndarray
    map: np.ndarray
    offset: np.ndarray
    factor: np.ndarray = field(repr=False)

    @classmethod
    def make(cls, W: np.ndarray, M: np.ndarray, c: np.ndarray) -> "NormTerm | None":
        """Build a term, factoring W; returns None for identically zero terms."""
        L = _weight_factor(W)
        if L is None:
            return None
        return cls(weight=W, map=M, offset=c, factor=L)

    def value(self, z: np.ndarray) -> float:
        return weighted_norm(self.weight, self.map @ z + self.offset)


@dataclass(frozen=True)
class OcpProblem:
    """Condensed problem over the stacked input vector.

    ``terms`` describe the objective; ``constant`` collects stage-zero
    state deviations, which do not depend on the decision variable but do
    count toward the reported objective.  The terminal equality is
    ``terminal_map @ z = terminal_rhs`` and pins the plan to
    ``terminal_state``.
    """

    model: SystemModel
    horizon: int
    initial_state: np.ndarray
    terms: tuple[NormTerm, ...]
    constant: float
    box_lower: np.ndarray
    box_upper: np.ndarray
    terminal_map: np.ndarray
    terminal_rhs: np.ndarray
    terminal_state: np.ndarray
    input_maps: tuple[np.ndarray, ...] = field(repr=False)
    free_response: np.ndarray = field(repr=False)

    @property
    def var_count(self) -> int:
        return self.horizon * self.model.input_dim

    def objective_of(self, inputs: np.ndarray) -> float:
        """Exact objective at a stacked or (N_p, m) input array."""
        z = np.asarray(inputs, dtype=float).ravel()
        if z.shape[0] != self.var_count:
            raise DimensionMismatch("input length does not match horizon")
        return self.constant + math.fsum(term.value(z) for term in self.terms)

    def states_of(self, inputs: np.ndarray) -> np.ndarray:
        """Model rollout of the stacked inputs from the initial state."""
        z = np.asarray(inputs, dtype=float).ravel()
        states = self.free_response.copy()
        for k in range(1, self.horizon + 1):
            states[k] += self.input_maps[k] @ z
        return states

    def feasibility_violation(self, inputs: np.ndarray) -> float:
        """Max of box and terminal-equality violations at the given inputs."""
        z = np.asarray(inputs, dtype=float).ravel()
        box = max(
            float(np.max(np.tile(self.box_lower, self.horizon) - z, initial=0.0)),
            float(np.max(z - np.tile(self.box_upper, self.horizon), initial=0.0)),
        )
        term = float(np.max(np.abs(self.terminal_map @ z - self.terminal_rhs)))
        return max(box, term)


@dataclass(frozen=True)
class OcpSolution:
    """Optimal trajectory and exact objective value."""

    trajectory: Trajectory
    objective: float
    solver_status: str


def build_problem(
    model: SystemModel,
    weights: Weights,
    horizon: int,
    x0,
    assumed_self: Trajectory,
    assumed_neighbors: dict[int, Trajectory],
    offsets: FormationOffset,
    agent: int,
) -> OcpProblem:
    """Condense one agent's problem at the current state.

    ``assumed_neighbors`` maps source ids (0 for the leader) to their
    communicated trajectories; each neighbor target is shifted by the
    offset difference delta_j - delta_i so the agent tracks its own slot
    in the formation.
    """
    n, m = model.state_dim, model.input_dim
    x0 = np.asarray(x0, dtype=float).ravel()
    if assumed_self.horizon != horizon:
        raise HorizonMismatch(
            f"own plan horizon {assumed_self.horizon} != problem horizon {horizon}"
        )
    for j, traj in assumed_neighbors.items():
        if traj.states.shape[0] != horizon + 1:
            raise MissingNeighborTrajectory(
                f"source {j} plan spans {traj.states.shape[0] - 1} steps, need {horizon}"
            )

    # free response f_k = A^k x0 via vector recursion, and input maps
    # x(k) = f_k + input_maps[k] @ z
    free = np.empty((horizon + 1, n))
    free[0] = x0
    for k in range(horizon):
        free[k + 1] = model.A @ free[k]
    maps = [np.zeros((n, horizon * m))]
    for k in range(horizon):
        nxt = model.A @ maps[k]
        nxt[:, k * m : (k + 1) * m] += model.B
        maps.append(nxt)

    own_offset = offsets.of(agent)
    source_ids = sorted(assumed_neighbors)
    targets = {
        j: assumed_neighbors[j].states + (offsets.of(j) - own_offset)
        for j in source_ids
    }

    terms: list[NormTerm] = []
    for k in range(horizon):
        sel = np.zeros((m, horizon * m))
        sel[:, k * m : (k + 1) * m] = np.eye(m)
        term = NormTerm.make(weights.R, sel, np.zeros(m))
        if term is not None:
            terms.append(term)

    constant = weighted_norm(weights.F, x0 - assumed_self.states[0])
    for j in source_ids:
        constant += weighted_norm(weights.G, x0 - targets[j][0])
    constant = float(constant)

    for k in range(1, horizon):
        term = NormTerm.make(weights.F, maps[k], free[k] - assumed_self.states[k])
        if term is not None:
            terms.append(term)
        for j in source_ids:
            term = NormTerm.make(weights.G, maps[k], free[k] - targets[j][k])
            if term is not None:
                terms.append(term)

    terminal_state = assumed_self.states[horizon].copy()
    return OcpProblem(
        model=model,
        horizon=horizon,
        initial_state=x0,
        terms=tuple(terms),
        constant=constant,
        box_lower=model.input_lower,
        box_upper=model.input_upper,
        terminal_map=maps[horizon],
        terminal_rhs=terminal_state - free[horizon],
        terminal_state=terminal_state,
        input_maps=tuple(maps),
        free_response=free,
    )


_OK_STATUSES = {"Solved", "AlmostSolved"}
_INFEASIBLE_STATUSES = {"PrimalInfeasible", "AlmostPrimalInfeasible"}


def _assemble_and_solve(problem: OcpProblem):
    nu = problem.var_count
    nt = len(problem.terms)
    nz = nu + nt
    q = np.concatenate([np.zeros(nu), np.ones(nt)])

    n_eq = problem.terminal_map.shape[0]
    rows = n_eq + 2 * nu + sum(1 + t.factor.shape[0] for t in problem.terms)
    A = np.zeros((rows, nz))
    b = np.zeros(rows)
    cones = [clarabel.ZeroConeT(n_eq), clarabel.NonnegativeConeT(2 * nu)]

    A[:n_eq, :nu] = problem.terminal_map
    b[:n_eq] = problem.terminal_rhs
    r = n_eq
    idx = np.arange(nu)
    A[r + idx, idx] = 1.0
    b[r : r + nu] = np.tile(problem.box_upper, problem.horizon)
    r += nu
    A[r + idx, idx] = -1.0
    b[r : r + nu] = np.tile(-problem.box_lower, problem.horizon)
    r += nu

    for t_idx, term in enumerate(problem.terms):
        d = term.factor.shape[0]
        A[r, nu + t_idx] = -1.0
        # b - A z = (s, L M z + L c) lands in the second-order cone
        A[r + 1 : r + 1 + d, :nu] = -term.factor @ term.map
        b[r + 1 : r + 1 + d] = term.factor @ term.offset
        cones.append(clarabel.SecondOrderConeT(1 + d))
        r += 1 + d

    P = sp.csc_matrix((nz, nz))
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    solution = clarabel.DefaultSolver(
        P, q, sp.csc_matrix(A), b, cones, settings
    ).solve()
    status = str(solution.status)
    inputs = np.asarray(solution.x[:nu], dtype=float)
    return status, inputs


def solve(
    problem: OcpProblem,
    tol_obj: float = 1e-6,
    tol_feas: float = 1e-8,
    candidate_inputs: np.ndarray | None = None,
) -> OcpSolution:
    """Solve the condensed problem to conic-solver accuracy.

    When ``candidate_inputs`` (a known feasible stacked input, typically
    the shifted previous optimum) is supplied, the candidate's exact
    objective upper-bounds the returned one: the better of solver output
    and candidate is returned after exact evaluation of both.  A candidate
    costing exactly zero short-circuits the solver so the consensus fixed
    point is returned without numerical noise.

    The returned trajectory's terminal state is the constraint value
    itself rather than the rollout, so downstream recursions see the
    equality exactly.

    Raises
    ------
    Infeasible
        The terminal state is unreachable inside the input box.
    SolverStall
        The solver stopped early and no feasible candidate was available.
    """
    cand = None
    if candidate_inputs is not None:
        z = np.asarray(candidate_inputs, dtype=float).ravel()
        if problem.feasibility_violation(z) <= max(tol_feas, 1e-9):
            cand = (z, problem.objective_of(z))
    if cand is not None and cand[1] == 0.0:
        return _package(problem, cand[0], cand[1], "Candidate")

    status, z_solver = _assemble_and_solve(problem)

    if status in _INFEASIBLE_STATUSES:
        raise Infeasible("terminal equality unreachable under the input box")
    if status not in _OK_STATUSES:
        if cand is not None:
            return _package(problem, cand[0], cand[1], f"Candidate({status})")
        raise SolverStall(f"solver stopped with status {status}")

    z_solver = np.clip(
        z_solver,
        np.tile(problem.box_lower, problem.horizon),
        np.tile(problem.box_upper, problem.horizon),
    )
    violation = problem.feasibility_violation(z_solver)
    if violation > tol_feas:
        if cand is not None:
            return _package(problem, cand[0], cand[1], f"Candidate({status})")
        raise SolverStall(f"solution violates constraints by {violation:.3e}")
    objective = problem.objective_of(z_solver)

    if cand is not None and cand[1] < objective:
        return _package(problem, cand[0], cand[1], "Candidate")
    return _package(problem, z_solver, objective, status)


def _package(problem: OcpProblem, z: np.ndarray, objective: float, status: str) -> OcpSolution:
    states = problem.states_of(z)
    states[problem.horizon] = problem.terminal_state
    trajectory = Trajectory(
        states=states,
        inputs=z.reshape(problem.horizon, problem.model.input_dim),
        role="optimal",
    )
    return OcpSolution(trajectory=trajectory, objective=float(objective), solver_status=status)
