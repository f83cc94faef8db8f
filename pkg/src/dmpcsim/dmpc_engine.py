"""Synchronous round protocol.

Each round: agents exchange assumed trajectories, every agent solves its
local problem against the received plans, applies the first optimal input,
and rolls its plan one step forward, appending a consensus-protocol input at
the tail.  The appended input steers the plan's terminal state toward the
average of the information sources' terminal states and is bounds-checked
rather than clipped: leaving the box is the runtime signal that the initial
condition was outside the recursively feasible region.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import (
    InitInputOutOfBounds,
    LocalInfeasible,
    TerminalInputOutOfBounds,
)
from .errors import Infeasible as _Infeasible
from .local_ocp import Weights, build_problem, solve
from .plant_models import (
    FormationOffset,
    LeaderProfile,
    SystemModel,
    Trajectory,
    leader_trajectory,
    plant_step,
)
from .terminal_gain import TerminalGain
from .topology import Topology


@dataclass
class AgentRuntime:
    """Mutable per-agent state carried across rounds."""

    agent_id: int
    model: SystemModel
    plant: SystemModel
    weights: Weights
    state: np.ndarray
    assumed: Trajectory
    sources: frozenset[int]
    out_ids: frozenset[int]


@dataclass(frozen=True)
class RoundMessage:
    """Assumed states an agent transmits to its out-neighbors at time t."""

    sender: int
    time_index: int
    states: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "states", np.atleast_2d(np.asarray(self.states, dtype=float)))


@dataclass(frozen=True)
class RoundResult:
    """Everything observable about one completed round."""

    time_index: int
    states_before: np.ndarray
    leader_state_before: np.ndarray
    commanded: np.ndarray
    applied: np.ndarray
    leader_input: np.ndarray
    objectives: np.ndarray
    candidate_objectives: np.ndarray
    assumed_terminals: np.ndarray
    leader_terminal: np.ndarray
    stacked_error: np.ndarray
    terminal_inputs: np.ndarray


def initialize(
    models: list[SystemModel],
    initial_states,
    horizon: int,
    init_inputs=None,
) -> list[Trajectory]:
    """Build each agent's first assumed trajectory.

    Inputs default to zero sequences; supplied sequences must lie inside
    each agent's box.  States roll forward through the agent's model.
    """
    trajectories = []
    for idx, model in enumerate(models):
        x0 = np.asarray(initial_states[idx], dtype=float).ravel()
        if init_inputs is None:
            u_seq = np.zeros((horizon, model.input_dim))
        else:
            u_seq = np.atleast_2d(np.asarray(init_inputs[idx], dtype=float))
            if u_seq.shape != (horizon, model.input_dim):
                u_seq = u_seq.reshape(horizon, model.input_dim)
            for k in range(horizon):
                if not model.input_in_box(u_seq[k]):
                    raise InitInputOutOfBounds(
                        f"agent {idx + 1} initial input at stage {k} outside box"
                    )
        states = np.empty((horizon + 1, model.state_dim))
        states[0] = x0
        for k in range(horizon):
            states[k + 1] = model.A @ states[k] + model.B @ u_seq[k]
        trajectories.append(Trajectory(states=states, inputs=u_seq, role="assumed"))
    return trajectories


def terminal_input(
    agent: int,
    source_terminals: dict[int, np.ndarray],
    own_terminal: np.ndarray,
    K: np.ndarray,
    offsets: FormationOffset,
) -> np.ndarray:
    """Consensus-protocol input appended at the plan tail.

    Averages the offset-corrected terminal disagreements over the agent's
    information sources and feeds them through the terminal gain.  Bounds
    are the caller's responsibility.
    """
    own = np.asarray(own_terminal, dtype=float).ravel()
    own_offset = offsets.of(agent)
    total = np.zeros_like(own)
    for j in sorted(source_terminals):
        shifted = np.asarray(source_terminals[j], dtype=float).ravel() + (
            offsets.of(j) - own_offset
        )
        total = total + (shifted - own)
    K = np.atleast_2d(np.asarray(K, dtype=float))
    return (K @ total) / len(source_terminals)


class World:
    """Round orchestrator over one leader and N follower runtimes."""

    def __init__(
        self,
        topology: Topology,
        gain: TerminalGain,
        offsets: FormationOffset,
        leader_model: SystemModel,
        leader_state,
        agents: list[AgentRuntime],
        horizon: int,
        dt: float,
        leader_profile: LeaderProfile | None = None,
        disturbance_bound: float = 0.0,
        rng: np.random.Generator | None = None,
        tol_obj: float = 1e-6,
        tol_feas: float = 1e-8,
    ):
        self.topology = topology
        self.gain = gain
        self.offsets = offsets
        self.leader_model = leader_model
        self.leader_state = np.asarray(leader_state, dtype=float).ravel()
        self.agents = agents
        self.horizon = horizon
        self.dt = dt
        self.leader_profile = leader_profile
        self.disturbance_bound = float(disturbance_bound)
        self.rng = rng
        self.tol_obj = tol_obj
        self.tol_feas = tol_feas
        if self.disturbance_bound > 0.0 and self.rng is None:
            raise ValueError("disturbance requires a seeded random generator")

    def _candidate_valid(self, agent: AgentRuntime) -> bool:
        # the shifted plan re-solves from the true state; it stays feasible
        # only when the plant matches the controller model and no input
        # disturbance bends the closed loop away from the prediction
        return agent.plant is agent.model and self.disturbance_bound == 0.0

    def broadcast(self) -> Trajectory:
        return leader_trajectory(self.leader_model, self.leader_state, self.horizon)

    def stacked_error(self, leader_terminal: np.ndarray) -> np.ndarray:
        blocks = []
        for agent in self.agents:
            term = agent.assumed.states[self.horizon] + self.offsets.of(agent.agent_id)
            blocks.append(term - leader_terminal)
        return np.concatenate(blocks)

    def round(self, t: int) -> RoundResult:
        """Execute one synchronous round at logical time t."""
        leader_plan = self.broadcast()
        leader_terminal = leader_plan.states[self.horizon]

        messages = {
            agent.agent_id: RoundMessage(
                sender=agent.agent_id, time_index=t, states=agent.assumed.states
            )
            for agent in self.agents
        }

        states_before = np.array([agent.state for agent in self.agents])
        assumed_terminals = np.array(
            [agent.assumed.states[self.horizon] for agent in self.agents]
        )
        stacked = self.stacked_error(leader_terminal)

        solutions = []
        cand_objs = []
        for agent in self.agents:
            neighbor_plans: dict[int, Trajectory] = {}
            for j in sorted(agent.sources):
                if j == 0:
                    neighbor_plans[0] = leader_plan
                else:
                    neighbor_plans[j] = Trajectory(
                        states=messages[j].states,
                        inputs=np.zeros((self.horizon, agent.model.input_dim)),
                        role="assumed",
                    )
            problem = build_problem(
                agent.model,
                agent.weights,
                self.horizon,
                agent.state,
                agent.assumed,
                neighbor_plans,
                self.offsets,
                agent.agent_id,
            )
            candidate = (
                agent.assumed.inputs.ravel() if self._candidate_valid(agent) else None
            )
            if candidate is not None:
                cand_objs.append(problem.objective_of(candidate))
            else:
                cand_objs.append(float("nan"))
            try:
                solutions.append(
                    solve(
                        problem,
                        tol_obj=self.tol_obj,
                        tol_feas=self.tol_feas,
                        candidate_inputs=candidate,
                    )
                )
            except _Infeasible as exc:
                raise LocalInfeasible(
                    f"agent {agent.agent_id} infeasible at round {t}",
                    agent=agent.agent_id,
                    round_index=t,
                ) from exc

        terminal_inputs = []
        for agent in self.agents:
            source_terms = {}
            for j in sorted(agent.sources):
                if j == 0:
                    source_terms[0] = leader_terminal
                else:
                    source_terms[j] = messages[j].states[self.horizon]
            u_term = terminal_input(
                agent.agent_id,
                source_terms,
                agent.assumed.states[self.horizon],
                self.gain.gain,
                self.offsets,
            )
            if not agent.model.input_in_box(u_term):
                raise TerminalInputOutOfBounds(
                    f"agent {agent.agent_id} terminal input {u_term} outside box at round {t}",
                    agent=agent.agent_id,
                    round_index=t,
                )
            terminal_inputs.append(u_term)

        commanded = np.array([sol.trajectory.inputs[0] for sol in solutions])
        applied = commanded.copy()
        if self.disturbance_bound > 0.0:
            for idx in range(len(self.agents)):
                applied[idx] = applied[idx] + self.rng.uniform(
                    -self.disturbance_bound,
                    self.disturbance_bound,
                    size=applied.shape[1],
                )

        leader_input = np.zeros(self.leader_model.input_dim)
        if self.leader_profile is not None:
            leader_input = np.full(
                self.leader_model.input_dim, self.leader_profile.value(t * self.dt)
            )
        leader_before = self.leader_state.copy()

        for idx, agent in enumerate(self.agents):
            sol = solutions[idx]
            agent.state = plant_step(agent.plant, agent.state, applied[idx])
            new_inputs = np.vstack([sol.trajectory.inputs[1:], terminal_inputs[idx][None, :]])
            tail_state = (
                agent.model.A @ sol.trajectory.states[self.horizon]
                + agent.model.B @ terminal_inputs[idx]
            )
            new_states = np.vstack([sol.trajectory.states[1:], tail_state[None, :]])
            agent.assumed = Trajectory(states=new_states, inputs=new_inputs, role="assumed")
        self.leader_state = plant_step(self.leader_model, self.leader_state, leader_input)

        return RoundResult(
            time_index=t,
            states_before=states_before,
            leader_state_before=leader_before,
            commanded=commanded,
            applied=applied,
            leader_input=leader_input,
            objectives=np.array([sol.objective for sol in solutions]),
            candidate_objectives=np.array(cand_objs),
            assumed_terminals=assumed_terminals,
            leader_terminal=leader_terminal,
            stacked_error=stacked,
            terminal_inputs=np.array(terminal_inputs),
        )


@dataclass(frozen=True)
class ProbeReport:
    """Outcome of one scaled run."""

    scale: float
    feasible: bool
    failure: str | None = None
    round_index: int | None = None
    agent: int | None = None


@dataclass(frozen=True)
class ProbeResult:
    """Largest feasible scaling of the initial errors, with all reports."""

    largest_feasible: float | None
    reports: tuple[ProbeReport, ...]


def feasibility_probe(config, scales) -> ProbeResult:
    """Shrink initial follower errors until a full run stays feasible.

    Each scale multiplies every follower's initial error relative to its
    offset-corrected leader target; the scenario is run to completion and
    infeasibility signals are collected.  Returns the largest scale whose
    run finished cleanly.
    """
    from .sim_harness import run_scenario, scaled_initial_states

    reports = []
    best = None
    for alpha in scales:
        alpha = float(alpha)
        trial = replace(config, initial_states=scaled_initial_states(config, alpha))
        try:
            run_scenario(trial)
        except (LocalInfeasible, TerminalInputOutOfBounds) as exc:
            reports.append(
                ProbeReport(
                    scale=alpha,
                    feasible=False,
                    failure=type(exc).__name__,
                    round_index=exc.round_index,
                    agent=exc.agent,
                )
            )
            continue
        reports.append(ProbeReport(scale=alpha, feasible=True))
        if best is None or alpha > best:
            best = alpha
    return ProbeResult(largest_feasible=best, reports=tuple(reports))
