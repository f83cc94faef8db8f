"""Distributed MPC consensus simulator for constrained linear agents."""

from .dmpc_engine import (
    AgentRuntime,
    ProbeReport,
    ProbeResult,
    RoundResult,
    World,
    feasibility_probe,
    initialize,
    terminal_input,
)
from .errors import (
    DivergentSeries,
    DmpcError,
    DynamicLeaderUnsupported,
    EngineError,
    GainError,
    Infeasible,
    IoError,
    ModelError,
    OcpError,
    ParseError,
    TopologyError,
    ValidationError,
)
from .local_ocp import (
    OcpProblem,
    OcpSolution,
    Weights,
    WeightReport,
    build_problem,
    check_weight_condition,
    solve,
    stage_cost,
    weighted_norm,
)
from .plant_models import (
    AUVParams,
    CAVParams,
    FormationOffset,
    LeaderProfile,
    SystemModel,
    Trajectory,
    auv_continuous_model,
    cav_continuous_model,
    feedback_linearization_torque,
    leader_trajectory,
    plant_step,
    zoh_discretize,
)
from .sim_harness import (
    ScenarioConfig,
    SimLog,
    build_world,
    consensus_error_series,
    emit_outputs,
    load_scenario,
    lyapunov_series,
    run_scenario,
    scaled_initial_states,
    terminal_recursion_residuals,
    validate_scenario,
)
from .terminal_gain import (
    DeltaInterval,
    DiscReport,
    TerminalGain,
    admissible_delta_interval,
    mare_residual,
    solve_mare,
    stacked_terminal_matrix,
    synthesize,
    terminal_gain,
    verify_schur_disc,
)
from .topology import (
    Topology,
    build_topology,
    has_leader_rooted_spanning_tree,
    normalized_pinned_laplacian,
    spectral_radius_pinned,
)

__version__ = "0.1.0"

__all__ = [
    "AgentRuntime",
    "AUVParams",
    "CAVParams",
    "DeltaInterval",
    "DiscReport",
    "DivergentSeries",
    "DmpcError",
    "DynamicLeaderUnsupported",
    "EngineError",
    "FormationOffset",
    "GainError",
    "Infeasible",
    "IoError",
    "LeaderProfile",
    "ModelError",
    "OcpError",
    "OcpProblem",
    "OcpSolution",
    "ParseError",
    "ProbeReport",
    "ProbeResult",
    "RoundResult",
    "ScenarioConfig",
    "SimLog",
    "SystemModel",
    "TerminalGain",
    "Topology",
    "TopologyError",
    "Trajectory",
    "ValidationError",
    "WeightReport",
    "Weights",
    "World",
    "admissible_delta_interval",
    "auv_continuous_model",
    "build_problem",
    "build_topology",
    "cav_continuous_model",
    "check_weight_condition",
    "consensus_error_series",
    "emit_outputs",
    "feasibility_probe",
    "feedback_linearization_torque",
    "has_leader_rooted_spanning_tree",
    "initialize",
    "leader_trajectory",
    "load_scenario",
    "lyapunov_series",
    "mare_residual",
    "normalized_pinned_laplacian",
    "plant_step",
    "build_world",
    "run_scenario",
    "scaled_initial_states",
    "solve",
    "solve_mare",
    "spectral_radius_pinned",
    "stacked_terminal_matrix",
    "stage_cost",
    "synthesize",
    "terminal_gain",
    "terminal_input",
    "terminal_recursion_residuals",
    "validate_scenario",
    "verify_schur_disc",
    "weighted_norm",
    "zoh_discretize",
]
