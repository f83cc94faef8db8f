"""Scenario ingestion, end-to-end runs, metrics, and file outputs.

A scenario file is a YAML document describing the model, graph, weights,
gain parameters, initial states, and run options.  Loading validates every
precondition of the control scheme (controllability, leader reachability,
admissible disc radius, weight dominance, box interiority) and records a
verdict for each; the simulator then executes the synchronous rounds and
logs states, inputs, costs, and assumed terminal errors for analysis.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from .dmpc_engine import AgentRuntime, World, initialize
from .errors import (
    DivergentSeries,
    DmpcError,
    DynamicLeaderUnsupported,
    IoError,
    ParseError,
    ValidationError,
)
from .local_ocp import Weights, check_weight_condition
from .plant_models import (
    AUVParams,
    CAVParams,
    FormationOffset,
    LeaderProfile,
    SystemModel,
    auv_continuous_model,
    cav_continuous_model,
    zoh_discretize,
)
from .terminal_gain import (
    TerminalGain,
    admissible_delta_interval,
    stacked_terminal_matrix,
    synthesize,
)
from .topology import Topology, build_topology, has_leader_rooted_spanning_tree

DEFAULT_THRESHOLDS = {
    "auv": (0.01, 0.005, 0.01),
    "cav": (0.05, 0.01, 0.01),
}


@dataclass(frozen=True)
class ScenarioConfig:
    """Declarative experiment description.

    Built by :func:`load_scenario`; all array fields are plain ndarrays.
    ``gain_delta`` of ``None`` means the disc radius is chosen
    automatically inside the admissible interval.
    """

    name: str
    model_kind: str
    model_params: dict
    dt: float
    input_lower: np.ndarray
    input_upper: np.ndarray
    horizon: int
    follower_count: int
    adjacency: np.ndarray
    pinning: np.ndarray
    weights: tuple[Weights, ...]
    leader_initial: np.ndarray
    initial_states: np.ndarray
    offset_spacing: float
    gain_q: np.ndarray
    gain_delta: float | None
    leader_profile: LeaderProfile | None
    disturbance_bound: float
    disturbance_seed: int | None
    controller_lags: tuple[float, ...] | None
    plant_lags: tuple[float, ...] | None
    steps: int
    thresholds: np.ndarray
    tol_obj: float
    tol_feas: float
    truncation_tol: float
    weight_waiver: bool
    verdicts: dict | None = field(default=None, compare=False)

    @property
    def zero_input_leader(self) -> bool:
        return self.leader_profile is None

    @property
    def homogeneous_controllers(self) -> bool:
        return self.controller_lags is None

    @property
    def nominal_dynamics(self) -> bool:
        """True when every plant equals its controller model and no
        disturbance is injected, so shifted plans stay feasible."""
        matched = self.plant_lags == self.controller_lags
        return matched and self.disturbance_bound == 0.0


# --- parsing ----------------------------------------------------------------


def _require(mapping: dict, key: str, context: str):
    if key not in mapping:
        raise ParseError(f"missing key {key!r} in {context}")
    return mapping[key]


def _as_matrix(value, name: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{name} is not numeric") from exc
    return arr


def _weight_matrix(value, name: str) -> np.ndarray:
    arr = _as_matrix(value, name)
    if arr.ndim == 0:
        return arr.reshape(1, 1)
    if arr.ndim == 1:
        return np.diag(arr)
    return arr


def load_scenario(path, strict: bool = True) -> ScenarioConfig:
    """Parse and validate a scenario file.

    With ``strict`` (the default) the first failing validation raises
    :class:`ValidationError`; otherwise all verdicts are computed and
    attached to the returned config for reporting.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise IoError(f"cannot read scenario file {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ParseError(f"scenario file {path} is not valid YAML: {exc}") from exc
    if not isinstance(raw, dict):
        raise ParseError(f"scenario file {path} must be a mapping at top level")
    config = parse_scenario_dict(raw, str(path))
    verdicts = validate_scenario(config)
    object.__setattr__(config, "verdicts", verdicts)
    if strict:
        for reason, verdict in verdicts.items():
            if not verdict["passed"] and not verdict.get("waived", False):
                raise ValidationError(reason, verdict["detail"])
    return config


def parse_scenario_dict(raw: dict, context: str = "scenario") -> ScenarioConfig:
    """Build a :class:`ScenarioConfig` from a parsed mapping."""
    name = str(raw.get("name", "scenario"))
    model = _require(raw, "model", context)
    if not isinstance(model, dict):
        raise ParseError("model section must be a mapping")
    kind = str(_require(model, "kind", "model"))
    if kind not in ("auv", "cav", "continuous", "discrete"):
        raise ParseError(f"unknown model kind {kind!r}")
    dt = float(_require(model, "dt", "model"))
    if dt <= 0.0:
        raise ParseError("model dt must be positive")
    box = _as_matrix(_require(model, "input_box", "model"), "input_box").ravel()
    if box.size % 2 != 0:
        raise ParseError("input_box must be [lower, upper] or paired vectors")
    half = box.size // 2
    input_lower, input_upper = box[:half], box[half:]
    params = model.get("params", {})
    if not isinstance(params, dict):
        raise ParseError("model params must be a mapping")

    horizon = int(_require(raw, "horizon", context))
    if horizon < 1:
        raise ParseError("horizon must be at least 1")
    follower_count = int(_require(raw, "followers", context))
    if follower_count < 1:
        raise ParseError("followers must be at least 1")

    topo = _require(raw, "topology", context)
    adjacency = _as_matrix(_require(topo, "adjacency", "topology"), "adjacency")
    pinning = _as_matrix(_require(topo, "pinning", "topology"), "pinning").ravel()

    gain = raw.get("gain", {})
    q_raw = gain.get("q", 1.0)
    q_arr = _as_matrix(q_raw, "gain q")
    delta_raw = gain.get("delta", "auto")
    if isinstance(delta_raw, str):
        if delta_raw != "auto":
            raise ParseError("gain delta must be a number or 'auto'")
        gain_delta = None
    else:
        gain_delta = float(delta_raw)

    weights_raw = _require(raw, "weights", context)
    if not isinstance(weights_raw, list) or len(weights_raw) != follower_count:
        raise ParseError("weights must list one {r, f, g} triple per follower")
    weights = []
    for idx, entry in enumerate(weights_raw):
        if not isinstance(entry, dict):
            raise ParseError(f"weights[{idx}] must be a mapping")
        weights.append(
            Weights(
                R=_weight_matrix(_require(entry, "r", f"weights[{idx}]"), "r"),
                F=_weight_matrix(_require(entry, "f", f"weights[{idx}]"), "f"),
                G=_weight_matrix(_require(entry, "g", f"weights[{idx}]"), "g"),
            )
        )

    init = _require(raw, "initial_states", context)
    leader_initial = _as_matrix(_require(init, "leader", "initial_states"), "leader state").ravel()
    followers_init = _as_matrix(
        _require(init, "followers", "initial_states"), "follower states"
    )
    if followers_init.ndim != 2 or followers_init.shape[0] != follower_count:
        raise ParseError("initial_states.followers must list one state per follower")

    offsets_raw = raw.get("offsets", {})
    offset_spacing = float(offsets_raw.get("spacing", 0.0)) if offsets_raw else 0.0

    profile_raw = raw.get("leader_profile")
    if profile_raw in (None, "none"):
        leader_profile = None
    elif profile_raw == "cav_sine":
        leader_profile = LeaderProfile(kind="cav_sine")
    elif isinstance(profile_raw, dict) and "table" in profile_raw:
        rows = tuple((float(t), float(v)) for t, v in profile_raw["table"])
        leader_profile = LeaderProfile(kind="table", table=rows)
    else:
        raise ParseError("leader_profile must be 'none', 'cav_sine', or {table: ...}")

    dist_raw = raw.get("disturbance")
    disturbance_bound = 0.0
    disturbance_seed = None
    if dist_raw not in (None, "none"):
        if not isinstance(dist_raw, dict):
            raise ParseError("disturbance must be a mapping with bound and seed")
        disturbance_bound = float(_require(dist_raw, "bound", "disturbance"))
        disturbance_seed = int(_require(dist_raw, "seed", "disturbance"))
        if disturbance_bound < 0.0:
            raise ParseError("disturbance bound must be nonnegative")

    over = raw.get("overrides", {})
    plant_lags = None
    controller_lags = None
    if over:
        if kind != "cav":
            raise ParseError("overrides.*_lags only apply to the cav model")
        if "plant_lags" in over:
            plant_lags = tuple(float(v) for v in over["plant_lags"])
            if len(plant_lags) != follower_count:
                raise ParseError("plant_lags must list one lag per follower")
        ctrl = over.get("controller_lags", "nominal")
        if ctrl == "same":
            controller_lags = plant_lags
        elif ctrl == "nominal":
            controller_lags = None
        else:
            controller_lags = tuple(float(v) for v in ctrl)
            if len(controller_lags) != follower_count:
                raise ParseError("controller_lags must list one lag per follower")

    run = raw.get("run", {})
    steps = int(run.get("steps", 1))
    if steps < 1:
        raise ParseError("run.steps must be at least 1")

    thresholds_raw = raw.get("thresholds")
    if thresholds_raw is None:
        thresholds = np.asarray(
            DEFAULT_THRESHOLDS.get(kind, (0.05, 0.01, 0.01)), dtype=float
        )
    else:
        thresholds = _as_matrix(thresholds_raw, "thresholds").ravel()

    tol = raw.get("tolerances", {})
    tol_obj = float(tol.get("objective", 1e-6))
    tol_feas = float(tol.get("feasibility", 1e-8))
    truncation_tol = float(tol.get("truncation", 1e-12))

    return ScenarioConfig(
        name=name,
        model_kind=kind,
        model_params=dict(params),
        dt=dt,
        input_lower=input_lower,
        input_upper=input_upper,
        horizon=horizon,
        follower_count=follower_count,
        adjacency=adjacency,
        pinning=pinning,
        weights=tuple(weights),
        leader_initial=leader_initial,
        initial_states=followers_init,
        offset_spacing=offset_spacing,
        gain_q=q_arr,
        gain_delta=gain_delta,
        leader_profile=leader_profile,
        disturbance_bound=disturbance_bound,
        disturbance_seed=disturbance_seed,
        controller_lags=controller_lags,
        plant_lags=plant_lags,
        steps=steps,
        thresholds=thresholds,
        tol_obj=tol_obj,
        tol_feas=tol_feas,
        truncation_tol=truncation_tol,
        weight_waiver=bool(raw.get("weight_waiver", False)),
    )


# --- model construction -----------------------------------------------------


def _continuous_matrices(config: ScenarioConfig, lag: float | None = None):
    p = config.model_params
    if config.model_kind == "auv":
        params = AUVParams(
            surge_speed=float(_require(p, "surge_speed", "auv params")),
            m_qdot=float(_require(p, "m_qdot", "auv params")),
            m_uq=float(_require(p, "m_uq", "auv params")),
            m_uuds=float(_require(p, "m_uuds", "auv params")),
            z_g=float(_require(p, "z_g", "auv params")),
            z_b=float(_require(p, "z_b", "auv params")),
            weight=float(_require(p, "weight", "auv params")),
            buoyancy=float(_require(p, "buoyancy", "auv params")),
            pitch_inertia=float(_require(p, "pitch_inertia", "auv params")),
        )
        return auv_continuous_model(params)
    if config.model_kind == "cav":
        params = CAVParams(
            tau=float(lag if lag is not None else _require(p, "tau", "cav params")),
            spacing=config.offset_spacing if config.offset_spacing > 0 else 20.0,
        )
        return cav_continuous_model(params)
    if config.model_kind == "continuous":
        return (
            _as_matrix(_require(p, "a_c", "continuous params"), "a_c"),
            _as_matrix(_require(p, "b_c", "continuous params"), "b_c"),
        )
    raise ParseError(f"model kind {config.model_kind!r} has no continuous form")


def build_model(config: ScenarioConfig, lag: float | None = None) -> SystemModel:
    """Discrete nominal model (or a lag-overridden variant for cav)."""
    if config.model_kind == "discrete":
        A = _as_matrix(_require(config.model_params, "a", "discrete params"), "a")
        B = _as_matrix(_require(config.model_params, "b", "discrete params"), "b")
    else:
        A_c, B_c = _continuous_matrices(config, lag)
        A, B = zoh_discretize(A_c, B_c, config.dt)
    return SystemModel(
        A=A, B=B, input_lower=config.input_lower, input_upper=config.input_upper
    )


def build_offsets(config: ScenarioConfig, state_dim: int) -> FormationOffset:
    if config.offset_spacing > 0.0:
        return FormationOffset.platoon(config.follower_count, config.offset_spacing, state_dim)
    return FormationOffset.zero(config.follower_count, state_dim)


def build_scenario_topology(config: ScenarioConfig) -> Topology:
    return build_topology(config.adjacency, config.pinning)


def synthesize_gain(
    config: ScenarioConfig, model: SystemModel, topology: Topology
) -> TerminalGain:
    """Resolve the disc radius (auto picks inside the admissible interval)
    and run the full gated synthesis."""
    interval = admissible_delta_interval(topology, model)
    delta = config.gain_delta if config.gain_delta is not None else interval.default_delta()
    n = model.state_dim
    Q = config.gain_q
    if Q.ndim == 0:
        Q = float(Q) * np.eye(n)
    elif Q.ndim == 1:
        Q = np.diag(Q)
    return synthesize(model, Q, delta)


# --- validation -------------------------------------------------------------


def validate_scenario(config: ScenarioConfig) -> dict:
    """Check every precondition; returns verdict mapping.

    Keys: ``box_interior``, ``controllability``, ``leader_reachability``,
    ``terminal_contraction``, ``weight_condition``.  Each verdict carries ``passed`` and ``detail``; the weight
    condition additionally carries ``waived``.
    """
    verdicts: dict[str, dict] = {}
    model = None
    try:
        model = build_model(config)
        verdicts["box_interior"] = {"passed": True, "detail": "origin interior to input box"}
        verdicts["controllability"] = {"passed": True, "detail": "(A, B) controllable"}
    except DmpcError as exc:
        name = type(exc).__name__
        if name == "BoxNotInterior":
            verdicts["box_interior"] = {"passed": False, "detail": str(exc)}
            verdicts["controllability"] = {"passed": False, "detail": "skipped: model invalid"}
        else:
            verdicts["box_interior"] = {"passed": False, "detail": f"model invalid: {exc}"}
            verdicts["controllability"] = {"passed": False, "detail": str(exc)}

    topology = None
    try:
        topology = build_scenario_topology(config)
        reachable = has_leader_rooted_spanning_tree(topology)
        verdicts["leader_reachability"] = {
            "passed": reachable,
            "detail": "leader-rooted spanning tree exists"
            if reachable
            else "some follower unreachable from the leader",
        }
    except DmpcError as exc:
        verdicts["leader_reachability"] = {"passed": False, "detail": str(exc)}

    if model is not None and topology is not None and verdicts["leader_reachability"]["passed"]:
        try:
            interval = admissible_delta_interval(topology, model)
            delta = (
                config.gain_delta
                if config.gain_delta is not None
                else interval.default_delta()
            )
            if interval.empty:
                verdicts["terminal_contraction"] = {
                    "passed": False,
                    "detail": f"admissible interval empty (lo={interval.lo:.6g} >= hi={interval.hi:.6g})",
                }
            elif not interval.contains(delta):
                verdicts["terminal_contraction"] = {
                    "passed": False,
                    "detail": f"delta={delta:.6g} outside ({interval.lo:.6g}, {interval.hi:.6g})",
                }
            else:
                gain = synthesize_gain(config, model, topology)
                stacked = stacked_terminal_matrix(topology, model, gain.gain)
                ok = stacked.spectral_radius < 1.0
                detail = (
                    f"delta={delta:.6g} in ({interval.lo:.6g}, {interval.hi:.6g}); "
                    f"terminal map spectral radius {stacked.spectral_radius:.6g}"
                )
                if interval.warning:
                    detail += f"; warning: {interval.warning}"
                verdicts["terminal_contraction"] = {"passed": ok, "detail": detail}
        except DmpcError as exc:
            verdicts["terminal_contraction"] = {"passed": False, "detail": f"gain synthesis failed: {exc}"}
    else:
        verdicts["terminal_contraction"] = {"passed": False, "detail": "skipped: model or graph invalid"}

    if topology is not None:
        try:
            report = check_weight_condition(topology, list(config.weights))
            detail = "residual min eigenvalues: " + ", ".join(
                f"{v:.3e}" for v in report.min_eigenvalues
            )
            verdicts["weight_condition"] = {
                "passed": report.holds,
                "detail": detail,
                "waived": config.weight_waiver,
            }
        except DmpcError as exc:
            verdicts["weight_condition"] = {
                "passed": False,
                "detail": str(exc),
                "waived": config.weight_waiver,
            }
    else:
        verdicts["weight_condition"] = {
            "passed": False,
            "detail": "skipped: graph invalid",
            "waived": config.weight_waiver,
        }
    return verdicts


# --- simulation -------------------------------------------------------------


@dataclass
class SimLog:
    """Per-step record of a completed run."""

    config: ScenarioConfig
    topology: Topology
    gain: TerminalGain
    offsets: FormationOffset
    nominal_model: SystemModel
    states: np.ndarray
    leader_states: np.ndarray
    commanded: np.ndarray
    applied: np.ndarray
    leader_inputs: np.ndarray
    objectives: np.ndarray
    candidate_objectives: np.ndarray
    assumed_terminals: np.ndarray
    leader_terminals: np.ndarray
    stacked_errors: np.ndarray
    terminal_inputs: np.ndarray
    verdicts: dict

    @property
    def steps(self) -> int:
        return self.states.shape[0]

    @property
    def follower_count(self) -> int:
        return self.states.shape[1]

    @property
    def state_dim(self) -> int:
        return self.states.shape[2]

    @property
    def input_dim(self) -> int:
        return self.applied.shape[2]


def scaled_initial_states(config: ScenarioConfig, alpha: float) -> np.ndarray:
    """Follower initial states with errors scaled by alpha about the
    offset-corrected leader targets."""
    model_dim = config.initial_states.shape[1]
    offsets = build_offsets(config, model_dim)
    out = np.empty_like(config.initial_states)
    for i in range(config.follower_count):
        target = config.leader_initial - offsets.of(i + 1)
        out[i] = target + alpha * (config.initial_states[i] - target)
    return out


def build_world(config: ScenarioConfig, seed: int | None = None) -> World:
    """Construct the fully wired round orchestrator for a scenario.

    ``seed`` overrides the scenario's disturbance seed.
    """
    nominal = build_model(config)
    topology = build_scenario_topology(config)
    gain = synthesize_gain(config, nominal, topology)
    offsets = build_offsets(config, nominal.state_dim)

    N = config.follower_count
    if config.controller_lags is not None:
        controllers = [build_model(config, lag) for lag in config.controller_lags]
    else:
        controllers = [nominal] * N
    if config.plant_lags is not None:
        if config.plant_lags == config.controller_lags:
            plants = controllers
        else:
            plants = [build_model(config, lag) for lag in config.plant_lags]
    else:
        plants = controllers

    assumed = initialize(controllers, config.initial_states, config.horizon)
    agents = [
        AgentRuntime(
            agent_id=i + 1,
            model=controllers[i],
            plant=plants[i],
            weights=config.weights[i],
            state=np.asarray(config.initial_states[i], dtype=float).copy(),
            assumed=assumed[i],
            sources=topology.pinned_in_neighbors[i],
            out_ids=topology.out_neighbors[i],
        )
        for i in range(N)
    ]

    rng = None
    if config.disturbance_bound > 0.0:
        use_seed = seed if seed is not None else config.disturbance_seed
        if use_seed is None:
            raise ValidationError("disturbance_seed", "disturbance requires a seed")
        rng = np.random.default_rng(use_seed)

    return World(
        topology=topology,
        gain=gain,
        offsets=offsets,
        leader_model=nominal,
        leader_state=config.leader_initial,
        agents=agents,
        horizon=config.horizon,
        dt=config.dt,
        leader_profile=config.leader_profile,
        disturbance_bound=config.disturbance_bound,
        rng=rng,
        tol_obj=config.tol_obj,
        tol_feas=config.tol_feas,
    )


def run_scenario(config: ScenarioConfig, seed: int | None = None) -> SimLog:
    """Synthesize the gain, initialize the world, and run all rounds.

    ``seed`` overrides the scenario's disturbance seed.  Engine errors
    propagate with their failing round index attached.
    """
    world = build_world(config, seed)
    nominal = world.leader_model
    N = config.follower_count
    T = config.steps
    n, m = nominal.state_dim, nominal.input_dim
    log = SimLog(
        config=config,
        topology=world.topology,
        gain=world.gain,
        offsets=world.offsets,
        nominal_model=nominal,
        states=np.empty((T, N, n)),
        leader_states=np.empty((T, n)),
        commanded=np.empty((T, N, m)),
        applied=np.empty((T, N, m)),
        leader_inputs=np.empty((T, m)),
        objectives=np.empty((T, N)),
        candidate_objectives=np.empty((T, N)),
        assumed_terminals=np.empty((T, N, n)),
        leader_terminals=np.empty((T, n)),
        stacked_errors=np.empty((T, N * n)),
        terminal_inputs=np.empty((T, N, m)),
        verdicts=config.verdicts or validate_scenario(config),
    )
    for t in range(T):
        result = world.round(t)
        log.states[t] = result.states_before
        log.leader_states[t] = result.leader_state_before
        log.commanded[t] = result.commanded
        log.applied[t] = result.applied
        log.leader_inputs[t] = result.leader_input
        log.objectives[t] = result.objectives
        log.candidate_objectives[t] = result.candidate_objectives
        log.assumed_terminals[t] = result.assumed_terminals
        log.leader_terminals[t] = result.leader_terminal
        log.stacked_errors[t] = result.stacked_error
        log.terminal_inputs[t] = result.terminal_inputs
    return log


# --- metrics ----------------------------------------------------------------


def consensus_error_series(log: SimLog, offsets: FormationOffset | None = None):
    """Offset-corrected tracking errors e_i(t) = x_i(t) + delta_i - x_0(t).

    Returns (errors, summary) where errors has shape (T, N, n) and the
    summary maps each follower to its max-norm peak and convergence time
    in seconds (None when the thresholds are never finally met).
    """
    if offsets is None:
        offsets = log.offsets
    T, N, n = log.states.shape
    errors = np.empty((T, N, n))
    for i in range(N):
        errors[:, i, :] = log.states[:, i, :] + offsets.of(i + 1) - log.leader_states
    thresholds = np.asarray(log.config.thresholds, dtype=float)
    if thresholds.size != n:
        thresholds = np.full(n, float(thresholds.ravel()[0]))
    summary = {}
    for i in range(N):
        abs_err = np.abs(errors[:, i, :])
        inside = np.all(abs_err <= thresholds, axis=1)
        conv = None
        # first index after which the error stays inside the band
        outside = np.flatnonzero(~inside)
        if outside.size == 0:
            conv = 0.0
        elif outside[-1] + 1 < T:
            conv = (outside[-1] + 1) * log.config.dt
        summary[i + 1] = {
            "peak": float(np.max(np.linalg.norm(errors[:, i, :], axis=1))),
            "convergence_time": conv,
        }
    return errors, summary


def terminal_recursion_residuals(log: SimLog) -> np.ndarray:
    """Per-step defect of the stacked terminal-error recursion.

    Rebuilds the propagation matrix independently and compares each logged
    stacked error against the previous one advanced by it.  Only defined
    for zero-input leaders and homogeneous controller models.
    """
    if not log.config.zero_input_leader:
        raise DynamicLeaderUnsupported(
            "terminal recursion assumes a zero-input leader"
        )
    if not log.config.homogeneous_controllers:
        raise DynamicLeaderUnsupported(
            "terminal recursion assumes homogeneous controller models"
        )
    abar = stacked_terminal_matrix(log.topology, log.nominal_model, log.gain.gain).matrix
    T = log.steps
    residuals = np.zeros(T)
    for t in range(1, T):
        predicted = abar @ log.stacked_errors[t - 1]
        residuals[t] = float(np.linalg.norm(log.stacked_errors[t] - predicted))
    return residuals


def per_agent_recursion_residuals(log: SimLog) -> np.ndarray:
    """Blockwise (T, N) version of :func:`terminal_recursion_residuals`."""
    if not (log.config.zero_input_leader and log.config.homogeneous_controllers):
        return np.full((log.steps, log.follower_count), np.nan)
    abar = stacked_terminal_matrix(log.topology, log.nominal_model, log.gain.gain).matrix
    T, N, n = log.states.shape
    out = np.zeros((T, N))
    for t in range(1, T):
        defect = log.stacked_errors[t] - abar @ log.stacked_errors[t - 1]
        out[t] = np.linalg.norm(defect.reshape(N, n), axis=1)
    return out


def _series_stage_terms(log: SimLog, stacked: np.ndarray) -> float:
    """One stage of the cost-to-go series from a stacked terminal error."""
    N, n = log.follower_count, log.state_dim
    E = stacked.reshape(N, n)
    K = log.gain.gain
    total = 0.0
    for i in range(N):
        sources = sorted(log.topology.pinned_in_neighbors[i])
        w = log.config.weights[i]
        acc = np.zeros(n)
        for j in sources:
            e_j = np.zeros(n) if j == 0 else E[j - 1]
            acc = acc + (E[i] - e_j)
        u = (K @ acc) / len(sources)
        term = math.sqrt(max(float(u @ w.R @ u), 0.0))
        for j in sources:
            e_j = np.zeros(n) if j == 0 else E[j - 1]
            d = E[i] - e_j
            term += math.sqrt(max(float(d @ w.G @ d), 0.0))
        total += term
    return total


def lyapunov_series(log: SimLog, truncation_tol: float | None = None):
    """Lyapunov value V(t) = sum_i J_i*(t) + q_i*(t) along the run.

    The cost-to-go part q* sums the terminal-stage terms generated by the
    logged stacked errors, continues past the log end by propagating the
    recursion until a stage term falls below ``truncation_tol``, and
    closes with a geometric tail bound from matrix-power norms.

    Returns (V, J_sum, q_sum) arrays of length T.
    """
    if not log.config.zero_input_leader:
        raise DynamicLeaderUnsupported("the cost-to-go series assumes a zero-input leader")
    if truncation_tol is None:
        truncation_tol = log.config.truncation_tol
    stacked_info = stacked_terminal_matrix(log.topology, log.nominal_model, log.gain.gain)
    if stacked_info.spectral_radius >= 1.0:
        raise DivergentSeries(
            f"terminal map spectral radius {stacked_info.spectral_radius:.6g} >= 1"
        )
    abar = stacked_info.matrix
    T = log.steps

    stage = [ _series_stage_terms(log, log.stacked_errors[t]) for t in range(T) ]

    # continue the recursion beyond the logged horizon
    tail_terms = 0.0
    current = abar @ log.stacked_errors[T - 1]
    max_extra = 200_000
    for _ in range(max_extra):
        term = _series_stage_terms(log, current)
        if term < truncation_tol:
            break
        tail_terms += term
        current = abar @ current
    else:
        raise DivergentSeries("cost-to-go series did not truncate")

    # geometric bound on everything past the truncation point
    power = 64
    apow = np.linalg.matrix_power(abar, power)
    s_m = float(np.linalg.norm(apow, 2))
    while s_m >= 1.0 and power <= 4096:
        power *= 2
        apow = np.linalg.matrix_power(abar, power)
        s_m = float(np.linalg.norm(apow, 2))
    if s_m >= 1.0:
        raise DivergentSeries("terminal map power norms do not contract")
    c_w = 0.0
    for i in range(log.follower_count):
        w = log.config.weights[i]
        K = log.gain.gain
        r_fac = math.sqrt(max(float(np.max(np.linalg.eigvalsh(K.T @ w.R @ K))), 0.0))
        g_fac = math.sqrt(max(float(np.max(np.linalg.eigvalsh(w.G))), 0.0))
        srcs = len(log.topology.pinned_in_neighbors[i])
        c_w += math.sqrt(2.0) * (r_fac + srcs * g_fac)
    block = 0.0
    vec = current.copy()
    for _ in range(power):
        block += float(np.linalg.norm(vec))
        vec = abar @ vec
    tail_bound = c_w * block / (1.0 - s_m)

    q_sum = np.empty(T)
    running = tail_terms + tail_bound
    for t in range(T - 1, -1, -1):
        running += stage[t]
        q_sum[t] = running
    j_sum = log.objectives.sum(axis=1)
    v = j_sum + q_sum
    return v, j_sum, q_sum


# --- outputs ----------------------------------------------------------------


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def _write_json(obj, fh, indent: int = 0):
    pad = "  " * indent
    if isinstance(obj, dict):
        if not obj:
            fh.write("{}")
            return
        fh.write("{\n")
        items = list(obj.items())
        for idx, (key, val) in enumerate(items):
            fh.write("  " * (indent + 1) + json.dumps(str(key)) + ": ")
            _write_json(val, fh, indent + 1)
            fh.write(",\n" if idx < len(items) - 1 else "\n")
        fh.write(pad + "}")
    elif isinstance(obj, (list, tuple)):
        if len(obj) == 0:
            fh.write("[]")
            return
        fh.write("[\n")
        for idx, val in enumerate(obj):
            fh.write("  " * (indent + 1))
            _write_json(val, fh, indent + 1)
            fh.write(",\n" if idx < len(obj) - 1 else "\n")
        fh.write(pad + "]")
    elif isinstance(obj, bool):
        fh.write("true" if obj else "false")
    elif obj is None:
        fh.write("null")
    elif isinstance(obj, (int, np.integer)):
        fh.write(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        if math.isnan(obj):
            fh.write("null")
        else:
            fh.write(_fmt(obj))
    else:
        fh.write(json.dumps(str(obj)))


def emit_outputs(log: SimLog, out_dir, render_figures: bool = True) -> list[str]:
    """Write trace.csv, terminal.csv, summary.json, and figures.

    Numeric values are printed with 17 significant digits so repeated runs
    of the same scenario and seed produce byte-identical traces.
    """
    import os

    if log.steps == 0:
        raise IoError("refusing to write outputs for an empty log")
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output directory {out_dir}: {exc}") from exc

    T, N, n = log.states.shape
    m = log.input_dim
    errors, err_summary = consensus_error_series(log)
    try:
        per_agent_res = per_agent_recursion_residuals(log)
    except DmpcError:
        per_agent_res = np.full((T, N), np.nan)

    written = []
    trace_path = os.path.join(out_dir, "trace.csv")
    try:
        with open(trace_path, "w", encoding="utf-8", newline="\n") as fh:
            header = (
                ["t", "agent_id"]
                + [f"x{c + 1}" for c in range(n)]
                + [f"u{c + 1}" for c in range(m)]
                + ["J_star"]
                + [f"e{c + 1}" for c in range(n)]
            )
            fh.write(",".join(header) + "\n")
            for t in range(T):
                leader_row = (
                    [str(t), "0"]
                    + [_fmt(v) for v in log.leader_states[t]]
                    + [_fmt(v) for v in log.leader_inputs[t]]
                    + [_fmt(0.0)]
                    + [_fmt(0.0)] * n
                )
                fh.write(",".join(leader_row) + "\n")
                for i in range(N):
                    row = (
                        [str(t), str(i + 1)]
                        + [_fmt(v) for v in log.states[t, i]]
                        + [_fmt(v) for v in log.applied[t, i]]
                        + [_fmt(log.objectives[t, i])]
                        + [_fmt(v) for v in errors[t, i]]
                    )
                    fh.write(",".join(row) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {trace_path}: {exc}") from exc
    written.append(trace_path)

    terminal_path = os.path.join(out_dir, "terminal.csv")
    try:
        with open(terminal_path, "w", encoding="utf-8", newline="\n") as fh:
            header = ["t", "agent_id"] + [f"xa{c + 1}" for c in range(n)] + ["residual"]
            fh.write(",".join(header) + "\n")
            for t in range(T):
                for i in range(N):
                    row = (
                        [str(t), str(i + 1)]
                        + [_fmt(v) for v in log.assumed_terminals[t, i]]
                        + [_fmt(per_agent_res[t, i])]
                    )
                    fh.write(",".join(row) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write {terminal_path}: {exc}") from exc
    written.append(terminal_path)

    converged = all(
        err_summary[i + 1]["convergence_time"] is not None for i in range(N)
    )
    min_v = None
    final_v = None
    if log.config.zero_input_leader and log.config.nominal_dynamics:
        try:
            v, _, _ = lyapunov_series(log)
            min_v = float(np.min(v))
            final_v = float(v[-1])
        except DmpcError:
            pass
    summary = {
        "name": log.config.name,
        "steps": T,
        "dt": log.config.dt,
        "seed": log.config.disturbance_seed,
        "converged": converged,
        "convergence_time": {
            str(i + 1): err_summary[i + 1]["convergence_time"] for i in range(N)
        },
        "max_input_magnitude": {
            str(i + 1): float(np.max(np.abs(log.applied[:, i, :]))) for i in range(N)
        },
        "peak_error_norm": {
            str(i + 1): err_summary[i + 1]["peak"] for i in range(N)
        },
        "min_V": min_v,
        "final_V": final_v,
        "verdicts": log.verdicts,
    }
    summary_path = os.path.join(out_dir, "summary.json")
    try:
        with open(summary_path, "w", encoding="utf-8", newline="\n") as fh:
            _write_json(summary, fh)
            fh.write("\n")
    except OSError as exc:
        raise IoError(f"cannot write {summary_path}: {exc}") from exc
    written.append(summary_path)

    if render_figures:
        from .figures import render_run_figures

        written.extend(render_run_figures(log, out_dir))
    return written
