"""Acceptance gate: one test per shipped guarantee, at the stated tolerance.

Run with -v to get one pass/fail line per criterion.  Session fixtures in
conftest.py execute each shipped scenario once and share the logs.
"""

import dataclasses
import math
import time

import numpy as np
import pytest
import yaml

from dmpcsim.cli import main as cli_main
from dmpcsim.errors import Infeasible
from dmpcsim.local_ocp import (
    Weights,
    build_problem,
    check_weight_condition,
    solve,
)
from dmpcsim.plant_models import FormationOffset, SystemModel, Trajectory
from dmpcsim.sim_harness import (
    build_scenario_topology,
    build_world,
    consensus_error_series,
    load_scenario,
    lyapunov_series,
)
from dmpcsim.terminal_gain import (
    mare_residual,
    solve_mare,
    terminal_gain,
    verify_schur_disc,
)

from conftest import scenario_path
from oracles import grid_oracle


def independent_stacked_matrix(log):
    """Terminal-error propagation matrix rebuilt from raw graph data."""
    A = log.nominal_model.A
    BK = log.nominal_model.B @ log.gain.gain
    norm_lap = np.linalg.solve(log.topology.pinned_degree, log.topology.pinned_laplacian)
    N = log.follower_count
    return np.kron(np.eye(N), A) - np.kron(norm_lap, BK)


def shifted_plan_worst_violation(config, steps: int) -> float:
    """Replays rounds, checking the shifted plan against each new problem.

    Independently reassembles every agent's round-t problem from the
    broadcast protocol state and evaluates the previous optimum (shifted,
    with the consensus tail input) against its constraints.
    """
    world = build_world(config)
    worst = 0.0
    for t in range(steps):
        if t >= 1:
            leader_plan = world.broadcast()
            states_by_id = {a.agent_id: a.assumed.states for a in world.agents}
            for agent in world.agents:
                plans = {}
                for j in sorted(agent.sources):
                    if j == 0:
                        plans[0] = leader_plan
                    else:
                        plans[j] = Trajectory(
                            states=states_by_id[j],
                            inputs=np.zeros((world.horizon, agent.model.input_dim)),
                        )
                problem = build_problem(
                    agent.model,
                    agent.weights,
                    world.horizon,
                    agent.state,
                    agent.assumed,
                    plans,
                    world.offsets,
                    agent.agent_id,
                )
                violation = problem.feasibility_violation(agent.assumed.inputs.ravel())
                worst = max(worst, violation)
        world.round(t)
    return worst


def test_criterion_01_riccati_fixed_point():
    start = time.perf_counter()
    model = SystemModel(A=[[1.0]], B=[[1.0]], input_lower=[-1.0], input_upper=[1.0])

    P = solve_mare(model, np.eye(1), 0.0)
    assert abs(P[0, 0] - (1.0 + math.sqrt(5.0)) / 2.0) <= 1e-12

    P = solve_mare(model, np.eye(1), 0.5)
    assert abs(P[0, 0] - 2.0) <= 1e-12
    K = terminal_gain(P, model)
    assert abs(K[0, 0] - 2.0 / 3.0) <= 1e-12
    assert abs((model.A - model.B @ K)[0, 0] - 1.0 / 3.0) <= 1e-12

    rng = np.random.default_rng(11)
    checked = 0
    attempts = 0
    worst = 0.0
    while checked < 12 and attempts < 200:
        attempts += 1
        n = int(rng.integers(1, 5))
        m = int(rng.integers(1, 3))
        A = rng.normal(size=(n, n))
        radius = max(np.abs(np.linalg.eigvals(A)))
        A *= rng.uniform(0.3, 1.0) / max(radius, 1e-9)
        B = rng.normal(size=(n, m))
        try:
            sys = SystemModel(A=A, B=B, input_lower=-np.ones(m), input_upper=np.ones(m))
        except Exception:
            continue
        M = rng.normal(size=(n, n))
        Q = M @ M.T + 0.1 * np.eye(n)
        delta = float(rng.uniform(0.05, 0.9))
        P = solve_mare(sys, Q, delta)
        res = mare_residual(sys, Q, P, delta)
        worst = max(worst, res)
        assert res <= 1e-10
        checked += 1
    assert checked == 12
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0
    print(f"criterion 01: worst relative residual {worst:.3e} ({elapsed:.2f} s)")


def test_criterion_02_disc_stability_margin(auv_run, cav_run):
    start = time.perf_counter()
    radii = {}
    for run in (auv_run, cav_run):
        log = run.log
        report = verify_schur_disc(
            log.nominal_model,
            log.gain.gain,
            log.gain.disc_radius,
            sample_count=192,
        )
        assert report.sample_count >= 192
        assert report.max_spectral_radius < 1.0
        assert report.stable
        radii[log.config.name] = report.max_spectral_radius
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0
    print(f"criterion 02: max disc spectral radii {radii} ({elapsed:.2f} s)")


def test_criterion_03_terminal_error_recursion(
    auv_run, auv_disturbance_run, fixedpoint_run
):
    for run in (auv_run, auv_disturbance_run, fixedpoint_run):
        log = run.log
        abar = independent_stacked_matrix(log)
        rho = max(np.abs(np.linalg.eigvals(abar)))
        assert rho < 1.0

        norms = np.linalg.norm(log.stacked_errors, axis=1)
        if norms[0] == 0.0:
            assert np.all(norms == 0.0)
        else:
            assert norms.min() <= 1e-6 * norms[0], log.config.name

        worst = 0.0
        for t in range(1, log.steps):
            defect = log.stacked_errors[t] - abar @ log.stacked_errors[t - 1]
            worst = max(worst, float(np.linalg.norm(defect)))
        assert worst <= 1e-8, log.config.name
    print("criterion 03: recursion residuals <= 1e-8, decay within run, rho < 1")


def test_criterion_04_shifted_plan_bounds_optimum(
    auv_run, cav_run, cav_hetero_run, fixedpoint_run
):
    gaps = {}
    for run in (auv_run, cav_run, cav_hetero_run, fixedpoint_run):
        log = run.log
        cand = log.candidate_objectives[1:]
        assert np.all(np.isfinite(cand)), log.config.name
        gap = float(np.max(log.objectives[1:] - cand))
        assert gap <= 1e-6, log.config.name
        gaps[log.config.name] = gap

    violations = {}
    for name, steps in (
        ("auv_diving", 60),
        ("cav_platoon", 60),
        ("cav_platoon_hetero", 40),
        ("consensus_fixedpoint", 20),
    ):
        config = load_scenario(scenario_path(name))
        v = shifted_plan_worst_violation(config, steps)
        assert v <= 1e-9, name
        violations[name] = v
    print(f"criterion 04: objective gaps {gaps}; constraint violations {violations}")


def test_criterion_05_lyapunov_decrease(auv_run, fixedpoint_run):
    v, _, _ = lyapunov_series(auv_run.log)
    dv_max = float(np.max(np.diff(v)))
    assert dv_max <= 1e-6
    assert v[-1] < v[0]

    v0, _, _ = lyapunov_series(fixedpoint_run.log)
    assert np.all(v0 == 0.0)
    print(f"criterion 05: max V increment {dv_max:.3e}; fixed point V == 0")


def test_criterion_06_weight_condition_equality_case():
    config = load_scenario(scenario_path("cav_platoon"))
    topo = build_scenario_topology(config)
    weights = list(config.weights)

    report = check_weight_condition(topo, weights)
    assert report.holds
    assert min(report.min_eigenvalues) >= -1e-12
    # shipped weights sit exactly on the boundary
    assert max(abs(v) for v in report.min_eigenvalues) <= 1e-12

    def bumped(j):
        out = list(weights)
        w = out[j - 1]
        out[j - 1] = Weights(R=w.R, F=w.F, G=w.G + 1e-3 * np.eye(3))
        return out

    for j in (2, 3, 4, 5):
        assert not check_weight_condition(topo, bumped(j)).holds, j
    # nobody informs follower 1, so its G never enters the condition
    assert check_weight_condition(topo, bumped(1)).holds
    print("criterion 06: boundary case holds; every participating G bump flips")


def test_criterion_07_auv_tracking_bands(auv_run):
    log = auv_run.log
    assert np.allclose(log.config.thresholds, [0.01, 0.005, 0.01])
    _, summary = consensus_error_series(log)
    times = {i: summary[i]["convergence_time"] for i in summary}
    for i, conv in times.items():
        assert conv is not None and conv <= 60.0, i
    max_u = float(np.max(np.abs(log.applied)))
    assert max_u <= np.pi / 6.0
    assert auv_run.runtime < 30.0
    print(
        f"criterion 07: convergence {times}, max |u| {max_u:.4f} "
        f"(runtime {auv_run.runtime:.1f} s)"
    )


def test_criterion_08_cav_platoon_bands(cav_run):
    log = cav_run.log
    dt = log.config.dt
    assert np.allclose(log.config.thresholds[:2], [0.05, 0.02])
    errors, summary = consensus_error_series(log)

    times = {i: summary[i]["convergence_time"] for i in summary}
    for i, conv in times.items():
        assert conv is not None and conv <= 30.0, i
    assert np.all(np.abs(errors[-1, :, 0]) <= 0.05)
    assert np.all(np.abs(errors[-1, :, 1]) <= 0.02)

    # after the leader pulse, the windowed error envelope only shrinks
    window = int(round(3.0 / dt))
    start = int(round(6.0 / dt)) + 1
    worst_rise = 0.0
    for i in range(log.follower_count):
        for c in (0, 1):
            series = np.abs(errors[start:, i, c])
            env = np.array(
                [series[k : k + window].max() for k in range(len(series) - window + 1)]
            )
            peak = int(np.argmax(env))
            rises = np.diff(env[peak:])
            if rises.size:
                worst_rise = max(worst_rise, float(rises.max()))
    assert worst_rise <= 1e-9

    max_u = float(np.max(np.abs(log.applied)))
    assert max_u <= 3.0
    assert cav_run.runtime < 30.0
    print(
        f"criterion 08: convergence {times}, envelope rise {worst_rise:.1e}, "
        f"max |u| {max_u:.3f} (runtime {cav_run.runtime:.1f} s)"
    )


def test_criterion_09_robustness_variants(
    auv_run, auv_disturbance_run, cav_hetero_run, cav_mismatch_run
):
    # (a) bounded input noise keeps errors inside 5x the nominal band
    _, nominal_summary = consensus_error_series(auv_run.log)
    conv = max(s["convergence_time"] for s in nominal_summary.values())
    dist_log = auv_disturbance_run.log
    errors, _ = consensus_error_series(dist_log)
    k0 = int(np.ceil(conv / dist_log.config.dt))
    band = 5.0 * np.asarray(dist_log.config.thresholds)
    tail_max = np.abs(errors[k0:]).max(axis=(0, 1))
    assert np.all(tail_max <= band)

    # (b) heterogeneous lags with matched controllers still converge
    _, hetero_summary = consensus_error_series(cav_hetero_run.log)
    hetero_times = [s["convergence_time"] for s in hetero_summary.values()]
    assert all(t is not None for t in hetero_times)

    # (c) controlling every lag with the nominal model is strictly slower
    mismatch_cfg = cav_mismatch_run.log.config
    assert np.allclose(mismatch_cfg.thresholds, cav_hetero_run.log.config.thresholds)
    _, mismatch_summary = consensus_error_series(cav_mismatch_run.log)
    mismatch_times = [s["convergence_time"] for s in mismatch_summary.values()]
    assert all(t is not None for t in mismatch_times)
    assert max(mismatch_times) > max(hetero_times)
    print(
        f"criterion 09: noise tail {tail_max.tolist()} vs band {band.tolist()}; "
        f"matched {max(hetero_times):.1f} s < mismatched {max(mismatch_times):.1f} s"
    )


def random_ocp_instance(rng):
    while True:
        n = int(rng.integers(1, 3))
        horizon = int(rng.integers(1, 4))
        A = rng.normal(size=(n, n))
        radius = max(np.abs(np.linalg.eigvals(A)))
        A *= rng.uniform(0.3, 1.1) / max(radius, 1e-9)
        B = rng.normal(size=(n, 1))
        hi = float(rng.uniform(0.8, 1.5))
        try:
            model = SystemModel(A=A, B=B, input_lower=[-hi], input_upper=[hi])
        except Exception:
            continue
        weights = Weights(
            R=np.diag([float(rng.uniform(0.2, 2.0))]),
            F=np.diag(rng.uniform(0.0, 2.0, size=n)),
            G=np.diag(rng.uniform(0.0, 2.0, size=n)),
        )
        x0 = 0.5 * rng.normal(size=n)
        u_a = rng.uniform(-0.8 * hi, 0.8 * hi, size=(horizon, 1))
        states = np.empty((horizon + 1, n))
        states[0] = x0
        for k in range(horizon):
            states[k + 1] = A @ states[k] + B @ u_a[k]
        assumed = Trajectory(states=states, inputs=u_a)
        sources = [0] if rng.random() < 0.5 else [0, 2]
        neighbors = {
            j: Trajectory(
                states=0.5 * rng.normal(size=(horizon + 1, n)),
                inputs=np.zeros((horizon, 1)),
            )
            for j in sources
        }
        offsets = FormationOffset(0.3 * rng.normal(size=(2, n)))
        return build_problem(
            model, weights, horizon, x0, assumed, neighbors, offsets, agent=1
        )


def test_criterion_10_solver_oracle_equivalence():
    rng = np.random.default_rng(2024)
    compared = 0
    draws = 0
    worst = 0.0
    while compared < 50 and draws < 400:
        draws += 1
        problem = random_ocp_instance(rng)
        j_oracle, _ = grid_oracle(problem)
        if j_oracle is None:
            continue
        sol = solve(problem)
        diff = abs(sol.objective - j_oracle)
        worst = max(worst, diff)
        assert diff <= 1e-4
        compared += 1
    assert compared == 50

    # single-step problems: the terminal equality fixes the input exactly
    for _ in range(10):
        a = float(rng.uniform(-1.2, 1.2))
        b = float(rng.choice([-1.0, 1.0]) * rng.uniform(0.4, 1.5))
        hi = float(rng.uniform(0.5, 1.2))
        model = SystemModel(A=[[a]], B=[[b]], input_lower=[-hi], input_upper=[hi])
        x0 = float(rng.uniform(-0.5, 0.5))
        u_pick = float(rng.uniform(-0.8 * hi, 0.8 * hi))
        xa0 = float(rng.uniform(-0.5, 0.5))
        target0 = float(rng.uniform(-0.5, 0.5))
        r, f, g = (float(rng.uniform(0.2, 2.0)) for _ in range(3))
        problem = build_problem(
            model,
            Weights(R=[[r]], F=[[f]], G=[[g]]),
            1,
            [x0],
            Trajectory(states=[[xa0], [a * x0 + b * u_pick]], inputs=[[u_pick]]),
            {0: Trajectory(states=[[target0], [0.0]], inputs=[[0.0]])},
            FormationOffset.zero(1, 1),
            agent=1,
        )
        sol = solve(problem)
        u_forced = (a * x0 + b * u_pick - a * x0) / b
        j_hand = (
            math.sqrt(f) * abs(x0 - xa0)
            + math.sqrt(g) * abs(x0 - target0)
            + math.sqrt(r) * abs(u_forced)
        )
        assert abs(sol.trajectory.inputs[0, 0] - u_forced) <= 1e-8
        assert abs(sol.objective - j_hand) <= 1e-8

    # targets beyond the box's reach must be reported, not silently clipped
    for target in (5.0, -4.0):
        model = SystemModel(A=[[1.0]], B=[[1.0]], input_lower=[-0.1], input_upper=[0.1])
        problem = build_problem(
            model,
            Weights(R=[[1.0]], F=[[1.0]], G=[[1.0]]),
            3,
            [0.0],
            Trajectory(
                states=[[0.0], [target / 3], [2 * target / 3], [target]],
                inputs=np.zeros((3, 1)),
            ),
            {},
            FormationOffset.zero(1, 1),
            agent=1,
        )
        with pytest.raises(Infeasible):
            solve(problem)
    print(
        f"criterion 10: {compared} oracle comparisons (worst gap {worst:.2e}), "
        "10 forced cases, 2 infeasible cases"
    )


def test_criterion_11_byte_identical_replay(tmp_path):
    with open(scenario_path("auv_diving_disturbance"), "r", encoding="utf-8") as fh:
        raw = yaml.safe_load(fh)
    raw["run"]["steps"] = 40
    scenario = tmp_path / "replay.yaml"
    scenario.write_text(yaml.safe_dump(raw))

    for sub in ("first", "second"):
        code = cli_main(
            [
                "simulate",
                str(scenario),
                "--out",
                str(tmp_path / sub),
                "--seed",
                "5",
                "--no-figures",
            ]
        )
        assert code == 0
    first = (tmp_path / "first" / "trace.csv").read_bytes()
    second = (tmp_path / "second" / "trace.csv").read_bytes()
    assert first == second
    print(f"criterion 11: trace.csv identical across replays ({len(first)} bytes)")
