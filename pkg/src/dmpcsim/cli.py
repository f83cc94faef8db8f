"""Command-line front end.

Subcommands: ``gain`` (terminal-gain synthesis report), ``check``
(precondition verdicts), ``simulate`` (full run with file outputs), and
``probe`` (initial-condition feasibility sweep).  Exit codes: 0 success,
1 validation failure, 2 runtime infeasibility, 3 I/O failure.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from .dmpc_engine import feasibility_probe
from .errors import (
    DmpcError,
    EngineError,
    GainError,
    IoError,
    ModelError,
    OcpError,
    ParseError,
    TopologyError,
    ValidationError,
)
from .sim_harness import (
    build_model,
    build_scenario_topology,
    emit_outputs,
    load_scenario,
    run_scenario,
    synthesize_gain,
)
from .terminal_gain import admissible_delta_interval

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_IO = 3


def _matrix_lines(name: str, M: np.ndarray) -> list[str]:
    rows = np.atleast_2d(M)
    out = [f"{name} ="]
    for row in rows:
        out.append("    [" + ", ".join(f"{v: .10g}" for v in row) + "]")
    return out


def _cmd_gain(args) -> int:
    config = load_scenario(args.scenario)
    model = build_model(config)
    topology = build_scenario_topology(config)
    interval = admissible_delta_interval(topology, model)
    gain = synthesize_gain(config, model, topology)
    lines = []
    lines.extend(_matrix_lines("P", gain.riccati_solution))
    lines.extend(_matrix_lines("K", gain.gain))
    lines.append(f"residual = {gain.mare_residual:.6e}")
    lines.append(f"delta = {gain.disc_radius:.10g}")
    lines.append(f"delta interval = ({interval.lo:.10g}, {interval.hi:.10g})")
    if interval.warning:
        lines.append(f"interval warning: {interval.warning}")
    report = gain.disc_report
    lines.append(
        "disc report: max spectral radius "
        f"{report.max_spectral_radius:.10g} over {report.sample_count} samples "
        f"(worst sigma {report.worst_sigma.real:.6g}{report.worst_sigma.imag:+.6g}j)"
    )
    print("\n".join(lines))
    return EXIT_OK


def _cmd_check(args) -> int:
    config = load_scenario(args.scenario, strict=False)
    verdicts = config.verdicts or {}
    ok = True
    for name, verdict in verdicts.items():
        status = "PASS" if verdict["passed"] else "FAIL"
        suffix = ""
        if not verdict["passed"] and verdict.get("waived", False):
            suffix = " (waived)"
        elif not verdict["passed"]:
            ok = False
        print(f"{status}{suffix} {name}: {verdict['detail']}")
    return EXIT_OK if ok else EXIT_VALIDATION


def _cmd_simulate(args) -> int:
    config = load_scenario(args.scenario)
    log = run_scenario(config, seed=args.seed)
    written = emit_outputs(log, args.out, render_figures=not args.no_figures)
    for path in written:
        print(path)
    return EXIT_OK


def _cmd_probe(args) -> int:
    config = load_scenario(args.scenario)
    try:
        scales = [float(part) for part in args.scales.split(",") if part.strip()]
    except ValueError as exc:
        raise ParseError(f"bad --scales value {args.scales!r}") from exc
    if not scales:
        raise ParseError("--scales must list at least one factor")
    result = feasibility_probe(config, scales)
    for report in result.reports:
        if report.feasible:
            print(f"scale {report.scale:g}: feasible")
        else:
            where = f"round {report.round_index}, agent {report.agent}"
            print(f"scale {report.scale:g}: infeasible ({where}: {report.failure})")
    if result.largest_feasible is None:
        print("largest feasible scale: none")
    else:
        print(f"largest feasible scale: {result.largest_feasible:g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dmpcsim",
        description="distributed MPC consensus simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_gain = sub.add_parser("gain", help="synthesize and report the terminal gain")
    p_gain.add_argument("scenario", help="scenario YAML file")
    p_gain.set_defaults(func=_cmd_gain)

    p_check = sub.add_parser("check", help="validate a scenario and print verdicts")
    p_check.add_argument("scenario", help="scenario YAML file")
    p_check.set_defaults(func=_cmd_check)

    p_sim = sub.add_parser("simulate", help="run a scenario and write outputs")
    p_sim.add_argument("scenario", help="scenario YAML file")
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.add_argument("--seed", type=int, default=None, help="disturbance seed override")
    p_sim.add_argument(
        "--no-figures", action="store_true", help="skip figure rendering"
    )
    p_sim.set_defaults(func=_cmd_simulate)

    p_probe = sub.add_parser("probe", help="sweep scaled initial conditions")
    p_probe.add_argument("scenario", help="scenario YAML file")
    p_probe.add_argument(
        "--scales", default="1,0.5,0.25", help="comma-separated scale factors"
    )
    p_probe.set_defaults(func=_cmd_probe)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ParseError, ValidationError, TopologyError, ModelError, GainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OcpError, EngineError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except IoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except DmpcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
