import json

import pytest
import yaml

from dmpcsim.cli import main

from conftest import scenario_path


def write_scalar_scenario(path, **overrides):
    """Scalar chain scenario written to a YAML file, returning the path."""
    raw = {
        "name": "cli_scalar",
        "model": {
            "kind": "discrete",
            "dt": 0.1,
            "input_box": [-1.0, 1.0],
            "params": {"a": [[1.0]], "b": [[1.0]]},
        },
        "horizon": 3,
        "followers": 2,
        "topology": {"adjacency": [[0, 0], [1, 0]], "pinning": [1, 0]},
        "gain": {"q": 1.0, "delta": 0.5},
        "weights": [
            {"r": 1.0, "f": 2.0, "g": 1.0},
            {"r": 1.0, "f": 1.0, "g": 1.0},
        ],
        "initial_states": {"leader": [0.0], "followers": [[0.8], [-0.4]]},
        "run": {"steps": 20},
        "thresholds": [0.01],
    }
    raw.update(overrides)
    path.write_text(yaml.safe_dump(raw))
    return str(path)


def test_gain_reports_closed_form(tmp_path, capsys):
    scenario = write_scalar_scenario(tmp_path / "s.yaml")
    assert main(["gain", scenario]) == 0
    out = capsys.readouterr().out
    # scalar integrator at delta 0.5: P = 2, K = 2/3
    assert "P =" in out and "K =" in out
    assert " 2]" in out
    assert "0.6666666667" in out
    assert "delta = 0.5" in out
    assert "delta interval" in out
    assert "disc report" in out


def test_check_passes_shipped_scenario(capsys):
    assert main(["check", scenario_path("auv_diving")]) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 5
    assert "FAIL" not in out


def test_check_fails_weight_condition(tmp_path, capsys):
    scenario = write_scalar_scenario(
        tmp_path / "weak.yaml",
        weights=[
            {"r": 1.0, "f": 0.5, "g": 1.0},
            {"r": 1.0, "f": 1.0, "g": 2.0},
        ],
    )
    assert main(["check", scenario]) == 1
    out = capsys.readouterr().out
    assert "FAIL weight_condition" in out


def test_check_honors_waiver(tmp_path, capsys):
    scenario = write_scalar_scenario(
        tmp_path / "waived.yaml",
        weights=[
            {"r": 1.0, "f": 0.5, "g": 1.0},
            {"r": 1.0, "f": 1.0, "g": 2.0},
        ],
        weight_waiver=True,
    )
    assert main(["check", scenario]) == 0
    assert "(waived)" in capsys.readouterr().out


def test_simulate_writes_outputs(tmp_path, capsys):
    scenario = write_scalar_scenario(tmp_path / "s.yaml")
    out_dir = tmp_path / "out"
    assert main(["simulate", scenario, "--out", str(out_dir), "--no-figures"]) == 0
    printed = capsys.readouterr().out.splitlines()
    assert len(printed) == 3
    for name in ("trace.csv", "terminal.csv", "summary.json"):
        assert (out_dir / name).is_file()
    summary = json.loads((out_dir / "summary.json").read_text())
    assert summary["name"] == "cli_scalar"
    assert summary["converged"] is True


def test_simulate_renders_figures(tmp_path):
    scenario = write_scalar_scenario(tmp_path / "s.yaml")
    out_dir = tmp_path / "out"
    assert main(["simulate", scenario, "--out", str(out_dir)]) == 0
    assert (out_dir / "states.png").is_file()
    assert (out_dir / "inputs.png").is_file()
    assert (out_dir / "errors.png").is_file()


def test_simulate_seed_override_repeats_bytes(tmp_path):
    scenario = write_scalar_scenario(
        tmp_path / "s.yaml", disturbance={"bound": 0.05, "seed": 1}
    )
    for sub in ("a", "b"):
        assert (
            main(
                [
                    "simulate",
                    scenario,
                    "--out",
                    str(tmp_path / sub),
                    "--seed",
                    "77",
                    "--no-figures",
                ]
            )
            == 0
        )
    assert (tmp_path / "a" / "trace.csv").read_bytes() == (
        tmp_path / "b" / "trace.csv"
    ).read_bytes()


def test_missing_scenario_exits_io(capsys):
    assert main(["simulate", "/no/such/file.yaml", "--out", "/tmp/x"]) == 3
    assert "error:" in capsys.readouterr().err


def test_bad_yaml_exits_validation(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("model: [unclosed\n")
    assert main(["check", str(path)]) == 1
    assert "error:" in capsys.readouterr().err


def test_failed_precondition_blocks_simulate(tmp_path, capsys):
    scenario = write_scalar_scenario(
        tmp_path / "weak.yaml",
        weights=[
            {"r": 1.0, "f": 0.5, "g": 1.0},
            {"r": 1.0, "f": 1.0, "g": 2.0},
        ],
    )
    assert main(["simulate", scenario, "--out", str(tmp_path / "out")]) == 1


def test_runtime_infeasibility_exits_2(tmp_path, capsys):
    # the consensus input for a unit gap is 2/3, far outside a 0.05 box
    scenario = write_scalar_scenario(
        tmp_path / "tight.yaml",
        model={
            "kind": "discrete",
            "dt": 0.1,
            "input_box": [-0.05, 0.05],
            "params": {"a": [[1.0]], "b": [[1.0]]},
        },
        initial_states={"leader": [0.0], "followers": [[1.0], [0.9]]},
    )
    assert main(["simulate", scenario, "--out", str(tmp_path / "out")]) == 2
    assert "error:" in capsys.readouterr().err


def test_probe_reports_scales(tmp_path, capsys):
    scenario = write_scalar_scenario(
        tmp_path / "tight.yaml",
        model={
            "kind": "discrete",
            "dt": 0.1,
            "input_box": [-0.05, 0.05],
            "params": {"a": [[1.0]], "b": [[1.0]]},
        },
        initial_states={"leader": [0.0], "followers": [[1.0], [0.9]]},
        run={"steps": 10},
    )
    assert main(["probe", scenario, "--scales", "1,0.05"]) == 0
    out = capsys.readouterr().out
    assert "scale 1: infeasible" in out
    assert "scale 0.05: feasible" in out
    assert "largest feasible scale: 0.05" in out


def test_probe_rejects_bad_scales(tmp_path, capsys):
    scenario = write_scalar_scenario(tmp_path / "s.yaml")
    assert main(["probe", scenario, "--scales", "abc"]) == 1
    assert main(["probe", scenario, "--scales", ""]) == 1


def test_console_script_installed():
    import shutil
    import subprocess

    exe = shutil.which("dmpcsim")
    assert exe is not None
    proc = subprocess.run(
        [exe, "check", scenario_path("consensus_fixedpoint")],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert proc.stdout.count("PASS") == 5
