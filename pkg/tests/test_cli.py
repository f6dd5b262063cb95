import json
import os

import numpy as np
import pytest

from decrem.cli import load_config, main
from decrem.errors import ConfigError


def write_config(path, **patches):
    cfg = {
        "domain": {"dim": 1, "lo": [0.0], "hi": [1.0], "n_cells": [64]},
        "model": {"family": "constant", "drift": [0.0], "beta": [[1.0]]},
        "time": {"T": 0.5, "n_steps": 64, "scheme": "implicit-euler"},
        "gamma": {"kind": "eigenmode"},
        "output_dir": str(path.parent / "out"),
    }
    for key, value in patches.items():
        if isinstance(value, dict) and key in cfg:
            cfg[key].update(value)
        else:
            cfg[key] = value
    path.write_text(json.dumps(cfg))
    return cfg


def test_load_config_rejects_unknown_keys(tmp_path):
    path = tmp_path / "run.json"
    write_config(path, extra={"x": 1})
    with pytest.raises(ConfigError):
        load_config(path)
    write_config(path, time={"T": 0.5, "n_steps": 64, "step": 1})
    with pytest.raises(ConfigError):
        load_config(path)


def test_load_config_fills_defaults(tmp_path):
    path = tmp_path / "run.json"
    write_config(path)
    cfg = load_config(path)
    assert cfg["tolerances"]["residual_tol"] == 1e-6
    assert cfg["mc"]["n_particles"] == 100000
    assert cfg["spectrum"]["assemble"] is False


def test_set_overrides_parse_json_literals(tmp_path):
    path = tmp_path / "run.json"
    write_config(path)
    cfg = load_config(path, ["time.T=0.25", "mc.seed=7", "time.scheme=crank-nicolson"])
    assert cfg["time"]["T"] == 0.25
    assert cfg["mc"]["seed"] == 7
    assert cfg["time"]["scheme"] == "crank-nicolson"
    with pytest.raises(ConfigError):
        load_config(path, ["no_equals_sign"])
    with pytest.raises(ConfigError):
        load_config(path, ["time.T.deeper=1"])


def test_cmd_seed_happy_path(tmp_path, capsys):
    path = tmp_path / "run.json"
    write_config(path)
    assert main(["seed", str(path)]) == 0
    out_dir = tmp_path / "out"
    report = json.loads((out_dir / "solution" / "report.json").read_text())
    assert report["alpha"] > 0.0
    assert report["residual"] <= 1e-6
    verification = json.loads((out_dir / "verification.json").read_text())
    assert verification["passed"] is True
    manifest = json.loads((out_dir / "manifest.json").read_text())
    names = {entry["name"] for entry in manifest["files"]}
    assert "config.echo.json" in names
    assert os.path.join("solution", "rho.csv") in names
    captured = capsys.readouterr()
    assert "alpha" in captured.out


def test_cmd_seed_alpha_matches_closed_form(tmp_path):
    path = tmp_path / "run.json"
    write_config(
        path,
        domain={"dim": 1, "lo": [0.0], "hi": [1.0], "n_cells": [128]},
        time={"T": 1.0, "n_steps": 256, "scheme": "implicit-euler"},
    )
    assert main(["seed", str(path)]) == 0
    report = json.loads((tmp_path / "out" / "solution" / "report.json").read_text())
    oracle = (1.0 - np.exp(-np.pi**2 / 2)) * np.pi / 2
    assert report["alpha"] == pytest.approx(oracle, rel=2e-2)


def test_cmd_seed_exit_codes(tmp_path):
    path = tmp_path / "run.json"
    write_config(path)
    assert main(["seed", str(path), "--set", "bogus.key=1"]) == 2
    assert main(["seed", str(path), "--set", "model.beta=0.0"]) == 3
    assert (
        main(
            [
                "seed",
                str(path),
                "--set",
                "gamma.kind=tiles",
                "--set",
                "gamma.shape=[4]",
                "--set",
                "gamma.values=[0,0,0,0]",
            ]
        )
        == 4
    )
    assert (
        main(
            [
                "seed",
                str(path),
                "--set",
                "gamma.kind=tiles",
                "--set",
                "gamma.shape=[4]",
                "--set",
                "gamma.values=[1,1,-1,1]",
            ]
        )
        == 5
    )
    assert main(["seed", str(tmp_path / "missing.json")]) == 2


def test_cmd_evolve(tmp_path):
    path = tmp_path / "run.json"
    write_config(path)
    assert main(["seed", str(path)]) == 0
    rho = tmp_path / "out" / "solution" / "rho.csv"
    assert (
        main(
            [
                "evolve",
                str(path),
                "--rho",
                str(rho),
                "--set",
                f"output_dir={tmp_path / 'ev'}",
            ]
        )
        == 0
    )
    traj = json.loads((tmp_path / "ev" / "trajectory" / "trajectory.json").read_text())
    assert traj["positivity_certified"] is True
    assert len(traj["files"]) == 65
    # shape-mismatched rho file
    bad = tmp_path / "bad.csv"
    lines = rho.read_text().splitlines()
    bad.write_text("\n".join(lines[:-3]) + "\n")
    assert main(["evolve", str(path), "--rho", str(bad)]) == 11


def test_cmd_evolve_zero_rho(tmp_path):
    path = tmp_path / "run.json"
    write_config(path)
    from decrem import DensityField, make_grid

    grid = make_grid(1, [0.0], [1.0], [64])
    zero = tmp_path / "zero.csv"
    DensityField.zeros(grid).to_csv(zero)
    out = tmp_path / "zv"
    assert main(["evolve", str(path), "--rho", str(zero), "--set", f"output_dir={out}"]) == 0
    final = (out / "trajectory" / "field_00064.csv").read_text()
    values = [float(line.split(",")[1]) for line in final.splitlines()[1:]]
    assert not any(values)


def test_cmd_spectrum(tmp_path):
    path = tmp_path / "run.json"
    write_config(
        path,
        time={"T": 1.0, "n_steps": 128, "scheme": "crank-nicolson"},
        spectrum={"assemble": True},
    )
    assert main(["spectrum", str(path)]) == 0
    payload = json.loads((tmp_path / "out" / "spectrum.json").read_text())
    assert payload["radius"] == pytest.approx(np.exp(-np.pi**2 / 2), rel=2e-2)
    assert payload["converged"] is True
    assert (tmp_path / "out" / "operator.bin").exists()
    assert (tmp_path / "out" / "singular_values.csv").exists()


def test_cmd_mc_and_determinism(tmp_path):
    path = tmp_path / "run.json"
    write_config(path)
    assert main(["seed", str(path)]) == 0
    rho = str(tmp_path / "out" / "solution" / "rho.csv")
    args = [
        "mc",
        str(path),
        "--rho",
        rho,
        "--set",
        "mc.n_particles=4000",
        "--set",
        "mc.seed=123",
        "--set",
        "mc.dt=0.002",
    ]
    assert main(args + ["--set", f"output_dir={tmp_path / 'm1'}"]) == 0
    assert main(args + ["--set", f"output_dir={tmp_path / 'm2'}"]) == 0
    for name in ("mc/density.csv", "mc/mc.json", "comparison.json"):
        a = (tmp_path / "m1" / name).read_bytes()
        b = (tmp_path / "m2" / name).read_bytes()
        assert a == b
    comparison = json.loads((tmp_path / "m1" / "comparison.json").read_text())
    assert comparison["frac_abs_z_le_4"] >= 0.95
    report = json.loads((tmp_path / "m1" / "mc" / "mc.json").read_text())
    assert set(report) == {"n", "survival", "dt", "seed"}
    assert report["seed"] == 123


def test_cmd_mc_generates_and_echoes_seed(tmp_path, capsys):
    path = tmp_path / "run.json"
    write_config(path)
    assert main(["seed", str(path)]) == 0
    rho = str(tmp_path / "out" / "solution" / "rho.csv")
    out = tmp_path / "auto"
    assert (
        main(
            [
                "mc",
                str(path),
                "--rho",
                rho,
                "--set",
                "mc.n_particles=500",
                "--set",
                "mc.dt=0.005",
                "--set",
                f"output_dir={out}",
            ]
        )
        == 0
    )
    echoed = json.loads((out / "config.echo.json").read_text())["mc"]["seed"]
    assert isinstance(echoed, int)
    stored = json.loads((out / "mc" / "mc.json").read_text())["seed"]
    assert stored == echoed
    assert f"master seed {echoed}" in capsys.readouterr().out


def test_cmd_verify_detects_tampered_alpha(tmp_path):
    path = tmp_path / "run.json"
    write_config(path)
    assert main(["seed", str(path)]) == 0
    solution = tmp_path / "out" / "solution"
    assert (
        main(
            [
                "verify",
                str(path),
                "--solution",
                str(solution),
                "--set",
                f"output_dir={tmp_path / 'v'}",
            ]
        )
        == 0
    )
    report_path = solution / "report.json"
    report = json.loads(report_path.read_text())
    report["alpha"] *= 1.05
    report_path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    assert (
        main(
            [
                "verify",
                str(path),
                "--solution",
                str(solution),
                "--set",
                f"output_dir={tmp_path / 'v2'}",
            ]
        )
        == 13
    )


def test_echo_config_reruns_identically(tmp_path):
    path = tmp_path / "run.json"
    write_config(path)
    assert main(["seed", str(path)]) == 0
    echo = tmp_path / "out" / "config.echo.json"
    rerun_dir = tmp_path / "rerun"
    assert main(["seed", str(echo), "--set", f"output_dir={rerun_dir}"]) == 0
    for name in (
        "solution/rho.csv",
        "solution/report.json",
        "verification.json",
    ):
        a = (tmp_path / "out" / name).read_bytes()
        b = (rerun_dir / name).read_bytes()
        assert a == b


def test_manifest_hashes_are_correct(tmp_path):
    import hashlib

    path = tmp_path / "run.json"
    write_config(path)
    assert main(["seed", str(path)]) == 0
    out = tmp_path / "out"
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["files"]
    for entry in manifest["files"]:
        digest = hashlib.sha256((out / entry["name"]).read_bytes()).hexdigest()
        assert digest == entry["sha256"]
