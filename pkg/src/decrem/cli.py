"""Command line driver: seed | evolve | spectrum | mc | verify.

Each subcommand reads one JSON config, optionally patched by repeated
``--set dotted.path=value`` overrides, resolves defaults, echoes the
effective config into the output directory and writes a manifest with a
SHA-256 per produced file.  Reports contain no timestamps or absolute
paths, so a rerun with the same config (and seed) is byte-identical.

Every failure mode maps to a stable exit code:

====  =====================================
   0  success
   1  unexpected internal error
   2  config error (parse, unknown key, bad value)
   3  ellipticity violation
   4  gamma identically zero
   5  gamma negative
   6  inner linear solve failure
   7  outer iteration did not converge
   8  seed density negativity beyond tolerance
   9  decrement residual too large
  10  dense assembly cap exceeded
  11  field/grid shape mismatch
  12  sampling input not a density
  13  stored solution failed verification
====  =====================================
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import secrets
import sys

import numpy as np

from .errors import (
    CapExceeded,
    ConfigError,
    EllipticityViolation,
    GammaNegative,
    GammaZero,
    LinearSolveFailure,
    NegativityViolation,
    NoConvergence,
    NotADensity,
    ResidualTooLarge,
    ShapeMismatch,
    ToolkitError,
    VerificationFailed,
)
from .fredholm import assemble_Q, propagator_action, singular_values, spectral_radius
from .grid import DensityField, make_grid, mass
from .kolmogorov import SolverConfig, evolve, save_trajectory
from .model import (
    check_ellipticity,
    constant_model,
    load_tabulated,
    load_tabulated_series,
    ou_model,
)
from .montecarlo import default_dt, estimate_density, sample_initial, simulate
from .seedpipe import (
    SeedSolution,
    TargetProfile,
    load_solution,
    realize_gamma,
    run_seed,
    verify_seed,
)

EXIT_CODES = (
    (ConfigError, 2),
    (EllipticityViolation, 3),
    (GammaZero, 4),
    (GammaNegative, 5),
    (LinearSolveFailure, 6),
    (NoConvergence, 7),
    (NegativityViolation, 8),
    (ResidualTooLarge, 9),
    (CapExceeded, 10),
    (ShapeMismatch, 11),
    (NotADensity, 12),
    (VerificationFailed, 13),
)

_DEFAULTS = {
    "tolerances": {
        "residual_tol": 1e-6,
        "resolvent_tol": None,
        "resolvent_max_iter": 200,
        "linear_solver_tol": 1e-10,
        "linear_solver_max_iter": 500,
        "eps_neg": None,
        "verify_tol": 5e-3,
    },
    "spectrum": {"tol": 1e-6, "max_iter": 200, "assemble": False, "cap": 4096},
    "mc": {"n_particles": 100000, "dt": None, "seed": None, "bins": 32},
}

_ALLOWED = {
    "domain": {"dim", "lo", "hi", "n_cells"},
    "model": {"family", "drift", "beta", "rate", "center", "file", "manifest"},
    "time": {"T", "n_steps", "scheme"},
    "gamma": {"kind", "lo", "hi", "value", "shape", "values", "file"},
    "tolerances": set(_DEFAULTS["tolerances"]),
    "spectrum": set(_DEFAULTS["spectrum"]),
    "mc": set(_DEFAULTS["mc"]),
}
_TOP_KEYS = set(_ALLOWED) | {"output_dir"}
_REQUIRED = ("domain", "model", "time", "output_dir")


def _apply_override(cfg, item):
    if "=" not in item:
        raise ConfigError(f"--set expects path.to.key=value, got {item!r}")
    path, raw = item.split("=", 1)
    keys = path.split(".")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set path {path!r} crosses a non-object value")
    node[keys[-1]] = value


def _reject_unknown(cfg):
    for key in cfg:
        if key not in _TOP_KEYS:
            raise ConfigError(f"unknown top-level config key {key!r}")
        if key == "output_dir":
            continue
        block = cfg[key]
        if not isinstance(block, dict):
            raise ConfigError(f"config block {key!r} must be an object")
        for sub in block:
            if sub not in _ALLOWED[key]:
                raise ConfigError(f"unknown key {key}.{sub!r}")


def load_config(path, overrides=()):
    """Read, override, validate and default-resolve a run config."""
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config root must be a JSON object")
    for item in overrides:
        _apply_override(cfg, item)
    _reject_unknown(cfg)
    for key in _REQUIRED:
        if key not in cfg:
            raise ConfigError(f"config is missing required key {key!r}")
    merged = copy.deepcopy(cfg)
    for block, defaults in _DEFAULTS.items():
        target = merged.setdefault(block, {})
        for k, v in defaults.items():
            target.setdefault(k, v)
    return merged


def _build_grid(cfg):
    d = cfg["domain"]
    try:
        return make_grid(d["dim"], d["lo"], d["hi"], d["n_cells"])
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad domain block: {exc}") from exc


def _build_model(cfg, grid, base_dir):
    m = cfg["model"]
    family = m.get("family")
    try:
        if family == "constant":
            return constant_model(m["drift"], m["beta"])
        if family == "linear-drift":
            return ou_model(m["rate"], m["center"], m["beta"])
        if family == "tabulated":
            if "manifest" in m:
                return load_tabulated_series(
                    grid, os.path.join(base_dir, m["manifest"])
                )
            return load_tabulated(grid, os.path.join(base_dir, m["file"]))
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad model block: {exc}") from exc
    raise ConfigError(f"unknown model family {family!r}")


def _build_solver(cfg):
    t = cfg["time"]
    tol = cfg["tolerances"]
    try:
        config = SolverConfig(
            n_steps=int(t["n_steps"]),
            scheme=t.get("scheme", "implicit-euler"),
            linear_solver_tol=float(tol["linear_solver_tol"]),
            linear_solver_max_iter=int(tol["linear_solver_max_iter"]),
        )
        T = float(t["T"])
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad time block: {exc}") from exc
    if not T > 0.0:
        raise ConfigError(f"time.T must be positive, got {T}")
    return config, T


def _build_gamma(cfg, grid, base_dir):
    if "gamma" not in cfg:
        raise ConfigError("this command needs a gamma block in the config")
    spec = dict(cfg["gamma"])
    if spec.get("kind") == "csv":
        spec["file"] = os.path.join(base_dir, spec["file"])
    try:
        return realize_gamma(grid, spec)
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad gamma block: {exc}") from exc


def _echo_config(cfg, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "config.echo.json")
    with open(path, "w") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return "config.echo.json"


def _write_json(out_dir, name, payload):
    with open(os.path.join(out_dir, name), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return name


def _write_manifest(out_dir, names):
    entries = []
    for name in sorted(set(names)):
        with open(os.path.join(out_dir, name), "rb") as fh:
            digest = hashlib.sha256(fh.read()).hexdigest()
        entries.append({"name": name, "sha256": digest})
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump({"files": entries}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_seed(cfg, base_dir):
    grid = _build_grid(cfg)
    model = _build_model(cfg, grid, base_dir)
    config, T = _build_solver(cfg)
    gamma = _build_gamma(cfg, grid, base_dir)
    tol = cfg["tolerances"]
    solution = run_seed(
        model,
        grid,
        config,
        gamma,
        T,
        tol=float(tol["residual_tol"]),
        resolvent_tol=tol["resolvent_tol"],
        resolvent_max_iter=int(tol["resolvent_max_iter"]),
        eps_neg=tol["eps_neg"],
    )
    verification = verify_seed(model, grid, config, solution, tol=float(tol["verify_tol"]))
    out_dir = cfg["output_dir"]
    os.makedirs(os.path.join(out_dir, "solution"), exist_ok=True)
    names = [os.path.join("solution", n) for n in solution.save(os.path.join(out_dir, "solution"))]
    names.append(_write_json(out_dir, "verification.json", verification.to_json_dict()))
    names.append(_echo_config(cfg, out_dir))
    _write_manifest(out_dir, names)
    print(f"alpha     {solution.alpha:.12g}")
    print(f"residual  {solution.residual:.3e} ({solution.resolvent.method}, "
          f"{solution.resolvent.iterations} operator applications)")
    print(f"verify    refined residual {verification.residual_refined:.3e}, "
          f"mass decreasing: {verification.mass_decreasing}")
    if not verification.passed:
        raise VerificationFailed(
            f"refined residual {verification.residual_refined:.3e} exceeds "
            f"verify_tol {tol['verify_tol']:g} or mass curve not decreasing"
        )
    return 0


def cmd_evolve(cfg, base_dir, rho_path):
    grid = _build_grid(cfg)
    model = _build_model(cfg, grid, base_dir)
    config, T = _build_solver(cfg)
    rho = DensityField.from_csv(grid, rho_path)
    traj = evolve(model, grid, config, rho, 0.0, T)
    out_dir = cfg["output_dir"]
    traj_dir = os.path.join(out_dir, "trajectory")
    names = [os.path.join("trajectory", n) for n in save_trajectory(traj, traj_dir)]
    names.append(_echo_config(cfg, out_dir))
    _write_manifest(out_dir, names)
    final = traj.fields[-1]
    print(f"evolved to T={T:g} in {config.n_steps} steps ({config.scheme})")
    print(f"final mass {mass(final):.12g}")
    if not traj.positivity_certified:
        print("warning: positivity not certified for this scheme/model")
    return 0


def cmd_spectrum(cfg, base_dir):
    grid = _build_grid(cfg)
    model = _build_model(cfg, grid, base_dir)
    config, T = _build_solver(cfg)
    spec = cfg["spectrum"]
    act = propagator_action(model, grid, config, T)
    est = spectral_radius(
        act, n=grid.n, tol=float(spec["tol"]), max_iter=int(spec["max_iter"])
    )
    out_dir = cfg["output_dir"]
    os.makedirs(out_dir, exist_ok=True)
    payload = {
        "radius": est.value,
        "converged": est.converged,
        "iterations": est.iterations,
    }
    names = []
    if spec["assemble"]:
        opmat = assemble_Q(model, grid, config, T, cap=int(spec["cap"]))
        sv = singular_values(opmat)
        payload["singular_value_head"] = [float(s) for s in sv[:8]]
        payload["column_mass_range"] = [
            float(opmat.column_masses().min()),
            float(opmat.column_masses().max()),
        ]
        names += [os.path.basename(p) for p in opmat.save(os.path.join(out_dir, "operator"))]
        with open(os.path.join(out_dir, "singular_values.csv"), "w", newline="") as fh:
            fh.write("index,sigma\n")
            for i, s in enumerate(sv):
                fh.write(f"{i},{float(s)!r}\n")
        names.append("singular_values.csv")
    names.append(_write_json(out_dir, "spectrum.json", payload))
    names.append(_echo_config(cfg, out_dir))
    _write_manifest(out_dir, names)
    print(f"spectral radius {est.value:.9g} "
          f"(converged: {est.converged}, {est.iterations} iterations)")
    if not est.converged:
        raise NoConvergence(
            f"power iteration did not stabilize in {spec['max_iter']} iterations"
        )
    return 0


def _coarsen(values, grid, bins):
    """Sum cell masses into a regular partition with ``bins`` boxes per axis."""
    w = values.reshape(grid.shape) * grid.cell_volume
    if grid.dim == 1:
        edges = np.linspace(0, grid.n_cells[0], bins + 1).astype(int)
        return np.add.reduceat(w, edges[:-1])
    ex = np.linspace(0, grid.n_cells[0], bins + 1).astype(int)
    ey = np.linspace(0, grid.n_cells[1], bins + 1).astype(int)
    out = np.add.reduceat(w, ex[:-1], axis=0)
    return np.add.reduceat(out, ey[:-1], axis=1).reshape(-1)


def cmd_mc(cfg, base_dir, rho_path):
    grid = _build_grid(cfg)
    model = _build_model(cfg, grid, base_dir)
    config, T = _build_solver(cfg)
    mc = cfg["mc"]
    if model.delta is None:
        check_ellipticity(model, grid, times=(0.0, T))
    seed = mc["seed"]
    if seed is None:
        seed = secrets.randbits(63)
    cfg["mc"]["seed"] = int(seed)
    rho = DensityField.from_csv(grid, rho_path)
    n = int(mc["n_particles"])
    dt = mc["dt"]
    dt = float(dt) if dt is not None else default_dt(model, grid, T)
    ensemble = sample_initial(rho, n, int(seed))
    ensemble = simulate(model, grid, ensemble, T, dt=dt)
    estimate = estimate_density(ensemble, grid)
    traj = evolve(model, grid, config, rho, 0.0, T)
    pde_final = traj.fields[-1]
    bins = int(mc["bins"])
    bins = min(bins, min(grid.n_cells))
    q = _coarsen(pde_final.values, grid, bins)
    counts = _coarsen(estimate.histogram.values, grid, bins) * n
    qc = np.clip(q, 1e-12, 1.0)
    z = (counts / n - q) / np.sqrt(qc * (1.0 - qc) / n)
    out_dir = cfg["output_dir"]
    mc_dir = os.path.join(out_dir, "mc")
    names = [os.path.join("mc", p) for p in estimate.save(mc_dir)]
    comparison = {
        "bins": bins,
        "survival_mc": estimate.survival,
        "survival_pde": mass(pde_final),
        "frac_abs_z_le_4": float(np.mean(np.abs(z) <= 4.0)),
        "max_abs_z": float(np.abs(z).max()),
        "dt": dt,
    }
    names.append(_write_json(out_dir, "comparison.json", comparison))
    names.append(_echo_config(cfg, out_dir))
    _write_manifest(out_dir, names)
    print(f"master seed {int(seed)}")
    print(f"survival: mc {estimate.survival:.6f} vs pde {comparison['survival_pde']:.6f}")
    print(f"z-scores within +-4: {100.0 * comparison['frac_abs_z_le_4']:.1f}%")
    return 0


def cmd_verify(cfg, base_dir, solution_dir):
    grid = _build_grid(cfg)
    model = _build_model(cfg, grid, base_dir)
    config, T = _build_solver(cfg)
    gamma = _build_gamma(cfg, grid, base_dir)
    tol = cfg["tolerances"]
    rho, u0, uT, decrement, report = load_solution(grid, solution_dir)
    sup = float(np.max(gamma.field.values))
    gamma = TargetProfile(gamma.kind, gamma.field.with_values(gamma.field.values / sup))
    try:
        alpha = float(report["alpha"])
        stored_residual = float(report["residual"])
    except (KeyError, TypeError, ValueError) as exc:
        raise VerificationFailed(f"report.json is malformed: {exc}") from exc
    if abs(alpha * mass(u0) - 1.0) > 1e-6:
        raise VerificationFailed(
            f"stored alpha {alpha!r} is inconsistent with integral of u0"
        )
    if np.any(rho.values < 0.0) or abs(mass(rho) - 1.0) > 1e-9:
        raise VerificationFailed("stored rho is not a probability density")
    solution = SeedSolution(
        gamma=gamma,
        zeta=u0,
        u0=u0,
        uT=uT,
        rho=rho,
        alpha=alpha,
        residual=stored_residual,
        negativity=0.0,
        resolvent=None,
        mass_curve=[],
        decrement=decrement,
        T=T,
    )
    verification = verify_seed(model, grid, config, solution, tol=float(tol["verify_tol"]))
    out_dir = cfg["output_dir"]
    os.makedirs(out_dir, exist_ok=True)
    names = [_write_json(out_dir, "verification.json", verification.to_json_dict())]
    names.append(_echo_config(cfg, out_dir))
    _write_manifest(out_dir, names)
    print(f"refined residual {verification.residual_refined:.3e} "
          f"(stored {verification.residual_stored:.3e})")
    print(f"mass decreasing: {verification.mass_decreasing}")
    if not verification.passed:
        raise VerificationFailed(
            f"solution in {solution_dir} fails re-evolution: refined residual "
            f"{verification.residual_refined:.3e} > {tol['verify_tol']:g} "
            f"or mass curve not decreasing"
        )
    print("verification passed")
    return 0


def _parser():
    parser = argparse.ArgumentParser(
        prog="decrem",
        description="Seed densities with programmed decrement profiles "
        "for absorbed diffusions.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("config", help="path to JSON run config")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="PATH=VALUE",
            help="override a config entry, e.g. --set time.T=0.5",
        )

    common(sub.add_parser("seed", help="construct, verify and export a seed density"))
    p = sub.add_parser("evolve", help="evolve a density and export the trajectory")
    common(p)
    p.add_argument("--rho", required=True, help="CSV of the initial density")
    common(sub.add_parser("spectrum", help="operator diagnostics"))
    p = sub.add_parser("mc", help="particle simulation cross-check")
    common(p)
    p.add_argument("--rho", required=True, help="CSV of the initial density")
    p = sub.add_parser("verify", help="re-check a stored solution directory")
    common(p)
    p.add_argument("--solution", required=True, help="solution directory from seed")
    return parser


def main(argv=None):
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        base_dir = os.path.dirname(os.path.abspath(args.config))
        if args.command == "seed":
            return cmd_seed(cfg, base_dir)
        if args.command == "evolve":
            return cmd_evolve(cfg, base_dir, args.rho)
        if args.command == "spectrum":
            return cmd_spectrum(cfg, base_dir)
        if args.command == "mc":
            return cmd_mc(cfg, base_dir, args.rho)
        if args.command == "verify":
            return cmd_verify(cfg, base_dir, args.solution)
        raise ConfigError(f"unknown command {args.command!r}")
    except ToolkitError as exc:
        for klass, code in EXIT_CODES:
            if isinstance(exc, klass):
                print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
                return code
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - last resort
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
