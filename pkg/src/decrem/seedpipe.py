"""Seed construction: an initial density whose absorbed evolution loses a
programmed profile.

Given a nonnegative decrement profile gamma, solve (I - Q) zeta = gamma,
normalize rho = zeta / integral(zeta) and set alpha = 1 / integral(zeta).
Evolving rho to time T then satisfies p(., 0) - p(., T) = alpha * gamma up
to solver tolerances.  The profile enters only through its shape: it is
rescaled to unit sup before solving, so rho and the reported alpha are
invariant under gamma -> c * gamma and alpha always multiplies the profile
as exported in ``decrement.csv``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    GammaNegative,
    GammaZero,
    NegativityViolation,
    ResidualTooLarge,
)
from .fredholm import ResolventReport, apply_Q, solve_resolvent
from .grid import DensityField, mass, norm_sup
from .kolmogorov import evolve, mass_curve

GAMMA_KINDS = ("eigenmode", "bump", "tiles", "csv")


@dataclass(frozen=True)
class TargetProfile:
    """A validated decrement profile: nonnegative, not identically zero."""

    kind: str
    field: DensityField


def _validate_gamma(kind, field):
    v = field.values
    if np.any(v < 0.0):
        i = int(np.argmin(v))
        raise GammaNegative(
            f"gamma takes value {v[i]:.6g} < 0 at node {i}; the decrement "
            "profile must be nonnegative"
        )
    if not np.any(v > 0.0):
        raise GammaZero("gamma is identically zero")
    return TargetProfile(kind=kind, field=field)


def realize_gamma(grid, spec):
    """Build a :class:`TargetProfile` from a config mapping.

    Kinds: ``eigenmode`` (product of half-period sines), ``bump``
    (indicator of a sub-box), ``tiles`` (piecewise constants on a regular
    partition, row-major values), ``csv`` (field file).
    """
    kind = spec.get("kind")
    if kind not in GAMMA_KINDS:
        raise ValueError(f"unknown gamma kind {kind!r}, expected one of {GAMMA_KINDS}")
    if kind == "eigenmode":
        def fn(*coords):
            out = 1.0
            for k, c in enumerate(coords):
                out = out * np.sin(
                    np.pi * (c - grid.lo[k]) / (grid.hi[k] - grid.lo[k])
                )
            return out

        field = DensityField.from_function(grid, fn)
        # sampled sine is positive at every cell center; clip stray round-off
        field = field.with_values(np.maximum(field.values, 0.0))
    elif kind == "bump":
        lo = np.asarray(spec["lo"], dtype=float)
        hi = np.asarray(spec["hi"], dtype=float)
        value = float(spec.get("value", 1.0))
        pts = grid.nodes()
        inside = np.all((pts >= lo) & (pts < hi), axis=1)
        field = DensityField(grid, np.where(inside, value, 0.0))
    elif kind == "tiles":
        shape = tuple(int(s) for s in spec["shape"])
        if len(shape) != grid.dim:
            raise ValueError(f"tiles shape {shape} does not match dim {grid.dim}")
        values = np.asarray(spec["values"], dtype=float).reshape(shape)
        pts = grid.nodes()
        idx = []
        for k in range(grid.dim):
            width = (grid.hi[k] - grid.lo[k]) / shape[k]
            ik = np.floor((pts[:, k] - grid.lo[k]) / width).astype(int)
            idx.append(np.clip(ik, 0, shape[k] - 1))
        field = DensityField(grid, values[tuple(idx)])
    else:
        field = DensityField.from_csv(grid, spec["file"])
    return _validate_gamma(kind, field)


@dataclass
class SeedSolution:
    """Everything :func:`run_seed` produces, ready for export."""

    gamma: TargetProfile  # sup-normalized profile actually solved for
    zeta: DensityField
    u0: DensityField
    uT: DensityField
    rho: DensityField
    alpha: float
    residual: float
    negativity: float
    resolvent: ResolventReport
    mass_curve: list
    decrement: DensityField
    T: float

    def save(self, directory):
        """Write rho/u0/uT/decrement CSVs and report.json; returns file names."""
        os.makedirs(directory, exist_ok=True)
        names = ["rho.csv", "u0.csv", "uT.csv", "decrement.csv"]
        self.rho.to_csv(os.path.join(directory, "rho.csv"))
        self.u0.to_csv(os.path.join(directory, "u0.csv"))
        self.uT.to_csv(os.path.join(directory, "uT.csv"))
        self.decrement.to_csv(os.path.join(directory, "decrement.csv"))
        report = {
            "alpha": self.alpha,
            "residual": self.residual,
            "negativity": self.negativity,
            "iterations": self.resolvent.iterations,
            "method": self.resolvent.method,
            "mass_curve": [[t, m] for t, m in self.mass_curve],
        }
        with open(os.path.join(directory, "report.json"), "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return names + ["report.json"]


def run_seed(
    model,
    grid,
    config,
    gamma,
    T,
    tol=1e-6,
    resolvent_tol=None,
    resolvent_max_iter=200,
    eps_neg=None,
    allow_non_monotone=False,
):
    """Construct the seed density for a decrement profile.

    ``tol`` bounds the end-to-end sup residual of p(., 0) - p(., T) =
    alpha * gamma, measured on the sup-normalized profile.  The resolvent
    is solved tighter (default ``min(1e-9, tol * 1e-3)``) so the recomputed
    trajectory stays within budget.
    """
    if isinstance(gamma, DensityField):
        gamma = _validate_gamma("csv", gamma)
    if config.scheme != "implicit-euler" and not allow_non_monotone:
        raise ValueError(
            "seed construction requires the positivity-certified implicit-euler "
            "scheme; pass allow_non_monotone=True to override"
        )
    sup_g = norm_sup(gamma.field)
    gamma = TargetProfile(gamma.kind, gamma.field.with_values(gamma.field.values / sup_g))
    if resolvent_tol is None:
        resolvent_tol = min(1e-9, tol * 1e-3)
    report = solve_resolvent(
        model, grid, config, gamma.field, T,
        tol=resolvent_tol, max_iter=resolvent_max_iter,
    )
    zeta = report.zeta
    u0 = zeta.values.copy()
    uT = apply_Q(model, grid, config, zeta, T)
    if eps_neg is None:
        eps_neg = 1e-10 * max(float(u0.max()), 0.0)
    worst = float(min(u0.min(), 0.0))
    if worst < -eps_neg:
        raise NegativityViolation(
            f"u(., 0) reaches {worst:.3e} < -eps_neg = {-eps_neg:.3e}; "
            "refine the grid or use the monotone scheme"
        )
    u0[(u0 < 0.0)] = 0.0
    u0_field = DensityField(grid, u0)
    total = mass(u0_field)
    if not total > 0.0:
        raise NegativityViolation("u(., 0) carries no mass after clamping")
    alpha = 1.0 / total
    rho = DensityField(grid, alpha * u0)
    traj = evolve(model, grid, config, rho, 0.0, T)
    p0 = traj.fields[0].values
    pT = traj.fields[-1].values
    diff = p0 - pT - alpha * gamma.field.values
    residual = float(np.abs(diff).max()) / norm_sup(gamma.field)
    if residual > tol:
        raise ResidualTooLarge(
            f"decrement residual {residual:.3e} exceeds tol {tol:g}",
            residual=residual,
        )
    return SeedSolution(
        gamma=gamma,
        zeta=zeta,
        u0=u0_field,
        uT=uT,
        rho=rho,
        alpha=alpha,
        residual=residual,
        negativity=worst,
        resolvent=report,
        mass_curve=mass_curve(traj),
        decrement=DensityField(grid, p0 - pT),
        T=float(T),
    )


@dataclass
class VerificationReport:
    """Outcome of independently re-evolving a stored seed solution."""

    residual_stored: float
    residual_refined: float
    mass_decreasing: bool
    mass_curve: list
    decrement: DensityField
    passed: bool

    def to_json_dict(self):
        return {
            "residual_stored": self.residual_stored,
            "residual_refined": self.residual_refined,
            "mass_decreasing": self.mass_decreasing,
            "mass_curve": [[t, m] for t, m in self.mass_curve],
            "passed": self.passed,
        }


def verify_seed(model, grid, config, solution, tol=5e-3):
    """Re-evolve rho with doubled n_steps and re-measure the decrement.

    The refined march does not share the construction's time grid, so its
    residual floor is the first-order-in-dt difference between the two
    discrete operators rather than the resolvent tolerance; ``tol`` must
    sit above that floor (about 3e-3 for 64 implicit-euler steps over
    T=0.5, shrinking linearly in dt).  A tampered rho or alpha shows up as
    a residual an order of magnitude beyond it.  The mass curve of the
    refined trajectory must decrease strictly.
    """
    refined = replace(config, n_steps=2 * config.n_steps)
    traj = evolve(model, grid, config=refined, rho=solution.rho, s=0.0, T=solution.T)
    p0 = traj.fields[0].values
    pT = traj.fields[-1].values
    diff = p0 - pT - solution.alpha * solution.gamma.field.values
    residual_refined = float(np.abs(diff).max()) / norm_sup(solution.gamma.field)
    curve = mass_curve(traj)
    masses = np.array([m for _, m in curve])
    decreasing = bool(np.all(np.diff(masses) < 0.0))
    passed = residual_refined <= tol and decreasing
    return VerificationReport(
        residual_stored=solution.residual,
        residual_refined=residual_refined,
        mass_decreasing=decreasing,
        mass_curve=curve,
        decrement=DensityField(grid, p0 - pT),
        passed=passed,
    )


def load_solution(grid, directory):
    """Reload a saved solution directory for verification.

    The stored decrement is taken as the realized (normalized) profile
    scaled by alpha, so gamma = decrement / alpha up to the stored residual.
    """
    rho = DensityField.from_csv(grid, os.path.join(directory, "rho.csv"))
    u0 = DensityField.from_csv(grid, os.path.join(directory, "u0.csv"))
    uT = DensityField.from_csv(grid, os.path.join(directory, "uT.csv"))
    decrement = DensityField.from_csv(grid, os.path.join(directory, "decrement.csv"))
    with open(os.path.join(directory, "report.json")) as fh:
        report = json.load(fh)
    return rho, u0, uT, decrement, report
