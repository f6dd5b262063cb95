"""Euler-Maruyama particle simulation of the absorbed diffusion.

Randomness comes from counter-based Philox streams keyed by the master
seed: step k draws its normal increments from the counter block k << 128,
inside which particle i reads slots [i*dim, (i+1)*dim).  Every variate is
therefore a pure function of (seed, step, particle), so results do not
depend on execution order or thread count, and two runs to different
horizons agree on their common steps.  Normals are produced by applying
the inverse normal CDF (scipy.special.ndtri) to Philox uniforms; that
choice is part of the reproducibility contract of this release.

Absorption uses end-of-step exit detection: a particle found outside the
open box after a step is frozen there and never moves again.  This carries
the usual O(sqrt(dt)) survival bias of discrete exit checks, which the
package absorbs into its statistical tolerances.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np
from numpy.random import Generator, Philox
from scipy.special import ndtri

from .errors import NotADensity
from .grid import DensityField, mass
from .model import eval_a

_STEP_STRIDE = 1 << 128  # counter block per time step
_INIT_BLOCK = 1 << 200  # far above any reachable step block


def _uniforms(seed, block, shape):
    bg = Philox(key=int(seed) & ((1 << 128) - 1), counter=block)
    u = Generator(bg).random(shape)
    # random() can return exactly 0, which ndtri maps to -inf
    return np.clip(u, 5e-324, None)


def _normals(seed, step, n, dim):
    return ndtri(_uniforms(seed, step * _STEP_STRIDE, (n, dim)))


@dataclass
class ParticleEnsemble:
    """Particle positions with absorption flags and stream bookkeeping."""

    positions: np.ndarray  # (n, dim)
    alive: np.ndarray  # (n,) bool
    seed: int
    t: float
    step_offset: int = 0
    dt: float | None = None

    @property
    def n(self):
        return self.positions.shape[0]

    def survival(self):
        return float(self.alive.mean())


def sample_initial(rho, n, seed):
    """Draw n particles from a density field: cell choice then uniform in cell.

    Raises NotADensity unless ``rho`` is nonnegative with unit mass to 1e-9.
    """
    grid = rho.grid
    v = rho.values
    if np.any(v < 0.0):
        raise NotADensity(f"density has negative value {v.min():.6g}")
    total = mass(rho)
    if abs(total - 1.0) > 1e-9:
        raise NotADensity(f"density mass {total!r} differs from 1 by more than 1e-9")
    weights = v * grid.cell_volume
    weights = weights / weights.sum()
    rng = Generator(Philox(key=int(seed) & ((1 << 128) - 1), counter=_INIT_BLOCK))
    cells = rng.choice(grid.n, size=n, p=weights)
    offsets = rng.random((n, grid.dim))
    lo_corner = np.empty((n, grid.dim))
    for k in range(grid.dim):
        if grid.dim == 1:
            ik = cells
        else:
            ik = cells // grid.n_cells[1] if k == 0 else cells % grid.n_cells[1]
        lo_corner[:, k] = grid.lo[k] + grid.h[k] * ik
    positions = lo_corner + offsets * np.asarray(grid.h)
    return ParticleEnsemble(
        positions=positions,
        alive=np.ones(n, dtype=bool),
        seed=int(seed),
        t=0.0,
    )


def default_dt(model, grid, T, t=0.0):
    """dt = min(1e-3 * T, h^2 / (4 max a)) unless overridden."""
    pts = grid.nodes()
    a = eval_a(model, pts, t)
    if grid.dim == 1:
        a_max = float(np.max(np.abs(a[:, 0, 0])))
    else:
        a_max = float(np.max(np.abs(np.linalg.eigvalsh(a))))
    return min(1e-3 * T, min(grid.h) ** 2 / (4.0 * a_max))


def _strictly_inside(positions, grid):
    ok = np.ones(positions.shape[0], dtype=bool)
    for k in range(grid.dim):
        ok &= (positions[:, k] > grid.lo[k]) & (positions[:, k] < grid.hi[k])
    return ok


def simulate(model, grid, ensemble, T, dt=None):
    """Advance the ensemble to exactly time T (last step shortened)."""
    if dt is None:
        dt = default_dt(model, grid, T)
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    if not T > ensemble.t:
        raise ValueError(f"T={T} is not ahead of ensemble time {ensemble.t}")
    if dt > T - ensemble.t:
        raise ValueError(f"dt={dt} exceeds the remaining horizon {T - ensemble.t}")
    pos = ensemble.positions.copy()
    alive = ensemble.alive.copy()
    n, dim = pos.shape
    t = ensemble.t
    k = ensemble.step_offset
    while t < T - 1e-14 * max(1.0, abs(T)):
        step = min(dt, T - t)
        z = _normals(ensemble.seed, k, n, dim)
        f = model.drift_at(pos, t)
        b = model.beta_at(pos, t)
        if dim == 1:
            move = f[:, 0] * step + b[:, 0, 0] * np.sqrt(step) * z[:, 0]
            new = pos[:, 0] + move
            pos[alive, 0] = new[alive]
        else:
            move = f * step + np.sqrt(step) * np.einsum("nij,nj->ni", b, z)
            pos[alive] = (pos + move)[alive]
        alive &= _strictly_inside(pos, grid)
        t += step
        k += 1
    return ParticleEnsemble(
        positions=pos,
        alive=alive,
        seed=ensemble.seed,
        t=float(T),
        step_offset=k,
        dt=float(dt),
    )


@dataclass
class MCEstimate:
    """Histogram density of survivors with per-cell binomial error bars."""

    histogram: DensityField
    stderr: DensityField
    survival: float
    n: int
    seed: int
    dt: float | None

    def save(self, directory):
        """Write density.csv (coords, density, stderr) and mc.json."""
        os.makedirs(directory, exist_ok=True)
        grid = self.histogram.grid
        pts = grid.nodes()
        coord_names = ["x", "y"][: grid.dim]
        with open(os.path.join(directory, "density.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(coord_names + ["density", "stderr"])
            for i in range(grid.n):
                row = [repr(float(c)) for c in pts[i]]
                row.append(repr(float(self.histogram.values[i])))
                row.append(repr(float(self.stderr.values[i])))
                writer.writerow(row)
        report = {
            "n": self.n,
            "survival": self.survival,
            "dt": self.dt,
            "seed": self.seed,
        }
        with open(os.path.join(directory, "mc.json"), "w") as fh:
            json.dump(report, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return ["density.csv", "mc.json"]


def estimate_density(ensemble, grid):
    """Bin survivors into grid cells: density = counts / (n * cell volume).

    The histogram mass equals the survival fraction exactly.
    """
    alive_pos = ensemble.positions[ensemble.alive]
    flat = np.zeros(alive_pos.shape[0], dtype=int)
    for k in range(grid.dim):
        ik = np.floor((alive_pos[:, k] - grid.lo[k]) / grid.h[k]).astype(int)
        ik = np.clip(ik, 0, grid.n_cells[k] - 1)
        flat = flat * grid.n_cells[k] + ik
    counts = np.bincount(flat, minlength=grid.n).astype(float)
    n = ensemble.n
    vol = grid.cell_volume
    density = counts / (n * vol)
    phat = counts / n
    stderr = np.sqrt(phat * (1.0 - phat) / n) / vol
    return MCEstimate(
        histogram=DensityField(grid, density),
        stderr=DensityField(grid, stderr),
        survival=float(ensemble.alive.sum() / n),
        n=n,
        seed=ensemble.seed,
        dt=ensemble.dt,
    )
