"""Drift/diffusion coefficient models and the ellipticity certificate.

A model pairs a drift field f(x, t) with a diffusion factor beta(x, t).
The generator uses a = (1/2) beta beta^T.  Three families cover the
supported inputs: constant coefficients, linear drift toward a center
(Ornstein-Uhlenbeck type), and coefficients tabulated on a grid.
"""

from __future__ import annotations

import csv
import json
import os

import numpy as np

from .errors import EllipticityViolation, ShapeMismatch
from .grid import _COORD_NAMES

FAMILIES = ("constant", "linear-drift", "tabulated")


class DiffusionModel:
    """Vectorized coefficient evaluation for one of the supported families.

    ``drift_fn(points, t)`` maps an (N, dim) array to (N, dim);
    ``beta_fn(points, t)`` maps it to (N, dim, dim).  ``delta`` is the
    certified lower bound on the eigenvalues of beta beta^T; it is None
    until :func:`check_ellipticity` has run.
    """

    def __init__(self, dim, drift_fn, beta_fn, family, time_dependent=False):
        if family not in FAMILIES:
            raise ValueError(f"unknown family {family!r}, expected one of {FAMILIES}")
        self.dim = int(dim)
        self._drift_fn = drift_fn
        self._beta_fn = beta_fn
        self.family = family
        self.time_dependent = bool(time_dependent)
        self.delta = None

    def drift_at(self, points, t):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.asarray(self._drift_fn(points, float(t)), dtype=float)
        if out.shape != (points.shape[0], self.dim):
            raise ShapeMismatch(f"drift returned shape {out.shape}")
        return out

    def beta_at(self, points, t):
        points = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.asarray(self._beta_fn(points, float(t)), dtype=float)
        if out.shape != (points.shape[0], self.dim, self.dim):
            raise ShapeMismatch(f"beta returned shape {out.shape}")
        return out


def _as_beta_matrix(beta, dim):
    beta = np.asarray(beta, dtype=float)
    if beta.ndim == 0:
        beta = beta * np.eye(dim)
    if beta.shape != (dim, dim):
        raise ValueError(f"beta must be scalar or {dim}x{dim}, got {beta.shape}")
    return beta


def constant_model(drift, beta):
    """Constant drift vector and constant diffusion factor matrix."""
    drift = np.atleast_1d(np.asarray(drift, dtype=float))
    dim = drift.shape[0]
    beta = _as_beta_matrix(beta, dim)
    return DiffusionModel(
        dim,
        lambda pts, t: np.broadcast_to(drift, (pts.shape[0], dim)).copy(),
        lambda pts, t: np.broadcast_to(beta, (pts.shape[0], dim, dim)).copy(),
        family="constant",
    )


def ou_model(rate, center, beta):
    """Linear drift f(x) = -rate * (x - center) with constant beta."""
    center = np.atleast_1d(np.asarray(center, dtype=float))
    dim = center.shape[0]
    rate = np.broadcast_to(np.asarray(rate, dtype=float), (dim,)).copy()
    beta = _as_beta_matrix(beta, dim)
    return DiffusionModel(
        dim,
        lambda pts, t: -rate * (pts - center),
        lambda pts, t: np.broadcast_to(beta, (pts.shape[0], dim, dim)).copy(),
        family="linear-drift",
    )


class _Table:
    """One time sample of tabulated coefficients on its own grid.

    Evaluation is piecewise constant on cells: a query point reads the
    coefficients of the cell it falls in (clipped to the box).  The table
    grid must therefore be at least as fine as any solver grid used with it.
    """

    def __init__(self, grid, drift_values, beta_values):
        dim = grid.dim
        drift_values = np.asarray(drift_values, dtype=float).reshape(grid.n, dim)
        beta_values = np.asarray(beta_values, dtype=float).reshape(grid.n, dim, dim)
        self.grid = grid
        self.drift_values = drift_values
        self.beta_values = beta_values

    def _cells(self, points):
        g = self.grid
        idx = np.zeros(points.shape[0], dtype=int)
        for k in range(g.dim):
            ik = np.floor((points[:, k] - g.lo[k]) / g.h[k]).astype(int)
            ik = np.clip(ik, 0, g.n_cells[k] - 1)
            idx = idx * g.n_cells[k] + ik
        return idx

    def drift(self, points):
        return self.drift_values[self._cells(points)]

    def beta(self, points):
        return self.beta_values[self._cells(points)]


def tabulated_model(grid, drift_values, beta_values, times=None, series=None):
    """Coefficients tabulated on ``grid``.

    Either pass one (drift_values, beta_values) sample for a steady model,
    or ``times`` together with ``series`` = list of such pairs, in which
    case evaluation interpolates linearly in time and holds the end samples
    constant beyond the sampled range.
    """
    if series is None:
        tables = [_Table(grid, drift_values, beta_values)]
        times = np.array([0.0])
    else:
        if times is None or len(times) != len(series):
            raise ValueError("times and series must have equal length")
        times = np.asarray(times, dtype=float)
        if len(times) == 0 or np.any(np.diff(times) <= 0):
            raise ValueError("times must be non-empty and strictly increasing")
        tables = [_Table(grid, fv, bv) for fv, bv in series]

    def _weights(t):
        if len(tables) == 1 or t <= times[0]:
            return 0, 0, 0.0
        if t >= times[-1]:
            return len(tables) - 1, len(tables) - 1, 0.0
        j = int(np.searchsorted(times, t, side="right") - 1)
        w = (t - times[j]) / (times[j + 1] - times[j])
        return j, j + 1, w

    def drift_fn(points, t):
        j0, j1, w = _weights(t)
        out = tables[j0].drift(points)
        if w > 0.0:
            out = (1.0 - w) * out + w * tables[j1].drift(points)
        return out

    def beta_fn(points, t):
        j0, j1, w = _weights(t)
        out = tables[j0].beta(points)
        if w > 0.0:
            out = (1.0 - w) * out + w * tables[j1].beta(points)
        return out

    return DiffusionModel(
        grid.dim,
        drift_fn,
        beta_fn,
        family="tabulated",
        time_dependent=len(tables) > 1,
    )


def _tabulated_header(dim):
    cols = list(_COORD_NAMES[:dim])
    cols += [f"f{k + 1}" for k in range(dim)]
    cols += [f"b{i + 1}{j + 1}" for i in range(dim) for j in range(dim)]
    return cols


def read_coefficient_csv(grid, path):
    """Read one tabulated sample: columns x[,y], f1[,f2], b11[,b12,b21,b22].

    Rows must be in flat-index order with coordinates matching the grid.
    """
    dim = grid.dim
    expected = _tabulated_header(dim)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != expected:
            raise ShapeMismatch(f"{path}: expected header {expected}, got {header}")
        rows = [row for row in reader if row]
    if len(rows) != grid.n:
        raise ShapeMismatch(f"{path}: expected {grid.n} rows, got {len(rows)}")
    data = np.array([[float(v) for v in row] for row in rows])
    pts = grid.nodes()
    if not np.allclose(data[:, :dim], pts, atol=1e-9 * max(grid.h), rtol=0.0):
        raise ShapeMismatch(f"{path}: node coordinates do not match the grid")
    drift_values = data[:, dim : 2 * dim]
    beta_values = data[:, 2 * dim :].reshape(grid.n, dim, dim)
    return drift_values, beta_values


def write_coefficient_csv(grid, path, drift_values, beta_values):
    """Inverse of :func:`read_coefficient_csv`."""
    dim = grid.dim
    drift_values = np.asarray(drift_values, dtype=float).reshape(grid.n, dim)
    beta_values = np.asarray(beta_values, dtype=float).reshape(grid.n, dim * dim)
    pts = grid.nodes()
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(_tabulated_header(dim))
        for i in range(grid.n):
            row = list(pts[i]) + list(drift_values[i]) + list(beta_values[i])
            writer.writerow([repr(float(v)) for v in row])


def load_tabulated(grid, path):
    """Steady tabulated model from a single coefficient CSV."""
    drift_values, beta_values = read_coefficient_csv(grid, path)
    return tabulated_model(grid, drift_values, beta_values)


def load_tabulated_series(grid, manifest_path):
    """Time-dependent tabulated model from a JSON manifest.

    The manifest holds ``{"times": [...], "files": [...]}`` with file paths
    relative to the manifest location.
    """
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    times = manifest["times"]
    files = manifest["files"]
    if len(times) != len(files):
        raise ShapeMismatch(f"{manifest_path}: times and files differ in length")
    base = os.path.dirname(os.path.abspath(manifest_path))
    series = [read_coefficient_csv(grid, os.path.join(base, f)) for f in files]
    return tabulated_model(grid, None, None, times=times, series=series)


def eval_a(model, points, t):
    """Diffusion matrix a = (1/2) beta beta^T, exactly symmetrized."""
    b = model.beta_at(points, t)
    m = 0.5 * np.einsum("nij,nkj->nik", b, b)
    return 0.5 * (m + np.swapaxes(m, 1, 2))


def check_ellipticity(model, grid, times=(0.0,)):
    """Certify uniform ellipticity of beta beta^T on grid nodes.

    Returns the smallest eigenvalue of beta beta^T over all sampled
    (node, time) pairs and records it as ``model.delta``.  Raises
    EllipticityViolation when the minimum is not strictly positive.
    """
    pts = grid.nodes()
    worst = np.inf
    worst_x = None
    worst_t = None
    for t in times:
        b = model.beta_at(pts, t)
        bbT = np.einsum("nij,nkj->nik", b, b)
        if model.dim == 1:
            eigs = bbT[:, 0, 0]
        else:
            eigs = np.linalg.eigvalsh(bbT)[:, 0]
        k = int(np.argmin(eigs))
        if eigs[k] < worst:
            worst = float(eigs[k])
            worst_x = pts[k]
            worst_t = float(t)
    if not worst > 0.0:
        raise EllipticityViolation(
            f"beta beta^T has eigenvalue {worst:.3e} <= 0 at x={worst_x}, t={worst_t}",
            x=worst_x,
            t=worst_t,
            eigenvalue=worst,
        )
    model.delta = worst
    return worst
