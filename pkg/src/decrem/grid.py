"""Tensor-product grids on box domains and scalar fields living on them.

Interior nodes sit at cell centers, so the first node is half a cell away
from the boundary and the zero Dirichlet data of the absorbed process is
pinned on the faces themselves, not at a node.  All fields are stored in
flat C order (last axis fastest); :meth:`DomainGrid.flat_index` is the
bijection between multi-indices and flat indices.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch

_COORD_NAMES = ("x", "y")


@dataclass(frozen=True)
class DomainGrid:
    """Uniform cell-centered grid on an axis-aligned box in dimension 1 or 2.

    Parameters
    ----------
    dim : int
        Spatial dimension, 1 or 2.
    lo, hi : tuple of float
        Box corners, ``lo[k] < hi[k]`` per axis.
    n_cells : tuple of int
        Cells per axis, at least 4 each.  The node count is
        ``N = prod(n_cells)``.
    """

    dim: int
    lo: tuple
    hi: tuple
    n_cells: tuple

    @property
    def h(self):
        """Cell widths per axis."""
        return tuple(
            (self.hi[k] - self.lo[k]) / self.n_cells[k] for k in range(self.dim)
        )

    @property
    def shape(self):
        return tuple(self.n_cells)

    @property
    def n(self):
        """Total number of interior nodes."""
        return int(np.prod(self.n_cells))

    @property
    def cell_volume(self):
        return float(np.prod(self.h))

    def axis_centers(self, axis):
        """Cell-center coordinates along one axis."""
        h = self.h[axis]
        return self.lo[axis] + h * (np.arange(self.n_cells[axis]) + 0.5)

    def nodes(self):
        """All node coordinates as an (N, dim) array in flat order."""
        axes = [self.axis_centers(k) for k in range(self.dim)]
        if self.dim == 1:
            return axes[0][:, None]
        xg, yg = np.meshgrid(axes[0], axes[1], indexing="ij")
        return np.column_stack([xg.ravel(), yg.ravel()])

    def flat_index(self, multi):
        """Multi-index tuple -> flat index (C order)."""
        multi = tuple(int(m) for m in multi)
        for k, m in enumerate(multi):
            if not 0 <= m < self.n_cells[k]:
                raise IndexError(f"index {multi} outside grid {self.shape}")
        if self.dim == 1:
            return multi[0]
        return multi[0] * self.n_cells[1] + multi[1]

    def multi_index(self, flat):
        """Flat index -> multi-index tuple, inverse of :meth:`flat_index`."""
        flat = int(flat)
        if not 0 <= flat < self.n:
            raise IndexError(f"flat index {flat} outside grid of size {self.n}")
        if self.dim == 1:
            return (flat,)
        return divmod(flat, self.n_cells[1])


def make_grid(dim, lo, hi, n_cells):
    """Validate parameters and build a :class:`DomainGrid`."""
    if dim not in (1, 2):
        raise ValueError(f"dim must be 1 or 2, got {dim}")
    lo = tuple(float(v) for v in np.atleast_1d(lo))
    hi = tuple(float(v) for v in np.atleast_1d(hi))
    n_cells = tuple(int(v) for v in np.atleast_1d(n_cells))
    if not (len(lo) == len(hi) == len(n_cells) == dim):
        raise ValueError("lo, hi and n_cells must all have length dim")
    for k in range(dim):
        if not hi[k] > lo[k]:
            raise ValueError(f"axis {k}: need lo < hi, got [{lo[k]}, {hi[k]}]")
        if n_cells[k] < 4:
            raise ValueError(f"axis {k}: need at least 4 cells, got {n_cells[k]}")
    return DomainGrid(dim=dim, lo=lo, hi=hi, n_cells=n_cells)


class DensityField:
    """Scalar values on the interior nodes of a :class:`DomainGrid`.

    Values are stored as a read-only float64 vector of length ``grid.n`` in
    flat order.  Operations in this package never mutate a field in place;
    they build new ones.
    """

    def __init__(self, grid, values):
        values = np.asarray(values, dtype=float)
        if values.shape == grid.shape and grid.dim == 2:
            values = values.ravel()
        if values.shape != (grid.n,):
            raise ShapeMismatch(
                f"expected {grid.n} values for grid {grid.shape}, got {values.shape}"
            )
        values = values.copy()
        values.setflags(write=False)
        self.grid = grid
        self.values = values

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.n))

    @classmethod
    def from_function(cls, grid, fn):
        """Sample ``fn`` at the cell centers.

        ``fn`` receives coordinate arrays, one per axis, and must broadcast.
        """
        pts = grid.nodes()
        return cls(grid, fn(*[pts[:, k] for k in range(grid.dim)]))

    def reshaped(self):
        """Values as an array shaped like the grid."""
        return self.values.reshape(self.grid.shape)

    def with_values(self, values):
        return DensityField(self.grid, values)

    def to_csv(self, path):
        """Write ``x[,y],value`` rows in flat-index order."""
        pts = self.grid.nodes()
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(list(_COORD_NAMES[: self.grid.dim]) + ["value"])
            for i in range(self.grid.n):
                writer.writerow(
                    [repr(float(c)) for c in pts[i]] + [repr(float(self.values[i]))]
                )

    @classmethod
    def from_csv(cls, grid, path):
        """Read a field written by :meth:`to_csv`, checking the coordinates.

        Raises ShapeMismatch when the row count, column count or node
        coordinates do not match ``grid``.
        """
        expected_header = list(_COORD_NAMES[: grid.dim]) + ["value"]
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != expected_header:
                raise ShapeMismatch(
                    f"{path}: expected header {expected_header}, got {header}"
                )
            rows = [row for row in reader if row]
        if len(rows) != grid.n:
            raise ShapeMismatch(f"{path}: expected {grid.n} rows, got {len(rows)}")
        data = np.array([[float(v) for v in row] for row in rows])
        if data.shape[1] != grid.dim + 1:
            raise ShapeMismatch(f"{path}: expected {grid.dim + 1} columns")
        pts = grid.nodes()
        tol = 1e-9 * max(grid.h)
        if not np.allclose(data[:, : grid.dim], pts, atol=tol, rtol=0.0):
            raise ShapeMismatch(f"{path}: node coordinates do not match the grid")
        return cls(grid, data[:, grid.dim])


def mass(field):
    """Midpoint-rule integral of the field over the box."""
    return float(field.values.sum() * field.grid.cell_volume)


def norm_l1(field):
    return float(np.abs(field.values).sum() * field.grid.cell_volume)


def norm_l2(field):
    return float(np.sqrt((field.values**2).sum() * field.grid.cell_volume))


def norm_sup(field):
    return float(np.abs(field.values).max())
