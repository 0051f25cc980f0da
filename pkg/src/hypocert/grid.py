"""Tensor-product grids, trapezoid quadrature and gridded densities."""

from dataclasses import dataclass

import numpy as np

from .errors import NonPositiveDensity


@dataclass(frozen=True)
class Grid:
    """Uniform node grid on a box.

    Non-periodic axes include both end points; periodic axes drop the
    right end point (it coincides with the left one).
    """
    lo: tuple
    hi: tuple
    shape: tuple
    periodic: tuple

    @classmethod
    def make(cls, lo, hi, shape, periodic=None):
        d = len(lo)
        if isinstance(shape, int):
            shape = (shape,) * d
        if periodic is None or isinstance(periodic, bool):
            periodic = (bool(periodic),) * d
        periodic = tuple(bool(p) for p in periodic)
        if any(s < 3 for s in shape):
            raise ValueError("need at least 3 nodes per axis")
        return cls(tuple(map(float, lo)), tuple(map(float, hi)), tuple(map(int, shape)), periodic)

    @property
    def dim(self):
        return len(self.shape)

    def axis(self, k):
        if self.periodic[k]:
            return np.linspace(self.lo[k], self.hi[k], self.shape[k], endpoint=False)
        return np.linspace(self.lo[k], self.hi[k], self.shape[k])

    @property
    def spacing(self):
        return tuple((self.hi[k] - self.lo[k]) / (self.shape[k] if self.periodic[k] else self.shape[k] - 1)
                     for k in range(self.dim))

    def points(self):
        """Array of shape (*shape, dim) with ij indexing."""
        mesh = np.meshgrid(*[self.axis(k) for k in range(self.dim)], indexing="ij")
        return np.stack(mesh, axis=-1)

    def weights(self):
        """Trapezoid weights (periodic axes use the rectangle rule)."""
        w = np.ones(self.shape)
        for k in range(self.dim):
            wk = np.full(self.shape[k], self.spacing[k])
            if not self.periodic[k]:
                wk[0] *= 0.5
                wk[-1] *= 0.5
            shape = [1] * self.dim
            shape[k] = -1
            w = w * wk.reshape(shape)
        return w

    def integrate(self, values):
        """Trapezoid integral; numpy's pairwise summation keeps it order-deterministic."""
        return float(np.sum(np.ascontiguousarray(values * self.weights())))

    def refine(self):
        """Grid with twice the cells per axis on the same box."""
        shape = tuple(2 * s if p else 2 * (s - 1) + 1 for s, p in zip(self.shape, self.periodic))
        return Grid(self.lo, self.hi, shape, self.periodic)


@dataclass
class DensityField:
    grid: Grid
    values: np.ndarray
    time: float = 0.0

    def mass(self):
        return self.grid.integrate(self.values)

    def normalized(self):
        return DensityField(self.grid, self.values / self.mass(), self.time)

    def require_positive(self):
        if not np.all(self.values > 0):
            raise NonPositiveDensity("density must be strictly positive on the grid")
        return self


def equilibrium(model, grid):
    """Discretely normalized invariant density of a model on a grid."""
    logp = np.asarray(model.log_pi(grid.points()), float)
    vals = np.exp(logp - logp.max())
    return DensityField(grid, vals / grid.integrate(vals))
