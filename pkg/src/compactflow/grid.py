"""Structured-grid containers: parameter space, physical grids, time history.

The computational domain is a fixed rectangle in (xi, eta) with uniform
spacings; all physical geometry lives in node coordinate arrays of shape
(n_xi, n_eta) indexed [i, j].  File output and any flattening order nodes
xi-fastest.
"""

import numpy as np


class ParamSpace:
    """Uniform computational rectangle.

    Parameters
    ----------
    n_xi, n_eta : int
        Node counts along each direction (at least 5 each; the one-sided
        derivative closures need four points).
    xi_bounds, eta_bounds : (float, float)
        Parameter intervals, min strictly below max.
    """

    def __init__(self, n_xi, n_eta, xi_bounds=(0.0, 1.0), eta_bounds=(0.0, 1.0)):
        if n_xi < 5 or n_eta < 5:
            raise ValueError(f"need at least 5 nodes per direction, got {n_xi}x{n_eta}")
        if not (xi_bounds[1] > xi_bounds[0]) or not (eta_bounds[1] > eta_bounds[0]):
            raise ValueError("parameter bounds must be increasing intervals")
        self.n_xi = int(n_xi)
        self.n_eta = int(n_eta)
        self.xi_bounds = (float(xi_bounds[0]), float(xi_bounds[1]))
        self.eta_bounds = (float(eta_bounds[0]), float(eta_bounds[1]))
        self.h = (self.xi_bounds[1] - self.xi_bounds[0]) / (self.n_xi - 1)
        self.k = (self.eta_bounds[1] - self.eta_bounds[0]) / (self.n_eta - 1)

    @property
    def shape(self):
        return (self.n_xi, self.n_eta)

    def nodes(self):
        """Return meshgrid arrays (xi, eta) of shape (n_xi, n_eta)."""
        xi = np.linspace(*self.xi_bounds, self.n_xi)
        eta = np.linspace(*self.eta_bounds, self.n_eta)
        return np.meshgrid(xi, eta, indexing="ij")

    def __eq__(self, other):
        return (isinstance(other, ParamSpace)
                and self.shape == other.shape
                and self.xi_bounds == other.xi_bounds
                and self.eta_bounds == other.eta_bounds)

    def __repr__(self):
        return (f"ParamSpace({self.n_xi}x{self.n_eta}, "
                f"xi={self.xi_bounds}, eta={self.eta_bounds})")


class PhysicalGrid:
    """Node coordinates of the physical grid at one time level.

    Attributes
    ----------
    space : ParamSpace
    x, y : ndarray, shape (n_xi, n_eta)
        Physical node coordinates.
    tau : float
        Time level of this snapshot.
    """

    def __init__(self, space, x, y, tau=0.0):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if x.shape != space.shape or y.shape != space.shape:
            raise ValueError(f"coordinate arrays {x.shape} do not match space {space.shape}")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError("grid coordinates must be finite")
        self.space = space
        self.x = x
        self.y = y
        self.tau = float(tau)

    @classmethod
    def cartesian(cls, space, tau=0.0):
        """Identity grid: physical coordinates equal the parameters."""
        xi, eta = space.nodes()
        return cls(space, xi, eta, tau=tau)

    def copy(self):
        return PhysicalGrid(self.space, self.x.copy(), self.y.copy(), tau=self.tau)


class GridHistory:
    """Ring buffer of the most recent grid snapshots (at most three).

    Snapshots must arrive with strictly increasing, uniformly spaced tau;
    the backward time differences in the metric routines assume a constant
    step.  Index -1 is the newest level.
    """

    maxlen = 3

    def __init__(self, grids=()):
        self._grids = []
        for g in grids:
            self.push(g)

    def push(self, grid):
        if self._grids:
            dt = grid.tau - self._grids[-1].tau
            if dt <= 0.0:
                raise ValueError(f"history taus must increase, got step {dt}")
            if len(self._grids) >= 2:
                prev = self._grids[-1].tau - self._grids[-2].tau
                if abs(dt - prev) > 1e-12 * max(abs(dt), abs(prev)):
                    raise ValueError("history requires a uniform time step")
            if grid.space.shape != self._grids[-1].space.shape:
                raise ValueError("all history snapshots must share one grid shape")
        self._grids.append(grid)
        if len(self._grids) > self.maxlen:
            self._grids.pop(0)

    def __len__(self):
        return len(self._grids)

    def __getitem__(self, idx):
        return self._grids[idx]

    @property
    def newest(self):
        if not self._grids:
            raise IndexError("empty grid history")
        return self._grids[-1]

    @property
    def dtau(self):
        if len(self._grids) < 2:
            raise ValueError("need at least two snapshots for a time step")
        return self._grids[-1].tau - self._grids[-2].tau
