"""Grid metrics for time-deforming curvilinear grids.

All parametric derivatives use the fourth-order Pade line closure
(1 + s^2/6 d2) f' = central-difference(f) with explicit third-order
one-sided rows at the line ends.  Time metrics come from first- or
second-order backward differences over a GridHistory.  A conservative
variant assembles the Jacobian and the two grid-velocity Jacobians from
product-rule rearrangements whose discrete derivatives reuse the same
line operators, which makes the discrete geometric conservation law hold
to round-off.
"""

from dataclasses import dataclass

import numpy as np

from .grid import PhysicalGrid
from .solvers import TridiagonalSystem, onesided_derivative, solve_tridiagonal


def _pade_system(n):
    lower = np.full(n, 1.0 / 6.0)
    diag = np.full(n, 2.0 / 3.0)
    upper = np.full(n, 1.0 / 6.0)
    diag[0] = diag[-1] = 1.0
    upper[0] = 0.0
    lower[-1] = 0.0
    return TridiagonalSystem(lower, diag, upper)


def pade_derivative_line(values, spacing):
    """Fourth-order compact derivative of sampled line values.

    Interior nodes satisfy (1/6, 2/3, 1/6) f' = (f[i+1] - f[i-1]) / (2s);
    the end nodes use explicit 4-point one-sided third-order formulas.
    Exact for polynomials up to cubic, including the end rows.

    Parameters
    ----------
    values : ndarray, shape (n,) or (n, m)
        Line samples; trailing columns are independent lines sharing the
        same spacing.
    spacing : float
        Uniform node spacing, > 0.

    Returns
    -------
    ndarray with the shape of `values`.
    """
    values = np.asarray(values, dtype=float)
    n = values.shape[0]
    if n < 5:
        raise ValueError(f"need at least 5 points per line, got {n}")
    if not spacing > 0.0:
        raise ValueError(f"spacing must be positive, got {spacing}")
    v = values.reshape(n, -1)
    rhs = np.empty_like(v)
    rhs[1:-1] = (v[2:] - v[:-2]) / (2.0 * spacing)
    rhs[0] = onesided_derivative(v[0], v[1], v[2], v[3], spacing)
    rhs[-1] = -onesided_derivative(v[-1], v[-2], v[-3], v[-4], spacing)
    out = solve_tridiagonal(_pade_system(n), rhs)
    return out.reshape(values.shape)


def dxi(f, space):
    """Pade derivative of a 2D nodal field along xi (axis 0)."""
    return pade_derivative_line(f, space.h)


def deta(f, space):
    """Pade derivative of a 2D nodal field along eta (axis 1)."""
    return pade_derivative_line(f.T, space.k).T


@dataclass
class MetricField:
    """Metric data of one grid snapshot.

    First and second parametric coordinate derivatives, the Jacobian and
    its parametric derivatives, and (for deforming grids) the grid
    velocity and the two grid-velocity Jacobians J1 = x_tau y_eta -
    y_tau x_eta and J2 = x_xi y_tau - y_xi x_tau.  `mode` records whether
    jac/j1/j2 came from the determinant ("differential") or from the
    conservation-law rearrangement ("conservative").
    """

    grid: PhysicalGrid
    x_xi: np.ndarray
    y_xi: np.ndarray
    x_eta: np.ndarray
    y_eta: np.ndarray
    x_xixi: np.ndarray
    y_xixi: np.ndarray
    x_xieta: np.ndarray
    y_xieta: np.ndarray
    x_etaeta: np.ndarray
    y_etaeta: np.ndarray
    jac: np.ndarray
    jac_xi: np.ndarray
    jac_eta: np.ndarray
    x_tau: np.ndarray = None
    y_tau: np.ndarray = None
    j1: np.ndarray = None
    j2: np.ndarray = None
    mode: str = "differential"

    def __post_init__(self):
        shape = self.grid.space.shape
        if self.x_tau is None:
            self.x_tau = np.zeros(shape)
            self.y_tau = np.zeros(shape)
        if self.j1 is None:
            self.j1 = np.zeros(shape)
            self.j2 = np.zeros(shape)

    @property
    def space(self):
        return self.grid.space

    # inverse-map factors, on demand
    @property
    def xi_x(self):
        return self.y_eta / self.jac

    @property
    def xi_y(self):
        return -self.x_eta / self.jac

    @property
    def eta_x(self):
        return -self.y_xi / self.jac

    @property
    def eta_y(self):
        return self.x_xi / self.jac


def _check_untangled(jac, what):
    bad = np.argwhere(jac <= 0.0)
    if bad.size:
        i, j = bad[0]
        raise ValueError(f"tangled grid: {what} = {jac[i, j]:.3e} <= 0 at node ({i}, {j})")


def compute_metrics(grid):
    """Spatial metrics of one grid snapshot (time metrics left zero).

    Raises ValueError if the Jacobian is not strictly positive everywhere
    (tangled or inverted cells), naming the first offending node.
    """
    sp = grid.space
    x, y = grid.x, grid.y
    x_xi, x_eta = dxi(x, sp), deta(x, sp)
    y_xi, y_eta = dxi(y, sp), deta(y, sp)
    jac = x_xi * y_eta - x_eta * y_xi
    _check_untangled(jac, "jacobian")
    return MetricField(
        grid=grid,
        x_xi=x_xi, y_xi=y_xi, x_eta=x_eta, y_eta=y_eta,
        x_xixi=dxi(x_xi, sp), y_xixi=dxi(y_xi, sp),
        x_xieta=deta(x_xi, sp), y_xieta=deta(y_xi, sp),
        x_etaeta=deta(x_eta, sp), y_etaeta=deta(y_eta, sp),
        jac=jac, jac_xi=dxi(jac, sp), jac_eta=deta(jac, sp),
    )


def _backward_diff(arrays, dtau, order):
    """Backward time difference over per-level arrays, newest last."""
    if order == 1:
        if len(arrays) < 2:
            raise ValueError("order-1 time difference needs 2 levels")
        return (arrays[-1] - arrays[-2]) / dtau
    if order == 2:
        if len(arrays) < 3:
            raise ValueError("order-2 time difference needs 3 levels")
        return (3.0 * arrays[-1] - 4.0 * arrays[-2] + arrays[-3]) / (2.0 * dtau)
    raise ValueError(f"time difference order must be 1 or 2, got {order}")


def compute_time_metrics(history, order=1):
    """Full metrics at the newest history level, determinant form.

    Grid velocity by backward difference of the stored coordinates;
    J1 and J2 as determinant products of the velocity with the newest
    spatial metrics.
    """
    if len(history) < order + 1:
        raise ValueError(f"order {order} needs {order + 1} grid levels, have {len(history)}")
    m = compute_metrics(history.newest)
    dtau = history.dtau
    xs = [g.x for g in history]
    ys = [g.y for g in history]
    m.x_tau = _backward_diff(xs, dtau, order)
    m.y_tau = _backward_diff(ys, dtau, order)
    m.j1 = m.x_tau * m.y_eta - m.y_tau * m.x_eta
    m.j2 = m.x_xi * m.y_tau - m.y_xi * m.x_tau
    return m


def _conservative_jac(grid):
    """Jacobian from the product-rule rearrangement, one snapshot."""
    sp = grid.space
    x, y = grid.x, grid.y
    x_xi, x_eta = dxi(x, sp), deta(x, sp)
    y_xi, y_eta = dxi(y, sp), deta(y, sp)
    return 0.5 * (deta(x_xi * y, sp) - dxi(x_eta * y, sp)
                  + dxi(x * y_eta, sp) - deta(x * y_xi, sp))


def conservative_metrics(history, order=1):
    """Metrics at the newest level with GCL-consistent jac, j1, j2.

    The Jacobians are assembled from product-rule rearrangements whose
    outer xi/eta derivatives are the same Pade operators used everywhere
    else and whose tau derivatives are the same backward differences as
    compute_time_metrics.  Because those three operators commute, the
    discrete law  d(jac)/dtau = d(j1)/dxi + d(j2)/deta  telescopes to
    round-off.
    """
    if len(history) < order + 1:
        raise ValueError(f"order {order} needs {order + 1} grid levels, have {len(history)}")
    m = compute_time_metrics(history, order=order)
    sp = history.newest.space
    dtau = history.dtau
    levels = list(history)

    jac = _conservative_jac(history.newest)
    _check_untangled(jac, "conservative jacobian")

    # per-level product stacks entering the tau differences
    def stack(fn):
        return [fn(g) for g in levels]

    xeta_y = stack(lambda g: deta(g.x, sp) * g.y)
    x_yeta = stack(lambda g: g.x * deta(g.y, sp))
    xxi_y = stack(lambda g: dxi(g.x, sp) * g.y)
    x_yxi = stack(lambda g: g.x * dxi(g.y, sp))

    gn = history.newest
    xt, yt = m.x_tau, m.y_tau
    j1 = 0.5 * (deta(xt * gn.y, sp) - _backward_diff(xeta_y, dtau, order)
                + _backward_diff(x_yeta, dtau, order) - deta(gn.x * yt, sp))
    j2 = 0.5 * (_backward_diff(xxi_y, dtau, order) - dxi(xt * gn.y, sp)
                + dxi(gn.x * yt, sp) - _backward_diff(x_yxi, dtau, order))

    m.jac = jac
    m.jac_xi = dxi(jac, sp)
    m.jac_eta = deta(jac, sp)
    m.j1 = j1
    m.j2 = j2
    m.mode = "conservative"
    return m


def gcl_residual(history, order=None, mode="conservative"):
    """Discrete geometric-conservation-law residuals at the newest level.

    Returns a dict with three nodal residual arrays:

    - "time": d(jac)/dtau - d(j1)/dxi - d(j2)/deta
    - "x":    d(y_eta)/dxi - d(y_xi)/eta   (metric identity, x-component)
    - "y":    d(-x_eta)/dxi + d(x_xi)/deta (metric identity, y-component)

    The spatial identities vanish to round-off for any grid because the
    two Pade line operators commute; the time residual vanishes to
    round-off only in "conservative" mode and decays with the backward
    difference order in "differential" mode.
    """
    if order is None:
        order = min(len(history) - 1, 2)
    sp = history.newest.space
    dtau = history.dtau
    if mode == "conservative":
        m = conservative_metrics(history, order=order)
        jacs = [_conservative_jac(g) for g in history]
    elif mode == "differential":
        m = compute_time_metrics(history, order=order)
        jacs = []
        for g in history:
            mg = compute_metrics(g)
            jacs.append(mg.jac)
    else:
        raise ValueError(f"unknown metric mode {mode!r}")
    time_res = _backward_diff(jacs, dtau, order) - dxi(m.j1, sp) - deta(m.j2, sp)
    x_res = dxi(m.y_eta, sp) - deta(m.y_xi, sp)
    y_res = -dxi(m.x_eta, sp) + deta(m.x_xi, sp)
    return {"time": time_res, "x": x_res, "y": y_res}
