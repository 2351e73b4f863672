"""Mesh deformation: transfinite interpolation, inverse-distance weighting,
grid quality, randomized perturbation, and the analytic deforming-grid
families used by the benchmark cases.

Both deformers take a base grid plus boundary data and return a new
PhysicalGrid; they never mutate their inputs.  TFI propagates edge
displacements with a boolean sum blended by normalized arc length of the
base grid.  IDW interpolates either raw boundary displacements or rigid
motion samples (quaternion + translation) with the two-exponent weight

    w_n(x) = [(L_def / r_n)^3 + (alpha L_def / r_n)^5]

where L_def is the largest boundary distance from the all-node centroid
and alpha adapts to the spread of the boundary displacements.
"""

import numpy as np

from .grid import PhysicalGrid
from .metrics import compute_metrics

EDGE_ORDER = ("ximin", "ximax", "etamin", "etamax")


def _edge_slice(edge, nx, ny):
    return {"ximin": (0, slice(None)), "ximax": (nx - 1, slice(None)),
            "etamin": (slice(None), 0), "etamax": (slice(None), ny - 1)}[edge]


def _edge_nodes(grid, edge):
    if edge not in EDGE_ORDER:
        raise ValueError(f"unknown edge {edge!r}")
    idx = _edge_slice(edge, *grid.space.shape)
    return grid.x[idx], grid.y[idx]


def _arclength_fraction(x, y, axis):
    """Normalized cumulative arc length along grid lines of one family."""
    dx = np.diff(x, axis=axis)
    dy = np.diff(y, axis=axis)
    seg = np.sqrt(dx * dx + dy * dy)
    s = np.cumsum(seg, axis=axis)
    pad = [(0, 0), (0, 0)]
    pad[axis] = (1, 0)
    s = np.pad(s, pad)
    total = np.take(s, [-1], axis=axis)
    if np.any(total <= 0.0):
        raise ValueError("degenerate grid line: zero arc length")
    return s / total


def tfi_deform(base, edge_displacement, tau=None):
    """Deform a grid by transfinite interpolation of edge displacements.

    Parameters
    ----------
    base : PhysicalGrid
    edge_displacement : dict
        Maps each of "ximin", "ximax", "etamin", "etamax" to an array of
        shape (edge_length, 2) with node displacements (dx, dy).  The four
        arrays must agree at shared corners.
    tau : float, optional
        Time stamp of the returned grid (defaults to base.tau).

    The interpolant is the boolean sum F1 + F2 - F1F2 with blending
    coordinates taken as normalized arc length of the base grid, so a
    constant boundary displacement is reproduced exactly at every
    interior node.
    """
    nx, ny = base.space.shape
    d = {}
    want = {"ximin": ny, "ximax": ny, "etamin": nx, "etamax": nx}
    for edge, n in want.items():
        arr = np.asarray(edge_displacement[edge], dtype=float)
        if arr.shape != (n, 2):
            raise ValueError(f"{edge} displacement must have shape ({n}, 2), got {arr.shape}")
        d[edge] = arr

    scale = max(1.0, max(np.max(np.abs(a)) for a in d.values()))
    corners = [
        (d["ximin"][0], d["etamin"][0], "(0,0)"),
        (d["ximin"][-1], d["etamax"][0], "(0,-1)"),
        (d["ximax"][0], d["etamin"][-1], "(-1,0)"),
        (d["ximax"][-1], d["etamax"][-1], "(-1,-1)"),
    ]
    for a, b, where in corners:
        if np.max(np.abs(a - b)) > 1e-10 * scale:
            raise ValueError(f"edge displacements disagree at corner {where}")

    u = _arclength_fraction(base.x, base.y, axis=0)  # 0 at ximin, 1 at ximax
    v = _arclength_fraction(base.x, base.y, axis=1)

    new = np.empty((nx, ny, 2))
    for c in (0, 1):
        f1 = (1.0 - u) * d["ximin"][None, :, c] + u * d["ximax"][None, :, c]
        f2 = (1.0 - v) * d["etamin"][:, None, c] + v * d["etamax"][:, None, c]
        f12 = ((1.0 - u) * (1.0 - v) * d["ximin"][0, c]
               + u * (1.0 - v) * d["ximax"][0, c]
               + (1.0 - u) * v * d["ximin"][-1, c]
               + u * v * d["ximax"][-1, c])
        new[:, :, c] = f1 + f2 - f12
    return PhysicalGrid(base.space, base.x + new[:, :, 0], base.y + new[:, :, 1],
                        tau=base.tau if tau is None else tau)


# ---------------------------------------------------------------------------
# inverse-distance weighting

class IdwConfig:
    """Weights and exponents of the inverse-distance deformer.

    amp is the per-node weight prefactor, eta scales the adaptive second
    exponent's reach to the spread of the boundary displacements.
    """

    def __init__(self, power_a=3.0, power_b=5.0, eta=5.0, amp=1.0):
        self.power_a = float(power_a)
        self.power_b = float(power_b)
        self.eta = float(eta)
        self.amp = float(amp)


def _quat_mult(p, q):
    """Hamilton product of quaternions (w, x, y, z), vectorized on leading axes."""
    w1, x1, y1, z1 = np.moveaxis(p, -1, 0)
    w2, x2, y2, z2 = np.moveaxis(q, -1, 0)
    return np.stack([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ], axis=-1)


def _quat_conj(q):
    out = q.copy()
    out[..., 1:] *= -1.0
    return out


def _quat_rotate(q, vec):
    """Rotate 2D points by unit quaternions: p' = q p q*."""
    p = np.zeros(vec.shape[:-1] + (4,))
    p[..., 1] = vec[..., 0]
    p[..., 2] = vec[..., 1]
    out = _quat_mult(_quat_mult(q, p), _quat_conj(q))
    return out[..., 1:3]


def idw_deform(base, boundary, config=None, mode="displacement", tau=None):
    """Deform a grid by inverse-distance weighting of boundary motion.

    Parameters
    ----------
    base : PhysicalGrid
    boundary : dict
        Maps edge names (a subset of ximin/ximax/etamin/etamax) to the
        motion of that edge's nodes.  In "displacement" mode each value is
        an (n, 2) displacement array.  In "rigid" mode each value is a pair
        (angles, translations) with shapes (n,) and (n, 2): node motion is
        a rotation about the coordinate origin followed by a translation,
        and interior nodes blend the boundary rotations as quaternions
        (component-wise weighted mean, renormalized, sign-aligned).
    mode : "displacement" or "rigid"

    Edges listed in `boundary` move exactly as prescribed; all remaining
    nodes (interior plus unlisted edges) are interpolated.
    """
    if config is None:
        config = IdwConfig()
    if mode not in ("displacement", "rigid"):
        raise ValueError(f"unknown idw mode {mode!r}")
    nx, ny = base.space.shape
    driven = np.zeros((nx, ny), dtype=bool)
    xb, yb, data = [], [], []
    for edge in EDGE_ORDER:
        if edge not in boundary:
            continue
        ex, ey = _edge_nodes(base, edge)
        sel = np.zeros((nx, ny), dtype=bool)
        sel[_edge_slice(edge, nx, ny)] = True
        # a corner shared by two driving edges stays with the first claimer
        mask_line = ~driven[_edge_slice(edge, nx, ny)]
        driven |= sel
        xb.append(ex[mask_line])
        yb.append(ey[mask_line])
        if mode == "displacement":
            arr = np.asarray(boundary[edge], dtype=float)
            if arr.shape != (ex.shape[0], 2):
                raise ValueError(f"{edge}: displacement shape {arr.shape} != ({ex.shape[0]}, 2)")
            data.append(arr[mask_line])
        else:
            ang, tr = boundary[edge]
            ang = np.asarray(ang, dtype=float)
            tr = np.asarray(tr, dtype=float)
            if ang.shape != (ex.shape[0],) or tr.shape != (ex.shape[0], 2):
                raise ValueError(f"{edge}: rigid samples must be (n,) angles and (n, 2) translations")
            data.append(np.column_stack([ang[mask_line], tr[mask_line]]))
    if not xb:
        raise ValueError("no driving boundary edges given")
    xb = np.concatenate(xb)
    yb = np.concatenate(yb)
    data = np.concatenate(data, axis=0)
    pb = np.column_stack([xb, yb])

    if mode == "displacement":
        disp_b = data
    else:
        ang = data[:, 0]
        disp_b = np.empty((len(ang), 2))
        ca, sa = np.cos(ang), np.sin(ang)
        disp_b[:, 0] = ca * xb - sa * yb + data[:, 1] - xb
        disp_b[:, 1] = sa * xb + ca * yb + data[:, 2] - yb

    # adaptive weight parameters
    centroid = np.array([base.x.mean(), base.y.mean()])
    l_def = np.max(np.hypot(xb - centroid[0], yb - centroid[1]))
    d_mean = disp_b.mean(axis=0)
    spread = np.max(np.hypot(*(disp_b - d_mean).T))
    alpha = config.eta / l_def * spread

    free = ~driven
    pf = np.column_stack([base.x[free], base.y[free]])
    r = np.hypot(pf[:, 0, None] - pb[None, :, 0], pf[:, 1, None] - pb[None, :, 1])
    if np.any(r < 1e-14 * l_def):
        raise ValueError("an interpolated node coincides with a driving boundary node")
    w = config.amp * ((l_def / r) ** config.power_a
                      + (alpha * l_def / r) ** config.power_b)
    wsum = w.sum(axis=1)

    newx = base.x.copy()
    newy = base.y.copy()
    if mode == "displacement":
        d_free = (w @ disp_b) / wsum[:, None]
        newx[free] += d_free[:, 0]
        newy[free] += d_free[:, 1]
        _apply_driven(newx, newy, base, boundary, mode)
    else:
        half = 0.5 * data[:, 0]
        quat_b = np.zeros((len(half), 4))
        quat_b[:, 0] = np.cos(half)
        quat_b[:, 3] = np.sin(half)
        # sign alignment before averaging: flip into the hemisphere of the first sample
        flip = (quat_b @ quat_b[0]) < 0.0
        quat_b[flip] *= -1.0
        qbar = (w @ quat_b) / wsum[:, None]
        qn = np.linalg.norm(qbar, axis=1)
        if np.any(qn < 1e-14):
            raise ValueError("degenerate quaternion average")
        qbar /= qn[:, None]
        tbar = (w @ data[:, 1:3]) / wsum[:, None]
        rotated = _quat_rotate(qbar, pf)
        newx[free] = rotated[:, 0] + tbar[:, 0]
        newy[free] = rotated[:, 1] + tbar[:, 1]
        _apply_driven(newx, newy, base, boundary, mode)

    return PhysicalGrid(base.space, newx, newy, tau=base.tau if tau is None else tau)


def _apply_driven(newx, newy, base, boundary, mode):
    for edge in EDGE_ORDER:
        if edge not in boundary:
            continue
        ex, ey = _edge_nodes(base, edge)
        if mode == "displacement":
            arr = np.asarray(boundary[edge], dtype=float)
            vx, vy = ex + arr[:, 0], ey + arr[:, 1]
        else:
            ang, tr = boundary[edge]
            ang = np.asarray(ang, dtype=float)
            tr = np.asarray(tr, dtype=float)
            vx = np.cos(ang) * ex - np.sin(ang) * ey + tr[:, 0]
            vy = np.sin(ang) * ex + np.cos(ang) * ey + tr[:, 1]
        if edge == "ximin":
            newx[0, :], newy[0, :] = vx, vy
        elif edge == "ximax":
            newx[-1, :], newy[-1, :] = vx, vy
        elif edge == "etamin":
            newx[:, 0], newy[:, 0] = vx, vy
        else:
            newx[:, -1], newy[:, -1] = vx, vy


# ---------------------------------------------------------------------------
# quality and perturbation

def skew_quality(obj):
    """Nodal skew quality |x_xi y_eta - x_eta y_xi| / (|g_xi| |g_eta|).

    1 on an orthogonal grid, towards 0 as grid lines align.  Accepts a
    PhysicalGrid or a precomputed MetricField.
    """
    m = compute_metrics(obj) if isinstance(obj, PhysicalGrid) else obj
    t1 = np.hypot(m.x_xi, m.y_xi)
    t2 = np.hypot(m.x_eta, m.y_eta)
    return np.abs(m.x_xi * m.y_eta - m.x_eta * m.y_xi) / (t1 * t2)


def randomize_mesh(grid, fraction=0.2, frozen_rings=3, seed=0):
    """Random interior perturbation bounded by a fraction of local spacing.

    Nodes whose index distance to the boundary is at most `frozen_rings`
    stay put (the boundary itself is ring 0).  Each remaining node moves
    along its two grid-line tangents by independent uniform amounts
    bounded by fraction/2 of the local segment length, which keeps the
    result untangled for moderate fractions.  Deterministic for a given
    seed.
    """
    nx, ny = grid.space.shape
    r = int(frozen_rings)
    if min(nx, ny) - 2 * (r + 1) < 3:
        raise ValueError("frozen rings leave no interior to perturb")
    rng = np.random.default_rng(seed)
    u = rng.uniform(-1.0, 1.0, size=(2, nx - 2, ny - 2))
    sxix = 0.5 * (grid.x[2:, 1:-1] - grid.x[:-2, 1:-1])
    sxiy = 0.5 * (grid.y[2:, 1:-1] - grid.y[:-2, 1:-1])
    setx = 0.5 * (grid.x[1:-1, 2:] - grid.x[1:-1, :-2])
    sety = 0.5 * (grid.y[1:-1, 2:] - grid.y[1:-1, :-2])
    dx = 0.5 * fraction * (u[0] * sxix + u[1] * setx)
    dy = 0.5 * fraction * (u[0] * sxiy + u[1] * sety)
    ii, jj = np.meshgrid(np.arange(1, nx - 1), np.arange(1, ny - 1), indexing="ij")
    ring = np.minimum(np.minimum(ii, nx - 1 - ii), np.minimum(jj, ny - 1 - jj))
    live = ring > r
    x, y = grid.x.copy(), grid.y.copy()
    x[1:-1, 1:-1] += np.where(live, dx, 0.0)
    y[1:-1, 1:-1] += np.where(live, dy, 0.0)
    out = PhysicalGrid(grid.space, x, y, tau=grid.tau)
    compute_metrics(out)  # raises if the perturbation tangled the grid
    return out


# ---------------------------------------------------------------------------
# analytic deforming-grid families for the benchmark cases

def wavy_grid(space, tau, amp=1.0, waves=4, freq=0.25, normalized=True):
    """Transverse sinusoidal waviness oscillating in time.

    x = xi + A(t) sin(waves pi etahat), y = eta + A(t) sin(waves pi xihat)
    with A(t) = amp * sin(2 pi freq tau).  With normalized=True the
    amplitude is additionally scaled by (extent / intervals), tying the
    wave height to the mesh spacing.
    """
    xi, eta = space.nodes()
    xi0, xi1 = space.xi_bounds
    eta0, eta1 = space.eta_bounds
    s = np.sin(2.0 * np.pi * freq * tau)
    ax = amp * s
    ay = amp * s
    if normalized:
        ax *= (xi1 - xi0) / (space.n_xi - 1)
        ay *= (eta1 - eta0) / (space.n_eta - 1)
    x = xi + ax * np.sin(waves * np.pi * (eta - eta0) / (eta1 - eta0))
    y = eta + ay * np.sin(waves * np.pi * (xi - xi0) / (xi1 - xi0))
    return PhysicalGrid(space, x, y, tau=tau)


def taylor_wavy_grid(space, tau, amp=np.pi / 64.0, waves=6, freq=0.25):
    """Fixed-amplitude waviness sin(waves * coordinate), for the analytic
    vortex study: the same physical grid family at every resolution."""
    xi, eta = space.nodes()
    s = np.sin(2.0 * np.pi * freq * tau)
    x = xi + amp * s * np.sin(waves * eta)
    y = eta + amp * s * np.sin(waves * xi)
    return PhysicalGrid(space, x, y, tau=tau)


def stretched_cavity_grid(space, tau, amp=15000.0):
    """High-order polynomial stretch of the unit square, periodic in time.

    Clusters points near the centre with extreme compression while the
    boundary stays fixed; amplitude ~15000 gives up to ~10x local
    compression at full swing.
    """
    xi, eta = space.nodes()
    xi0, xi1 = space.xi_bounds
    eta0, eta1 = space.eta_bounds
    p = (xi - xi0) / (xi1 - xi0)
    q = (eta - eta0) / (eta1 - eta0)
    s = np.sin(2.0 * np.pi * tau)
    x = xi + amp * s * p**6 * (p - 0.5) * (1 - p)**6 * q * (1 - q) * (xi1 - xi0)
    y = eta + amp * s * q**6 * (q - 0.5) * (1 - q)**6 * p * (1 - p) * (eta1 - eta0)
    return PhysicalGrid(space, x, y, tau=tau)


def pulse_deform_grid(space, tau, period=1.5, amp=0.2, trans_vel=(0.7, 0.7)):
    """Translating, shape-shifting grid on the [0, 2]^2 pulse domain.

    The boundary laws, with A(t) = amp sin(0.5 pi tau / period) and the
    parameters as coordinates on [0, 2]:

    - left/right edges shift in x by A(t) sin(pi eta),
    - the top edge shifts in y by 2 A(t) sin(0.5 pi xi),
    - the bottom edge shifts in y by 2 A(t) xi^2 (2 - xi)^2,
    - every boundary node additionally translates by the integral of the
      velocity trans_vel * tau / period, i.e. trans_vel * tau^2 / (2 period).

    All shape laws vanish at the corners, so the corners move with the
    translation alone; the interior follows by transfinite interpolation.
    """
    base = PhysicalGrid.cartesian(space, tau=tau)
    xi, eta = space.nodes()
    nx, ny = space.shape
    a = amp * np.sin(0.5 * np.pi * tau / period)
    shift = np.array(trans_vel) * tau**2 / (2.0 * period)
    side = a * np.sin(np.pi * eta[0])  # eta line values, shared by both sides
    d = {
        "ximin": np.column_stack([side + shift[0], np.full(ny, shift[1])]),
        "ximax": np.column_stack([side + shift[0], np.full(ny, shift[1])]),
        "etamin": np.column_stack([np.full(nx, shift[0]),
                                   2.0 * a * xi[:, 0] ** 2 * (2.0 - xi[:, 0]) ** 2 + shift[1]]),
        "etamax": np.column_stack([np.full(nx, shift[0]),
                                   2.0 * a * np.sin(0.5 * np.pi * xi[:, 0]) + shift[1]]),
    }
    return tfi_deform(base, d, tau=tau)


def bump_wall_profile(x, tau, amp=0.1, freq=0.2, c1=0.375, c2=0.625, decay=60.0):
    """Oscillating bottom-wall elevation: a rising bump at c1 paired with a
    dip at c2, exp(-decay (x - c)^2) envelopes, sin(2 pi freq t) in time."""
    return amp * (np.exp(-decay * (x - c1) ** 2)
                  - np.exp(-decay * (x - c2) ** 2)) * np.sin(2.0 * np.pi * freq * tau)


def bump_cavity_grid(space, tau, amp=0.1, freq=0.2):
    """Unit cavity whose bottom wall oscillates as bump_wall_profile; the
    interior follows by transfinite interpolation of the wall motion."""
    base = PhysicalGrid.cartesian(space, tau=tau)
    xi, eta = space.nodes()
    nx, ny = space.shape
    yb = bump_wall_profile(xi[:, 0], tau, amp=amp, freq=freq)
    fade = 1.0 - (eta[0] - eta[0, 0]) / (eta[0, -1] - eta[0, 0])  # 1 at wall, 0 at lid
    d = {
        "etamin": np.column_stack([np.zeros(nx), yb]),
        "etamax": np.zeros((nx, 2)),
        "ximin": np.column_stack([np.zeros(ny), yb[0] * fade]),
        "ximax": np.column_stack([np.zeros(ny), yb[-1] * fade]),
    }
    return tfi_deform(base, d, tau=tau)
