"""Incompressible Navier-Stokes steppers on deforming curvilinear grids.

Two formulations share the convection-diffusion machinery: a
primitive-variable stepper (momentum + pressure Poisson with Neumann data
from the wall-normal momentum balance) and a streamfunction-vorticity
stepper (vorticity transport + streamfunction Poisson with a cell-centre
wall vorticity closure).  Nonlinear coupling is resolved by Picard
iteration within each time step.
"""

import numpy as np

from .operators import (
    BoundarySpec,
    ConvergenceError,
    ScalarField,
    build_elliptic_matrix,
    build_implicit_matrix,
    cn_step,
    dirichlet,
    elliptic_coefficients,
    neumann,
    pade_gradients,
    solve_elliptic,
    transformed_coefficients,
)
from .solvers import EDGES, SolverConfig, _edge_index


class FlowConfig:
    """Tolerances for the per-step Picard loop and the inner solves.

    div_relax scales the dilatation feedback -relax*div(u^n)/dtau added
    to the pressure source; without it the divergence obeys a sourceless
    transport equation with no-flux walls and truncation injections
    accumulate secularly.
    """

    def __init__(self, picard_tol=1e-8, max_picard=30, inner_tol=1e-9,
                 max_inner=150, solver=None, div_relax=1.0):
        self.picard_tol = float(picard_tol)
        self.max_picard = int(max_picard)
        self.inner_tol = float(inner_tol)
        self.max_inner = int(max_inner)
        # factorized solves amortize over the many same-matrix systems
        # each step generates
        self.solver = solver if solver is not None else SolverConfig(method="direct")
        self.div_relax = float(div_relax)


def _closed(field):
    if not field.closed:
        return pade_gradients(field)
    return field


def _cached(ws, key, make):
    """Workspace matrices are valid only while metrics, step size, and
    boundary kinds are unchanged; callers on deforming grids must pass a
    fresh workspace (or none) each step."""
    if key not in ws:
        ws[key] = make()
    return ws[key]


class FlowStatePrimitive:
    """Velocity-pressure state; all fields carry closed gradients."""

    def __init__(self, u, v, p, re, tau=0.0):
        if not (u.space == v.space == p.space):
            raise ValueError("u, v, p live on different parametric spaces")
        self.u = _closed(u)
        self.v = _closed(v)
        self.p = _closed(p)
        self.re = float(re)
        self.tau = float(tau)

    @classmethod
    def from_arrays(cls, space, u, v, p, re, tau=0.0):
        return cls(ScalarField(space, np.asarray(u, dtype=float)),
                   ScalarField(space, np.asarray(v, dtype=float)),
                   ScalarField(space, np.asarray(p, dtype=float)),
                   re, tau)

    @property
    def space(self):
        return self.u.space


class FlowStatePsiOmega:
    """Streamfunction-vorticity state; fields carry closed gradients."""

    def __init__(self, psi, omega, re, tau=0.0):
        if not psi.space == omega.space:
            raise ValueError("psi and omega live on different parametric spaces")
        self.psi = _closed(psi)
        self.omega = _closed(omega)
        self.re = float(re)
        self.tau = float(tau)

    @classmethod
    def from_arrays(cls, space, psi, omega, re, tau=0.0):
        return cls(ScalarField(space, np.asarray(psi, dtype=float)),
                   ScalarField(space, np.asarray(omega, dtype=float)),
                   re, tau)

    @property
    def space(self):
        return self.psi.space


class CaseBC:
    """Per-edge Dirichlet data for one time level of a benchmark case.

    u, v, p_values, psi, omega map edge name -> scalar or array of edge
    length.  pressure selects "neumann" (wall-normal momentum balance
    data, pinned node) or "dirichlet" (p_values required).  omega=None
    routes vorticity walls through the cell-centre relation.
    """

    def __init__(self, u=None, v=None, pressure="neumann", p_values=None,
                 pin=(1, 1), psi=None, omega=None):
        if pressure not in ("neumann", "dirichlet"):
            raise ValueError(f"unknown pressure treatment '{pressure}'")
        if pressure == "dirichlet" and p_values is None:
            raise ValueError("dirichlet pressure needs p_values")
        self.u = u
        self.v = v
        self.pressure = pressure
        self.p_values = p_values
        self.pin = pin
        self.psi = psi
        self.omega = omega


def _dirichlet_spec(values, pin=None):
    return BoundarySpec(
        ximin=dirichlet(values["ximin"]),
        ximax=dirichlet(values["ximax"]),
        etamin=dirichlet(values["etamin"]),
        etamax=dirichlet(values["etamax"]),
        pin=pin,
    )


def physical_gradients(f, m):
    """Cartesian gradient (f_x, f_y) of a closed field via the metrics."""
    if not f.closed:
        raise ValueError("field gradients are not closed")
    fx = (m.y_eta * f.phi_xi - m.y_xi * f.phi_eta) / m.jac
    fy = (-m.x_eta * f.phi_xi + m.x_xi * f.phi_eta) / m.jac
    return fx, fy


def laplacian(f, m):
    """Cartesian Laplacian via repeated first-derivative recovery."""
    fx, fy = physical_gradients(f, m)
    gxx, _ = physical_gradients(pade_gradients(ScalarField(f.space, fx)), m)
    _, gyy = physical_gradients(pade_gradients(ScalarField(f.space, fy)), m)
    return gxx + gyy


def divergence(state, m):
    """Velocity divergence field and its max norm."""
    ux, _ = physical_gradients(state.u, m)
    _, vy = physical_gradients(state.v, m)
    div = ux + vy
    return div, float(np.max(np.abs(div)))


def pressure_rhs(u, v, m):
    """Source of -lap(p) = rhs from the divergence of the momentum
    equations for a solenoidal field."""
    ux, uy = physical_gradients(u, m)
    vx, vy = physical_gradients(v, m)
    return ux * ux + 2.0 * uy * vx + vy * vy


def _normal_projection(f1, f2, m):
    """Outward-normal component of a vector field on each edge."""
    norm_eta = np.sqrt(m.x_eta**2 + m.y_eta**2)
    norm_xi = np.sqrt(m.x_xi**2 + m.y_xi**2)
    t1 = (m.y_eta * f1 - m.x_eta * f2) / norm_eta
    t2 = (m.y_xi * f1 - m.x_xi * f2) / norm_xi
    return {
        "ximin": -t1[0, :],
        "ximax": t1[-1, :],
        "etamin": t2[:, 0],
        "etamax": -t2[:, -1],
    }


def pressure_neumann_bc(state, m):
    """Outward-normal pressure derivative on each edge.

    Projects (1/Re) lap(u) - (u.grad)u onto the outward wall normal;
    exact on walls whose velocity is steady in time.
    """
    u, v, re = state.u, state.v, state.re
    ux, uy = physical_gradients(u, m)
    vx, vy = physical_gradients(v, m)
    f1 = laplacian(u, m) / re - (u.phi * ux + v.phi * uy)
    f2 = laplacian(v, m) / re - (u.phi * vx + v.phi * vy)
    return _normal_projection(f1, f2, m)


def _pressure_system(state, m, neumann_data):
    """Pressure source and optional wall data for one velocity iterate.

    The source is the full discrete divergence of the convection term
    rather than the velocity-gradient tensor contraction the two reduce
    to for solenoidal fields: once the iterate carries divergence D, the
    contracted form misses (u.grad)D and the defect feeds itself.
    """
    u, v, re = state.u, state.v, state.re
    ux, uy = physical_gradients(u, m)
    vx, vy = physical_gradients(v, m)
    conv1 = u.phi * ux + v.phi * uy
    conv2 = u.phi * vx + v.phi * vy
    c1x, _ = physical_gradients(pade_gradients(ScalarField(u.space, conv1)), m)
    _, c2y = physical_gradients(pade_gradients(ScalarField(u.space, conv2)), m)
    rhs = c1x + c2y
    data = None
    if neumann_data:
        f1 = laplacian(u, m) / re - conv1
        f2 = laplacian(v, m) / re - conv2
        data = _normal_projection(f1, f2, m)
    return rhs, data


def _pressure_spec(bc, m, data=None):
    if bc.pressure == "dirichlet":
        return _dirichlet_spec(bc.p_values)
    return BoundarySpec(
        ximin=neumann(data["ximin"]),
        ximax=neumann(data["ximax"]),
        etamin=neumann(data["etamin"]),
        etamax=neumann(data["etamax"]),
        pin=bc.pin,
    ).attach_metrics(m)


def _solvability_shift(rhs, data, m):
    """Balance the interior source against the boundary flux data.

    The all-Neumann problem is compatible only when the source integral
    cancels the boundary flux; discrete data miss by truncation error
    (badly so during under-resolved transients), and the pin row would
    otherwise concentrate that defect into a spike that corrupts the
    pressure gradient.  Spreads the quadrature imbalance uniformly.
    """
    sp = m.space
    w = np.full(sp.shape, sp.h * sp.k)
    for idx in ((0, slice(None)), (-1, slice(None)),
                (slice(None), 0), (slice(None), -1)):
        w[idx] *= 0.5
    area = float(np.sum(w * m.jac))
    total = float(np.sum(w * m.jac * rhs))
    for edge, g in data.items():
        idx = _edge_index(edge, sp.shape)
        if edge in ("ximin", "ximax"):
            ds = np.sqrt(m.x_eta[idx] ** 2 + m.y_eta[idx] ** 2) * sp.k
        else:
            ds = np.sqrt(m.x_xi[idx] ** 2 + m.y_xi[idx] ** 2) * sp.h
        wt = np.ones(g.shape)
        wt[0] = wt[-1] = 0.5
        total += float(np.sum(wt * ds * g))
    if total == 0.0:
        return rhs
    return rhs - total / area


def step_primitive(state, m_n, m_np1, dtau, bc, cfg=None, workspace=None):
    """Advance a primitive-variable state by one time step.

    Per Picard pass: momentum components are stepped implicitly with the
    lagged velocity iterate as convection coefficients and -grad(p) as
    source, then the pressure Poisson problem is re-solved from the new
    velocities.  Converges when successive velocity iterates agree to
    picard_tol in the max norm.
    """
    cfg = cfg or FlowConfig()
    ws = workspace if workspace is not None else {}
    a = 1.0 / state.re
    sp = state.space

    co_n = transformed_coefficients(m_n, a, c=(state.u.phi, state.v.phi))
    co_p = elliptic_coefficients(m_np1)
    bc_u = _dirichlet_spec(bc.u)
    bc_v = _dirichlet_spec(bc.v)

    pxn, pyn = physical_gradients(state.p, m_n)
    # Dilatation feedback from the frozen old level.  Without it the
    # divergence obeys a sourceless transport equation with no-flux walls
    # and truncation injections accumulate secularly; with it the steady
    # divergence equilibrates at injection*dtau/div_relax.  The frozen
    # level keeps the term constant across Picard passes: re-evaluating it
    # on the current iterate couples the pressure back into the loop
    # through modes it controls only weakly and stalls the iteration.
    feedback = 0.0
    if cfg.div_relax:
        div_n, _ = divergence(state, m_n)
        feedback = (cfg.div_relax / dtau) * div_n

    u_it, v_it, p_it = state.u, state.v, state.p
    mom_matrix = None
    p_matrix = None
    deltas = []
    info_u = info_v = info_p = None
    for picard in range(1, cfg.max_picard + 1):
        co_np1 = transformed_coefficients(m_np1, a, c=(u_it.phi, v_it.phi))
        if mom_matrix is None:
            mom_matrix = _cached(
                ws, "momentum", lambda: build_implicit_matrix(co_np1, bc_u, dtau))
        px1, py1 = physical_gradients(p_it, m_np1)
        u_new, info_u = cn_step(
            co_n, co_np1, state.u, -pxn, -px1, dtau, bc_u, config=cfg.solver,
            inner_tol=cfg.inner_tol, max_inner=cfg.max_inner, matrix=mom_matrix)
        v_new, info_v = cn_step(
            co_n, co_np1, state.v, -pyn, -py1, dtau, bc_v, config=cfg.solver,
            inner_tol=cfg.inner_tol, max_inner=cfg.max_inner, matrix=mom_matrix)

        candidate = FlowStatePrimitive(u_new, v_new, p_it, state.re,
                                       state.tau + dtau)
        rhs_p, data = _pressure_system(candidate, m_np1,
                                       bc.pressure == "neumann")
        rhs_p = rhs_p - feedback
        if bc.pressure == "neumann":
            rhs_p = _solvability_shift(rhs_p, data, m_np1)
        bc_p = _pressure_spec(bc, m_np1, data)
        if p_matrix is None:
            p_matrix = _cached(
                ws, "pressure", lambda: build_elliptic_matrix(co_p, bc_p))
        p_new, info_p = solve_elliptic(
            co_p, rhs_p, bc_p, config=cfg.solver,
            inner_tol=cfg.inner_tol, max_inner=cfg.max_inner,
            x0=p_it.phi, matrix=p_matrix)

        delta = max(float(np.max(np.abs(u_new.phi - u_it.phi))),
                    float(np.max(np.abs(v_new.phi - v_it.phi))))
        deltas.append(delta)
        u_it, v_it, p_it = u_new, v_new, p_new
        if delta < cfg.picard_tol:
            break
    else:
        raise ConvergenceError(
            f"velocity-pressure coupling did not converge in "
            f"{cfg.max_picard} passes (last update {deltas[-1]:.3e})", deltas)

    new_state = FlowStatePrimitive(u_it, v_it, p_it, state.re, state.tau + dtau)
    _, div_max = divergence(new_state, m_np1)
    info = {
        "picard_iterations": picard,
        "delta": deltas[-1],
        "div_max": div_max,
        "u": info_u,
        "v": info_v,
        "pressure": info_p,
    }
    return new_state, info


def streamfunction_velocity(psi, m):
    """(u, v) arrays recovered from a closed streamfunction field."""
    px, py = physical_gradients(psi, m)
    return py, -px


def _wall_velocity_gradients(f, m, bc):
    """Copy of the gradient arrays with wall rows rebuilt from the known
    wall velocity, injecting no-slip into the wall vorticity relation."""
    px = f.phi_xi.copy()
    pe = f.phi_eta.copy()
    nx, ny = f.space.shape
    for edge in EDGES:
        idx = _edge_index(edge, f.space.shape)
        n = nx if edge in ("etamin", "etamax") else ny
        uw = np.broadcast_to(np.asarray(bc.u[edge], dtype=float), (n,))
        vw = np.broadcast_to(np.asarray(bc.v[edge], dtype=float), (n,))
        px[idx] = m.y_xi[idx] * uw - m.x_xi[idx] * vw
        pe[idx] = m.y_eta[idx] * uw - m.x_eta[idx] * vw
    return ScalarField(f.space, f.phi, px, pe)


def wall_vorticity(psi, omega, m, edge):
    """Cell-centre wall vorticity along one edge (non-corner nodes).

    Averages the vorticity-streamfunction balance over the half-cell
    adjacent to the wall; exact for conformal metrics.
    """
    px, pe = psi.phi_xi, psi.phi_eta
    jac = m.jac
    h, k = psi.space.h, psi.space.k
    if edge == "ximin":
        w, q = 0, 1
    elif edge == "ximax":
        w, q = -1, -2
    elif edge == "etamin":
        w, q = 0, 1
    elif edge == "etamax":
        w, q = -1, -2
    else:
        raise ValueError(f"unknown edge '{edge}'")
    sign = -1.0 if edge in ("ximax", "etamax") else 1.0
    if edge in ("ximin", "ximax"):
        bracket = sign * (2.0 / h) * (px[w, 1:-1] - px[q, 1:-1]) + (
            pe[w, :-2] + pe[q, :-2] - pe[w, 2:] - pe[q, 2:]) / (2.0 * k)
        return -omega.phi[q, 1:-1] + 2.0 / (jac[w, 1:-1] + jac[q, 1:-1]) * bracket
    bracket = sign * (2.0 / k) * (pe[1:-1, w] - pe[1:-1, q]) + (
        px[:-2, w] + px[:-2, q] - px[2:, w] - px[2:, q]) / (2.0 * h)
    return -omega.phi[1:-1, q] + 2.0 / (jac[1:-1, w] + jac[1:-1, q]) * bracket


def _wall_vorticity_rows(psi, omega, m):
    """Vorticity wall values on all four edges with averaged corners."""
    vals = {edge: wall_vorticity(psi, omega, m, edge) for edge in EDGES}
    nx, ny = psi.space.shape
    full = {
        "ximin": np.empty(ny), "ximax": np.empty(ny),
        "etamin": np.empty(nx), "etamax": np.empty(nx),
    }
    full["ximin"][1:-1] = vals["ximin"]
    full["ximax"][1:-1] = vals["ximax"]
    full["etamin"][1:-1] = vals["etamin"]
    full["etamax"][1:-1] = vals["etamax"]
    corners = {
        (0, 0): 0.5 * (vals["ximin"][0] + vals["etamin"][0]),
        (0, ny - 1): 0.5 * (vals["ximin"][-1] + vals["etamax"][0]),
        (nx - 1, 0): 0.5 * (vals["ximax"][0] + vals["etamin"][-1]),
        (nx - 1, ny - 1): 0.5 * (vals["ximax"][-1] + vals["etamax"][-1]),
    }
    full["ximin"][0] = full["etamin"][0] = corners[(0, 0)]
    full["ximin"][-1] = full["etamax"][0] = corners[(0, ny - 1)]
    full["ximax"][0] = full["etamin"][-1] = corners[(nx - 1, 0)]
    full["ximax"][-1] = full["etamax"][-1] = corners[(nx - 1, ny - 1)]
    return full


def step_psiomega(state, m_n, m_np1, dtau, bc, cfg=None, workspace=None):
    """Advance a streamfunction-vorticity state by one time step.

    Per Picard pass: vorticity is transported with velocities recovered
    from the current streamfunction iterate, the streamfunction Poisson
    problem is re-solved, and wall vorticity is refreshed from the
    cell-centre relation (or taken from bc.omega when prescribed).
    """
    cfg = cfg or FlowConfig()
    ws = workspace if workspace is not None else {}
    a = 1.0 / state.re
    sp = state.space

    u_n, v_n = streamfunction_velocity(state.psi, m_n)
    co_n = transformed_coefficients(m_n, a, c=(u_n, v_n))
    co_e = elliptic_coefficients(m_np1)
    bc_psi = _dirichlet_spec(bc.psi)

    zeros = np.zeros(sp.shape)
    psi_it, omega_it = state.psi, state.omega
    u_it, v_it = u_n, v_n
    if bc.omega is not None:
        wall_rows = {e: np.broadcast_to(
            np.asarray(bc.omega[e], dtype=float),
            (sp.shape[0] if e in ("etamin", "etamax") else sp.shape[1],))
            for e in EDGES}
    else:
        wall_rows = _wall_vorticity_rows(
            _wall_velocity_gradients(psi_it, m_np1, bc), omega_it, m_np1)

    omega_matrix = None
    psi_matrix = _cached(ws, "stream", lambda: build_elliptic_matrix(co_e, bc_psi))
    deltas = []
    info_o = info_s = None
    for picard in range(1, cfg.max_picard + 1):
        co_np1 = transformed_coefficients(m_np1, a, c=(u_it, v_it))
        bc_omega = _dirichlet_spec(wall_rows)
        if omega_matrix is None:
            omega_matrix = _cached(
                ws, "vorticity", lambda: build_implicit_matrix(co_np1, bc_omega, dtau))
        omega_new, info_o = cn_step(
            co_n, co_np1, state.omega, zeros, zeros, dtau, bc_omega,
            config=cfg.solver, inner_tol=cfg.inner_tol,
            max_inner=cfg.max_inner, matrix=omega_matrix)
        psi_new, info_s = solve_elliptic(
            co_e, omega_new.phi, bc_psi, config=cfg.solver,
            inner_tol=cfg.inner_tol, max_inner=cfg.max_inner,
            x0=psi_it.phi, matrix=psi_matrix)
        u_it, v_it = streamfunction_velocity(psi_new, m_np1)
        if bc.omega is None:
            wall_rows = _wall_vorticity_rows(
                _wall_velocity_gradients(psi_new, m_np1, bc), omega_new, m_np1)

        delta = max(float(np.max(np.abs(psi_new.phi - psi_it.phi))),
                    float(np.max(np.abs(omega_new.phi - omega_it.phi))))
        deltas.append(delta)
        psi_it, omega_it = psi_new, omega_new
        if delta < cfg.picard_tol:
            break
    else:
        raise ConvergenceError(
            f"vorticity-streamfunction coupling did not converge in "
            f"{cfg.max_picard} passes (last update {deltas[-1]:.3e})", deltas)

    new_state = FlowStatePsiOmega(psi_it, omega_it, state.re, state.tau + dtau)
    info = {
        "picard_iterations": picard,
        "delta": deltas[-1],
        "omega": info_o,
        "psi": info_s,
    }
    return new_state, info
