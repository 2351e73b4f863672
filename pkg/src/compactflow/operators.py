"""Fourth-order compact discretization of the transformed
convection-diffusion operator on deforming curvilinear grids.

The physical problem  phi_t + c.grad(phi) - a lap(phi) = s  maps onto the
fixed parametric square as

    phi_tau + [A] phi = s,
    [A] = -alpha1 d_xixi - beta d_xieta - alpha2 d_etaeta
          + chi1 d_xi + chi2 d_eta,

with coefficients built from the grid metrics (and, on moving grids, the
grid-velocity Jacobians folded into chi).  The discrete operator couples
phi to its Pade-closed gradients phi_xi, phi_eta.  Only the phi part of
the stencil (second differences plus the cross term) enters the implicit
matrix of a Crank-Nicolson step; it is independent of the gradients and
of the convection field, so one matrix serves every inner iteration and,
on a static grid, every step.  The gradient terms are lagged and updated
by a fixed-point loop that re-closes the gradients after each linear
solve.
"""

import numpy as np
from scipy.sparse import linalg as sparse_linalg

from .metrics import dxi, deta
from .solvers import EDGES, StencilMatrix, _edge_index, solve_structured


class ConvergenceError(RuntimeError):
    """Fixed-point gradient coupling failed; carries the update history."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = list(history)


class ScalarField:
    """A scalar unknown with its parametric gradient unknowns.

    Parameters
    ----------
    space : ParamSpace
    phi : ndarray, shape space.shape
    phi_xi, phi_eta : ndarray, optional
        Supply both to mark the field closed (gradients consistent with
        phi), or neither; `closed` records which.
    """

    def __init__(self, space, phi, phi_xi=None, phi_eta=None):
        phi = np.asarray(phi, dtype=float)
        if phi.shape != space.shape:
            raise ValueError(f"phi shape {phi.shape} does not match space {space.shape}")
        if (phi_xi is None) != (phi_eta is None):
            raise ValueError("supply both gradients or neither")
        self.space = space
        self.phi = phi
        if phi_xi is None:
            self.phi_xi = np.zeros(space.shape)
            self.phi_eta = np.zeros(space.shape)
            self.closed = False
        else:
            self.phi_xi = np.asarray(phi_xi, dtype=float)
            self.phi_eta = np.asarray(phi_eta, dtype=float)
            if self.phi_xi.shape != space.shape or self.phi_eta.shape != space.shape:
                raise ValueError("gradient shapes do not match space")
            self.closed = True

    def copy(self):
        out = ScalarField(self.space, self.phi.copy())
        out.phi_xi = self.phi_xi.copy()
        out.phi_eta = self.phi_eta.copy()
        out.closed = self.closed
        return out


def pade_gradients(f):
    """Close the gradient unknowns by tridiagonal line solves.

    Interior rows are the fourth-order relations (1 + h^2/6 d2) phi_xi =
    central difference of phi; endpoint rows are third-order one-sided.
    Returns a new closed ScalarField; idempotent.
    """
    sp = f.space
    return ScalarField(sp, f.phi, dxi(f.phi, sp), deta(f.phi, sp))


class OperatorCoefficients:
    """Node coefficients of the transformed operator.

    alpha1, alpha2, beta multiply the second parametric derivatives and
    are what enters the implicit stencil; chi1, chi2 carry convection,
    grid motion and metric curvature and multiply the gradients.
    """

    def __init__(self, space, alpha1, alpha2, beta, chi1, chi2, diffusion, c1, c2):
        self.space = space
        self.alpha1 = alpha1
        self.alpha2 = alpha2
        self.beta = beta
        self.chi1 = chi1
        self.chi2 = chi2
        self.diffusion = float(diffusion)
        self.c1 = c1
        self.c2 = c2


def _as_field(value, shape, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(shape, float(arr))
    if arr.shape != shape:
        raise ValueError(f"{name} shape {arr.shape} does not match grid {shape}")
    return arr


def _coefficients(m, a, c1, c2, j1, j2):
    jac = m.jac
    dot = m.x_xi * m.x_eta + m.y_xi * m.y_eta
    e_eta = m.x_eta**2 + m.y_eta**2
    e_xi = m.x_xi**2 + m.y_xi**2
    alpha1 = a / jac**2 * e_eta
    alpha2 = a / jac**2 * e_xi
    beta = -2.0 * a / jac**2 * dot
    curv1 = (m.jac_eta * dot - m.jac_xi * e_eta
             + jac * (m.x_eta * m.x_xieta + m.y_eta * m.y_xieta
                      - m.x_xi * m.x_etaeta - m.y_xi * m.y_etaeta))
    curv2 = (m.jac_xi * dot - m.jac_eta * e_xi
             + jac * (m.x_xi * m.x_xieta + m.y_xi * m.y_xieta
                      - m.x_eta * m.x_xixi - m.y_eta * m.y_xixi))
    chi1 = (-j1 + c1 * m.y_eta - c2 * m.x_eta) / jac - a / jac**3 * curv1
    chi2 = (-j2 - c1 * m.y_xi + c2 * m.x_xi) / jac - a / jac**3 * curv2
    if a > 0.0:
        bad = ~((alpha1 > 0.0) & (alpha2 > 0.0)
                & (beta**2 <= 4.0 * alpha1 * alpha2 * (1.0 + 1e-10)))
        if np.any(bad):
            i, j = np.argwhere(bad)[0]
            raise ValueError(f"operator coefficients lose ellipticity at node ({i}, {j})")
    return OperatorCoefficients(m.space, alpha1, alpha2, beta, chi1, chi2, a, c1, c2)


def transformed_coefficients(m, a, c=(0.0, 0.0)):
    """Coefficients of the unsteady operator on the grid described by m.

    Parameters
    ----------
    m : MetricField
        Includes time metrics (x_tau, j1, j2) on moving grids.
    a : float, >= 0
        Diffusion coefficient (zero allowed for pure convection).
    c : pair of scalars or node arrays
        Physical convection velocity.
    """
    a = float(a)
    if a < 0.0:
        raise ValueError("diffusion coefficient must be nonnegative")
    shape = m.space.shape
    c1 = _as_field(c[0], shape, "c1")
    c2 = _as_field(c[1], shape, "c2")
    return _coefficients(m, a, c1, c2, m.j1, m.j2)


def elliptic_coefficients(m):
    """Coefficients of the steady operator (unit diffusion, no convection,
    no grid motion): the transformed -laplacian."""
    zero = np.zeros(m.space.shape)
    return _coefficients(m, 1.0, zero, zero, zero, zero)


# ---------------------------------------------------------------------------
# discrete operator pieces (interior nodes)

def _d2xi(f, h):
    return (f[2:, 1:-1] - 2.0 * f[1:-1, 1:-1] + f[:-2, 1:-1]) / h**2


def _d2eta(f, k):
    return (f[1:-1, 2:] - 2.0 * f[1:-1, 1:-1] + f[1:-1, :-2]) / k**2


def _dxieta(f, h, k):
    return (f[2:, 2:] - f[2:, :-2] - f[:-2, 2:] + f[:-2, :-2]) / (4.0 * h * k)


def _dxi_c(f, h):
    return (f[2:, 1:-1] - f[:-2, 1:-1]) / (2.0 * h)


def _deta_c(f, k):
    return (f[1:-1, 2:] - f[1:-1, :-2]) / (2.0 * k)


def _stencil_part(co, phi):
    h, k = co.space.h, co.space.k
    ii = (slice(1, -1), slice(1, -1))
    return (-2.0 * co.alpha1[ii] * _d2xi(phi, h)
            - 2.0 * co.alpha2[ii] * _d2eta(phi, k)
            + co.beta[ii] * _dxieta(phi, h, k))


def _gradient_part(co, phi_xi, phi_eta):
    h, k = co.space.h, co.space.k
    ii = (slice(1, -1), slice(1, -1))
    return (co.alpha1[ii] * _dxi_c(phi_xi, h) - co.beta[ii] * _deta_c(phi_xi, k)
            + co.chi1[ii] * phi_xi[ii]
            + co.alpha2[ii] * _deta_c(phi_eta, k) - co.beta[ii] * _dxi_c(phi_eta, h)
            + co.chi2[ii] * phi_eta[ii])


def apply_operator(co, f):
    """Evaluate the discrete operator at interior nodes.

    Returns a full-grid array with zeros on the boundary ring.  Requires
    a closed field: the gradient unknowns are part of the stencil.
    """
    if not f.closed:
        raise ValueError("field gradients are not closed; call pade_gradients first")
    if f.space.shape != co.space.shape:
        raise ValueError("field and coefficients live on different grids")
    out = np.zeros(f.space.shape)
    out[1:-1, 1:-1] = _stencil_part(co, f.phi) + _gradient_part(co, f.phi_xi, f.phi_eta)
    return out


# ---------------------------------------------------------------------------
# boundary conditions

class EdgeBC:
    """One edge's boundary row: kind 'dirichlet' (phi = value) or
    'neumann' (outward normal derivative = value).  value is a scalar or
    an array over the edge nodes; Neumann edges must be bound to grid
    metrics (attach_metrics) before matrix assembly."""

    def __init__(self, kind, value=0.0):
        if kind in ("periodic", "robin"):
            raise ValueError(f"{kind!r} boundary rows are not supported")
        if kind not in ("dirichlet", "neumann"):
            raise ValueError(f"unknown boundary kind {kind!r}")
        self.kind = kind
        self.value = value
        self.scale = None
        self.tangent = None

    def data(self, n):
        arr = np.asarray(self.value, dtype=float)
        if arr.ndim == 0:
            return np.full(n, float(arr))
        if arr.shape != (n,):
            raise ValueError(f"boundary data shape {arr.shape}, expected ({n},)")
        return arr


def dirichlet(value=0.0):
    return EdgeBC("dirichlet", value)


def neumann(value=0.0):
    return EdgeBC("neumann", value)


class BoundarySpec:
    """Boundary rows for all four edges plus an optional pinned node.

    The outward normal derivative in transformed coordinates is

        d(phi)/dn = sign (|grad xi| phi_xi + q phi_eta)      (xi edges)

    with sign -1/+1 at the min/max edge and q the scaled cross-metric
    grad(xi).grad(eta)/|grad xi| (roles swapped on eta edges).  The
    normal part becomes an implicit one-sided row; the tangential part is
    lagged into the right-hand side with the current gradient iterate.
    Corner nodes belong to the eta edges (the later edge wins).
    """

    def __init__(self, ximin, ximax, etamin, etamax, pin=None):
        self.edges = {"ximin": ximin, "ximax": ximax,
                      "etamin": etamin, "etamax": etamax}
        for edge, e in self.edges.items():
            if not isinstance(e, EdgeBC):
                raise ValueError(f"{edge} must be an EdgeBC")
        self.pin = None if pin is None else tuple(pin)

    @classmethod
    def uniform(cls, kind, value=0.0, pin=None):
        return cls(EdgeBC(kind, value), EdgeBC(kind, value),
                   EdgeBC(kind, value), EdgeBC(kind, value), pin=pin)

    @property
    def all_neumann(self):
        return all(e.kind == "neumann" for e in self.edges.values())

    def attach_metrics(self, m):
        """Bind Neumann rows to a metric field: per-node normal scale and
        lagged tangential coefficient along each Neumann edge."""
        shape = m.space.shape
        for edge, e in self.edges.items():
            if e.kind != "neumann":
                continue
            idx = _edge_index(edge, shape)
            jac = m.jac[idx]
            dot = (m.x_xi * m.x_eta + m.y_xi * m.y_eta)[idx]
            sign = -1.0 if edge in ("ximin", "etamin") else 1.0
            if edge in ("ximin", "ximax"):
                norm = np.sqrt(m.x_eta[idx] ** 2 + m.y_eta[idx] ** 2) / jac
            else:
                norm = np.sqrt(m.x_xi[idx] ** 2 + m.y_xi[idx] ** 2) / jac
            e.scale = sign * norm
            e.tangent = sign * (-dot) / (jac**2 * norm)
        return self


def _build_matrix(co, bc, theta, ident):
    """Stencil rows ident*phi + theta*(-2a1 d2xi - 2a2 d2eta + b dxideta)
    with the boundary rows and pin of bc."""
    sp = co.space
    h, k = sp.h, sp.k
    mat = StencilMatrix(sp.shape, h, k)
    c = mat.interior
    cx = theta * (-2.0) * co.alpha1 / h**2
    ce = theta * (-2.0) * co.alpha2 / k**2
    cross = theta * co.beta / (4.0 * h * k)
    c[1, 1] = ident - 2.0 * (cx + ce)
    c[2, 1] = cx
    c[0, 1] = cx
    c[1, 2] = ce
    c[1, 0] = ce
    c[2, 2] = cross
    c[0, 0] = cross
    c[2, 0] = -cross
    c[0, 2] = -cross
    for edge, e in bc.edges.items():
        if e.kind == "dirichlet":
            mat.set_edge(edge, "identity")
        else:
            if e.scale is None:
                raise ValueError(f"{edge} Neumann row not bound to metrics "
                                 "(call BoundarySpec.attach_metrics)")
            mat.set_edge(edge, "normal4", e.scale)
    if bc.pin is not None:
        mat.set_pin(bc.pin)
    return mat


def build_implicit_matrix(co, bc, dtau):
    """Left-hand matrix of the Crank-Nicolson step; reusable across inner
    iterations, both velocity components, and (static grid) steps."""
    return _build_matrix(co, bc, 0.5 * dtau, 1.0)


def build_elliptic_matrix(co, bc):
    return _build_matrix(co, bc, 1.0, 0.0)


def _bc_rows(rhs, bc, phi_xi, phi_eta, shape):
    # edges written in fixed order so the later (eta) edges own corners,
    # matching the StencilMatrix row ownership
    for edge in EDGES:
        e = bc.edges[edge]
        idx = _edge_index(edge, shape)
        g = e.data(rhs[idx].shape[0])
        if e.kind == "dirichlet":
            rhs[idx] = g
        else:
            tang = phi_eta[idx] if edge in ("ximin", "ximax") else phi_xi[idx]
            rhs[idx] = g - e.tangent * tang


def _fixed_point(matrix, co, bc, rhs_interior, phi0, px0, pe0, theta,
                 config, inner_tol, max_inner, pin_value):
    """Shared gradient-coupling solve of cn_step and solve_elliptic.

    The rows read rhs_interior - theta*gradient_terms in the interior
    plus the bc rows, with the gradient unknowns closed from phi itself,
    so the whole problem is affine in phi: phi = M^{-1}(c + L phi) with
    M the stencil matrix and L collecting every gradient contribution
    (interior chi terms and the Neumann tangent corrections).  Plain
    substitution contracts like the lagged-gradient weight, which is 1/2
    on a Cartesian grid but approaches one on strongly deformed grids,
    so the preconditioned system (I - M^{-1}L) phi = M^{-1} c is solved
    with GMRES instead; the discrete solution is unchanged.
    """
    sp = co.space
    shape = sp.shape
    solver_iters = [0]

    def assemble(px, pe):
        rhs = np.empty(shape)
        rhs[1:-1, 1:-1] = rhs_interior[1:-1, 1:-1] - theta * _gradient_part(co, px, pe)
        _bc_rows(rhs, bc, px, pe, shape)
        if bc.pin is not None:
            rhs[bc.pin] = pin_value
        return rhs

    def inner_solve(rhs, x0):
        x, info = solve_structured(matrix, rhs, x0=x0, config=config)
        solver_iters[0] += info["iterations"]
        if not info["converged"]:
            raise ConvergenceError(
                f"linear solve stalled at residual {info['residual']:.3e}", [])
        return x

    zero = np.zeros(shape)
    c_aff = assemble(zero, zero)
    base = inner_solve(c_aff, phi0)

    def matvec(vec):
        v = vec.reshape(shape)
        f = pade_gradients(ScalarField(sp, v))
        lv = assemble(f.phi_xi, f.phi_eta) - c_aff
        return vec - inner_solve(lv, None).ravel()

    n = shape[0] * shape[1]
    op = sparse_linalg.LinearOperator((n, n), matvec=matvec, dtype=float)
    progress = []
    # aim one decade below inner_tol; the true-residual floor sits at the
    # inner-solve tolerance times the conditioning, so a miss of the
    # tightened target is still accepted when the contracted tolerance
    # itself is met
    x, code = sparse_linalg.gmres(
        op, base.ravel(), x0=phi0.ravel(), rtol=0.1 * inner_tol, atol=0.0,
        restart=min(max_inner, n), maxiter=1,
        callback=progress.append, callback_type="pr_norm")
    if code != 0:
        bnorm = float(np.linalg.norm(base.ravel()))
        rres = float(np.linalg.norm(base.ravel() - op.matvec(x)))
        rres = rres / bnorm if bnorm > 0.0 else rres
        if rres > inner_tol:
            raise ConvergenceError(
                f"gradient coupling did not converge in {max_inner} "
                f"iterations (relative residual {rres:.3e})", progress)
    field = pade_gradients(ScalarField(sp, x.reshape(shape)))
    return field, {"inner_iterations": len(progress),
                   "solver_iterations": solver_iters[0],
                   "delta": progress[-1] if progress else 0.0}


def cn_step(co_n, co_np1, f_n, s_n, s_np1, dtau, bc, config=None,
            inner_tol=1e-9, max_inner=150, matrix=None):
    """Advance phi_tau + A phi = s by one Crank-Nicolson step.

    Parameters
    ----------
    co_n, co_np1 : OperatorCoefficients
        At the old and new time level (same object for a static grid).
    f_n : ScalarField
        State at level n (closed, or it is closed here).
    s_n, s_np1 : array or scalar
        Source at the two levels.
    dtau : float
    bc : BoundarySpec
        Data arrays evaluated at level n+1.
    matrix : StencilMatrix, optional
        Prebuilt left-hand matrix (build_implicit_matrix) for reuse.

    Returns
    -------
    (ScalarField at n+1, info dict with inner_iterations,
    solver_iterations, delta).
    """
    if dtau <= 0.0:
        raise ValueError("dtau must be positive")
    if not f_n.closed:
        f_n = pade_gradients(f_n)
    if matrix is None:
        matrix = build_implicit_matrix(co_np1, bc, dtau)
    half = 0.5 * dtau
    rhs_interior = (f_n.phi - half * apply_operator(co_n, f_n)
                    + half * (np.asarray(s_n, dtype=float) + np.asarray(s_np1, dtype=float)))
    pin_value = 0.0 if bc.pin is None else f_n.phi[bc.pin]
    return _fixed_point(matrix, co_np1, bc, rhs_interior, f_n.phi,
                        f_n.phi_xi, f_n.phi_eta, half, config, inner_tol,
                        max_inner, pin_value)


def solve_elliptic(co, rhs, bc, config=None, inner_tol=1e-9, max_inner=150,
                   x0=None, matrix=None):
    """Solve the steady transformed problem A phi = rhs.

    All-Neumann problems must declare bc.pin; the pin row replaces one
    interior equation (a coupled node, never a corner: on an orthogonal
    grid the cross coefficients vanish and a corner row is decoupled) and
    the returned field is normalized so phi[0, 0] = 0.

    Returns (ScalarField, info dict).
    """
    if bc.all_neumann and bc.pin is None:
        raise ValueError("all-Neumann problem requires a pinned reference node")
    if matrix is None:
        matrix = build_elliptic_matrix(co, bc)
    rhs = _as_field(rhs, co.space.shape, "rhs")
    phi0 = np.zeros(co.space.shape) if x0 is None else np.asarray(x0, dtype=float)
    start = pade_gradients(ScalarField(co.space, phi0))
    field, info = _fixed_point(matrix, co, bc, rhs, start.phi, start.phi_xi,
                               start.phi_eta, 1.0, config, inner_tol,
                               max_inner, 0.0)
    if bc.all_neumann:
        field = ScalarField(co.space, field.phi - field.phi[0, 0],
                            field.phi_xi, field.phi_eta)
    return field, info
