"""Linear-solver verification against dense numpy oracles."""

import numpy as np
import pytest

from compactflow.solvers import (SolverConfig, StencilMatrix, TridiagonalSystem,
                                 solve_structured, solve_tridiagonal)


def random_tridiagonal(n, rng):
    lower = rng.uniform(-1.0, 1.0, n)
    upper = rng.uniform(-1.0, 1.0, n)
    diag = 3.0 + rng.uniform(0.0, 1.0, n)  # strictly diagonally dominant
    return TridiagonalSystem(lower, diag, upper)


def dense_of(system):
    a = np.diag(system.diag)
    a += np.diag(system.lower[1:], k=-1)
    a += np.diag(system.upper[:-1], k=1)
    return a


class TestTridiagonal:
    def test_identity(self):
        n = 7
        sys_ = TridiagonalSystem(np.zeros(n), np.ones(n), np.zeros(n))
        rhs = np.arange(n, dtype=float)
        assert np.array_equal(solve_tridiagonal(sys_, rhs), rhs)

    def test_against_dense_oracle(self):
        rng = np.random.default_rng(7)
        for n in (5, 17, 50):
            sys_ = random_tridiagonal(n, rng)
            rhs = rng.standard_normal(n)
            expect = np.linalg.solve(dense_of(sys_), rhs)
            got = solve_tridiagonal(sys_, rhs)
            assert np.allclose(got, expect, rtol=0, atol=1e-12)

    def test_multiple_rhs_columns(self):
        rng = np.random.default_rng(11)
        sys_ = random_tridiagonal(20, rng)
        rhs = rng.standard_normal((20, 6))
        got = solve_tridiagonal(sys_, rhs)
        expect = np.linalg.solve(dense_of(sys_), rhs)
        assert np.allclose(got, expect, rtol=0, atol=1e-12)

    def test_matvec_roundtrip(self):
        rng = np.random.default_rng(3)
        sys_ = random_tridiagonal(30, rng)
        x = rng.standard_normal(30)
        assert np.allclose(sys_.matvec(x), dense_of(sys_) @ x, atol=1e-13)

    def test_singular_raises(self):
        n = 6
        sys_ = TridiagonalSystem(np.zeros(n), np.zeros(n), np.zeros(n))
        with pytest.raises(np.linalg.LinAlgError):
            solve_tridiagonal(sys_, np.ones(n))

    def test_shape_mismatch_raises(self):
        sys_ = TridiagonalSystem(np.zeros(5), np.ones(5), np.zeros(5))
        with pytest.raises(ValueError):
            solve_tridiagonal(sys_, np.ones(6))


def laplacian_stencil(n, h):
    """Dirichlet 5-point Laplacian -lap(u) on an n x n unit-square grid."""
    m = StencilMatrix((n, n), h, h)
    m.interior[1, 1, :, :] = 4.0 / h**2
    m.interior[0, 1, :, :] = -1.0 / h**2
    m.interior[2, 1, :, :] = -1.0 / h**2
    m.interior[1, 0, :, :] = -1.0 / h**2
    m.interior[1, 2, :, :] = -1.0 / h**2
    return m


def dense_from_matvec(matrix):
    nx, ny = matrix.shape
    n = nx * ny
    a = np.zeros((n, n))
    e = np.zeros((nx, ny))
    for col in range(n):
        e.flat[col] = 1.0
        a[:, col] = matrix.matvec(e).ravel()
        e.flat[col] = 0.0
    return a


class TestStructured:
    def test_matches_dense_solve(self):
        n = 17
        h = 1.0 / (n - 1)
        m = laplacian_stencil(n, h)
        rng = np.random.default_rng(5)
        b = rng.standard_normal((n, n))
        x, info = solve_structured(m, b)
        assert info["converged"]
        dense = dense_from_matvec(m)
        expect = np.linalg.solve(dense, b.ravel()).reshape(n, n)
        assert np.max(np.abs(x - expect)) < 1e-9

    def test_poisson_manufactured(self):
        n = 33
        h = 1.0 / (n - 1)
        xv = np.linspace(0, 1, n)
        x2, y2 = np.meshgrid(xv, xv, indexing="ij")
        exact = np.sin(np.pi * x2) * np.sin(np.pi * y2)
        m = laplacian_stencil(n, h)
        b = 2 * np.pi**2 * exact
        b[0, :] = b[-1, :] = b[:, 0] = b[:, -1] = 0.0
        sol, info = solve_structured(m, b)
        assert info["converged"]
        # 2nd-order discretization error dominates
        assert np.max(np.abs(sol - exact)) < 2e-3

    def test_warm_start_zero_iterations(self):
        n = 9
        m = laplacian_stencil(n, 1.0 / (n - 1))
        b = np.ones((n, n))
        b[0, :] = b[-1, :] = b[:, 0] = b[:, -1] = 0.0
        x, _ = solve_structured(m, b)
        x2, info = solve_structured(m, b, x0=x)
        assert info["iterations"] == 0
        assert np.array_equal(x, x2)

    def test_bitwise_determinism(self):
        n = 17
        m = laplacian_stencil(n, 1.0 / (n - 1))
        rng = np.random.default_rng(13)
        b = rng.standard_normal((n, n))
        x1, info1 = solve_structured(m, b)
        x2, info2 = solve_structured(m, b)
        assert np.array_equal(x1, x2)
        assert info1 == info2

    def test_gauss_seidel_fallback(self):
        n = 9
        m = laplacian_stencil(n, 1.0 / (n - 1))
        b = np.ones((n, n))
        b[0, :] = b[-1, :] = b[:, 0] = b[:, -1] = 0.0
        ref, _ = solve_structured(m, b)
        cfg = SolverConfig(max_iter=0, rel_tol=1e-10, method="bicgstab")
        x, info = solve_structured(m, b, config=cfg)
        assert info["converged"]
        assert info["method"] == "bicgstab+gauss_seidel"
        assert np.max(np.abs(x - ref)) < 1e-8

    def test_neumann_rows_and_pin(self):
        # pure-Neumann Laplacian admits the linear solution u = x once one
        # coupled (interior) row is pinned; a corner row would float on a
        # 5-point stencil because no other equation references the corner
        n = 17
        h = 1.0 / (n - 1)
        m = laplacian_stencil(n, h)
        for edge in ("ximin", "ximax", "etamin", "etamax"):
            m.set_edge(edge, "normal4", scale=np.ones(n))
        m.set_pin((1, 1))
        xv = np.linspace(0, 1, n)
        x2, _ = np.meshgrid(xv, xv, indexing="ij")
        exact = x2.copy()
        b = np.zeros((n, n))
        # scale * (+xi-direction parametric derivative) of u = x
        b[0, :] = 1.0
        b[-1, :] = 1.0
        b[:, 0] = 0.0
        b[:, -1] = 0.0
        b[1, 1] = exact[1, 1]  # pinned row
        sol, info = solve_structured(m, b)
        assert info["converged"]
        assert np.max(np.abs(sol - exact)) < 1e-9

    def test_rhs_shape_mismatch(self):
        m = laplacian_stencil(9, 0.125)
        with pytest.raises(ValueError):
            solve_structured(m, np.zeros((9, 8)))
