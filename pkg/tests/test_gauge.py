import numpy as np
import pytest

from splitflow import gauge as ga
from splitflow import spinor as sp
from splitflow.grid import (ConformalMetric, FlatMetric, TorusGrid, band_limited, integrate,
                            laplacian, laplacian_flat, scalar_curvature, trace, unpack_sym)

N = 64


@pytest.fixture
def grid():
    return TorusGrid(N)


G0 = FlatMetric.normalized(np.array([[1.3, 0.4], [0.4, 0.9]]))


def manufactured(grid, rng, G, u):
    # e^{-2u} Qo = -tracefree(delta^* Y) so that rho = -tr k / 2 and X = Y
    Y = np.stack([band_limited(grid, rng, 1.0, 2) for _ in range(2)])
    k = ga.flat_killing(grid, np.einsum("ij,j...->i...", G.G, Y))
    trk = np.einsum("ij,ij...->...", G.Ginv, k)
    ko = k - 0.5 * trk * G.G[:, :, None, None]
    return -np.exp(2 * u) * ko, -0.5 * trk, Y


def sym_field(grid, rng, cutoff=3):
    return unpack_sym(np.stack([band_limited(grid, rng, 1.0, cutoff, False) for _ in range(3)]))


def test_poisson_examples(grid):
    x, y = grid.coords
    I = FlatMetric.identity()
    s = np.sin(2 * np.pi * x)
    out, removed = ga.poisson_solve_zero_mean(grid, (2 * np.pi) ** 2 * s, I)
    assert np.abs(out - s).max() < 1e-12 and abs(removed) < 1e-14
    out, _ = ga.poisson_solve_zero_mean(grid, np.zeros(grid.shape), I)
    assert np.abs(out).max() == 0
    a, b = np.cos(4 * np.pi * y), np.sin(2 * np.pi * (x + y))
    out, _ = ga.poisson_solve_zero_mean(grid, laplacian_flat(grid, a + b, G0), G0)
    assert np.abs(out - (a + b)).max() < 1e-12


def test_poisson_reports_removed_mean(grid):
    _, removed = ga.poisson_solve_zero_mean(grid, np.full(grid.shape, 0.25), G0)
    assert removed == pytest.approx(0.25)


def test_rho_and_X_trivial(grid):
    z = np.zeros((2, 2) + grid.shape)
    rho, res = ga.solve_rho(grid, z, G0, np.zeros(grid.shape))
    assert np.abs(rho).max() == 0 and res == 0
    X, diag = ga.solve_gauge_field_X(grid, z, np.zeros(grid.shape), G0, np.zeros(grid.shape))
    assert np.abs(X).max() == 0


@pytest.mark.parametrize("seed", range(3))
def test_manufactured_gauge_solutions(grid, seed):
    rng = np.random.default_rng(seed)
    u = band_limited(grid, rng, 0.3, 2)
    Qo, rho_true, Y = manufactured(grid, rng, G0, u)
    rho, res = ga.solve_rho(grid, Qo, G0, u)
    assert res < 1e-8
    assert np.sqrt(((rho - rho_true) ** 2).mean()) < 1e-7
    X, diag = ga.solve_gauge_field_X(grid, Qo, rho, G0, u)
    assert diag["residual"] < 1e-8
    assert np.abs(X.mean(axis=(-2, -1))).max() < 1e-14
    assert np.sqrt(((X - Y) ** 2).sum(axis=0).mean()) < 1e-7


def test_solvers_are_linear(grid):
    rng = np.random.default_rng(7)
    u = band_limited(grid, rng, 0.3, 2)
    A, B = sym_field(grid, rng), sym_field(grid, rng)
    cm = ConformalMetric(grid, G0, u)
    from splitflow.grid import trace_free_part

    A, B = trace_free_part(A, cm), trace_free_part(B, cm)
    ra, _ = ga.solve_rho(grid, A, G0, u)
    rb, _ = ga.solve_rho(grid, B, G0, u)
    rab, _ = ga.solve_rho(grid, 2 * A - B, G0, u)
    assert np.abs(rab - (2 * ra - rb)).max() < 1e-10
    Xa, _ = ga.solve_gauge_field_X(grid, A, ra, G0, u)
    Xb, _ = ga.solve_gauge_field_X(grid, B, rb, G0, u)
    Xab, _ = ga.solve_gauge_field_X(grid, 2 * A - B, rab, G0, u)
    assert np.abs(Xab - (2 * Xa - Xb)).max() < 1e-10


def test_X_parallel_component_is_roundoff(grid):
    # the data enter through a divergence, whose mean vanishes on the torus
    rng = np.random.default_rng(14)
    u = band_limited(grid, rng, 0.3, 2)
    cm = ConformalMetric(grid, G0, u)
    sol = ga.solve_gauge(cm, sym_field(grid, rng))
    assert sol.diagnostics["X_removed"] < 1e-12
    assert sol.diagnostics["rho_residual"] < 1e-8 and sol.diagnostics["X_residual"] < 1e-8
    assert abs(sol.rho.mean()) < 1e-14


def test_horizontal_projection_examples(grid):
    rng = np.random.default_rng(8)
    E = ga.horizontal_basis(G0)
    h = (0.7 * E[0] - 0.2 * E[1])[:, :, None, None] * np.ones(grid.shape)
    P = ga.horizontal_projection(grid, h, G0)
    assert np.allclose(P.coeffs, [0.7, -0.2], atol=1e-14)
    assert np.abs(P.as_field(grid) - h).max() < 1e-14
    rho = band_limited(grid, rng, 1.0, 3, False)
    assert np.abs(ga.horizontal_projection(grid, rho * G0.G[:, :, None, None], G0).coeffs).max() < 1e-12
    X = np.stack([band_limited(grid, rng, 1.0, 3) for _ in range(2)])
    k = ga.flat_killing(grid, np.einsum("ij,j...->i...", G0.G, X))
    assert np.abs(ga.horizontal_projection(grid, k, G0).coeffs).max() < 1e-10


def test_horizontal_output_is_tt(grid):
    rng = np.random.default_rng(9)
    P = ga.horizontal_projection(grid, sym_field(grid, rng), G0)
    M = P.matrix
    assert abs(np.einsum("ij,ij->", G0.Ginv, M)) < 1e-14
    assert np.abs(ga.flat_div_tensor(grid, P.as_field(grid), G0)).max() < 1e-12
    PP = ga.horizontal_projection(grid, P.as_field(grid), G0)
    assert np.abs(PP.coeffs - P.coeffs).max() < 1e-14
    assert P.c0_norm(G0) == pytest.approx(P.l2_norm(), rel=1e-14)


def test_horizontal_basis_orthonormal():
    E = ga.horizontal_basis(G0)
    Gi = G0.Ginv
    gram = np.einsum("aij,ik,jl,bkl->ab", E, Gi, Gi, E)
    assert np.allclose(gram, np.eye(2), atol=1e-14)


def test_curvature_potential(grid):
    x, _ = grid.coords
    f, d = ga.curvature_potential(ConformalMetric.flat(grid, G0))
    assert np.abs(f).max() == 0
    for u in (0.2 * np.sin(2 * np.pi * x), band_limited(grid, np.random.default_rng(10), 0.3, 3)):
        cm = ConformalMetric(grid, G0, u)
        f, d = ga.curvature_potential(cm)
        assert d["residual"] < 1e-8
        assert abs(integrate(f, cm)) < 1e-12
        # cross-check against Delta_g = e^{-2u} Delta_G
        R = scalar_curvature(cm)
        assert np.abs(laplacian(cm, f) - R).max() < 1e-8
        assert d["max_abs"] == pytest.approx(np.abs(f).max())


def test_calderon_ratio_bounded(grid):
    ratios = []
    for seed in range(5):
        rng = np.random.default_rng(20 + seed)
        cm = ConformalMetric(grid, G0, band_limited(grid, rng, 0.2, 2))
        f = band_limited(grid, rng, 1.0, 3)
        ratios.append(ga.calderon_ratio(cm, f))
    assert all(np.isfinite(ratios)) and max(ratios) < 2.0


def test_rho_tilde_trivial_cases(grid):
    spin = sp.SpinStructure()
    const = np.stack([np.ones(grid.shape, complex), np.zeros(grid.shape, complex)])
    cm = ConformalMetric.flat(grid, G0)
    Q1 = sp.gradient(const, cm, spin).q1
    rt, _ = ga.solve_rho_tilde(cm, Q1)
    assert np.abs(rt).max() < 1e-14
    rng = np.random.default_rng(11)
    phi = sp.random_unit_spinor(grid, rng, spin)
    rt, _ = ga.solve_rho_tilde(cm, sp.gradient(phi, cm, spin).q1)
    assert np.abs(rt).max() < 1e-14  # du = 0


def test_rho_tilde_assembly_oracle(grid):
    rng = np.random.default_rng(12)
    spin = sp.SpinStructure(1, 0)
    cm = ConformalMetric(grid, G0, band_limited(grid, rng, 0.2, 2))
    phi = sp.random_unit_spinor(grid, rng, spin)
    Q1 = sp.gradient(phi, cm, spin).q1
    rt, res = ga.solve_rho_tilde(cm, Q1)
    assert res < 1e-8
    Qo = Q1 - 0.5 * trace(Q1, cm) * cm.metric
    w = np.einsum("ij...,jk,k...->i...", Qo, G0.Ginv, cm.du)
    rhs = ga.flat_div_oneform(grid, w, G0)
    ref, _ = ga.poisson_solve_zero_mean(grid, rhs, G0)
    assert np.abs(rt - ref).max() < 1e-12


def test_rho_via_divergence_matches_direct(grid):
    from splitflow.grid import divergence_sym, trace_free_part

    rng = np.random.default_rng(13)
    spin = sp.SpinStructure(0, 1)
    cm = ConformalMetric(grid, G0, band_limited(grid, rng, 0.2, 2))
    phi = sp.random_unit_spinor(grid, rng, spin)
    Q1 = sp.gradient(phi, cm, spin).q1
    direct, _ = ga.solve_rho(grid, trace_free_part(Q1, cm), G0, cm.u)
    via = ga.solve_rho_via_divergence(cm, Q1, divergence_sym(Q1, cm))
    assert np.abs(via - direct).max() < 1e-10


def test_gauge_rejects_non_finite(grid):
    bad = np.zeros((2, 2) + grid.shape)
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(ga.GaugeSolveError):
        ga.solve_rho(grid, bad, G0, np.zeros(grid.shape))
