import math

import numpy as np
import pytest

from splitflow import spinor as sp
from splitflow.frames import Frame
from splitflow.grid import (ConformalMetric, FlatMetric, TorusGrid, band_limited, inner, lp_norm,
                            scalar_curvature, trace, unpack_sym)

N = 64
G0 = FlatMetric.normalized(np.array([[1.3, 0.4], [0.4, 0.9]]))
SPINS = [sp.SpinStructure(0, 0), sp.SpinStructure(1, 0), sp.SpinStructure(0, 1),
         sp.SpinStructure(1, 1)]


@pytest.fixture
def grid():
    return TorusGrid(N)


def setup(grid, seed, spin, amp=0.2):
    rng = np.random.default_rng(seed)
    cm = ConformalMetric(grid, G0, band_limited(grid, rng, amp, 2))
    return cm, sp.random_unit_spinor(grid, rng, spin), rng


def const_spinor(grid):
    return np.stack([np.ones(grid.shape, complex), np.zeros(grid.shape, complex)])


def twisted(grid, rng, spin):
    x, y = grid.coords
    phase = np.exp(1j * np.pi * (spin.x * x + spin.y * y))
    return np.stack([band_limited(grid, rng, 1.0, 2, False) + 1j * band_limited(grid, rng, 1.0, 2, False)
                     for _ in range(2)]) * phase


def test_clifford_relations():
    g = sp.GAMMA
    for a in range(2):
        for b in range(2):
            assert np.allclose(g[a] @ g[b] + g[b] @ g[a], -2 * (a == b) * np.eye(2))
    assert np.allclose(sp.OMEGA @ sp.OMEGA, -np.eye(2))
    assert np.allclose(sp.OMEGA, -1j * np.diag([1, -1]))


def test_clifford_mul_examples(grid):
    cm, phi, rng = setup(grid, 1, SPINS[0])
    fr = Frame.from_conformal(cm)
    e1 = fr.E[0]
    e2 = fr.E[1]
    assert np.abs(sp.clifford_mul(e1, sp.clifford_mul(e1, phi, cm), cm) + phi).max() < 1e-12
    anti = sp.clifford_mul(e1, sp.clifford_mul(e2, phi, cm), cm) + sp.clifford_mul(
        e2, sp.clifford_mul(e1, phi, cm), cm)
    assert np.abs(anti).max() < 1e-12
    v = np.stack([band_limited(grid, rng, 1.0, 2) for _ in range(2)])
    assert np.abs(sp.real_inner(sp.clifford_mul(v, phi, cm), phi)).max() < 1e-13


def test_frame_orthonormal(grid):
    cm, _, _ = setup(grid, 2, SPINS[0])
    fr = Frame.from_conformal(cm)
    gram = np.einsum("ai...,ij...,bj...->ab...", fr.E, cm.metric, fr.E)
    assert np.abs(gram - np.eye(2)[:, :, None, None]).max() < 1e-12


def test_covariant_derivative_flat_constant(grid):
    nab = sp.spin_covariant_derivative(const_spinor(grid), ConformalMetric.flat(grid, G0))
    assert np.abs(nab).max() < 1e-13


@pytest.mark.parametrize("spin", SPINS)
def test_metric_compatibility(grid, spin):
    cm, _, rng = setup(grid, 3, spin)
    psi = twisted(grid, rng, spin)  # not unit
    nab = sp.spin_covariant_derivative(psi, cm, spin)
    fr = Frame.from_conformal(cm)
    d = fr.along((np.abs(psi) ** 2).sum(0))
    rhs = 2 * np.einsum("as...,s...->a...", nab.conj(), psi).real
    assert np.abs(d - rhs).max() < 1e-9


@pytest.mark.parametrize("spin", SPINS)
def test_two_connection_routes_agree(grid, spin):
    cm, phi, _ = setup(grid, 4, spin)
    a = sp.spin_covariant_derivative(phi, cm, spin)
    b = sp.covariant_derivative_conformal(phi, cm, spin)
    assert np.abs(a - b).max() < 1e-10


@pytest.mark.parametrize("spin", SPINS)
def test_conformal_dirac_covariance(grid, spin):
    cm, phi, _ = setup(grid, 5, spin)
    lhs = sp.dirac(np.exp(-cm.u / 2) * phi, cm, spin)
    rhs = np.exp(-1.5 * cm.u) * sp.dirac(phi, ConformalMetric.flat(grid, G0), spin)
    assert np.abs(lhs - rhs).max() < 1e-8


def test_dirac_constant_spinor(grid):
    assert np.abs(sp.dirac(const_spinor(grid), ConformalMetric.flat(grid))).max() < 1e-13


@pytest.mark.parametrize("k", [(1, 0), (0, 2), (1, -1), (2, 3)])
def test_dirac_plane_wave_eigenvalues(grid, k):
    x, y = grid.coords
    kk = np.array(k, float)
    A = 2j * np.pi * (kk[0] * sp.GAMMA[0] + kk[1] * sp.GAMMA[1])
    lam, vec = np.linalg.eig(A)
    assert np.allclose(sorted(lam.real), [-2 * np.pi * np.linalg.norm(kk), 2 * np.pi * np.linalg.norm(kk)])
    wave = np.exp(2j * np.pi * (k[0] * x + k[1] * y))
    cm = ConformalMetric.flat(grid)
    for j in range(2):
        phi = vec[:, j][:, None, None] * wave
        assert np.abs(sp.dirac(phi, cm) - lam[j] * phi).max() < 1e-9


@pytest.mark.parametrize("seed", range(4))
def test_lichnerowicz(grid, seed):
    spin = SPINS[seed]
    cm, phi, _ = setup(grid, 10 + seed, spin)
    R = scalar_curvature(cm)
    res = sp.dirac(sp.dirac(phi, cm, spin), cm, spin) - sp.connection_laplacian(phi, cm, spin) - R / 4 * phi
    assert lp_norm(res, cm, 2, "spinor") < 1e-7


def test_second_derivative_decomposition(grid):
    spin = SPINS[1]
    cm, phi, _ = setup(grid, 20, spin)
    full, sym, curv = sp.second_covariant_derivative(phi, cm, spin)
    n = sp.spinor_tensor_norm_sq
    assert np.abs(n(full) - n(sym) - n(curv) / 4).max() < 1e-9 * n(full).max()
    R = scalar_curvature(cm)
    assert lp_norm(np.sqrt(np.abs(n(curv) - R**2 / 8)), cm, 2) ** 2 < 1e-7
    flat = ConformalMetric.flat(grid, G0)
    f2, s2, c2 = sp.second_covariant_derivative(const_spinor(grid), flat)
    assert np.abs(f2).max() < 1e-12 and np.abs(s2).max() < 1e-12
    _, _, c3 = sp.second_covariant_derivative(phi, flat, spin)
    assert np.abs(c3).max() < 1e-9


def test_tensor_T(grid):
    spin = SPINS[2]
    cm, phi, _ = setup(grid, 21, spin)
    T = sp.tensor_T(phi, cm, spin)
    assert np.array_equal(T, T.transpose(0, 2, 1, 3, 4))
    assert np.abs(sp.tensor_T(const_spinor(grid), ConformalMetric.flat(grid))).max() < 1e-13


def test_gradient_of_parallel_spinor_vanishes(grid):
    cm = ConformalMetric.flat(grid, G0)
    gr = sp.gradient(const_spinor(grid), cm)
    assert np.abs(gr.q1).max() < 1e-13 and np.abs(gr.q2).max() < 1e-13
    assert sp.energy(const_spinor(grid), cm) == 0


@pytest.mark.parametrize("seed", range(4))
def test_trace_identity_and_tangency(grid, seed):
    spin = SPINS[seed]
    cm, phi, _ = setup(grid, 30 + seed, spin)
    gr = sp.gradient(phi, cm, spin)
    assert lp_norm(trace(gr.q1, cm) - sp.trace_q1_identity(phi, cm, spin), cm, 2) < 1e-7
    assert np.abs(sp.real_inner(gr.q2, phi)).max() < 1e-9


def test_energy_positive(grid):
    cm, phi, _ = setup(grid, 40, SPINS[3])
    assert sp.energy(phi, cm, SPINS[3]) > 0


def test_non_unit_rejected(grid):
    cm, phi, _ = setup(grid, 41, SPINS[0])
    with pytest.raises(sp.NonUnitSpinorError):
        sp.gradient(1.01 * phi, cm)


@pytest.mark.parametrize("spin", [SPINS[0], SPINS[3]])
def test_gradient_finite_differences(grid, spin):
    cm, phi, rng = setup(grid, 50, spin)
    fr = Frame.from_conformal(cm)
    gr = sp.gradient(phi, cm, spin)
    s = 1e-4
    for _ in range(2):
        h = unpack_sym(np.stack([band_limited(grid, rng, 1.0, 2, False) for _ in range(3)]))
        fd = (sp.energy(phi, fr.transported(h, s), spin) - sp.energy(phi, fr.transported(h, -s), spin)) / (2 * s)
        an = -inner(gr.q1, h, cm, "tensor")
        assert abs(fd - an) < 1e-5 * abs(an)
        psi = twisted(grid, rng, spin)
        psi = psi - sp.real_inner(phi, psi) * phi
        fd = (sp.energy(phi + s * psi, fr, spin) - sp.energy(phi - s * psi, fr, spin)) / (2 * s)
        an = -inner(gr.q2, psi, cm, "spinor")
        assert abs(fd - an) < 1e-5 * abs(an)


def test_spin_lie_derivative_examples(grid):
    spin = SPINS[1]
    cm, phi, rng = setup(grid, 60, spin)
    zero = np.zeros((2,) + grid.shape)
    assert np.abs(sp.spin_lie_derivative(zero, phi, cm, spin)).max() == 0
    Xc = np.stack([np.full(grid.shape, 0.4), np.full(grid.shape, -0.3)])
    assert np.abs(sp.spin_lie_derivative(Xc, const_spinor(grid), ConformalMetric.flat(grid, G0))).max() < 1e-13
    X = np.stack([band_limited(grid, rng, 1.0, 2) for _ in range(2)])
    for flat_metric in (None, G0.G[:, :, None, None] * np.ones(grid.shape)):
        L = sp.spin_lie_derivative(X, phi, cm, spin, flat_metric=flat_metric)
        assert np.abs(sp.real_inner(L, phi)).max() < 1e-9


def test_energy_diffeomorphism_invariance(grid):
    # d/ds E(g + s L_X g, phi + s L~_X phi) = 0 with the Kosmann derivative, flat taken with g
    from splitflow.grid import killing_operator

    spin = SPINS[2]
    cm, phi, rng = setup(grid, 61, spin)
    fr = Frame.from_conformal(cm)
    X = np.stack([band_limited(grid, rng, 1.0, 2) for _ in range(2)])
    h = killing_operator(X, cm)
    L = sp.spin_lie_derivative(X, phi, cm, spin)
    s = 1e-4
    gr = sp.gradient(phi, cm, spin)
    d = -inner(gr.q1, h, cm, "tensor") - inner(gr.q2, L, cm, "spinor")
    scale = abs(inner(gr.q1, h, cm, "tensor"))
    assert abs(d) < 1e-8 * scale
    fd = (sp.energy(phi + s * L, fr.transported(h, s), spin)
          - sp.energy(phi - s * L, fr.transported(h, -s), spin)) / (2 * s)
    assert abs(fd) < 1e-5 * scale


def test_bianchi_full_form(grid):
    spin = SPINS[1]
    cm, phi, _ = setup(grid, 62, spin)
    br = sp.bianchi_residuals(sp.gradient(phi, cm, spin), phi, cm, spin)
    assert br["full_form"] < 1e-6
    # the on-shell form carries the Q2 terms off-shell
    assert br["reduced_form"] > 1e-3


def test_bianchi_reduced_form_on_shell(grid):
    # a parallel spinor on a conformal metric has Q2 = 0 only when flat; use the flat case
    cm = ConformalMetric.flat(grid, G0)
    phi = const_spinor(grid)
    br = sp.bianchi_residuals(sp.gradient(phi, cm), phi, cm)
    assert br["reduced_form"] < 1e-12 and br["full_form"] < 1e-12


def test_normalize_and_random_unit(grid):
    rng = np.random.default_rng(70)
    phi = sp.random_unit_spinor(grid, rng, SPINS[3])
    sp.check_unit(phi)
    out, drift = sp.normalize(1.1 * phi)
    assert drift == pytest.approx(0.1, rel=1e-10)
    sp.check_unit(out)
    x, y = grid.coords
    # antiperiodic in both directions: phi e^{-i pi (x + y)} is periodic and smooth
    per = phi * np.exp(-1j * np.pi * (x + y))
    spec = np.abs(np.fft.fft2(per[0]))
    assert spec[N // 2].max() < 1e-8 * spec.max()
    assert math.isfinite(sp.energy(phi, ConformalMetric.flat(grid), SPINS[3]))
