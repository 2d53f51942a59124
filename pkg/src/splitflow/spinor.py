"""Spinors on the torus: Clifford action, spin connection, Dirac operator, energy gradients.

Spinor fields are complex arrays of shape ``(2, n, n)`` written in the
trivialisation given by a :class:`~splitflow.frames.Frame`.  The spin
structure is a pair of bits; a set bit means the spinor is antiperiodic in that
direction, and derivatives then use half-integer Fourier modes.

Gamma matrices are ``gamma_1 = i sigma_1`` and ``gamma_2 = i sigma_2`` so that
``gamma_a gamma_b + gamma_b gamma_a = -2 delta_ab`` and the volume element
``omega = gamma_1 gamma_2 = -i sigma_3``.  The real inner product is
``<psi, chi> = Re sum conj(psi) chi``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .frames import Frame
from .grid import ConformalMetric, TorusGrid, Twist

GAMMA = np.array([[[0, 1j], [1j, 0]], [[0, 1], [-1, 0]]], dtype=complex)
OMEGA = GAMMA[0] @ GAMMA[1]


class NonUnitSpinorError(ValueError):
    pass


@dataclass(frozen=True)
class SpinStructure:
    """Boundary behaviour of spinors: ``1`` = antiperiodic in that direction."""

    x: int = 0
    y: int = 0

    @property
    def twist(self) -> Twist:
        return (int(self.x), int(self.y))


def _geom(geom: Frame | ConformalMetric) -> Frame:
    return geom if isinstance(geom, Frame) else Frame.from_conformal(geom)


def apply(mat: np.ndarray, phi: np.ndarray) -> np.ndarray:
    return np.einsum("st,t...->s...", mat, phi)


def clifford_frame(v: np.ndarray, phi: np.ndarray) -> np.ndarray:
    """``v . phi`` for ``v`` given by its frame components ``v^a``."""
    return np.einsum("a...,ast,t...->s...", v, GAMMA, phi)


def clifford_mul(v: np.ndarray, phi: np.ndarray, geom: Frame | ConformalMetric,
                 covector: bool = False) -> np.ndarray:
    """Clifford multiplication by a coordinate vector field (or one-form)."""
    fr = _geom(geom)
    if covector:
        va = np.einsum("ai...,i...->a...", fr.E, v)
    else:
        va = np.einsum("ai...,i...->a...", fr.theta, v)
    return clifford_frame(va, phi)


def real_inner(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pointwise ``Re <a, b>`` summed over the spinor index (axis ``-3``)."""
    return (a.conj() * b).real.sum(axis=-3)


def check_unit(phi: np.ndarray, tol: float = 1e-8) -> None:
    dev = np.abs(real_inner(phi, phi) - 1.0).max()
    if not np.isfinite(dev) or dev > tol:
        raise NonUnitSpinorError(f"spinor is not unit length (max deviation {dev:.3e})")


def normalize(phi: np.ndarray) -> tuple[np.ndarray, float]:
    nrm = np.sqrt(real_inner(phi, phi))
    return phi / nrm, float(np.abs(nrm - 1.0).max())


# ---------------------------------------------------------------------------
# Connection and derived operators


def _nabla_frame(fr: Frame, psi: np.ndarray, twist: Twist) -> np.ndarray:
    """``nabla_{e_a} psi`` with shape ``(2=a, 2=spin, n, n)``."""
    d = fr.along(psi, twist)
    wpsi = apply(OMEGA, psi)
    return d + 0.5 * fr.omega[:, None] * wpsi[None]


def spin_covariant_derivative(phi: np.ndarray, geom: Frame | ConformalMetric,
                              spin: SpinStructure = SpinStructure()) -> np.ndarray:
    """Components ``nabla_{e_a} phi`` along the ``g``-orthonormal frame."""
    return _nabla_frame(_geom(geom), phi, spin.twist)


def covariant_derivative_conformal(phi: np.ndarray, cm: ConformalMetric,
                                   spin: SpinStructure = SpinStructure()) -> np.ndarray:
    """Same as :func:`spin_covariant_derivative` via the conformal change formula.

    ``nabla^g_X phi = d_X phi - 1/2 X . grad u . phi - 1/2 du(X) phi`` with the
    Clifford products of the flat metric.  Independent route used to validate
    the frame-based connection.
    """
    grid = cm.grid
    F = cm.frame
    dphi = grid.grad(phi, spin.twist)  # [i, s]
    dbar = np.einsum("ai,is...->as...", F, dphi)
    ubar = np.einsum("ai,i...->a...", F, cm.du)  # ebar_a(u)
    grad_u_phi = clifford_frame(ubar, phi)
    out = np.empty_like(dbar)
    for a in range(2):
        out[a] = dbar[a] - 0.5 * apply(GAMMA[a], grad_u_phi) - 0.5 * ubar[a] * phi
    return out * np.exp(-cm.u)


def dirac(phi: np.ndarray, geom: Frame | ConformalMetric,
          spin: SpinStructure = SpinStructure()) -> np.ndarray:
    nab = spin_covariant_derivative(phi, geom, spin)
    return np.einsum("ast,at...->s...", GAMMA, nab)


def _div_frame_vector(fr: Frame) -> np.ndarray:
    """Frame components of ``sum_a nabla_{e_a} e_a``."""
    w = fr.omega
    return np.stack([-w[1], w[0]])


def connection_laplacian(phi: np.ndarray, geom: Frame | ConformalMetric,
                         spin: SpinStructure = SpinStructure()) -> np.ndarray:
    """``nabla^* nabla phi = -sum_a (nabla_a nabla_a phi - nabla_{nabla_a e_a} phi)``."""
    fr = _geom(geom)
    nab = _nabla_frame(fr, phi, spin.twist)
    out = np.zeros_like(phi)
    for a in range(2):
        out += _nabla_frame(fr, nab[a], spin.twist)[a]
    v = _div_frame_vector(fr)
    out -= np.einsum("a...,as...->s...", v, nab)
    return -out


def second_covariant_derivative(phi: np.ndarray, geom: Frame | ConformalMetric,
                                spin: SpinStructure = SpinStructure()):
    """``nabla^2_{e_a, e_b} phi`` split into symmetric and commutator parts.

    Returns ``(full, sym, curv)`` with ``full = sym + curv / 2``;
    ``curv[a, b] = nabla^2_{a,b} phi - nabla^2_{b,a} phi = R(e_a, e_b) phi`` is the
    curvature of the spin connection acting on ``phi``.  Pointwise
    ``|full|^2 = |sym|^2 + |curv|^2 / 4`` and, for unit ``phi``, ``|curv|^2 = R^2 / 8``.
    """
    fr = _geom(geom)
    nab = _nabla_frame(fr, phi, spin.twist)
    nn = np.stack([_nabla_frame(fr, nab[b], spin.twist) for b in range(2)], axis=1)  # [a, b]
    W = fr.connection_matrix()  # W[a, d, b]
    full = nn - np.einsum("adb...,ds...->abs...", W, nab)
    sym = 0.5 * (full + full.transpose(1, 0, 2, 3, 4))
    curv = full - full.transpose(1, 0, 2, 3, 4)
    return full, sym, curv


def spinor_tensor_norm_sq(t: np.ndarray) -> np.ndarray:
    """Pointwise norm squared of a spinor-valued frame tensor ``t[a, b, s]``."""
    return (np.abs(t) ** 2).sum(axis=(0, 1, 2))


# ---------------------------------------------------------------------------
# Energy and its gradient


def tensor_T(phi: np.ndarray, geom: Frame | ConformalMetric,
             spin: SpinStructure = SpinStructure(), nab: np.ndarray | None = None) -> np.ndarray:
    """``T(e_a, e_b, e_c) = sym_{b,c} <e_a . e_b . phi, nabla_{e_c} phi>``."""
    fr = _geom(geom)
    if nab is None:
        nab = _nabla_frame(fr, phi, spin.twist)
    ab_phi = np.einsum("ast,btu,u...->abs...", GAMMA, GAMMA, phi)
    A = np.einsum("abs...,cs...->abc...", ab_phi.conj(), nab).real
    return 0.5 * (A + A.transpose(0, 2, 1, 3, 4))


def div_T(T: np.ndarray, fr: Frame) -> np.ndarray:
    """``(div T)_{bc} = sum_a (nabla_{e_a} T)(e_a, e_b, e_c)`` in frame components."""
    W = fr.connection_matrix()  # W[a, d, b] = theta^d(nabla_{e_a} e_b)
    out = np.zeros(T.shape[1:])
    for a in range(2):
        out += fr.along(T[a])[a]
    out -= np.einsum("ada...,dbc...->bc...", W, T)
    out -= np.einsum("adb...,adc...->bc...", W, T)
    out -= np.einsum("adc...,abd...->bc...", W, T)
    return out


def energy_density(phi: np.ndarray, geom: Frame | ConformalMetric,
                   spin: SpinStructure = SpinStructure()) -> np.ndarray:
    nab = spin_covariant_derivative(phi, geom, spin)
    return (np.abs(nab) ** 2).sum(axis=(0, 1))


def energy(phi: np.ndarray, geom: Frame | ConformalMetric,
           spin: SpinStructure = SpinStructure()) -> float:
    """``1/2 int |nabla phi|^2 vol_g``."""
    fr = _geom(geom)
    return 0.5 * fr.integrate(energy_density(phi, fr, spin))


@dataclass
class SpinorGradient:
    """Negative gradient of the spinor energy plus by-products.

    ``q1`` holds coordinate components of the metric part (covariant), ``q1_frame``
    the frame components, ``q2`` the spinor part.
    """

    q1: np.ndarray
    q1_frame: np.ndarray
    q2: np.ndarray
    nabla: np.ndarray
    dirac: np.ndarray
    grad_sq: np.ndarray


def gradient(phi: np.ndarray, geom: Frame | ConformalMetric,
             spin: SpinStructure = SpinStructure(), check: bool = True) -> SpinorGradient:
    """``(Q1, Q2) = -grad E`` for the L^2 metrics on tensors and spinors.

    ``Q1 = -1/4 |nabla phi|^2 g - 1/4 delta T + 1/2 <nabla phi (x) nabla phi>``
    where ``delta T = -sum_a (nabla_{e_a} T)(e_a, ., .)``;
    ``Q2 = -nabla^* nabla phi + |nabla phi|^2 phi``.
    """
    fr = _geom(geom)
    if check:
        check_unit(phi)
    tw = spin.twist
    nab = _nabla_frame(fr, phi, tw)
    grad_sq = (np.abs(nab) ** 2).sum(axis=(0, 1))
    T = tensor_T(phi, fr, spin, nab)
    divT = div_T(T, fr)
    nn = np.einsum("as...,bs...->ab...", nab.conj(), nab).real
    eye = np.eye(2)[:, :, None, None]
    q1f = -0.25 * grad_sq * eye + 0.25 * divT + 0.5 * nn
    q1f = 0.5 * (q1f + q1f.transpose(1, 0, 2, 3))
    lap = connection_laplacian(phi, fr, spin)
    q2 = -lap + grad_sq * phi
    D = np.einsum("ast,at...->s...", GAMMA, nab)
    return SpinorGradient(fr.to_coords(q1f), q1f, q2, nab, D, grad_sq)


def q1(phi, geom, spin: SpinStructure = SpinStructure()) -> np.ndarray:
    return gradient(phi, geom, spin).q1


def q2(phi, geom, spin: SpinStructure = SpinStructure()) -> np.ndarray:
    return gradient(phi, geom, spin).q2


def trace_q1_identity(phi, geom, spin: SpinStructure = SpinStructure()) -> np.ndarray:
    """``-R/16 - |nabla phi|^2/4 + |D phi|^2/4``, the closed form of ``tr_g Q1``."""
    fr = _geom(geom)
    nab = _nabla_frame(fr, phi, spin.twist)
    D = np.einsum("ast,at...->s...", GAMMA, nab)
    R = fr.scalar_curvature
    return -R / 16.0 - 0.25 * (np.abs(nab) ** 2).sum(axis=(0, 1)) + 0.25 * (np.abs(D) ** 2).sum(axis=0)


def spin_lie_derivative(X: np.ndarray, phi: np.ndarray, geom: Frame | ConformalMetric,
                        spin: SpinStructure = SpinStructure(), nab: np.ndarray | None = None,
                        flat_metric: np.ndarray | None = None) -> np.ndarray:
    """Kosmann derivative ``nabla_X phi - 1/4 dX^flat . phi``.

    ``X`` is a coordinate vector field.  ``flat_metric`` selects the metric used
    for the flat isomorphism; by default it is the metric of ``geom``.
    """
    fr = _geom(geom)
    if nab is None:
        nab = _nabla_frame(fr, phi, spin.twist)
    Xa = np.einsum("ai...,i...->a...", fr.theta, X)
    g = fr.metric if flat_metric is None else flat_metric
    Xf = np.einsum("ij...,j...->i...", g, X)
    grid = fr.grid
    dXf = grid.diff(Xf[1], 0) - grid.diff(Xf[0], 1)
    E = fr.E
    dX12 = dXf * (E[0, 0] * E[1, 1] - E[0, 1] * E[1, 0])
    return np.einsum("a...,as...->s...", Xa, nab) - 0.25 * dX12 * apply(OMEGA, phi)


def bianchi_residuals(grad: SpinorGradient, phi: np.ndarray, cm: ConformalMetric,
                      spin: SpinStructure = SpinStructure()) -> dict[str, float]:
    """Divergence identities of ``Q1`` on a conformal metric.

    ``reduced_form`` measures ``delta_G Q1o - 1/2 e^{2u} d tr_g Q1``, which vanishes
    only when ``Q2 = 0``.  ``full_form`` measures the off-shell identity coming from
    diffeomorphism invariance of the energy,
    ``delta_g Q1 = -1/2 (<Q2, nabla phi> - 1/4 delta beta)`` with the 2-form
    ``beta(e_1, e_2) = <Q2, e_1 e_2 phi>``.
    """
    from . import grid as gr

    flat_cm = ConformalMetric(cm.grid, cm.base, np.zeros(cm.grid.shape))
    Q = grad.q1
    trQ = gr.trace(Q, cm)
    Qo = gr.trace_free_part(Q, cm)
    lhs = gr.divergence_sym(Qo, flat_cm)
    rhs = 0.5 * cm.e2u * cm.grid.grad(trQ)
    reduced = lhs - rhs
    fr = Frame.from_conformal(cm)
    # <Q2, nabla_{d_i} phi> as a one-form
    q2n = np.einsum("as...,s...->a...", grad.nabla.conj(), grad.q2).real
    q2n = np.einsum("ai...,a...->i...", fr.theta, q2n)
    beta12 = real_inner(grad.q2, apply(OMEGA, phi))
    # int dX(e_1, e_2) b vol = int <X^flat, Y> vol  with  Y = g (d_y b, -d_x b) / sqrt(det g)
    db = cm.grid.grad(beta12)
    eps = np.array([[0.0, 1.0], [-1.0, 0.0]])
    delta_beta = np.einsum("ij...,jk,k...->i...", fr.metric, eps, db) / fr.vol_density
    full = gr.divergence_sym(Q, cm) + 0.5 * (q2n - 0.25 * delta_beta)
    return {
        "reduced_form": gr.lp_norm(reduced, flat_cm, 2, "oneform"),
        "full_form": gr.lp_norm(full, cm, 2, "oneform"),
    }


def random_unit_spinor(grid: TorusGrid, rng: np.random.Generator, spin: SpinStructure,
                       amplitude: float = 0.5, cutoff: int = 2) -> np.ndarray:
    """Smooth unit spinor ``(cos a e^{ib}, sin a e^{ic})`` with band-limited phases."""
    from .grid import band_limited

    a = np.pi / 4 + band_limited(grid, rng, amplitude, cutoff)
    b = band_limited(grid, rng, amplitude, cutoff)
    c = band_limited(grid, rng, amplitude, cutoff)
    phi = np.stack([np.cos(a) * np.exp(1j * b), np.sin(a) * np.exp(1j * c)])
    x, y = grid.coords
    tw = np.ones(grid.shape, dtype=complex)
    if spin.x:
        tw = tw * np.exp(1j * np.pi * x)
    if spin.y:
        tw = tw * np.exp(1j * np.pi * y)
    return phi * tw
