"""Elliptic gauge equations of the split flow on the flat torus.

All operators here are taken with respect to the constant background ``G``:
``delta h_j = -G^{ik} d_k h_ij``, ``delta w = -G^{ij} d_i w_j``,
``delta^* X = L_X G`` and ``Delta = delta d`` (positive).  With these signs the
gauge pair of the split flow reads

    Delta rho = -delta delta (e^{-2u} Qo),           int rho = 0
    delta delta^* X = -delta (e^{-2u} Qo + rho G),   int X = 0

where ``Qo`` is the ``g``-trace-free part of the metric velocity.  Both have
kernels on the torus (constants, parallel fields); data is projected onto the
solvable complement and the discarded part is reported.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import (ConformalMetric, FlatMetric, TorusGrid, laplacian_flat,
                   laplacian_symbol, trace, trace_free_part)


class GaugeSolveError(RuntimeError):
    pass


@dataclass(frozen=True)
class GaugeSolution:
    rho: np.ndarray
    X: np.ndarray
    rho_tilde: np.ndarray | None = None
    diagnostics: dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class HorizontalTensor:
    """Constant ``G``-trace-free tensor ``c_1 E_1 + c_2 E_2``."""

    coeffs: np.ndarray
    basis: np.ndarray  # (2, 2, 2): basis[a] is E_a

    @property
    def matrix(self) -> np.ndarray:
        return np.einsum("a,aij->ij", self.coeffs, self.basis)

    def as_field(self, grid: TorusGrid) -> np.ndarray:
        return self.matrix[:, :, None, None] * np.ones(grid.shape)

    def l2_norm(self) -> float:
        # basis is orthonormal and vol_G(T^2) = 1
        return float(np.linalg.norm(self.coeffs))

    def c0_norm(self, G: FlatMetric) -> float:
        M = self.matrix
        Gi = G.Ginv
        return float(np.sqrt(np.einsum("ij,ik,jl,kl->", M, Gi, Gi, M)))


# ---------------------------------------------------------------------------
# Flat operators


def _check_finite(*arrays: np.ndarray) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise GaugeSolveError("non-finite input field")


def flat_div_tensor(grid: TorusGrid, h: np.ndarray, G: FlatMetric) -> np.ndarray:
    Gi = G.Ginv
    dh = np.moveaxis(grid.grad(h), 0, 2)
    return -np.einsum("ik,ijk...->j...", Gi, dh)


def flat_div_oneform(grid: TorusGrid, w: np.ndarray, G: FlatMetric) -> np.ndarray:
    Gi = G.Ginv
    dw = np.moveaxis(grid.grad(w), 0, 1)  # dw[j, i] = d_i w_j
    return -np.einsum("ij,ji...->...", Gi, dw)


def flat_killing(grid: TorusGrid, Xflat: np.ndarray) -> np.ndarray:
    """``delta^* X^flat = d_i X_j + d_j X_i`` for constant ``G``."""
    dX = np.moveaxis(grid.grad(Xflat), 0, 1)  # dX[j, i] = d_i X_j
    return dX + dX.transpose(1, 0, 2, 3)


def _l2(grid: TorusGrid, f: np.ndarray) -> float:
    return float(np.sqrt((np.abs(f) ** 2).sum() * grid.h**2))


# ---------------------------------------------------------------------------
# Scalar solves


def poisson_solve_zero_mean(grid: TorusGrid, rhs: np.ndarray, G: FlatMetric,
                            tol: float = 1e-10) -> tuple[np.ndarray, float]:
    """Zero-mean solution of ``Delta_G out = rhs``.

    Returns ``(out, removed)`` where ``removed`` is the mean of ``rhs`` that was
    projected out (solvability defect).  Values above ``tol`` should be treated
    as a flagged input.
    """
    _check_finite(rhs)
    removed = float(rhs.mean())
    sym = laplacian_symbol(grid, G)
    fh = grid.to_spectral(rhs)
    with np.errstate(divide="ignore", invalid="ignore"):
        oh = np.where(sym > 0, fh / np.where(sym > 0, sym, 1.0), 0.0)
    return grid.from_spectral(oh).real, removed


def solve_rho(grid: TorusGrid, qm_ring: np.ndarray, G: FlatMetric, u: np.ndarray
              ) -> tuple[np.ndarray, float]:
    """Conformal gauge function: ``Delta_G rho = -delta delta (e^{-2u} Qo)``.

    Returns ``(rho, residual)`` with the L^2 residual of the defining equation.
    """
    _check_finite(qm_ring, u)
    data = qm_ring * np.exp(-2.0 * u)
    rhs = -flat_div_oneform(grid, flat_div_tensor(grid, data, G), G)
    rho, _ = poisson_solve_zero_mean(grid, rhs, G)
    res = laplacian_flat(grid, rho, G) - rhs
    return rho, _l2(grid, res)


def solve_gauge_field_X(grid: TorusGrid, qm_ring: np.ndarray, rho: np.ndarray, G: FlatMetric,
                        u: np.ndarray, tol: float = 1e-8) -> tuple[np.ndarray, dict[str, float]]:
    """Zero-mean vector field with ``delta delta^* X = -delta(e^{-2u} Qo + rho G)``.

    The operator is diagonal in Fourier space: for a covector wavenumber ``xi``
    it acts on ``X^flat`` as ``|xi|^2 I + xi (G^{-1} xi)^T``.
    """
    _check_finite(qm_ring, rho, u)
    data = qm_ring * np.exp(-2.0 * u) + rho * G.G[:, :, None, None]
    b = -flat_div_tensor(grid, data, G)
    kx = grid.wavenumbers()[:, None] * np.ones(grid.shape)
    ky = grid.wavenumbers()[None, :] * np.ones(grid.shape)
    xi = np.stack([kx, ky])
    Gi = G.Ginv
    Gxi = np.einsum("ij,j...->i...", Gi, xi)
    xi2 = np.einsum("i...,i...->...", xi, Gxi)
    M = xi2 * np.eye(2)[:, :, None, None] + np.einsum("i...,j...->ij...", xi, Gxi)
    bh = grid.to_spectral(b)
    removed = float(np.abs(bh[:, 0, 0]).max()) / grid.n**2
    det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
    ok = det > 0
    safe = np.where(ok, det, 1.0)
    Xh0 = np.where(ok, (M[1, 1] * bh[0] - M[0, 1] * bh[1]) / safe, 0.0)
    Xh1 = np.where(ok, (-M[1, 0] * bh[0] + M[0, 0] * bh[1]) / safe, 0.0)
    Xflat = grid.from_spectral(np.stack([Xh0, Xh1])).real
    X = np.einsum("ij,j...->i...", Gi, Xflat)
    res = flat_div_tensor(grid, flat_killing(grid, Xflat), G) - b
    dX = np.moveaxis(grid.grad(X), 0, 1)
    w12 = np.sqrt(_l2(grid, np.sqrt(np.einsum("i...,ij,j...->...", X, G.G, X))) ** 2
                  + _l2(grid, np.sqrt(np.einsum("ik...,ij,kl,jl...->...", dX, G.G, Gi, dX))) ** 2)
    diag = {"residual": _l2(grid, np.sqrt((res**2).sum(0))), "removed": removed, "w12": w12}
    if removed > tol:
        raise GaugeSolveError(f"X equation not solvable: parallel component {removed:.3e}")
    return X, diag


def solve_gauge(cm: ConformalMetric, Q: np.ndarray) -> GaugeSolution:
    """Solve for ``rho`` and ``X`` given the full metric velocity ``Q`` of ``g``."""
    Qo = trace_free_part(Q, cm)
    rho, r_res = solve_rho(cm.grid, Qo, cm.base, cm.u)
    X, xd = solve_gauge_field_X(cm.grid, Qo, rho, cm.base, cm.u)
    diag = {"rho_residual": r_res, "X_residual": xd["residual"], "X_removed": xd["removed"],
            "X_w12": xd["w12"]}
    return GaugeSolution(rho=rho, X=X, diagnostics=diag)


# ---------------------------------------------------------------------------
# rho-tilde route


def _contract_du(grid: TorusGrid, Qo: np.ndarray, u: np.ndarray, G: FlatMetric) -> np.ndarray:
    """One-form ``Qo(grad_G u, .)``."""
    gu = np.einsum("ij,j...->i...", G.Ginv, grid.grad(u))
    return np.einsum("ij...,i...->j...", Qo, gu)


def solve_rho_tilde(cm: ConformalMetric, Q1: np.ndarray) -> tuple[np.ndarray, float]:
    """``Delta_G rho~ = delta_G (Qo_1(grad u, .))`` (flat background, ``R_G = 0``).

    This is the form in which the reduction of the spinor split system states
    it; it relies on ``Q1`` being divergence free and therefore only agrees
    with :func:`solve_rho` on critical spinors.
    """
    grid, G = cm.grid, cm.base
    Qo = trace_free_part(Q1, cm)
    _check_finite(Qo)
    rhs = flat_div_oneform(grid, _contract_du(grid, Qo, cm.u, G), G)
    rt, _ = poisson_solve_zero_mean(grid, rhs, G)
    return rt, _l2(grid, laplacian_flat(grid, rt, G) - rhs)


def assemble_rho(rho_tilde: np.ndarray, trQ1: np.ndarray, variant: str = "trace") -> np.ndarray:
    """``rho = rho~ + 1/2 tr_g Q1`` (``trace``) or ``rho~ + 1/2 R_G tr_g Q1 = rho~`` (``curvature``)."""
    if variant == "trace":
        return rho_tilde + 0.5 * trQ1
    if variant == "curvature":
        return rho_tilde.copy()
    raise ValueError(variant)


def solve_rho_via_divergence(cm: ConformalMetric, Q1: np.ndarray, divQ1: np.ndarray
                             ) -> np.ndarray:
    """``rho`` through the divergence of ``Q1``, valid off-shell.

    With ``B = delta_g Q1`` one has ``delta_G Qo = e^{2u}(B + 1/2 d tr_g Q1)`` and
    hence ``rho = -1/2 tr_g Q1 + r`` where
    ``Delta_G r = -delta_G(2 e^{-2u} Qo(grad_G u, .) + B)`` and the constant is
    fixed by ``int rho = 0``.
    """
    grid, G = cm.grid, cm.base
    Qo = trace_free_part(Q1, cm)
    trQ = trace(Q1, cm)
    w = 2.0 * np.exp(-2.0 * cm.u) * _contract_du(grid, Qo, cm.u, G) + divQ1
    r, _ = poisson_solve_zero_mean(grid, -flat_div_oneform(grid, w, G), G)
    rho = r - 0.5 * trQ
    return rho - rho.mean()


# ---------------------------------------------------------------------------
# Horizontal projection and curvature potential


def horizontal_basis(G: FlatMetric) -> np.ndarray:
    """Orthonormal basis of constant ``G``-trace-free symmetric tensors."""
    Gi = G.Ginv

    def ip(A, B):
        return float(np.einsum("ij,ik,jl,kl->", A, Gi, Gi, B))

    out = []
    for A in (np.diag([1.0, -1.0]), np.array([[0.0, 1.0], [1.0, 0.0]])):
        A = A - 0.5 * np.einsum("ij,ij->", Gi, A) * G.G
        for B in out:
            A = A - ip(A, B) * B
        out.append(A / np.sqrt(ip(A, A)))
    return np.stack(out)


def horizontal_projection(grid: TorusGrid, h: np.ndarray, G: FlatMetric) -> HorizontalTensor:
    """L^2(G) orthogonal projection onto the horizontal space (constant TT tensors)."""
    basis = horizontal_basis(G)
    Gi = G.Ginv
    hbar = h.mean(axis=(-2, -1))  # int over [0,1)^2 with vol_G = dx dy
    coeffs = np.array([np.einsum("ij,ik,jl,kl->", hbar, Gi, Gi, E) for E in basis])
    return HorizontalTensor(coeffs, basis)


def curvature_potential(cm: ConformalMetric) -> tuple[np.ndarray, dict[str, float]]:
    """``f`` with ``Delta_g f = R_g - r`` and ``int f vol_g = 0`` (``r = 0`` on the torus)."""
    from .grid import integrate, scalar_curvature, volume

    grid, G = cm.grid, cm.base
    R = scalar_curvature(cm)
    vol = volume(cm)
    r = float(integrate(R, cm)) / vol
    f, removed = poisson_solve_zero_mean(grid, cm.e2u * (R - r), G)
    f = f - float(integrate(f, cm)) / vol
    res = np.exp(-2.0 * cm.u) * laplacian_flat(grid, f, G) - (R - r)
    return f, {"residual": _l2(grid, res), "max_abs": float(np.abs(f).max()), "r": r,
               "removed": removed}


def calderon_ratio(cm: ConformalMetric, f: np.ndarray) -> float:
    """``||f||_{H^2(g)} / ||Delta_g f||_{L^2(g)}`` for the ``g``-mean-zero part of ``f``."""
    from .grid import hessian, integrate, laplacian, norm_sq, volume

    f = f - float(integrate(f, cm)) / volume(cm)
    df = cm.grid.grad(f)
    h2 = integrate(f**2 + norm_sq(df, cm, "oneform") + norm_sq(hessian(f, cm), cm, "tensor"), cm)
    lap = integrate(laplacian(cm, f) ** 2, cm)
    return float(np.sqrt(h2 / lap))
