"""Periodic grid on the flat torus, flat and conformal metrics, spectral calculus.

Array conventions
-----------------
* scalar field: ``(n, n)``, index ``[i, j]`` is the node ``(i*h, j*h)``; axis 0 is x.
* vector field (contravariant) and one-form (covariant): ``(2, n, n)``.
* symmetric 2-tensor: full ``(2, 2, n, n)`` array, symmetric in the first two axes.
  :func:`pack_sym` / :func:`unpack_sym` convert to the ``(h11, h12, h22)`` storage
  used in snapshot files.

The Laplacian is the positive one, ``Delta = -div grad``.  Scalar curvature is
``R = 2K`` and for ``g = e^{2u} G`` with constant ``G`` we have
``R_g = e^{-2u} (R_G + 2 Delta_G u)`` with ``R_G = 0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft

Twist = tuple[int, int]
PERIODIC: Twist = (0, 0)


@dataclass(frozen=True)
class TorusGrid:
    """Uniform ``n x n`` grid on ``[0, 1)^2`` with Fourier differentiation."""

    n: int

    def __post_init__(self) -> None:
        n = self.n
        if n < 8 or n & (n - 1):
            raise ValueError(f"n must be a power of two >= 8, got {n}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n)

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.arange(self.n) * self.h
        return np.meshgrid(x, x, indexing="ij")

    @cached_property
    def _k(self) -> np.ndarray:
        return np.fft.fftfreq(self.n, d=1.0 / self.n)

    def wavenumbers(self, twisted: int = 0) -> np.ndarray:
        """Angular wavenumbers ``2 pi k`` along one axis.

        Periodic directions drop the Nyquist mode (odd derivatives of it are
        undefined on the grid); antiperiodic directions use the half-integer
        modes ``k + 1/2``, which are symmetric and need no such treatment.
        """
        if twisted:
            return 2.0 * np.pi * (self._k + 0.5)
        k = self._k.copy()
        k[self.n // 2] = 0.0
        return 2.0 * np.pi * k

    def _phases(self, twist: Twist) -> tuple[np.ndarray | None, np.ndarray | None]:
        x = np.arange(self.n) * self.h
        px = np.exp(1j * np.pi * x)[:, None] if twist[0] else None
        py = np.exp(1j * np.pi * x)[None, :] if twist[1] else None
        return px, py

    def to_spectral(self, f: np.ndarray, twist: Twist = PERIODIC) -> np.ndarray:
        if twist != PERIODIC:
            px, py = self._phases(twist)
            if px is not None:
                f = f * px.conj()
            if py is not None:
                f = f * py.conj()
        return sfft.fft2(f, axes=(-2, -1))

    def from_spectral(self, fh: np.ndarray, twist: Twist = PERIODIC) -> np.ndarray:
        f = sfft.ifft2(fh, axes=(-2, -1))
        if twist != PERIODIC:
            px, py = self._phases(twist)
            if px is not None:
                f = f * px
            if py is not None:
                f = f * py
        return f

    def diff(self, f: np.ndarray, axis: int, twist: Twist = PERIODIC) -> np.ndarray:
        """Spectral partial derivative along ``axis`` (0 = x, 1 = y) of the last two axes."""
        kx = self.wavenumbers(twist[0])[:, None]
        ky = self.wavenumbers(twist[1])[None, :]
        k = kx if axis == 0 else ky
        out = self.from_spectral(1j * k * self.to_spectral(f, twist), twist)
        if twist == PERIODIC and not np.iscomplexobj(f):
            return out.real
        return out

    def grad(self, f: np.ndarray, twist: Twist = PERIODIC) -> np.ndarray:
        """Coordinate partials ``(d_x f, d_y f)`` stacked on a new leading axis."""
        kx = self.wavenumbers(twist[0])[:, None]
        ky = self.wavenumbers(twist[1])[None, :]
        fh = self.to_spectral(f, twist)
        out = self.from_spectral(np.stack([1j * kx * fh, 1j * ky * fh]), twist)
        if twist == PERIODIC and not np.iscomplexobj(f):
            return out.real
        return out

    def mean(self, f: np.ndarray) -> np.ndarray:
        return f.mean(axis=(-2, -1))


@dataclass(frozen=True)
class FlatMetric:
    """Constant symmetric positive-definite unit-determinant metric on the torus."""

    G: np.ndarray

    def __post_init__(self) -> None:
        G = np.asarray(self.G, dtype=float)
        if G.shape != (2, 2) or not np.allclose(G, G.T, atol=1e-14):
            raise ValueError("G must be a symmetric 2x2 matrix")
        if np.any(np.linalg.eigvalsh(G) <= 0):
            raise ValueError("G must be positive definite")
        if abs(np.linalg.det(G) - 1.0) > 1e-9:
            raise ValueError(f"det G must be 1, got {np.linalg.det(G)!r}")
        object.__setattr__(self, "G", G)

    @classmethod
    def identity(cls) -> "FlatMetric":
        return cls(np.eye(2))

    @classmethod
    def normalized(cls, G: np.ndarray) -> "FlatMetric":
        G = np.asarray(G, dtype=float)
        G = 0.5 * (G + G.T)
        return cls(G / np.sqrt(np.linalg.det(G)))

    @classmethod
    def from_frame(cls, F: np.ndarray) -> "FlatMetric":
        """Metric for which the rows of ``F`` are an orthonormal frame."""
        return cls.normalized(np.linalg.inv(F.T @ F))

    @cached_property
    def Ginv(self) -> np.ndarray:
        return np.linalg.inv(self.G)

    @cached_property
    def frame(self) -> np.ndarray:
        """Symmetric orthonormal frame ``G^{-1/2}``; row ``a`` is ``e_a``."""
        w, V = np.linalg.eigh(self.G)
        return (V / np.sqrt(w)) @ V.T


def sym_sqrt_inv(G: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(G)
    return (V / np.sqrt(w)) @ V.T


@dataclass(frozen=True)
class ConformalMetric:
    """The metric ``g = e^{2u} G`` on the grid.

    ``frame`` is an optional constant ``G``-orthonormal frame (rows) used to
    trivialise the spinor bundle; it defaults to ``G^{-1/2}``.  Flows that move
    ``G`` carry the frame along so the spinor identification stays continuous.
    """

    grid: TorusGrid
    base: FlatMetric
    u: np.ndarray
    frame: np.ndarray | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        u = np.asarray(self.u, dtype=float)
        if u.shape != self.grid.shape:
            raise ValueError(f"u has shape {u.shape}, expected {self.grid.shape}")
        object.__setattr__(self, "u", u)
        if self.frame is None:
            object.__setattr__(self, "frame", self.base.frame)

    @classmethod
    def flat(cls, grid: TorusGrid, G: FlatMetric | None = None) -> "ConformalMetric":
        return cls(grid, G or FlatMetric.identity(), np.zeros(grid.shape))

    def with_u(self, u: np.ndarray) -> "ConformalMetric":
        return ConformalMetric(self.grid, self.base, u, self.frame)

    @property
    def G(self) -> np.ndarray:
        return self.base.G

    @cached_property
    def e2u(self) -> np.ndarray:
        return np.exp(2.0 * self.u)

    @cached_property
    def du(self) -> np.ndarray:
        return self.grid.grad(self.u)

    @cached_property
    def metric(self) -> np.ndarray:
        """Covariant components ``g_ij`` as a ``(2, 2, n, n)`` array."""
        return self.G[:, :, None, None] * self.e2u

    @cached_property
    def inverse(self) -> np.ndarray:
        return self.base.Ginv[:, :, None, None] * np.exp(-2.0 * self.u)

    @property
    def vol_density(self) -> np.ndarray:
        return self.e2u

    @cached_property
    def christoffel(self) -> np.ndarray:
        """``Gamma[k, i, j]`` for ``e^{2u} G``."""
        du = self.du
        eye = np.eye(2)
        grad_u = np.einsum("kl,l...->k...", self.base.Ginv, du)
        return (
            np.einsum("ki,j...->kij...", eye, du)
            + np.einsum("kj,i...->kij...", eye, du)
            - np.einsum("ij,k...->kij...", self.G, grad_u)
        )


# ---------------------------------------------------------------------------
# Scalar operators


def laplacian_flat(grid: TorusGrid, f: np.ndarray, G: FlatMetric) -> np.ndarray:
    """Positive Laplacian ``-G^{ij} d_i d_j f``; exact on band-limited data."""
    fh = grid.to_spectral(f)
    out = grid.from_spectral(laplacian_symbol(grid, G) * fh)
    return out.real if not np.iscomplexobj(f) else out


def laplacian_symbol(grid: TorusGrid, G: FlatMetric) -> np.ndarray:
    kx = grid.wavenumbers()[:, None]
    ky = grid.wavenumbers()[None, :]
    Gi = G.Ginv
    return Gi[0, 0] * kx**2 + 2.0 * Gi[0, 1] * kx * ky + Gi[1, 1] * ky**2


def scalar_curvature(cm: ConformalMetric) -> np.ndarray:
    """``R_g = 2 e^{-2u} Delta_G u`` (the flat background has ``R = 0``)."""
    return 2.0 * np.exp(-2.0 * cm.u) * laplacian_flat(cm.grid, cm.u, cm.base)


def laplacian(cm: ConformalMetric, f: np.ndarray) -> np.ndarray:
    """Positive Laplace-Beltrami operator of ``g``; conformal in 2D."""
    return np.exp(-2.0 * cm.u) * laplacian_flat(cm.grid, f, cm.base)


def integrate(f: np.ndarray, cm: ConformalMetric) -> float | np.ndarray:
    """Riemann sum of ``f vol_g``; exact for band-limited integrands."""
    return (f * cm.e2u).sum(axis=(-2, -1)) * cm.grid.h**2


def volume(cm: ConformalMetric) -> float:
    return float(integrate(np.ones(cm.grid.shape), cm))


# ---------------------------------------------------------------------------
# Pointwise norms


def norm_sq(f: np.ndarray, cm: ConformalMetric, kind: str = "scalar") -> np.ndarray:
    """Pointwise squared ``g``-norm of a field.

    ``kind`` is one of ``scalar``, ``vector``, ``oneform``, ``tensor`` (covariant
    symmetric 2-tensor), ``spinor`` or ``map`` (R^3-valued one-form of shape
    ``(2, 3, n, n)``).
    """
    e2u = cm.e2u
    if kind == "scalar":
        return np.abs(f) ** 2
    if kind == "vector":
        return np.einsum("i...,ij,j...->...", f, cm.G, f) * e2u
    if kind == "oneform":
        return np.einsum("i...,ij,j...->...", f, cm.base.Ginv, f) / e2u
    if kind == "tensor":
        Gi = cm.base.Ginv
        return np.einsum("ij...,ik,jl,kl...->...", f, Gi, Gi, f) / e2u**2
    if kind == "spinor":
        return (np.abs(f) ** 2).sum(axis=0)
    if kind == "map":
        return np.einsum("ia...,ij,ja...->...", f, cm.base.Ginv, f) / e2u
    raise ValueError(f"unknown field kind {kind!r}")


def lp_norm(f: np.ndarray, cm: ConformalMetric, p: float, kind: str = "scalar") -> float:
    """``(int |f|_g^p vol_g)^{1/p}``; ``p = inf`` gives the grid sup norm."""
    mag = np.sqrt(norm_sq(f, cm, kind))
    if np.isinf(p):
        return float(mag.max())
    if p < 1:
        raise ValueError("p must be >= 1")
    return float(integrate(mag**p, cm)) ** (1.0 / p)


def inner(a: np.ndarray, b: np.ndarray, cm: ConformalMetric, kind: str) -> float:
    """L^2(g) inner product of two fields of the same kind."""
    e2u = cm.e2u
    if kind == "scalar":
        dens = a * b
    elif kind == "oneform":
        dens = np.einsum("i...,ij,j...->...", a, cm.base.Ginv, b) / e2u
    elif kind == "vector":
        dens = np.einsum("i...,ij,j...->...", a, cm.G, b) * e2u
    elif kind == "tensor":
        Gi = cm.base.Ginv
        dens = np.einsum("ij...,ik,jl,kl...->...", a, Gi, Gi, b) / e2u**2
    elif kind == "spinor":
        dens = (a.conj() * b).real.sum(axis=0)
    else:
        raise ValueError(kind)
    return float(integrate(dens, cm))


# ---------------------------------------------------------------------------
# First and second order operators on tensors


def gradient(f: np.ndarray, cm: ConformalMetric) -> np.ndarray:
    """``grad_g f`` as a contravariant vector field."""
    return np.einsum("ij...,j...->i...", cm.inverse, cm.grid.grad(f))


def flat(X: np.ndarray, cm: ConformalMetric) -> np.ndarray:
    return np.einsum("ij...,j...->i...", cm.metric, X)


def sharp(w: np.ndarray, cm: ConformalMetric) -> np.ndarray:
    return np.einsum("ij...,j...->i...", cm.inverse, w)


def hessian(f: np.ndarray, cm: ConformalMetric) -> np.ndarray:
    """Covariant Hessian ``nabla^2 f`` of ``g``."""
    grid = cm.grid
    df = grid.grad(f)
    ddf = np.moveaxis(grid.grad(df), 0, 1)
    ddf = 0.5 * (ddf + ddf.transpose(1, 0, 2, 3))
    return ddf - np.einsum("kij...,k...->ij...", cm.christoffel, df)


def killing_operator(X: np.ndarray, cm: ConformalMetric) -> np.ndarray:
    """``L_X g`` (no factor 1/2).  Its formal L^2 adjoint is ``2 * divergence_sym``."""
    grid = cm.grid
    dX = np.moveaxis(grid.grad(X), 0, 1)  # dX[k, i] = d_i X^k
    Xu = np.einsum("k...,k...->...", X, cm.du)
    GdX = np.einsum("kj,ki...->ij...", cm.G, dX)
    return cm.e2u * (2.0 * Xu * cm.G[:, :, None, None] + GdX + GdX.transpose(1, 0, 2, 3))


def divergence_sym(h: np.ndarray, cm: ConformalMetric) -> np.ndarray:
    """``(delta_g h)_j = -g^{ik} nabla_k h_ij`` as a one-form."""
    grid = cm.grid
    dh = np.moveaxis(grid.grad(h), 0, 2)  # dh[i, j, k] = d_k h_ij
    Gam = cm.christoffel
    nab = (
        dh
        - np.einsum("lki...,lj...->ijk...", Gam, h)
        - np.einsum("lkj...,il...->ijk...", Gam, h)
    )
    return -np.einsum("ik...,ijk...->j...", cm.inverse, nab)


def divergence_vector(X: np.ndarray, cm: ConformalMetric) -> np.ndarray:
    """``div_g X = e^{-2u} d_i (e^{2u} X^i)``."""
    grid = cm.grid
    w = cm.e2u * X
    return (grid.diff(w[0], 0) + grid.diff(w[1], 1)) / cm.e2u


def trace(h: np.ndarray, cm: ConformalMetric) -> np.ndarray:
    return np.einsum("ij...,ij...->...", cm.inverse, h)


def trace_free_part(h: np.ndarray, cm: ConformalMetric) -> np.ndarray:
    return h - 0.5 * trace(h, cm) * cm.metric


# ---------------------------------------------------------------------------
# Storage helpers


def pack_sym(h: np.ndarray) -> np.ndarray:
    return np.stack([h[0, 0], h[0, 1], h[1, 1]])


def unpack_sym(p: np.ndarray) -> np.ndarray:
    return np.stack([np.stack([p[0], p[1]]), np.stack([p[1], p[2]])])


def band_limited(grid: TorusGrid, rng: np.random.Generator, amplitude: float,
                 cutoff: int = 3, mean_zero: bool = True) -> np.ndarray:
    """Random real trigonometric polynomial with modes ``|k_x|, |k_y| <= cutoff``.

    Normalised so that its sup norm is ``amplitude``.
    """
    x, y = grid.coords
    f = np.zeros(grid.shape)
    for kx in range(-cutoff, cutoff + 1):
        for ky in range(0, cutoff + 1):
            if ky == 0 and kx <= 0:
                continue
            a, b = rng.normal(size=2) / (1.0 + kx * kx + ky * ky)
            ph = 2.0 * np.pi * (kx * x + ky * y)
            f += a * np.cos(ph) + b * np.sin(ph)
    if not mean_zero:
        f += rng.normal() * 0.1
    return amplitude * f / np.abs(f).max()
