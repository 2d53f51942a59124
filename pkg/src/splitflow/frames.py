"""Orthonormal-frame geometry for arbitrary (not necessarily conformally flat) metrics.

A :class:`Frame` is a field of ``g``-orthonormal frames ``e_a = E[a, i] d_i``.
It fixes both the metric and the trivialisation of the spinor bundle, which is
what the unsplit flows evolve.  Metric variations move the frame by the
Bourguignon-Gauduchon rule ``dE = -1/2 K E`` with ``K = g^{-1} dg``, so
spinor components stay meaningful across metrics.

Connection convention: ``omega(X) = g(nabla_X e_1, e_2)``, hence
``nabla_X e_1 = omega(X) e_2`` and ``nabla_X e_2 = -omega(X) e_1``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .grid import PERIODIC, ConformalMetric, TorusGrid, Twist


def _inv2(M: np.ndarray) -> np.ndarray:
    """Inverse of a field of 2x2 matrices stored as ``(2, 2, n, n)``."""
    det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
    return np.stack([np.stack([M[1, 1], -M[0, 1]]), np.stack([-M[1, 0], M[0, 0]])]) / det


def _sqrt2(M: np.ndarray) -> np.ndarray:
    """Principal square root of a field of 2x2 matrices with positive spectrum."""
    det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
    s = np.sqrt(det)
    t = np.sqrt(M[0, 0] + M[1, 1] + 2.0 * s)
    eye = np.eye(2)[:, :, None, None]
    return (M + s * eye) / t


@dataclass(frozen=True)
class Frame:
    """A smooth field of orthonormal frames on the torus grid."""

    grid: TorusGrid
    E: np.ndarray  # (2, 2, n, n): E[a, i]

    @classmethod
    def from_conformal(cls, cm: ConformalMetric) -> "Frame":
        E = cm.frame[:, :, None, None] * np.exp(-cm.u)
        return cls(cm.grid, E)

    @cached_property
    def theta(self) -> np.ndarray:
        """Coframe ``theta[a, i]`` with ``theta^a(e_b) = delta_ab``."""
        return _inv2(self.E).transpose(1, 0, 2, 3)

    @cached_property
    def metric(self) -> np.ndarray:
        return np.einsum("ai...,aj...->ij...", self.theta, self.theta)

    @cached_property
    def inverse(self) -> np.ndarray:
        return np.einsum("ai...,aj...->ij...", self.E, self.E)

    @cached_property
    def vol_density(self) -> np.ndarray:
        th = self.theta
        return np.abs(th[0, 0] * th[1, 1] - th[0, 1] * th[1, 0])

    def integrate(self, f: np.ndarray) -> float:
        return float((f * self.vol_density).sum(axis=(-2, -1)) * self.grid.h**2)

    def volume(self) -> float:
        return self.integrate(np.ones(self.grid.shape))

    def along(self, f: np.ndarray, twist: Twist = PERIODIC) -> np.ndarray:
        """Frame derivatives ``e_a(f)`` stacked on a new leading axis ``a``."""
        df = self.grid.grad(f, twist)  # (2=i, ...)
        return np.einsum("ai...,i...->a...", self.E, df)

    @cached_property
    def omega(self) -> np.ndarray:
        """Connection form evaluated on the frame, ``omega[a] = omega(e_a)``."""
        E = self.E
        dE1 = self.along(E[1])  # dE1[a, i] = e_a(E[1, i])
        dE0 = self.along(E[0])
        bracket = dE1[0] - dE0[1]  # [e_1, e_2]^i
        c = np.einsum("ai...,i...->a...", self.theta, bracket)
        return -c

    @cached_property
    def gauss_curvature(self) -> np.ndarray:
        """``K = -d omega(e_1, e_2)``."""
        w = self.omega
        w_coord = np.einsum("ai...,a...->i...", self.theta, w)  # omega(d_i)
        d_w = self.grid.diff(w_coord[1], 0) - self.grid.diff(w_coord[0], 1)  # d omega(d_x, d_y)
        E = self.E
        dw_e = d_w * (E[0, 0] * E[1, 1] - E[0, 1] * E[1, 0])
        return -dw_e

    @property
    def scalar_curvature(self) -> np.ndarray:
        return 2.0 * self.gauss_curvature

    def connection_matrix(self) -> np.ndarray:
        """``W[a, d, b] = theta^d(nabla_{e_a} e_b)``."""
        w = self.omega
        z = np.zeros_like(w)
        return np.stack([np.stack([z, -w]), np.stack([w, z])]).transpose(2, 0, 1, 3, 4)

    def laplacian(self, f: np.ndarray) -> np.ndarray:
        """Positive Laplace-Beltrami ``-(1/sqrt g) d_i(sqrt g g^{ij} d_j f)`` componentwise."""
        grid = self.grid
        df = grid.grad(f)
        vol = self.vol_density
        flux = vol * np.einsum("ij...,j...->i...", self.inverse, df)
        return -(grid.diff(flux[0], 0) + grid.diff(flux[1], 1)) / vol

    def to_coords(self, Tab: np.ndarray) -> np.ndarray:
        """Frame components ``T_ab`` of a covariant 2-tensor to coordinate ``T_ij``."""
        return np.einsum("ai...,bj...,ab...->ij...", self.theta, self.theta, Tab)

    def to_frame(self, Tij: np.ndarray) -> np.ndarray:
        return np.einsum("ai...,bj...,ij...->ab...", self.E, self.E, Tij)

    def transported(self, h: np.ndarray, s: float = 1.0) -> "Frame":
        """Frame of ``g + s h`` obtained by the Bourguignon-Gauduchon map."""
        K = np.einsum("ik...,kj...->ij...", self.inverse, h)
        eye = np.eye(2)[:, :, None, None]
        A = eye + s * K
        Ainv_half = _inv2(_sqrt2(A))
        E = np.einsum("ij...,aj...->ai...", Ainv_half, self.E)
        return Frame(self.grid, E)

    def velocity(self, h: np.ndarray) -> np.ndarray:
        """``dE/dt`` for a metric velocity ``h`` (covariant coordinate components)."""
        K = np.einsum("ik...,kj...->ij...", self.inverse, h)
        return -0.5 * np.einsum("ij...,aj...->ai...", K, self.E)

    def tensor_norm_sq(self, h: np.ndarray) -> np.ndarray:
        gi = self.inverse
        return np.einsum("ij...,ik...,jl...,kl...->...", h, gi, gi, h)

    def trace(self, h: np.ndarray) -> np.ndarray:
        return np.einsum("ij...,ij...->...", self.inverse, h)
