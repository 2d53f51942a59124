"""Maps from the torus into the unit sphere S^2 in R^3."""
from __future__ import annotations

import numpy as np

from .frames import Frame
from .grid import TorusGrid


class NonUnitMapError(ValueError):
    pass


def check_unit(phi: np.ndarray, tol: float = 1e-8) -> None:
    dev = np.abs((phi**2).sum(axis=0) - 1.0).max()
    if not np.isfinite(dev) or dev > tol:
        raise NonUnitMapError(f"map leaves the sphere (max deviation {dev:.3e})")


def normalize(phi: np.ndarray) -> tuple[np.ndarray, float]:
    nrm = np.sqrt((phi**2).sum(axis=0))
    return phi / nrm, float(np.abs(nrm - 1.0).max())


def differential(grid: TorusGrid, phi: np.ndarray) -> np.ndarray:
    """``dphi[i, c] = d_i phi^c``."""
    return grid.grad(phi)


def energy_density(fr: Frame, dphi: np.ndarray) -> np.ndarray:
    """``|dphi|_g^2``."""
    return np.einsum("ij...,ic...,jc...->...", fr.inverse, dphi, dphi)


def pullback(dphi: np.ndarray) -> np.ndarray:
    """``(dphi (x) dphi)_ij = <d_i phi, d_j phi>``."""
    return np.einsum("ic...,jc...->ij...", dphi, dphi)


def tension(fr: Frame, phi: np.ndarray, dphi: np.ndarray | None = None) -> np.ndarray:
    """``tau_g(phi) = -Delta_g phi + |dphi|_g^2 phi`` (tangent to the sphere)."""
    if dphi is None:
        dphi = differential(fr.grid, phi)
    lap = fr.laplacian(phi)
    return -lap + energy_density(fr, dphi) * phi


def energy(fr: Frame, phi: np.ndarray) -> float:
    return 0.5 * fr.integrate(energy_density(fr, differential(fr.grid, phi)))


def equator_map(grid: TorusGrid) -> np.ndarray:
    x, _ = grid.coords
    return np.stack([np.cos(2 * np.pi * x), np.sin(2 * np.pi * x), np.zeros(grid.shape)])


def random_map(grid: TorusGrid, rng: np.random.Generator, amplitude: float = 0.5,
               cutoff: int = 2) -> np.ndarray:
    """Smooth map given by band-limited spherical angles around the equator map."""
    from .grid import band_limited

    x, y = grid.coords
    lon = 2 * np.pi * x + band_limited(grid, rng, amplitude, cutoff)
    lat = band_limited(grid, rng, amplitude, cutoff)
    return np.stack([np.cos(lat) * np.cos(lon), np.cos(lat) * np.sin(lon), np.sin(lat)])
