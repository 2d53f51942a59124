"""Blow-up monitors: geometric and analytic quantities along a flow, and verdicts.

The criteria checked by :func:`verdict` are hypothesis sets under which a flow
on a surface extends past a time ``T``:

``geometric-control``  sup Vol, sup int R^2, inf inj
``hrf-integral``       sup int |R|^{2+eps} + |dphi|^{4+2eps}, inf inj
``spinor-integral``    sup int |nabla^2 phi|^q (q > 4), inf inj
``spinor-pointwise``   sup |nabla^2 phi|

Lengths come from shortest paths on the 8-neighbour grid graph with edge
weight ``sqrt(|v|_{g(a)} |v|_{g(b)})``, which for ``g = e^{2u} G`` equals
``e^{(u_a+u_b)/2} |v|_G``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields
from functools import lru_cache

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from . import maps as mp
from . import spinor as sp
from .frames import Frame
from .grid import ConformalMetric, FlatMetric, TorusGrid

BASEPOINT_SEED = 20240611
N_BASEPOINTS = 16
STENCIL = [(1, 0), (0, 1), (1, 1), (1, -1)]  # half of the 8-neighbour stencil
CLASSES = [(p, q) for p in range(0, 3) for q in range(-2, 3) if p > 0 or q > 0]


_trapezoid = getattr(np, "trapezoid", None) or np.trapz


@dataclass(frozen=True)
class MonitorReport:
    """All blow-up quantities at one time; ``nan`` marks a quantity not defined for the flow."""

    t: float
    vol: float
    curvature_l2: float  # int R^2
    curvature_l2eps: float  # int |R|^{2+eps}
    map_energy_lp: float  # int |dphi|^{4+2eps}
    spinor_hess_lq: float  # int |nabla^2 phi|^q
    spinor_hess_sup: float
    inj_lower_bound: float
    inj_flat: float  # systole(Gbar)/2
    diameter_est: float
    u_c0: float
    u_h2: float
    velocity_l2: float
    horizontal_l2: float
    horizontal_c0: float
    rho_residual: float
    X_residual: float
    calderon_ratio: float
    blowup: bool = False

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> list:
        return [getattr(self, c) for c in self.columns()]


@dataclass(frozen=True)
class Thresholds:
    """Bounds for the verdict; ``window`` restricts sup/inf to the last ``window`` time units."""

    vol_max: float = 1e3
    curvature_l2_max: float = 1e6
    hrf_integral_max: float = 1e8
    spinor_hess_lq_max: float = 1e12
    spinor_hess_sup_max: float = 1e4
    inj_min: float = 1e-3
    window: float | None = None
    eps: float = 0.5
    q: float = 6.0


# ---------------------------------------------------------------------------
# Lengths


def systole_flat(G: FlatMetric | np.ndarray, bound: int = 16) -> float:
    """Shortest nonzero lattice vector ``(p, q)`` under ``G`` with ``|p|, |q| <= bound``."""
    G = G.G if isinstance(G, FlatMetric) else np.asarray(G, dtype=float)
    r = np.arange(-bound, bound + 1)
    P, Q = np.meshgrid(r, r, indexing="ij")
    L2 = G[0, 0] * P**2 + 2 * G[0, 1] * P * Q + G[1, 1] * Q**2
    L2[bound, bound] = np.inf
    return float(np.sqrt(L2.min()))


@lru_cache(maxsize=8)
def basepoints(n: int) -> np.ndarray:
    rng = np.random.default_rng(BASEPOINT_SEED)
    return rng.choice(n * n, size=N_BASEPOINTS, replace=False)


def _edge_lengths(metric: np.ndarray, h: float) -> list[np.ndarray]:
    """Length of the edge from each node in each stencil direction (torus-wrapped)."""
    out = []
    for dx, dy in STENCIL:
        v = np.array([dx, dy], dtype=float) * h
        la = np.sqrt(np.einsum("i,ij...,j->...", v, metric, v))
        lb = np.roll(la, shift=(-dx, -dy), axis=(0, 1))
        out.append(np.sqrt(la * lb))
    return out


def _torus_graph(lengths: list[np.ndarray], n: int) -> csr_matrix:
    idx = np.arange(n * n).reshape(n, n)
    rows, cols, w = [], [], []
    for (dx, dy), L in zip(STENCIL, lengths):
        nb = np.roll(idx, shift=(-dx, -dy), axis=(0, 1))
        rows += [idx.ravel(), nb.ravel()]
        cols += [nb.ravel(), idx.ravel()]
        w += [L.ravel(), L.ravel()]
    return csr_matrix((np.concatenate(w), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n * n, n * n))


def _cover_graph(lengths: list[np.ndarray], n: int, xcells: tuple[int, int],
                 ycells: tuple[int, int]) -> tuple[csr_matrix, int, int]:
    """Graph on the unrolled patch ``[x0, x1) x [y0, y1)`` of fundamental cells."""
    nx, ny = (xcells[1] - xcells[0]) * n, (ycells[1] - ycells[0]) * n
    I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    rows, cols, w = [], [], []
    for (dx, dy), L in zip(STENCIL, lengths):
        I2, J2 = I + dx, J + dy
        ok = (I2 >= 0) & (I2 < nx) & (J2 >= 0) & (J2 < ny)
        a = (I * ny + J)[ok]
        b = (I2 * ny + J2)[ok]
        wt = np.tile(L, ((nx // n), (ny // n)))[ok]
        rows += [a, b]
        cols += [b, a]
        w += [wt, wt]
    g = csr_matrix((np.concatenate(w), (np.concatenate(rows), np.concatenate(cols))),
                   shape=(nx * ny, nx * ny))
    return g, nx, ny


def _metric_field(geom) -> tuple[TorusGrid, np.ndarray]:
    if isinstance(geom, Frame):
        return geom.grid, geom.metric
    return geom.grid, geom.metric


def graph_systole(geom: Frame | ConformalMetric) -> float:
    """Shortest noncontractible loop through a basepoint sample, classes ``|p|, |q| <= 2``."""
    grid, metric = _metric_field(geom)
    n = grid.n
    lengths = _edge_lengths(metric, grid.h)
    x0, y0 = -1, -3
    g, nx, ny = _cover_graph(lengths, n, (x0, 3), (y0, 3))
    # upper bound per class: straight lattice path with the worst pointwise metric, stencil slack
    best = np.inf
    for p, q in CLASSES:
        v = np.array([p, q], dtype=float)
        best = min(best, float(np.sqrt(np.einsum("i,ij...,j->...", v, metric, v)).max()))
    limit = 1.5 * best
    bp = basepoints(n)
    bi, bj = bp // n, bp % n
    src = (bi - x0 * n) * ny + (bj - y0 * n)
    D = dijkstra(g, indices=src, limit=limit)
    sys_len = np.inf
    for p, q in CLASSES:
        tgt = (bi + (p - x0) * n) * ny + (bj + (q - y0) * n)
        sys_len = min(sys_len, float(D[np.arange(len(src)), tgt].min()))
    return sys_len


def diameter_estimate(geom: Frame | ConformalMetric) -> float:
    """Largest single-source eccentricity over the basepoint sample on the torus graph."""
    grid, metric = _metric_field(geom)
    g = _torus_graph(_edge_lengths(metric, grid.h), grid.n)
    D = dijkstra(g, indices=basepoints(grid.n))
    return float(D.max())


def injectivity_lower_bound(geom: Frame | ConformalMetric) -> float:
    """``min(systole/2, pi / sqrt(sup R^+ / 2))``."""
    fr = geom if isinstance(geom, Frame) else Frame.from_conformal(geom)
    if isinstance(geom, ConformalMetric):
        from .grid import scalar_curvature

        R = scalar_curvature(geom)
    else:
        R = fr.scalar_curvature
    kmax = max(float(R.max()), 0.0) / 2.0
    cap = math.pi / math.sqrt(kmax) if kmax > 0 else math.inf
    return min(0.5 * graph_systole(geom), cap)


# ---------------------------------------------------------------------------
# Reports


def _h2_norm(grid: TorusGrid, u: np.ndarray, G: FlatMetric) -> float:
    Gi = G.Ginv
    du = grid.grad(u)
    ddu = np.moveaxis(grid.grad(du), 0, 1)
    d1 = np.einsum("i...,ij,j...->...", du, Gi, du)
    d2 = np.einsum("ij...,ik,jl,kl...->...", ddu, Gi, Gi, ddu)
    return float(np.sqrt((u**2 + d1 + d2).mean()))


def _state_geometry(state):
    """``(frame, conformal metric or None, u, flat metric or None)`` of a flow state."""
    from .flows import RicciState, SplitState

    if isinstance(state, (RicciState, SplitState)):
        cm = state.cm
        return Frame.from_conformal(cm), cm, cm.u, cm.base
    fr = state.frame
    th = fr.theta
    det = th[0, 0] * th[1, 1] - th[0, 1] * th[1, 0]
    return fr, None, 0.5 * np.log(np.abs(det)), None


def blowup_report(state, kind: str, thresholds: Thresholds = Thresholds(),
                  spin: sp.SpinStructure = sp.SpinStructure(),
                  info: dict | None = None, reference: FlatMetric | None = None) -> MonitorReport:
    """Evaluate every monitored quantity on ``state``.

    ``info`` supplies step diagnostics (velocities, gauge residuals).  ``reference``
    is the flat metric for ``u_h2``; it defaults to the state's flat factor, or
    the identity for unsplit states.
    """
    from . import gauge as ga

    info = info or {}
    eps, q = thresholds.eps, thresholds.q
    nan = math.nan
    with np.errstate(all="ignore"):
        fr, cm, u, base = _state_geometry(state)
        if cm is not None:
            from .grid import scalar_curvature

            R = scalar_curvature(cm)
        else:
            R = fr.scalar_curvature
        vol = fr.volume()
        curv2 = fr.integrate(R**2)
        curv2e = fr.integrate(np.abs(R) ** (2 + eps))
        datum = getattr(state, "datum", None)
        map_lp = hess_lq = hess_sup = nan
        if datum is not None and not np.iscomplexobj(datum):
            e = mp.energy_density(fr, mp.differential(fr.grid, datum))
            map_lp = fr.integrate(np.sqrt(np.abs(e)) ** (4 + 2 * eps))
        elif datum is not None:
            full, _, _ = sp.second_covariant_derivative(datum, fr, spin)
            hn = np.sqrt(sp.spinor_tensor_norm_sq(full))
            hess_lq = fr.integrate(hn**q)
            hess_sup = float(hn.max())
        ref = reference or base or FlatMetric.identity()
        finite = np.all(np.isfinite(fr.E)) and (datum is None or np.all(np.isfinite(datum)))
        if finite:
            inj = injectivity_lower_bound(cm if cm is not None else fr)
            diam = diameter_estimate(cm if cm is not None else fr)
        else:
            inj = diam = nan
        inj_flat = 0.5 * systole_flat(base) if base is not None else nan
        calderon = nan
        if cm is not None and finite and float(np.abs(R).max()) > 1e-10:
            f, _ = ga.curvature_potential(cm)
            calderon = ga.calderon_ratio(cm, f)
        u_c0 = float(np.abs(u).max())
        u_h2 = _h2_norm(fr.grid, u, ref)
    values = dict(
        t=float(state.t), vol=vol, curvature_l2=curv2, curvature_l2eps=curv2e,
        map_energy_lp=map_lp, spinor_hess_lq=hess_lq, spinor_hess_sup=hess_sup,
        inj_lower_bound=inj, inj_flat=inj_flat, diameter_est=diam, u_c0=u_c0, u_h2=u_h2,
        velocity_l2=info.get("velocity_l2", nan), horizontal_l2=info.get("horizontal_l2", nan),
        horizontal_c0=info.get("horizontal_c0", nan),
        rho_residual=info.get("rho_residual", nan), X_residual=info.get("X_residual", nan),
        calderon_ratio=calderon,
    )
    expected = _expected(kind)
    blowup = not finite or any(not np.isfinite(values[k]) for k in expected)
    return MonitorReport(**{k: float(v) for k, v in values.items()}, blowup=bool(blowup))


def _expected(kind: str) -> list[str]:
    keys = ["vol", "curvature_l2", "inj_lower_bound", "diameter_est", "u_c0", "u_h2"]
    if kind.startswith("hrf"):
        keys += ["map_energy_lp", "curvature_l2eps"]
    if kind.startswith("spinor"):
        keys += ["spinor_hess_lq", "spinor_hess_sup"]
    return keys


# ---------------------------------------------------------------------------
# Space-time norms


def spacetime_norms(times, fields_u, grid: TorusGrid, p: float = 2.0, alpha: float = 0.5,
                    G: FlatMetric | None = None, samples: int = 4000, window: float = 0.25,
                    seed: int = 0) -> dict[str, float]:
    """``W^{2,1}_p`` norm and a sampled parabolic Hoelder seminorm of ``u(t, x)``.

    ``||u||_{W^{2,1}_p}^p = int int |d_t u|^p + |grad u|^p + |hess u|^p`` with the
    flat metric ``G``; ``d_t`` by centred differences, trapezoidal rule in time.
    The Hoelder seminorm ``sup |u(x,t) - u(y,s)| / d^alpha`` with
    ``d = (|x - y|^2 + |t - s|)^{1/2}`` is estimated from ``samples`` random pairs
    with ``d <= window``.
    """
    t = np.asarray(times, dtype=float)
    U = np.asarray(fields_u, dtype=float)
    if len(t) < 2:
        raise ValueError("space-time norms need at least two snapshots")
    if np.any(np.diff(t) <= 0):
        raise ValueError("time stamps must increase")
    G = G or FlatMetric.identity()
    Gi = G.Ginv
    Ut = np.gradient(U, t, axis=0)
    dens = np.empty(len(t))
    for k in range(len(t)):
        du = grid.grad(U[k])
        ddu = np.moveaxis(grid.grad(du), 0, 1)
        g1 = np.sqrt(np.einsum("i...,ij,j...->...", du, Gi, du))
        g2 = np.sqrt(np.abs(np.einsum("ij...,ik,jl,kl...->...", ddu, Gi, Gi, ddu)))
        dens[k] = (np.abs(Ut[k]) ** p + g1**p + g2**p).mean()
    w21 = float(_trapezoid(dens, t) ** (1.0 / p))
    rng = np.random.default_rng(seed)
    n = grid.n
    k1 = rng.integers(0, len(t), samples)
    i1, j1 = rng.integers(0, n, samples), rng.integers(0, n, samples)
    span = max(1, int(window * n))
    i2 = (i1 + rng.integers(-span, span + 1, samples)) % n
    j2 = (j1 + rng.integers(-span, span + 1, samples)) % n
    k2 = np.clip(k1 + rng.integers(-3, 4, samples), 0, len(t) - 1)
    dx = (((i2 - i1 + n // 2) % n) - n // 2) * grid.h
    dy = (((j2 - j1 + n // 2) % n) - n // 2) * grid.h
    d2 = np.einsum("i...,ij,j...->...", np.stack([dx, dy]), G.G, np.stack([dx, dy]))
    d = np.sqrt(d2 + np.abs(t[k2] - t[k1]))
    ok = (d > 0) & (d <= window)
    diff = np.abs(U[k2, i2, j2] - U[k1, i1, j1])
    holder = float((diff[ok] / d[ok] ** alpha).max()) if ok.any() else 0.0
    return {"w21": w21, "p": p, "holder": holder, "alpha": alpha, "holder_pairs": int(ok.sum()),
            "holder_estimator": "sampled"}


# ---------------------------------------------------------------------------
# Verdicts


CRITERIA = {
    "geometric-control": [("vol", "max", "vol_max"), ("curvature_l2", "max", "curvature_l2_max"),
                          ("inj_lower_bound", "min", "inj_min")],
    "hrf-integral": [("hrf_integral", "max", "hrf_integral_max"),
                     ("inj_lower_bound", "min", "inj_min")],
    "spinor-integral": [("spinor_hess_lq", "max", "spinor_hess_lq_max"),
                        ("inj_lower_bound", "min", "inj_min")],
    "spinor-pointwise": [("spinor_hess_sup", "max", "spinor_hess_sup_max")],
}
CRITERIA_BY_KIND = {
    "ricci": ["geometric-control"],
    "hrf": ["geometric-control", "hrf-integral"],
    "spinor": ["geometric-control", "spinor-integral", "spinor-pointwise"],
}


@dataclass
class Verdict:
    criterion: str
    holds: bool
    message: str
    quantity: str | None = None
    time: float | None = None
    value: float | None = None


def _quantity(r: MonitorReport, name: str) -> float:
    if name == "hrf_integral":
        return r.curvature_l2eps + r.map_energy_lp
    return getattr(r, name)


def verdict(reports, thresholds: Thresholds = Thresholds(), kind: str | None = None
            ) -> dict[str, Verdict]:
    """Check each hypothesis set over the report window.

    A hypothesis fails at the first report where its quantity is non-finite or
    crosses its bound.  The integral spinor criterion additionally requires
    ``q > 4``.
    """
    reports = list(reports)
    if not reports:
        raise ValueError("verdict needs at least one report")
    if thresholds.window is not None:
        t_end = reports[-1].t
        reports = [r for r in reports if r.t >= t_end - thresholds.window]
    names = list(CRITERIA) if kind is None else CRITERIA_BY_KIND[kind.split("-")[0]]
    out = {}
    for name in names:
        if name == "spinor-integral" and not thresholds.q > 4:
            out[name] = Verdict(name, False, f"not applicable: q = {thresholds.q:g} must exceed 4",
                                "q", None, thresholds.q)
            continue
        failure = None
        for r in reports:
            for qty, sense, bound_name in CRITERIA[name]:
                v = _quantity(r, qty)
                bound = getattr(thresholds, bound_name)
                bad = not np.isfinite(v) or (v >= bound if sense == "max" else v <= bound)
                if bad:
                    failure = (qty, r.t, v)
                    break
            if failure:
                break
        if failure:
            qty, t, v = failure
            out[name] = Verdict(name, False, f"violated: {qty} = {v:.6g} at t = {t:.6g}", qty, t, v)
        else:
            out[name] = Verdict(name, True, f"extendable: {name} hypotheses hold")
    return out


def verdict_record(verdicts: dict[str, Verdict]) -> dict:
    return {k: asdict(v) for k, v in verdicts.items()}
