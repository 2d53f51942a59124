"""Right-hand sides and explicit time integration for the geometric flows.

Three flows are implemented, each in unsplit and (where meaningful) split form:

* normalized Ricci flow of a conformal factor, ``du/dt = -R/2``;
* harmonic Ricci flow of a metric coupled to a map into the unit sphere;
* the spinor flow, the negative gradient flow of ``1/2 int |nabla phi|^2``.

Unsplit states carry a field of orthonormal frames (a general metric together
with the spinor trivialisation).  Split states carry a constant frame ``F`` of
the flat factor ``Gbar = (F^T F)^{-1}``, the conformal factor ``u`` and the
datum; they represent ``g = e^{2u} Gbar`` up to a diffeomorphism.

Split equations (positive Laplacians, ``Q`` the unsplit metric velocity, ``Qo``
its trace-free part, ``rho`` and ``X`` from :mod:`splitflow.gauge`)::

    dGbar/dt = P(e^{-2u} Qo)
    du/dt    = 1/4 tr_g Q + s (X(u) - 1/2 rho)
    dphi/dt  = Q_phi + s L_X phi

with ``s = +1`` for the ``sfe`` sign set and ``s = -1`` for ``hrf``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import gauge as ga
from . import maps as mp
from . import spinor as sp
from .frames import Frame
from .grid import ConformalMetric, FlatMetric, TorusGrid, scalar_curvature, trace_free_part

SIGN_SETS = {"sfe": 1.0, "hrf": -1.0}
DEFAULT_SIGNS = "sfe"
RK4_STABILITY = 2.78  # extent of the RK4 stability region on the negative real axis


class NumericalAbort(RuntimeError):
    """Integration could not continue; ``trajectory`` holds what was computed."""

    def __init__(self, message: str, trajectory: "FlowTrajectory | None" = None):
        super().__init__(message)
        self.trajectory = trajectory


# ---------------------------------------------------------------------------
# States


@dataclass(frozen=True)
class RicciState:
    grid: TorusGrid
    base: FlatMetric
    u: np.ndarray
    t: float = 0.0

    @property
    def cm(self) -> ConformalMetric:
        return ConformalMetric(self.grid, self.base, self.u)


@dataclass(frozen=True)
class UnsplitState:
    """General metric given by an orthonormal frame field, plus a datum."""

    frame: Frame
    datum: np.ndarray
    t: float = 0.0

    @property
    def grid(self) -> TorusGrid:
        return self.frame.grid

    @classmethod
    def from_conformal(cls, cm: ConformalMetric, datum: np.ndarray, t: float = 0.0):
        return cls(Frame.from_conformal(cm), datum, t)


def _normal_form(F: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rescale ``(F, u)`` so that ``det Gbar = 1`` without changing ``e^{2u} Gbar``."""
    det_G = 1.0 / np.linalg.det(F) ** 2
    return F * det_G**0.25, u + 0.25 * math.log(det_G)


@dataclass(frozen=True)
class SplitState:
    """``g = e^{2u} Gbar`` with ``Gbar = (F^T F)^{-1}``; ``F`` also frames the spinor bundle."""

    grid: TorusGrid
    F: np.ndarray
    u: np.ndarray
    datum: np.ndarray
    t: float = 0.0
    gauge: ga.GaugeSolution | None = None

    @classmethod
    def from_conformal(cls, cm: ConformalMetric, datum: np.ndarray, t: float = 0.0):
        return cls(cm.grid, np.array(cm.frame, dtype=float), cm.u, datum, t)

    @property
    def base(self) -> FlatMetric:
        return FlatMetric.from_frame(self.F)

    @property
    def cm(self) -> ConformalMetric:
        F, u = _normal_form(self.F, self.u)
        return ConformalMetric(self.grid, FlatMetric.from_frame(F), u, frame=F)


State = RicciState | UnsplitState | SplitState


# ---------------------------------------------------------------------------
# Right-hand sides


def ricci_normalized_rhs(u: np.ndarray, G: FlatMetric, grid: TorusGrid
                         ) -> tuple[np.ndarray, dict[str, float]]:
    """``du/dt = (r - R_g)/2``; ``r`` is the mean curvature and is reported."""
    cm = ConformalMetric(grid, G, u)
    R = scalar_curvature(cm)
    vol = cm.e2u.mean()
    r = float((R * cm.e2u).mean() / vol)
    return -0.5 * R, {"r": r, "R_sup": float(np.abs(R).max()), "vol": float(vol),
                      "R2": float((R**2 * cm.e2u).mean())}


def hrf_tensor(fr: Frame, phi: np.ndarray, alpha: float,
               dphi: np.ndarray | None = None) -> np.ndarray:
    """``T = -2 Ric + 2 alpha dphi (x) dphi + (mean of tr(Ric - alpha dphi (x) dphi)) g``."""
    if dphi is None:
        dphi = mp.differential(fr.grid, phi)
    R = fr.scalar_curvature
    e = mp.energy_density(fr, dphi)
    c = (fr.integrate(R) - alpha * fr.integrate(e)) / fr.volume()
    g = fr.metric
    return (c - R) * g + 2.0 * alpha * mp.pullback(dphi)


def hrf_rhs(fr: Frame, phi: np.ndarray, alpha: float, check: bool = True
            ) -> tuple[np.ndarray, np.ndarray, dict[str, float]]:
    """Metric velocity ``T`` and map velocity ``tau_g(phi)`` of the harmonic Ricci flow."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    if check:
        mp.check_unit(phi)
    dphi = mp.differential(fr.grid, phi)
    T = hrf_tensor(fr, phi, alpha, dphi)
    tau = mp.tension(fr, phi, dphi)
    e = mp.energy_density(fr, dphi)
    info = {"energy": 0.5 * fr.integrate(e),
            "map_velocity_sq": fr.integrate((tau**2).sum(axis=0))}
    return T, tau, info


def spinor_rhs(fr: Frame, phi: np.ndarray, spin: sp.SpinStructure, check: bool = True
               ) -> tuple[sp.SpinorGradient, dict[str, float]]:
    """``(Q1, Q2)`` of the spinor flow with the energy and squared gradient norm."""
    grad = sp.gradient(phi, fr, spin, check=check)
    info = {"energy": 0.5 * fr.integrate(grad.grad_sq),
            "q1_sq": fr.integrate(fr.tensor_norm_sq(grad.q1)),
            "q2_sq": fr.integrate((np.abs(grad.q2) ** 2).sum(axis=0))}
    info["q_sq"] = info["q1_sq"] + info["q2_sq"]
    return grad, info


def _geometry_info(fr: Frame) -> dict[str, float]:
    R = fr.scalar_curvature
    return {"vol": fr.volume(), "R2": fr.integrate(R**2), "R_sup": float(np.abs(R).max())}


@dataclass(frozen=True)
class SplitVelocity:
    """Output of a split right-hand side."""

    dG: ga.HorizontalTensor
    du: np.ndarray
    ddatum: np.ndarray
    gauge: ga.GaugeSolution
    info: dict[str, float]


def _split_common(cm: ConformalMetric, Q: np.ndarray, sign: float
                  ) -> tuple[ga.HorizontalTensor, np.ndarray, ga.GaugeSolution, dict[str, float]]:
    from .grid import integrate, norm_sq, trace

    sol = ga.solve_gauge(cm, Q)
    Qo = trace_free_part(Q, cm)
    dG = ga.horizontal_projection(cm.grid, np.exp(-2.0 * cm.u) * Qo, cm.base)
    Xu = np.einsum("i...,i...->...", sol.X, cm.du)
    du = 0.25 * trace(Q, cm) + sign * (Xu - 0.5 * sol.rho)
    info = dict(sol.diagnostics)
    info.update({
        "du_mean": float(du.mean()),
        "horizontal_l2": dG.l2_norm(),
        "horizontal_c0": dG.c0_norm(cm.base),
        "velocity_l2": math.sqrt(integrate(norm_sq(Q, cm, "tensor"), cm)),
    })
    return dG, du, sol, info


def hrf_split_rhs(state: SplitState, alpha: float, signs: str = DEFAULT_SIGNS,
                  check: bool = True) -> SplitVelocity:
    cm = state.cm
    fr = Frame.from_conformal(cm)
    T, tau, info = hrf_rhs(fr, state.datum, alpha, check)
    dG, du, sol, sinfo = _split_common(cm, T, SIGN_SETS[signs])
    dphi = mp.differential(cm.grid, state.datum)
    Xphi = np.einsum("i...,ic...->c...", sol.X, dphi)
    info.update(sinfo)
    info.update(_geometry_info(fr))
    return SplitVelocity(dG, du, tau + SIGN_SETS[signs] * Xphi, sol, info)


def spinor_split_rhs(state: SplitState, spin: sp.SpinStructure, signs: str = DEFAULT_SIGNS,
                     bianchi: bool = False, check: bool = True) -> SplitVelocity:
    cm = state.cm
    fr = Frame.from_conformal(cm)
    grad, info = spinor_rhs(fr, state.datum, spin, check)
    dG, du, sol, sinfo = _split_common(cm, grad.q1, SIGN_SETS[signs])
    lie = sp.spin_lie_derivative(sol.X, state.datum, fr, spin, nab=grad.nabla)
    info.update(sinfo)
    info.update(_geometry_info(fr))
    if bianchi:
        res = sp.bianchi_residuals(grad, state.datum, cm, spin)
        info["bianchi_reduced_form"] = res["reduced_form"]
        info["bianchi_full_form"] = res["full_form"]
    return SplitVelocity(dG, du, grad.q2 + SIGN_SETS[signs] * lie, sol, info)


# ---------------------------------------------------------------------------
# Flow objects: uniform interface for the integrator


class Flow:
    """A flow packages its state layout, right-hand side and renormalization."""

    kind: str = ""
    diffusion: float = 1.0

    def fields(self, state) -> tuple[np.ndarray, ...]:
        raise NotImplementedError

    def rebuild(self, state, fields: tuple[np.ndarray, ...], t: float):
        raise NotImplementedError

    def rhs(self, state) -> tuple[tuple[np.ndarray, ...], dict[str, float]]:
        raise NotImplementedError

    def renormalize(self, state) -> tuple[object, dict[str, float]]:
        return state, {}

    def validate(self, state) -> None:
        """Reject states whose datum is off the unit sphere."""
        datum = getattr(state, "datum", None)
        if datum is None:
            return
        (sp.check_unit if np.iscomplexobj(datum) else mp.check_unit)(datum)

    def max_inverse_eig(self, state) -> float:
        raise NotImplementedError

    def residual(self, info: dict[str, float]) -> float:
        """Quantity compared against ``StepControl.residual_tol``."""
        return math.inf


def _max_eig_field(M: np.ndarray) -> float:
    tr = M[0, 0] + M[1, 1]
    det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
    return float((0.5 * tr + np.sqrt(np.maximum(0.25 * tr**2 - det, 0.0))).max())


class RicciFlow(Flow):
    kind = "ricci"

    def fields(self, state):
        return (state.u,)

    def rebuild(self, state, fields, t):
        return replace(state, u=fields[0], t=t)

    def rhs(self, state):
        du, info = ricci_normalized_rhs(state.u, state.base, state.grid)
        info["rhs_sup"] = float(np.abs(du).max())
        return (du,), info

    def max_inverse_eig(self, state):
        return float(np.linalg.eigvalsh(state.base.Ginv).max() * np.exp(-2.0 * state.u).max())

    def residual(self, info):
        return info["R_sup"]


class _UnsplitFlow(Flow):
    def fields(self, state):
        return (state.frame.E, state.datum)

    def rebuild(self, state, fields, t):
        return UnsplitState(Frame(state.grid, fields[0]), fields[1], t)

    def max_inverse_eig(self, state):
        return _max_eig_field(state.frame.inverse)


class HarmonicRicciFlow(_UnsplitFlow):
    kind = "hrf"

    def __init__(self, alpha: float = 1.0):
        self.alpha = alpha

    def rhs(self, state):
        fr = state.frame
        T, tau, info = hrf_rhs(fr, state.datum, self.alpha, check=False)
        info.update(_geometry_info(fr))
        info["rhs_sup"] = float(max(np.abs(T).max(), np.abs(tau).max()))
        return (fr.velocity(T), tau), info

    def renormalize(self, state):
        phi, drift = mp.normalize(state.datum)
        return replace(state, datum=phi), {"datum_drift": drift}


class SpinorFlow(_UnsplitFlow):
    kind = "spinor"

    def __init__(self, spin: sp.SpinStructure = sp.SpinStructure()):
        self.spin = spin

    def rhs(self, state):
        fr = state.frame
        grad, info = spinor_rhs(fr, state.datum, self.spin, check=False)
        info.update(_geometry_info(fr))
        info["rhs_sup"] = float(max(np.abs(grad.q1).max(), np.abs(grad.q2).max()))
        return (fr.velocity(grad.q1), grad.q2), info

    def renormalize(self, state):
        phi, drift = sp.normalize(state.datum)
        return replace(state, datum=phi), {"datum_drift": drift}


class _SplitFlow(Flow):
    def __init__(self, signs: str = DEFAULT_SIGNS):
        if signs not in SIGN_SETS:
            raise ValueError(f"unknown sign set {signs!r}")
        self.signs = signs

    def fields(self, state):
        return (state.F, state.u, state.datum)

    def rebuild(self, state, fields, t):
        return SplitState(state.grid, fields[0], fields[1], fields[2], t)

    def _pack(self, state, v: SplitVelocity):
        Gi = np.linalg.inv(state.F.T @ state.F)  # Gbar
        K = np.linalg.solve(Gi, v.dG.matrix)  # Gbar^{-1} dGbar
        dF = -0.5 * state.F @ K.T
        v.info["rhs_sup"] = float(max(np.abs(v.du).max(), np.abs(v.ddatum).max()))
        return (dF, v.du, v.ddatum), v.info

    def renormalize(self, state):
        F, u = _normal_form(state.F, state.u)
        det_drift = abs(1.0 / np.linalg.det(state.F) ** 2 - 1.0)
        phi, drift = self._normalize_datum(state.datum)
        return (SplitState(state.grid, F, u, phi, state.t, state.gauge),
                {"datum_drift": drift, "det_drift": det_drift})

    def max_inverse_eig(self, state):
        cm = state.cm
        return float(np.linalg.eigvalsh(cm.base.Ginv).max() * np.exp(-2.0 * cm.u).max())


class HarmonicRicciSplitFlow(_SplitFlow):
    kind = "hrf-split"

    def __init__(self, alpha: float = 1.0, signs: str = DEFAULT_SIGNS):
        super().__init__(signs)
        self.alpha = alpha

    def rhs(self, state):
        return self._pack(state, hrf_split_rhs(state, self.alpha, self.signs, check=False))

    @staticmethod
    def _normalize_datum(phi):
        return mp.normalize(phi)


class SpinorSplitFlow(_SplitFlow):
    kind = "spinor-split"

    def __init__(self, spin: sp.SpinStructure = sp.SpinStructure(), signs: str = DEFAULT_SIGNS,
                 bianchi: bool = False):
        super().__init__(signs)
        self.spin = spin
        self.bianchi = bianchi

    def rhs(self, state):
        return self._pack(state, spinor_split_rhs(state, self.spin, self.signs, self.bianchi,
                                                check=False))

    @staticmethod
    def _normalize_datum(phi):
        return sp.normalize(phi)


def make_flow(kind: str, alpha: float = 1.0, spin: sp.SpinStructure = sp.SpinStructure(),
              signs: str = DEFAULT_SIGNS) -> Flow:
    if kind == "ricci":
        return RicciFlow()
    if kind == "hrf":
        return HarmonicRicciFlow(alpha)
    if kind == "hrf-split":
        return HarmonicRicciSplitFlow(alpha, signs)
    if kind == "spinor":
        return SpinorFlow(spin)
    if kind == "spinor-split":
        return SpinorSplitFlow(spin, signs)
    raise ValueError(f"unknown flow kind {kind!r}")


# ---------------------------------------------------------------------------
# Integration


@dataclass(frozen=True)
class StepControl:
    """Time-step policy and stop conditions.

    ``dt = None`` selects the CFL step ``cfl * 2.78 h^2 / (2 pi^2 D max lambda(g^{-1}))``,
    the largest stable RK4 step for the spectral Laplacian with coefficient ``D``.
    """

    dt: float | None = None
    cfl: float = 0.9
    max_steps: int = 100_000
    t_final: float = math.inf
    residual_tol: float | None = None
    report_every: int = 10
    max_halvings: int = 10
    stationary_tol: float = 1e-12

    def __post_init__(self) -> None:
        if not 0 < self.cfl <= 1:
            raise ValueError("cfl must lie in (0, 1]")
        if self.dt is not None and self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.max_steps < 1 or self.report_every < 1:
            raise ValueError("max_steps and report_every must be positive")


def cfl_step(flow: Flow, state, ctrl: StepControl) -> float:
    h = state.grid.h
    lam = flow.max_inverse_eig(state)
    return ctrl.cfl * RK4_STABILITY * h * h / (2.0 * math.pi**2 * flow.diffusion * lam)


def _finite(arrays) -> bool:
    return all(np.all(np.isfinite(a)) for a in arrays)


def _axpy(base, k, a):
    return tuple(b + a * d for b, d in zip(base, k))


@dataclass
class StepResult:
    state: object
    dt: float
    info: dict[str, float]
    halvings: int = 0


def rk4(flow: Flow, state, dt: float, k1=None, info1=None):
    """One classical RK4 step without renormalization."""
    y0 = flow.fields(state)
    t0 = state.t
    if k1 is None:
        k1, info1 = flow.rhs(state)
    k2, _ = flow.rhs(flow.rebuild(state, _axpy(y0, k1, 0.5 * dt), t0 + 0.5 * dt))
    k3, _ = flow.rhs(flow.rebuild(state, _axpy(y0, k2, 0.5 * dt), t0 + 0.5 * dt))
    k4, _ = flow.rhs(flow.rebuild(state, _axpy(y0, k3, dt), t0 + dt))
    y1 = tuple(y + dt / 6.0 * (a + 2 * b + 2 * c + d) for y, a, b, c, d in zip(y0, k1, k2, k3, k4))
    return flow.rebuild(state, y1, t0 + dt), info1


def step(state, flow: Flow, ctrl: StepControl, dt: float | None = None,
         k1=None, info1=None) -> StepResult:
    """Advance one accepted step, halving ``dt`` on non-finite intermediates.

    ``k1, info1`` may carry an already evaluated first stage.
    """
    if dt is None:
        dt = ctrl.dt if ctrl.dt is not None else cfl_step(flow, state, ctrl)
    for halvings in range(ctrl.max_halvings + 1):
        try:
            with np.errstate(all="ignore"):
                if k1 is None:
                    k1, info1 = flow.rhs(state)
                    if not _finite(k1):
                        raise FloatingPointError("non-finite right-hand side")
                new, _ = rk4(flow, state, dt, k1, info1)
                if not _finite(flow.fields(new)):
                    raise FloatingPointError("non-finite stage")
                new, renorm = flow.renormalize(new)
                if not _finite(flow.fields(new)):
                    raise FloatingPointError("non-finite renormalized state")
        except (FloatingPointError, ga.GaugeSolveError, ValueError, np.linalg.LinAlgError):
            if k1 is None or not _finite(k1):
                break
            dt *= 0.5
            continue
        info = dict(info1)
        info.update(renorm)
        return StepResult(new, dt, info, halvings)
    raise NumericalAbort(f"step failed at t = {state.t:.6g} after {ctrl.max_halvings} halvings")


@dataclass
class FlowTrajectory:
    """In-memory trajectory: snapshots every ``report_every`` steps and per-step records."""

    snapshots: list = field(default_factory=list)
    records: list[dict[str, float]] = field(default_factory=list)
    status: str = "running"
    message: str = ""

    @property
    def times(self) -> list[float]:
        return [s.t for s in self.snapshots]

    def series(self, key: str) -> np.ndarray:
        return np.array([r.get(key, np.nan) for r in self.records])


Hook = Callable[[object, dict[str, float]], None]


def run(state, flow: Flow, ctrl: StepControl, hooks: list[Hook] | tuple[Hook, ...] = ()
        ) -> FlowTrajectory:
    """Integrate until a stop condition; the returned trajectory always ends at a snapshot.

    Stop conditions: stationary data (right-hand side below ``stationary_tol``),
    residual below ``residual_tol``, ``t_final`` reached, or ``max_steps``.
    Records hold the stage-one diagnostics of each step, i.e. the state at its
    start time ``t``.  A :class:`NumericalAbort` carries the partial trajectory.
    """
    traj = FlowTrajectory()
    flow.validate(state)

    def snapshot(s, info):
        traj.snapshots.append(s)
        for hook in hooks:
            hook(s, info)

    for k in range(ctrl.max_steps + 1):
        try:
            with np.errstate(all="ignore"):
                k1, info1 = flow.rhs(state)
        except (ValueError, ga.GaugeSolveError) as exc:
            traj.status, traj.message = "aborted", str(exc)
            raise NumericalAbort(str(exc), traj) from exc
        info0 = dict(info1, t=state.t, step=k)
        if not all(np.isfinite(v) for v in info0.values() if isinstance(v, float)):
            traj.records.append(info0)
            snapshot(state, info0)
            traj.status, traj.message = "aborted", f"non-finite diagnostics at t = {state.t:.6g}"
            raise NumericalAbort(traj.message, traj)
        stop = None
        if info0.get("rhs_sup", math.inf) < ctrl.stationary_tol:
            stop = ("stationary", "right-hand side vanishes")
        elif ctrl.residual_tol is not None and flow.residual(info0) < ctrl.residual_tol:
            stop = ("converged", f"residual {flow.residual(info0):.3e} < {ctrl.residual_tol:g}")
        elif state.t >= ctrl.t_final * (1 - 1e-12):
            stop = ("completed", f"reached t = {state.t:.6g}")
        elif k == ctrl.max_steps:
            stop = ("max_steps", f"step budget {ctrl.max_steps} exhausted")
        if stop is not None or k % ctrl.report_every == 0:
            traj.records.append(info0)
            snapshot(state, info0)
        else:
            traj.records.append(info0)
        if stop is not None:
            traj.status, traj.message = stop
            return traj
        dt = ctrl.dt if ctrl.dt is not None else cfl_step(flow, state, ctrl)
        if math.isfinite(ctrl.t_final):
            dt = min(dt, ctrl.t_final - state.t)
        try:
            res = step(state, flow, ctrl, dt, k1, info1)
        except NumericalAbort as exc:
            traj.status, traj.message = "aborted", str(exc)
            exc.trajectory = traj
            raise
        traj.records[-1].update({k2: v for k2, v in res.info.items() if k2 not in info0})
        traj.records[-1]["dt"] = res.dt
        state = res.state
    raise AssertionError("unreachable")


# ---------------------------------------------------------------------------
# Uniformization


@dataclass(frozen=True)
class UniformizationResult:
    u_inf: np.ndarray
    conformal_factor: np.ndarray  # w with g_0 = e^{2w} Gbar, vol(Gbar) = 1
    base: FlatMetric
    steps: int
    converged: bool
    report: dict[str, float]


def uniformize(cm: ConformalMetric, tol: float = 1e-6, ctrl: StepControl | None = None
               ) -> UniformizationResult:
    """Run normalized Ricci flow until ``||R||_inf < tol`` and split off the unit-volume flat metric.

    The flow preserves volume and the limit is ``e^{2 u_inf} G`` with ``u_inf``
    constant, so the unit-volume flat representative is ``G`` itself and
    ``g_0 = e^{2w} G`` with ``w = u_0 - u_inf + log(vol)/2``.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    ctrl = ctrl or StepControl(max_steps=200_000, report_every=1000)
    ctrl = replace(ctrl, residual_tol=tol)
    from .grid import integrate, volume

    vol0 = volume(cm)
    R0 = scalar_curvature(cm)
    traj = run(RicciState(cm.grid, cm.base, cm.u), RicciFlow(), ctrl)
    final = traj.snapshots[-1]
    u_inf = final.u
    w = cm.u - u_inf + 0.5 * math.log(vol0)
    report = {
        "vol": vol0,
        "R2": float(integrate(R0**2, cm)),
        "u_c0": float(np.abs(u_inf).max()),
        "u_inf_oscillation": float(u_inf.max() - u_inf.min()),
        "R_sup_final": traj.records[-1]["R_sup"],
        "vol_final": traj.records[-1]["vol"],
        "t_final": final.t,
    }
    return UniformizationResult(u_inf, w, cm.base, len(traj.records) - 1,
                                traj.status in ("converged", "stationary"), report)


# ---------------------------------------------------------------------------
# Paired split/unsplit consistency


INVARIANTS = ("vol", "R2", "energy")


@dataclass
class PairedResult:
    """Invariant curves of an unsplit run and its split counterpart on a common time grid."""

    kind: str
    signs: str
    times: list[float]
    unsplit: dict[str, list[float]]
    split: dict[str, list[float]]
    max_rel: dict[str, float]
    tol: float
    passed: bool
    t_reached: float
    horizontal_ratio: list[float] = field(default_factory=list)
    bianchi_full: list[float] = field(default_factory=list)
    bianchi_reduced: list[float] = field(default_factory=list)


def paired_consistency(cm: ConformalMetric, datum: np.ndarray, kind: str, t_final: float = 0.1,
                       alpha: float = 1.0, spin: sp.SpinStructure = sp.SpinStructure(),
                       signs: str = DEFAULT_SIGNS, tol: float = 1e-3, cfl: float = 0.5,
                       stop_on_failure: bool = True, bianchi_every: int = 0) -> PairedResult:
    """Run the unsplit flow and the split flow in lockstep and compare ``Vol, int R^2, E``.

    Both use the same fixed step, the smaller of the two CFL steps at ``t = 0``.
    With ``stop_on_failure`` the run ends as soon as a relative difference
    exceeds ``tol``.
    """
    if kind == "hrf":
        uf, sf = HarmonicRicciFlow(alpha), HarmonicRicciSplitFlow(alpha, signs)
    elif kind == "spinor":
        uf, sf = SpinorFlow(spin), SpinorSplitFlow(spin, signs)
    else:
        raise ValueError(f"paired consistency needs kind 'hrf' or 'spinor', got {kind!r}")
    us = UnsplitState.from_conformal(cm, datum)
    ss = SplitState.from_conformal(cm, datum)
    uf.validate(us)
    ctrl = StepControl(cfl=cfl)
    dt = min(cfl_step(uf, us, ctrl), cfl_step(sf, ss, ctrl))
    nsteps = max(1, math.ceil(t_final / dt))
    dt = t_final / nsteps
    res = PairedResult(kind, signs, [], {k: [] for k in INVARIANTS}, {k: [] for k in INVARIANTS},
                       {k: 0.0 for k in INVARIANTS}, tol, True, 0.0)
    for k in range(nsteps + 1):
        ku, iu = uf.rhs(us)
        ks, is_ = sf.rhs(ss)
        res.times.append(us.t)
        for name in INVARIANTS:
            a, b = iu[name], is_[name]
            res.unsplit[name].append(a)
            res.split[name].append(b)
            rel = abs(a - b) / max(abs(a), 1e-300)
            if not math.isfinite(rel):
                rel = math.inf
            res.max_rel[name] = max(res.max_rel[name], rel)
        if is_["horizontal_l2"] > 0:
            res.horizontal_ratio.append(is_["horizontal_c0"] / is_["horizontal_l2"])
        if bianchi_every and kind == "spinor" and k % bianchi_every == 0:
            grad = sp.gradient(ss.datum, ss.cm, spin)
            br = sp.bianchi_residuals(grad, ss.datum, ss.cm, spin)
            res.bianchi_full.append(br["full_form"])
            res.bianchi_reduced.append(br["reduced_form"])
        res.t_reached = us.t
        if any(v > tol for v in res.max_rel.values()):
            res.passed = False
            if stop_on_failure:
                return res
        if k == nsteps:
            break
        us = step(us, uf, ctrl, dt, ku, iu).state
        ss = step(ss, sf, ctrl, dt, ks, is_).state
    return res


def select_sign_set(cm: ConformalMetric, datum: np.ndarray, kind: str, **kwargs
                    ) -> tuple[str | None, dict[str, PairedResult]]:
    """Run the paired experiment for every sign set; return the unique passing one."""
    results = {s: paired_consistency(cm, datum, kind, signs=s, **kwargs) for s in SIGN_SETS}
    passing = [s for s, r in results.items() if r.passed]
    return (passing[0] if len(passing) == 1 else None), results
