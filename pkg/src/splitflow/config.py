"""Run configuration: flat ``key = value`` text with optional ``[section]`` headers.

Section headers only group keys visually; every key name is global.  Values
are typed scalars; ``G`` takes three (``g11 g12 g22``) or four numbers.
All problems are collected and reported together.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .flows import DEFAULT_SIGNS, SIGN_SETS

FLOW_KINDS = ("ricci", "hrf", "hrf-split", "spinor", "spinor-split", "paired-consistency")
PRESETS = ("sine-bump", "flat", "random")
DATUMS = ("random", "constant", "equator")
OUTPUT_ENV = "SPLITFLOW_OUTPUT"


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


def _opt_float(s: str) -> float | None:
    return None if s.lower() in ("none", "auto", "") else float(s)


def _bool(s: str) -> bool:
    v = s.lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _bit(s: str) -> int:
    v = int(s)
    if v not in (0, 1):
        raise ValueError("must be 0 or 1")
    return v


@dataclass
class RunConfig:
    flow: str = ""
    n: int = 64
    G: np.ndarray = field(default_factory=lambda: np.eye(2))
    preset: str = "random"
    snapshot: str | None = None
    seed: int = 0
    cutoff: int = 2
    amplitude: float = 0.2
    datum: str = "random"
    datum_amplitude: float = 0.3
    alpha: float = 1.0
    eps: float = 0.5
    q: float = 6.0
    spin_x: int = 0
    spin_y: int = 0
    dt: float | None = None
    cfl: float = 0.9
    max_steps: int = 100_000
    t_final: float = math.inf
    residual_tol: float | None = None
    report_every: int = 50
    vol_max: float = 1e3
    curvature_l2_max: float = 1e6
    hrf_integral_max: float = 1e8
    spinor_hess_lq_max: float = 1e12
    spinor_hess_sup_max: float = 1e4
    inj_min: float = 1e-3
    window: float | None = None
    output: str = ""
    signs: str = DEFAULT_SIGNS
    pair: str = "hrf"
    pair_tol: float = 1e-3
    uniformize_tol: float = 1e-6
    warnings: list[str] = field(default_factory=list)
    text: str = ""

    def thresholds(self):
        from .monitors import Thresholds

        return Thresholds(self.vol_max, self.curvature_l2_max, self.hrf_integral_max,
                          self.spinor_hess_lq_max, self.spinor_hess_sup_max, self.inj_min,
                          self.window, self.eps, self.q)

    def step_control(self):
        from .flows import StepControl

        return StepControl(self.dt, self.cfl, self.max_steps, self.t_final, self.residual_tol,
                           self.report_every)

    def output_dir(self) -> Path:
        root = Path(os.environ.get(OUTPUT_ENV, "runs"))
        name = self.output or f"{self.flow}-n{self.n}-seed{self.seed}"
        p = Path(name)
        return p if p.is_absolute() else root / p

    def echo(self) -> str:
        th = self.thresholds()
        return (f"flow={self.flow} n={self.n} eps={self.eps:g} q={self.q:g} "
                f"vol_max={th.vol_max:g} curvature_l2_max={th.curvature_l2_max:g} "
                f"hrf_integral_max={th.hrf_integral_max:g} "
                f"spinor_hess_lq_max={th.spinor_hess_lq_max:g} "
                f"spinor_hess_sup_max={th.spinor_hess_sup_max:g} inj_min={th.inj_min:g} "
                f"window={th.window} signs={self.signs} seed={self.seed}")


_PARSERS = {
    "flow": str, "n": int, "preset": str, "snapshot": str, "seed": int, "cutoff": int,
    "amplitude": float, "datum": str, "datum_amplitude": float, "alpha": float, "eps": float,
    "q": float, "spin_x": _bit, "spin_y": _bit, "dt": _opt_float, "cfl": float,
    "max_steps": int, "t_final": float, "residual_tol": _opt_float, "report_every": int,
    "vol_max": float, "curvature_l2_max": float, "hrf_integral_max": float,
    "spinor_hess_lq_max": float, "spinor_hess_sup_max": float, "inj_min": float,
    "window": _opt_float, "output": str, "signs": str, "pair": str, "pair_tol": float,
    "uniformize_tol": float,
}
assert set(_PARSERS) | {"G", "warnings", "text"} == {f.name for f in fields(RunConfig)}


def _parse_G(s: str) -> np.ndarray:
    vals = [float(v) for v in s.replace(",", " ").split()]
    if len(vals) == 3:
        a, b, c = vals
        return np.array([[a, b], [b, c]])
    if len(vals) == 4:
        return np.array(vals).reshape(2, 2)
    raise ValueError("G needs 3 or 4 numbers")


def parse_config(text: str) -> RunConfig:
    """Parse and validate; raises :class:`ConfigError` listing every problem."""
    cfg = RunConfig(text=text)
    errors: list[str] = []
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line or (line.startswith("[") and line.endswith("]")):
            continue
        if "=" not in line:
            errors.append(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
            continue
        key, value = (p.strip() for p in line.split("=", 1))
        if key in seen:
            errors.append(f"line {lineno}: duplicate key {key!r}")
            continue
        seen.add(key)
        if key == "G":
            try:
                cfg.G = _parse_G(value)
            except ValueError as exc:
                errors.append(f"line {lineno}: G: {exc}")
            continue
        parser = _PARSERS.get(key)
        if parser is None:
            errors.append(f"line {lineno}: unknown key {key!r}")
            continue
        try:
            setattr(cfg, key, parser(value))
        except ValueError as exc:
            errors.append(f"line {lineno}: {key}: cannot parse {value!r} ({exc})")
    if "flow" not in seen:
        errors.append("missing required key 'flow'")
    errors += _validate(cfg)
    if errors:
        raise ConfigError(errors)
    return cfg


def _validate(cfg: RunConfig) -> list[str]:
    errors = []
    if cfg.flow and cfg.flow not in FLOW_KINDS:
        errors.append(f"flow must be one of {', '.join(FLOW_KINDS)}; got {cfg.flow!r}")
    if cfg.n < 8 or cfg.n & (cfg.n - 1):
        errors.append(f"n must be a power of two >= 8; got {cfg.n}")
    if not cfg.q > 4:
        errors.append(f"q = {cfg.q:g} rejected: the integral spinor criterion needs some q > 4")
    if not cfg.eps > 0:
        errors.append(f"eps = {cfg.eps:g} rejected: eps must be positive")
    if not cfg.alpha > 0:
        errors.append("alpha must be positive")
    if not 0 < cfg.cfl <= 1:
        errors.append("cfl must lie in (0, 1]")
    if cfg.dt is not None and cfg.dt <= 0:
        errors.append("dt must be positive")
    if cfg.max_steps < 1 or cfg.report_every < 1:
        errors.append("max_steps and report_every must be positive")
    if cfg.preset not in PRESETS:
        errors.append(f"preset must be one of {', '.join(PRESETS)}; got {cfg.preset!r}")
    if cfg.datum not in DATUMS:
        errors.append(f"datum must be one of {', '.join(DATUMS)}; got {cfg.datum!r}")
    if cfg.signs not in SIGN_SETS:
        errors.append(f"signs must be one of {', '.join(SIGN_SETS)}; got {cfg.signs!r}")
    if cfg.pair not in ("hrf", "spinor"):
        errors.append(f"pair must be 'hrf' or 'spinor'; got {cfg.pair!r}")
    if cfg.cutoff < 1:
        errors.append("cutoff must be at least 1")
    if cfg.uniformize_tol <= 0 or cfg.pair_tol <= 0:
        errors.append("tolerances must be positive")
    if cfg.snapshot is not None and not Path(cfg.snapshot).exists():
        errors.append(f"snapshot {cfg.snapshot!r} does not exist")
    G = np.asarray(cfg.G, dtype=float)
    if not np.allclose(G, G.T):
        errors.append("G must be symmetric")
    elif np.any(np.linalg.eigvalsh(G) <= 0):
        errors.append("G must be positive definite")
    else:
        det = float(np.linalg.det(G))
        if abs(det - 1.0) > 1e-12:
            cfg.G = G / math.sqrt(det)
            cfg.warnings.append(f"det G = {det:g}; renormalized to unit determinant")
    return errors
