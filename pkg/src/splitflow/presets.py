"""Named, seed-pinned initial data and the shipped run configurations.

:func:`initial_data` is the single place where a :class:`RunConfig` becomes a
metric and a datum; the acceptance suite builds its paired-run data through
the same path from :data:`CONFIGS`.
"""
from __future__ import annotations

import numpy as np

from . import maps as mp
from . import spinor as sp
from .config import ConfigError, RunConfig
from .grid import ConformalMetric, FlatMetric, TorusGrid, band_limited

CONFIGS = {
    "ricci-sine-bump": """\
# normalized Ricci flow from the sine-bump conformal factor
flow = ricci
n = 64
preset = sine-bump
residual_tol = 1e-6
max_steps = 20000
report_every = 500
""",
    "paired-hrf": """\
# split vs unsplit harmonic Ricci flow, alpha = 1
flow = paired-consistency
pair = hrf
n = 32
G = 1.3 0.4 0.9
preset = random
seed = 7000
amplitude = 0.2
cutoff = 2
datum = random
datum_amplitude = 0.3
alpha = 1
cfl = 0.9
t_final = 0.1
pair_tol = 1e-3
""",
    "paired-spinor": """\
# split vs unsplit spinor flow, antiperiodic in x
flow = paired-consistency
pair = spinor
n = 32
G = 1.3 0.4 0.9
preset = random
seed = 7000
amplitude = 0.2
cutoff = 2
datum = random
datum_amplitude = 0.3
spin_x = 1
spin_y = 0
cfl = 0.9
t_final = 0.1
pair_tol = 1e-3
""",
    "spinor-split": """\
# split spinor flow with blow-up monitors
flow = spinor-split
n = 32
G = 1.3 0.4 0.9
preset = random
seed = 1
datum = random
spin_x = 1
cfl = 0.9
t_final = 0.02
report_every = 20
""",
}


def sine_bump(grid: TorusGrid) -> np.ndarray:
    x, y = grid.coords
    return 0.3 * np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)


def datum_kind(flow: str, pair: str = "hrf") -> str | None:
    base = pair if flow == "paired-consistency" else flow.split("-")[0]
    return {"ricci": None, "hrf": "map", "spinor": "spinor"}[base]


def initial_data(cfg: RunConfig) -> tuple[ConformalMetric, np.ndarray | None, sp.SpinStructure]:
    """Metric, datum and spin structure described by ``cfg`` (snapshots excluded).

    Draw order from ``default_rng(seed)``: the conformal factor first (preset
    ``random`` only), then the datum (datum ``random`` only).
    """
    grid = TorusGrid(cfg.n)
    rng = np.random.default_rng(cfg.seed)
    G = FlatMetric.normalized(cfg.G)
    if cfg.preset == "sine-bump":
        u = sine_bump(grid)
    elif cfg.preset == "flat":
        u = np.zeros(grid.shape)
    else:
        u = band_limited(grid, rng, cfg.amplitude, cfg.cutoff)
    cm = ConformalMetric(grid, G, u)
    spin = sp.SpinStructure(cfg.spin_x, cfg.spin_y)
    kind = datum_kind(cfg.flow, cfg.pair)
    datum = None
    if kind == "map":
        if cfg.datum == "random":
            datum = mp.random_map(grid, rng, cfg.datum_amplitude, cfg.cutoff)
        elif cfg.datum == "equator":
            datum = mp.equator_map(grid)
        else:
            datum = np.stack([np.zeros(grid.shape), np.zeros(grid.shape), np.ones(grid.shape)])
    elif kind == "spinor":
        if cfg.datum == "random":
            datum = sp.random_unit_spinor(grid, rng, spin, cfg.datum_amplitude, cfg.cutoff)
        elif cfg.datum == "constant":
            if spin.x or spin.y:
                raise ConfigError(["datum = constant needs the periodic spin structure"])
            datum = np.stack([np.ones(grid.shape, complex), np.zeros(grid.shape, complex)])
        else:
            raise ConfigError(["datum = equator is a map datum; spinor flows take random or constant"])
    return cm, datum, spin
