"""Command-line runner: ``run``, ``uniformize``, ``check``, ``report`` and ``preset``.

Exit codes: 0 success, 1 numerical abort, 2 configuration or input error,
3 acceptance failure (suite criterion or paired-consistency disagreement).
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import flows as fl
from . import monitors as mo
from .config import OUTPUT_ENV, ConfigError, RunConfig, parse_config
from .io import (SnapshotError, TrajectoryWriter, atomic_write, load_trajectory, read_snapshot,
                 snapshot_state, write_snapshot)
from .presets import CONFIGS, datum_kind, initial_data
from .spinor import SpinStructure

EXIT_OK, EXIT_ABORT, EXIT_CONFIG, EXIT_ACCEPTANCE = 0, 1, 2, 3


def _err(msg: str) -> None:
    print(msg, file=sys.stderr)


def load_config(path: str) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc.strerror}"]) from exc
    cfg = parse_config(text)
    for w in cfg.warnings:
        _err(f"warning: {w}")
    return cfg


def initial_state(cfg: RunConfig):
    """Flow state and spin structure for ``cfg``, from a snapshot or the presets."""
    if cfg.snapshot is None:
        cm, datum, spin = initial_data(cfg)
        if cfg.flow == "ricci":
            return fl.RicciState(cm.grid, cm.base, cm.u), spin
        if cfg.flow.endswith("-split"):
            return fl.SplitState.from_conformal(cm, datum), spin
        return fl.UnsplitState.from_conformal(cm, datum), spin
    try:
        snap = read_snapshot(cfg.snapshot)
    except SnapshotError as exc:
        raise ConfigError([f"snapshot {cfg.snapshot}: {exc}"]) from exc
    state = snapshot_state(snap)
    spin = SpinStructure(*snap.spin) if snap.datum_kind == "spinor" else SpinStructure(cfg.spin_x, cfg.spin_y)
    want = datum_kind(cfg.flow)
    if snap.datum_kind != want:
        raise ConfigError([f"snapshot carries datum {snap.datum_kind!r}, flow {cfg.flow} needs {want!r}"])
    if snap.kind == "unsplit" and cfg.flow not in ("hrf", "spinor"):
        raise ConfigError([f"an unsplit snapshot cannot start a {cfg.flow} run"])
    if cfg.flow == "ricci":
        cm = state.cm
        return fl.RicciState(cm.grid, cm.base, cm.u, state.t), spin
    if cfg.flow.endswith("-split") or snap.kind == "unsplit":
        return state, spin
    return fl.UnsplitState.from_conformal(state.cm, state.datum, state.t), spin


def _verdict_line(status: str, message: str, verdicts: dict) -> str:
    parts = [f"{status}, {message}"]
    for name, v in verdicts.items():
        parts.append(f"{name}: {'holds' if v.holds else v.message}")
    return "verdict: " + " | ".join(parts)


def execute(cfg: RunConfig, out: Path | None = None) -> int:
    """Run the configured flow or paired experiment; returns the exit status."""
    out = out or cfg.output_dir()
    if cfg.flow == "paired-consistency":
        return _execute_paired(cfg, out)
    state, spin = initial_state(cfg)
    ctrl = cfg.step_control()
    if cfg.flow == "ricci" and ctrl.residual_tol is None:
        ctrl = replace(ctrl, residual_tol=cfg.uniformize_tol)
    flow = fl.make_flow(cfg.flow, cfg.alpha, spin, cfg.signs)
    th = cfg.thresholds()
    writer = TrajectoryWriter(out, cfg.text, mo.MonitorReport.columns(), cfg.echo(),
                              (spin.x, spin.y))
    reports: list[mo.MonitorReport] = []
    reference = getattr(state, "base", None)

    def hook(s, info):
        rep = mo.blowup_report(s, cfg.flow, th, spin, info, reference)
        reports.append(rep)
        writer.snapshot(s)
        writer.report(rep.row())

    try:
        traj = fl.run(state, flow, ctrl, [hook])
    except fl.NumericalAbort as exc:
        t = exc.trajectory.snapshots[-1].t if exc.trajectory and exc.trajectory.snapshots else state.t
        verdicts = mo.verdict(reports, th, cfg.flow) if reports else {}
        record = {"status": "aborted", "message": str(exc), "t": t,
                  "criteria": mo.verdict_record(verdicts)}
        writer.verdict(record)
        print(_verdict_line("aborted", str(exc), verdicts))
        return EXIT_ABORT
    verdicts = mo.verdict(reports, th, cfg.flow)
    message = traj.message
    if traj.status == "converged" and cfg.flow == "ricci":
        message = f"||R||_inf = {traj.records[-1]['R_sup']:.3e} < {ctrl.residual_tol:g}"
    record = {"status": traj.status, "message": message, "t": traj.snapshots[-1].t,
              "steps": len(traj.records) - 1, "criteria": mo.verdict_record(verdicts)}
    writer.verdict(record)
    print(_verdict_line(traj.status, message, verdicts))
    return EXIT_OK


def _execute_paired(cfg: RunConfig, out: Path) -> int:
    cm, datum, spin = initial_data(cfg)
    t_final = cfg.t_final if math.isfinite(cfg.t_final) else 0.1
    res = fl.paired_consistency(cm, datum, cfg.pair, t_final=t_final, alpha=cfg.alpha, spin=spin,
                                signs=cfg.signs, tol=cfg.pair_tol, cfl=cfg.cfl)
    cols = ["t"] + [f"{k}_{side}" for k in fl.INVARIANTS for side in ("unsplit", "split")]
    writer = TrajectoryWriter(out, cfg.text, cols, cfg.echo())
    for i, t in enumerate(res.times):
        writer.report([t] + [getattr(res, side)[k][i] for k in fl.INVARIANTS
                             for side in ("unsplit", "split")])
    ratio = np.asarray(res.horizontal_ratio)
    record = {"status": "agree" if res.passed else "disagree", "pair": cfg.pair,
              "signs": cfg.signs, "tol": cfg.pair_tol, "t_reached": res.t_reached,
              "max_rel": res.max_rel,
              "horizontal_ratio_dev": float(np.abs(ratio - 1).max()) if ratio.size else None}
    writer.verdict(record)
    worst = max(res.max_rel.values())
    print(f"verdict: {record['status']}, {cfg.pair} signs={cfg.signs} max relative difference "
          f"{worst:.3e} (tol {cfg.pair_tol:g}) up to t = {res.t_reached:.4g}")
    return EXIT_OK if res.passed else EXIT_ACCEPTANCE


def uniformize(cfg: RunConfig, out: Path | None = None) -> int:
    out = out or cfg.output_dir()
    cm, _, _ = initial_data(cfg)
    if cfg.snapshot is not None:
        cm = snapshot_state(read_snapshot(cfg.snapshot)).cm
    ctrl = fl.StepControl(cfg.dt, cfg.cfl, cfg.max_steps, report_every=cfg.report_every)
    res = fl.uniformize(cm, cfg.uniformize_tol, ctrl)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write(out / "config.txt", cfg.text.encode())
    write_snapshot(out / "conformal_factor.bin", fl.RicciState(cm.grid, res.base, res.conformal_factor))
    record = {"converged": res.converged, "steps": res.steps, "G": res.base.G.tolist(), **res.report}
    atomic_write(out / "uniformization.json", (json.dumps(record, indent=2, sort_keys=True) + "\n").encode())
    print(f"uniformize: {'converged' if res.converged else 'not converged'} after {res.steps} steps, "
          f"||R||_inf = {res.report['R_sup_final']:.3e}, conformal factor in {out / 'conformal_factor.bin'}")
    return EXIT_OK if res.converged else EXIT_ABORT


def check(mutate: str | None, only: set[int] | None, report: Path | None) -> int:
    from .acceptance import run_suite

    lines: list[str] = []

    def echo(line: str) -> None:
        lines.append(line)
        print(line, flush=True)

    results = run_suite(mutate, echo, only)
    for r in results:
        _err(f"criterion {r.number}: {r.seconds:.1f}s")
    failed = [r.number for r in results if not r.passed]
    summary = (f"acceptance: {len(results) - len(failed)}/{len(results)} passed"
               + (f"; failed: {', '.join(map(str, failed))}" if failed else ""))
    echo(summary)
    if report is not None:
        atomic_write(report, ("\n".join(lines) + "\n").encode())
    return EXIT_ACCEPTANCE if failed else EXIT_OK


def report(root: str) -> int:
    try:
        data = load_trajectory(root)
    except (OSError, SnapshotError, ValueError) as exc:
        _err(f"error: cannot read trajectory {root}: {exc}")
        return EXIT_CONFIG
    print(f"trajectory {root}")
    print(f"  config: {data.echo}")
    print(f"  {len(data.rows)} rows, {len(data.snapshots)} snapshots")
    if data.rows:
        t = [r.get("t", math.nan) for r in data.rows]
        print(f"  time range [{t[0]:.6g}, {t[-1]:.6g}]")
        last = data.rows[-1]
        for c in data.columns:
            if c != "t":
                print(f"  final {c} = {last[c]:.6g}")
    v = data.verdict
    if v is None:
        print("  no verdict record (run incomplete)")
    else:
        print(f"  status: {v.get('status')} {v.get('message', '')}".rstrip())
        for name, c in (v.get("criteria") or {}).items():
            print(f"  {name}: {'holds' if c['holds'] else c['message']}")
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="splitflow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a flow or the paired consistency experiment")
    r.add_argument("config")
    r.add_argument("-o", "--output", help=f"trajectory directory (default: under ${OUTPUT_ENV})")
    u = sub.add_parser("uniformize", help="split a metric into conformal factor and flat metric")
    u.add_argument("config")
    u.add_argument("-o", "--output")
    c = sub.add_parser("check", help="run the acceptance suite")
    c.add_argument("--mutate", choices=["trace-sign"], help="mutation sanity mode")
    c.add_argument("--only", help="comma-separated criterion numbers")
    c.add_argument("--report", help="also write the report lines to this file")
    rp = sub.add_parser("report", help="summarize a trajectory directory")
    rp.add_argument("trajectory")
    ps = sub.add_parser("preset", help="print a shipped configuration")
    ps.add_argument("name", nargs="?", choices=sorted(CONFIGS))
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            return execute(cfg, Path(args.output) if args.output else None)
        if args.command == "uniformize":
            cfg = load_config(args.config)
            return uniformize(cfg, Path(args.output) if args.output else None)
        if args.command == "check":
            try:
                only = {int(x) for x in args.only.split(",")} if args.only else None
            except ValueError:
                raise ConfigError([f"--only expects comma-separated integers, got {args.only!r}"])
            return check(args.mutate, only, Path(args.report) if args.report else None)
        if args.command == "report":
            return report(args.trajectory)
        if args.name is None:
            print("\n".join(sorted(CONFIGS)))
        else:
            print(CONFIGS[args.name], end="")
        return EXIT_OK
    except ConfigError as exc:
        for e in exc.errors:
            _err(f"config error: {e}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
