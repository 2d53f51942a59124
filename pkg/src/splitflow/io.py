"""Snapshot files and trajectory directories.

Snapshot layout (little endian)::

    magic    8 bytes   b"SPLTFLW1"
    kind     int32     0 ricci, 1 split, 2 unsplit
    datum    int32     0 none, 1 map, 2 spinor
    n        int32
    spin     2 x int32 antiperiodicity bits (spinor data only, else 0)
    ncomp    int32     number of component arrays that follow
    G        4 x float64  flat factor (row-major); identity for unsplit states
    F        4 x float64  constant frame of the flat factor
    t        float64
    arrays   ncomp x (n*n float64, row-major)

Components: ``u`` for ricci and split states, the four frame fields ``E[a, i]``
for unsplit states, then the datum (three map components, or real and
imaginary part of each spinor component).

A trajectory directory holds ``config.txt``, ``snapshots/snap_NNNNNN.bin``,
``timeseries.csv`` and ``verdict.json``.  Every file is written to a temporary
name and renamed into place.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .frames import Frame
from .grid import FlatMetric, TorusGrid

MAGIC = b"SPLTFLW1"
HEADER = struct.Struct("<8s6i4d4dd")
KINDS = {"ricci": 0, "split": 1, "unsplit": 2}
DATUMS = {None: 0, "map": 1, "spinor": 2}


class SnapshotError(ValueError):
    pass


def atomic_write(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-", suffix=path.suffix)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass(frozen=True)
class Snapshot:
    kind: str
    datum_kind: str | None
    n: int
    spin: tuple[int, int]
    G: np.ndarray
    F: np.ndarray
    t: float
    components: np.ndarray  # (ncomp, n, n)


def encode_state(state, spin: tuple[int, int] = (0, 0)) -> bytes:
    from .flows import RicciState, SplitState, UnsplitState

    datum = getattr(state, "datum", None)
    dkind = None if datum is None else ("spinor" if np.iscomplexobj(datum) else "map")
    if isinstance(state, RicciState):
        kind, G, F, comps = "ricci", state.base.G, state.base.frame, [state.u]
    elif isinstance(state, SplitState):
        kind, G, F, comps = "split", state.base.G, state.F, [state.u]
    elif isinstance(state, UnsplitState):
        E = state.frame.E
        kind, G, F = "unsplit", np.eye(2), np.eye(2)
        comps = [E[0, 0], E[0, 1], E[1, 0], E[1, 1]]
    else:
        raise TypeError(f"cannot encode {type(state).__name__}")
    if dkind == "map":
        comps += list(datum)
    elif dkind == "spinor":
        for s in range(2):
            comps += [datum[s].real, datum[s].imag]
    n = state.grid.n
    sp = spin if dkind == "spinor" else (0, 0)
    head = HEADER.pack(MAGIC, KINDS[kind], DATUMS[dkind], n, int(sp[0]), int(sp[1]), len(comps),
                       *np.asarray(G, float).ravel(), *np.asarray(F, float).ravel(), float(state.t))
    body = np.ascontiguousarray(np.stack(comps), dtype="<f8").tobytes()
    return head + body


def decode(data: bytes) -> Snapshot:
    if len(data) < HEADER.size:
        raise SnapshotError("truncated header")
    fields = HEADER.unpack_from(data)
    if fields[0] != MAGIC:
        raise SnapshotError("bad magic string")
    kind_code, dcode, n, sx, sy, ncomp = fields[1:7]
    G = np.array(fields[7:11]).reshape(2, 2)
    F = np.array(fields[11:15]).reshape(2, 2)
    t = fields[15]
    expected = HEADER.size + ncomp * n * n * 8
    if len(data) != expected:
        raise SnapshotError(f"size {len(data)} does not match header ({expected})")
    comps = np.frombuffer(data, dtype="<f8", offset=HEADER.size).reshape(ncomp, n, n).copy()
    kind = {v: k for k, v in KINDS.items()}[kind_code]
    dkind = {v: k for k, v in DATUMS.items()}[dcode]
    return Snapshot(kind, dkind, n, (sx, sy), G, F, t, comps)


def write_snapshot(path: str | Path, state, spin: tuple[int, int] = (0, 0)) -> None:
    atomic_write(path, encode_state(state, spin))


def read_snapshot(path: str | Path) -> Snapshot:
    return decode(Path(path).read_bytes())


def snapshot_state(snap: Snapshot):
    """Rebuild a flow state from a snapshot."""
    from .flows import RicciState, SplitState, UnsplitState

    grid = TorusGrid(snap.n)
    c = snap.components
    if snap.kind == "unsplit":
        base_count = 4
    else:
        base_count = 1
    datum = None
    if snap.datum_kind == "map":
        datum = c[base_count:base_count + 3]
    elif snap.datum_kind == "spinor":
        d = c[base_count:base_count + 4]
        datum = np.stack([d[0] + 1j * d[1], d[2] + 1j * d[3]])
    if snap.kind == "ricci":
        return RicciState(grid, FlatMetric(snap.G), c[0], snap.t)
    if snap.kind == "split":
        return SplitState(grid, snap.F, c[0], datum, snap.t)
    E = np.stack([np.stack([c[0], c[1]]), np.stack([c[2], c[3]])])
    return UnsplitState(Frame(grid, E), datum, snap.t)


# ---------------------------------------------------------------------------
# Trajectory directories


def _fmt(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("nan" if math.isnan(v) else ("inf" if v > 0 else "-inf"))
    return str(v)


class TrajectoryWriter:
    """Writes a trajectory directory incrementally; every write leaves it parseable."""

    def __init__(self, root: str | Path, config_text: str, columns: list[str], echo: str,
                 spin: tuple[int, int] = (0, 0)):
        self.root = Path(root)
        (self.root / "snapshots").mkdir(parents=True, exist_ok=True)
        atomic_write(self.root / "config.txt", config_text.encode())
        self.columns = columns
        self.header = f"# {echo}\n" + ",".join(columns) + "\n"
        self.rows: list[str] = []
        self.spin = spin
        self.count = 0
        atomic_write(self.root / "timeseries.csv", self.header.encode())

    def snapshot(self, state) -> Path:
        path = self.root / "snapshots" / f"snap_{self.count:06d}.bin"
        write_snapshot(path, state, self.spin)
        self.count += 1
        return path

    def report(self, row: list) -> None:
        buf = io.StringIO()
        csv.writer(buf, lineterminator="\n").writerow([_fmt(v) for v in row])
        self.rows.append(buf.getvalue())
        atomic_write(self.root / "timeseries.csv", (self.header + "".join(self.rows)).encode())

    def verdict(self, record: dict) -> None:
        atomic_write(self.root / "verdict.json",
                     (json.dumps(record, indent=2, sort_keys=True, default=_json_default) + "\n").encode())


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(type(o).__name__)


@dataclass
class TrajectoryData:
    config_text: str
    echo: str
    columns: list[str]
    rows: list[dict[str, float]]
    snapshots: list[Path]
    verdict: dict | None


def load_trajectory(root: str | Path) -> TrajectoryData:
    """Parse a trajectory directory; raises ``SnapshotError`` or ``FileNotFoundError``."""
    root = Path(root)
    config_text = (root / "config.txt").read_text()
    lines = (root / "timeseries.csv").read_text().splitlines()
    if not lines or not lines[0].startswith("#"):
        raise SnapshotError("time series lacks the config echo line")
    echo = lines[0][1:].strip()
    reader = csv.reader(lines[1:])
    columns = next(reader)
    rows = [{c: float(v) for c, v in zip(columns, r)} for r in reader]
    snaps = sorted((root / "snapshots").glob("snap_*.bin"))
    times = [read_snapshot(p).t for p in snaps]
    if any(b < a for a, b in zip(times, times[1:])):
        raise SnapshotError("snapshot time stamps are not monotone")
    vpath = root / "verdict.json"
    verdict = json.loads(vpath.read_text()) if vpath.exists() else None
    return TrajectoryData(config_text, echo, columns, rows, snaps, verdict)
