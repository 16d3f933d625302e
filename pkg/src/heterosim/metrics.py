"""Coverage grid, per-step metrics log, and the CSV / JSON writers.

CSV column order is fixed per scenario kind (see ``EXPLORATION_COLUMNS`` and
``FORAGING_COLUMNS``). Floats are written with 9 significant digits so the
files are byte-stable for a given (config, seed).
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SUMMARY_SCHEMA = 1

EXPLORATION_COLUMNS = (
    "t",
    "coverage_fraction",
    "min_sinr_db",
    "mean_sinr_db",
    "sinr_violations",
    "connected",
    "kinetic_energy",
    "modes",
    "events",
    "edges",
    "sinr_db",
)
FORAGING_COLUMNS = ("t", "tags_collected", "tags_remaining", "waypoints", "drone_airborne", "phases", "events")
TAG_EVENT_COLUMNS = ("time_s", "robot_id", "tag_id", "cluster_id")


def fmt(x):
    if isinstance(x, bool):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return format(x, ".9g")
    return str(x)


def points_in_polygon(pts, poly):
    """Vectorised even-odd test for an (M, 2) array of points."""
    x, y = pts[:, 0], pts[:, 1]
    inside = np.zeros(len(pts), dtype=bool)
    n = len(poly)
    for a in range(n):
        x1, y1 = poly[a]
        x2, y2 = poly[(a + 1) % n]
        if y1 == y2:
            continue
        crosses = (y1 > y) != (y2 > y)
        xc = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (xc > x)
    return inside


class CoverageGrid:
    """Cells of side ``resolution``; a cell counts once its centre falls in any sensing support."""

    def __init__(self, bounds, resolution=0.25, obstacles=()):
        (x0, y0), (x1, y1) = bounds
        self.x0, self.y0, self.res = float(x0), float(y0), float(resolution)
        self.nx = int(math.ceil((x1 - x0) / resolution - 1e-9))
        self.ny = int(math.ceil((y1 - y0) / resolution - 1e-9))
        self.xc = self.x0 + (np.arange(self.nx) + 0.5) * self.res
        self.yc = self.y0 + (np.arange(self.ny) + 0.5) * self.res
        free = np.ones((self.ny, self.nx), dtype=bool)
        if len(obstacles):
            gx, gy = np.meshgrid(self.xc, self.yc)
            pts = np.column_stack([gx.ravel(), gy.ravel()])
            for poly in obstacles:
                free &= ~points_in_polygon(pts, np.asarray(poly, dtype=float)).reshape(free.shape)
        self.free = free
        self.n_free = int(free.sum())
        self.covered = np.zeros_like(free)

    def _window(self, cx, cy, r):
        i0 = max(0, int(math.floor((cx - r - self.x0) / self.res)))
        i1 = min(self.nx, int(math.ceil((cx + r - self.x0) / self.res)) + 1)
        j0 = max(0, int(math.floor((cy - r - self.y0) / self.res)))
        j1 = min(self.ny, int(math.ceil((cy + r - self.y0) / self.res)) + 1)
        return i0, i1, j0, j1

    def mark_disc(self, center, radius):
        cx, cy = float(center[0]), float(center[1])
        i0, i1, j0, j1 = self._window(cx, cy, radius)
        if i0 >= i1 or j0 >= j1:
            return
        dx = self.xc[i0:i1][None, :] - cx
        dy = self.yc[j0:j1][:, None] - cy
        self.covered[j0:j1, i0:i1] |= dx * dx + dy * dy <= radius * radius

    def mark_sector(self, position, heading, field):
        """Support of the ground detection field: annulus sector about the heading."""
        cx, cy = float(position[0]), float(position[1])
        r = field.range_max
        i0, i1, j0, j1 = self._window(cx, cy, r)
        if i0 >= i1 or j0 >= j1:
            return
        dx = self.xc[i0:i1][None, :] - cx
        dy = self.yc[j0:j1][:, None] - cy
        d2 = dx * dx + dy * dy
        bearing = np.arctan2(dy, dx) - heading
        bearing = np.arctan2(np.sin(bearing), np.cos(bearing))
        mask = (d2 <= r * r) & (d2 >= field.range_min**2) & (np.abs(bearing) <= field.half_angle)
        self.covered[j0:j1, i0:i1] |= mask

    @property
    def fraction(self):
        if self.n_free == 0:
            return 0.0
        return float(np.count_nonzero(self.covered & self.free)) / self.n_free


def coverage_metric(grid: CoverageGrid, agents, relay_field, ground_field):
    """Mark every agent's support and return the running covered fraction.

    ``agents`` is an iterable of (is_aerial, position, heading).
    """
    for aerial, pos, heading in agents:
        if aerial:
            grid.mark_disc(pos, relay_field.range_max)
        else:
            grid.mark_sector(pos, heading, ground_field)
    return grid.fraction


@dataclass
class MetricsLog:
    kind: str
    columns: tuple
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    tag_events: list = field(default_factory=list)
    config: dict = None

    def append(self, row):
        if len(row) != len(self.columns):
            raise ValueError(f"row has {len(row)} fields, expected {len(self.columns)}")
        if self.rows and not row[0] > self.rows[-1][0]:
            raise ValueError("metrics rows must be strictly increasing in t")
        self.rows.append(tuple(row))

    def column(self, name):
        idx = self.columns.index(name)
        return [r[idx] for r in self.rows]

    def csv_text(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.columns)
        for r in self.rows:
            w.writerow([fmt(v) for v in r])
        return buf.getvalue()

    def tag_csv_text(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(TAG_EVENT_COLUMNS)
        for r in self.tag_events:
            w.writerow([fmt(v) for v in r])
        return buf.getvalue()

    def summary_text(self):
        return json.dumps(_jsonable(self.summary), indent=2, sort_keys=True) + "\n"

    def write(self, out_dir, stem):
        """Write ``<stem>.csv`` and ``<stem>.summary.json`` (plus ``<stem>.tags.csv`` for foraging)."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"log": out / f"{stem}.csv", "summary": out / f"{stem}.summary.json"}
        paths["log"].write_text(self.csv_text())
        paths["summary"].write_text(self.summary_text())
        if self.kind == "foraging":
            paths["tags"] = out / f"{stem}.tags.csv"
            paths["tags"].write_text(self.tag_csv_text())
        return paths


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isinf(v) or math.isnan(v):
            return fmt(v)
        return v
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def read_log(path):
    """Load a step-log CSV as (columns, rows of strings)."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        cols = next(r)
        return cols, list(r)


def summarize_log(path):
    """Recompute headline numbers from a step-log CSV."""
    cols, rows = read_log(path)
    idx = {c: i for i, c in enumerate(cols)}
    out = {"steps": len(rows)}
    if not rows:
        return out
    out["t_final"] = float(rows[-1][idx["t"]])
    if "connected" in idx:
        conn = [r[idx["connected"]] == "1" for r in rows]
        out["connected_fraction"] = sum(conn) / len(conn)
        out["coverage_fraction"] = float(rows[-1][idx["coverage_fraction"]])
        viol = [int(r[idx["sinr_violations"]]) for r in rows]
        out["sinr_ok_fraction"] = sum(v == 0 for v in viol) / len(viol)
        sinr = [float(r[idx["min_sinr_db"]]) for r in rows if r[idx["min_sinr_db"]] not in ("", "nan")]
        out["min_sinr_db"] = min(sinr) if sinr else None
    if "tags_collected" in idx:
        out["tags_collected"] = int(rows[-1][idx["tags_collected"]])
        t = out["t_final"]
        out["tags_per_hour"] = out["tags_collected"] / (t / 3600.0) if t > 0 else 0.0
    events = []
    for r in rows:
        if r[idx["events"]]:
            events += [(float(r[idx["t"]]), e) for e in r[idx["events"]].split(";")]
    out["events"] = len(events)
    return out
