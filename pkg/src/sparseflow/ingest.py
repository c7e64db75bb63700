"""From raw probe records to per-region initial estimates.

Parsing and writing the PVD CSV, source-side sparsification by vehicle,
road matching, and windowed per-region averaging.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import pandas as pd

from . import container
from .records import COLUMNS, ProbeRecords, PvdRecord
from .roadmap import GraphMap, GridMap, RoadMap

HEADER = ",".join(COLUMNS)
R_MATCH = 0.05
HEADING_GATE = 45.0


class PvdFormatError(ValueError):
    """Bad header or unreadable stream."""


class PvdParseError(ValueError):
    """A data line could not be parsed or violates a record invariant."""

    def __init__(self, line: int, field: str, message: str):
        super().__init__(f"line {line}: field {field}: {message}")
        self.line = line
        self.field = field


# ---------------------------------------------------------------- CSV I/O

def _read_bytes(source) -> bytes:
    if isinstance(source, (bytes, bytearray)):
        return bytes(source)
    if isinstance(source, (str, Path)):
        return Path(source).read_bytes()
    data = source.read()
    return data.encode("utf-8") if isinstance(data, str) else data


def _locate_bad_line(text: str) -> PvdParseError:
    """Slow scan used only after the fast parser has rejected the file."""
    reader = csv.reader(io.StringIO(text))
    next(reader)
    for lineno, row in enumerate(reader, start=2):
        if len(row) != len(COLUMNS):
            return PvdParseError(lineno, "*", f"expected {len(COLUMNS)} fields, found {len(row)}")
        if not row[0]:
            return PvdParseError(lineno, "vehicle_id", "empty")
        try:
            int(row[1])
        except ValueError:
            return PvdParseError(lineno, "t", f"not an integer: {row[1]!r}")
        for name, value in zip(COLUMNS[2:], row[2:]):
            try:
                float(value)
            except ValueError:
                return PvdParseError(lineno, name, f"not a number: {value!r}")
    return PvdParseError(0, "*", "unparseable input")


def parse_pvd(source) -> ProbeRecords:
    """Read the PVD CSV from a path, bytes, or binary/text stream.

    Raises :class:`PvdFormatError` for a wrong header and
    :class:`PvdParseError` (with 1-based line number and field name) for a
    malformed or invalid data line.
    """
    raw = _read_bytes(source)
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise PvdFormatError(f"not UTF-8: {exc}") from None
    first, _, rest = text.partition("\n")
    if first.rstrip("\r") != HEADER:
        raise PvdFormatError(f"unknown header {first.rstrip()!r}; expected {HEADER!r}")
    if not rest.strip():
        return ProbeRecords.empty()
    try:
        df = pd.read_csv(
            io.StringIO(text),
            dtype={"vehicle_id": str, "t": np.int64, "x_km": np.float64, "y_km": np.float64,
                   "heading_deg": np.float64, "speed_kmh": np.float64},
            keep_default_na=False, engine="c", float_precision="round_trip",
        )
    except (ValueError, pd.errors.ParserError):
        raise _locate_bad_line(text) from None
    if list(df.columns) != list(COLUMNS):
        raise PvdFormatError(f"unexpected columns {list(df.columns)}")
    recs = ProbeRecords(
        df["vehicle_id"].to_numpy(dtype=str), df["t"].to_numpy(), df["x_km"].to_numpy(),
        df["y_km"].to_numpy(), df["heading_deg"].to_numpy(), df["speed_kmh"].to_numpy(),
    )
    checks = [
        ("vehicle_id", np.char.str_len(recs.vehicle_id) > 0),
        ("t", recs.t >= 0),
        ("x_km", np.isfinite(recs.x)),
        ("y_km", np.isfinite(recs.y)),
        ("heading_deg", (recs.heading >= 0) & (recs.heading < 360)),
        ("speed_kmh", np.isfinite(recs.speed) & (recs.speed >= 0)),
    ]
    bad = [(int(np.argmin(ok)), name) for name, ok in checks if not np.all(ok)]
    if bad:
        row, name = min(bad)
        raise PvdParseError(row + 2, name, "value violates record invariant")
    return recs


def serialize_pvd(records) -> bytes:
    """CSV bytes; floats use shortest round-trip representation."""
    recs = ProbeRecords.from_records(records)
    if len(recs) == 0:
        return (HEADER + "\n").encode("utf-8")
    df = pd.DataFrame({
        "vehicle_id": recs.vehicle_id, "t": recs.t, "x_km": recs.x, "y_km": recs.y,
        "heading_deg": recs.heading, "speed_kmh": recs.speed,
    })
    return df.to_csv(index=False, lineterminator="\n").encode("utf-8")


def write_pvd(path, records) -> None:
    container.write_atomic(path, serialize_pvd(records))


# ---------------------------------------------------------------- sparsification

def sparsify(records, fraction: float, seed) -> ProbeRecords:
    """Keep every record of each vehicle selected with probability ``fraction``.

    One uniform draw per distinct vehicle id, in sorted-id order, so a
    vehicle kept at some fraction is also kept at every larger one.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    recs = ProbeRecords.from_records(records)
    if len(recs) == 0:
        return recs
    ids, inverse = np.unique(recs.vehicle_id, return_inverse=True)
    u = np.random.default_rng(seed).random(len(ids))
    keep = (u < fraction)[inverse.ravel()]
    return recs[keep]


# ---------------------------------------------------------------- road matching

def _heading_gap(heading, seg_bearing):
    """Angular distance between a heading and an undirected segment, in [0, 90]."""
    d = np.mod(np.asarray(heading) - seg_bearing, 180.0)
    return np.minimum(d, 180.0 - d)


def _point_segment_distance(px, py, ax, ay, bx, by):
    dx, dy = bx - ax, by - ay
    t = ((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy)
    t = np.clip(t, 0.0, 1.0)
    return np.hypot(px - (ax + t * dx), py - (ay + t * dy))


def match_region(record: PvdRecord, road_map: RoadMap, r_match: float = R_MATCH) -> int | None:
    """Region index for one record, or ``None`` when nothing matches.

    Graph maps: the nearest segment within ``r_match`` km whose direction is
    within 45 degrees of the heading (either travel direction); ties go to
    the lowest segment index.
    """
    if isinstance(road_map, GridMap):
        idx = int(road_map.region_of(record.x, record.y))
        return None if idx < 0 else idx
    a, b = road_map.starts, road_map.ends
    dist = _point_segment_distance(record.x, record.y, a[:, 0], a[:, 1], b[:, 0], b[:, 1])
    ok = (dist <= r_match) & (_heading_gap(record.heading, road_map.bearings) < HEADING_GATE)
    if not ok.any():
        return None
    return int(np.argmin(np.where(ok, dist, np.inf)))


@lru_cache(maxsize=16)
def _segment_buckets(road_map: GraphMap, r_match: float):
    """Uniform bucket grid over the map; each bucket lists segments within reach."""
    size = max(road_map.block_km / 2.0, r_match)
    x0 = y0 = -r_match
    nx = int(math.ceil((road_map.width_km + 2 * r_match) / size)) + 1
    ny = int(math.ceil((road_map.height_km + 2 * r_match) / size)) + 1
    lo = np.minimum(road_map.starts, road_map.ends) - r_match
    hi = np.maximum(road_map.starts, road_map.ends) + r_match
    ix0 = np.floor((lo[:, 0] - x0) / size).astype(int)
    ix1 = np.floor((hi[:, 0] - x0) / size).astype(int)
    iy0 = np.floor((lo[:, 1] - y0) / size).astype(int)
    iy1 = np.floor((hi[:, 1] - y0) / size).astype(int)
    lists = [[] for _ in range(nx * ny)]
    for s in range(road_map.R):
        for iy in range(max(iy0[s], 0), min(iy1[s], ny - 1) + 1):
            for ix in range(max(ix0[s], 0), min(ix1[s], nx - 1) + 1):
                lists[iy * nx + ix].append(s)
    width = max(1, max(len(x) for x in lists))
    table = np.full((nx * ny, width), -1, dtype=np.int64)
    for i, x in enumerate(lists):
        table[i, :len(x)] = sorted(x)
    return (x0, y0, size, nx, ny), table


def match_regions(records, road_map: RoadMap, r_match: float = R_MATCH) -> np.ndarray:
    """Vectorised :func:`match_region`; -1 marks no match."""
    recs = ProbeRecords.from_records(records)
    if isinstance(road_map, GridMap):
        return road_map.region_of(recs.x, recs.y)
    if len(recs) == 0:
        return np.empty(0, dtype=np.int64)
    (x0, y0, size, nx, ny), table = _segment_buckets(road_map, float(r_match))
    ix = np.floor((recs.x - x0) / size)
    iy = np.floor((recs.y - y0) / size)
    inside = (ix >= 0) & (ix < nx) & (iy >= 0) & (iy < ny)
    bucket = np.where(inside, iy * nx + ix, 0).astype(np.int64)
    cand = table[bucket]
    valid = (cand >= 0) & inside[:, None]
    c = np.where(valid, cand, 0)
    a, b = road_map.starts[c], road_map.ends[c]
    dist = _point_segment_distance(recs.x[:, None], recs.y[:, None], a[..., 0], a[..., 1], b[..., 0], b[..., 1])
    ok = valid & (dist <= r_match) & (_heading_gap(recs.heading[:, None], road_map.bearings[c]) < HEADING_GATE)
    dist = np.where(ok, dist, np.inf)
    best = np.argmin(dist, axis=1)
    rows = np.arange(len(recs))
    return np.where(ok[rows, best], c[rows, best], -1)


# ---------------------------------------------------------------- aggregation

@dataclass
class InitialEstimate:
    """Windowed per-region mean speeds from (sparse) probe data.

    ``values`` is zero wherever ``mask`` is zero; ``counts`` is the number of
    matched records averaged into each cell.
    """

    map: RoadMap
    values: np.ndarray
    mask: np.ndarray
    counts: np.ndarray
    n_unmatched: int = 0
    step_minutes: float = 1.0

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def R(self) -> int:
        return self.values.shape[1]


def aggregate(records, road_map: RoadMap, T: int, window: int = 1,
              r_match: float = R_MATCH, step_minutes: float = 1.0) -> InitialEstimate:
    """Mean speed per (step, region) over records in the trailing ``window`` steps.

    Records that match no region are skipped and counted in ``n_unmatched``.
    """
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    recs = ProbeRecords.from_records(records)
    if len(recs) and (recs.t.min() < 0 or recs.t.max() >= T):
        raise ValueError(f"record time outside [0, {T})")
    R = road_map.R
    region = match_regions(recs, road_map, r_match)
    hit = region >= 0
    t, r, v = recs.t[hit], region[hit], recs.speed[hit]
    sums = np.zeros(T * R)
    counts = np.zeros(T * R, dtype=np.int64)
    for lag in range(window):
        tt = t + lag
        keep = tt < T
        flat = tt[keep] * R + r[keep]
        sums += np.bincount(flat, weights=v[keep], minlength=T * R)
        counts += np.bincount(flat, minlength=T * R)
    sums = sums.reshape(T, R)
    counts = counts.reshape(T, R)
    mask = counts > 0
    values = np.zeros((T, R))
    np.divide(sums, counts, out=values, where=mask)
    return InitialEstimate(road_map, values, mask.astype(np.uint8), counts,
                           int((~hit).sum()), step_minutes)


def write_initial(path, est: InitialEstimate) -> None:
    header = {"kind": "initial", "T": est.T, "R": est.R, "step_minutes": est.step_minutes,
              "map_digest": est.map.digest}
    payload = container.f32_bytes(est.values, est.mask, est.counts)
    container.write_atomic(path, container.pack(header, payload))


def read_initial(path, road_map: RoadMap) -> InitialEstimate:
    header, payload = container.unpack(Path(path).read_bytes())
    if header.get("kind") != "initial":
        raise container.FormatError(f"{path}: expected kind 'initial', found {header.get('kind')!r}")
    if header.get("map_digest") != road_map.digest:
        raise container.FormatError(f"{path}: estimate was built for a different map")
    values, mask, counts = container.f32_planes(payload, 3, (header["T"], header["R"]))
    return InitialEstimate(road_map, values.astype(np.float64), mask.astype(np.uint8),
                           counts.astype(np.int64), 0, float(header["step_minutes"]))
