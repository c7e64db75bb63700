"""Error metrics for initial and recovered estimates."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .container import write_atomic
from .ingest import match_regions
from .records import ProbeRecords

N_BINS = 41


def _values(x):
    return np.asarray(getattr(x, "values", x), dtype=np.float64)


def rmse(a, b, mask=None) -> float:
    a, b = _values(a), _values(b)
    if a.shape != b.shape:
        raise ValueError(f"rmse: shape mismatch {a.shape} vs {b.shape}")
    d = a - b
    if mask is not None:
        mask = np.asarray(mask).astype(bool)
        if mask.shape != a.shape:
            raise ValueError(f"rmse: mask shape {mask.shape} != {a.shape}")
        d = d[mask]
    if d.size == 0:
        raise ValueError("rmse: no cells selected")
    return float(np.sqrt(np.mean(d * d)))


def skewness(x) -> float:
    """Population (biased) sample skewness; 0 for a constant sample."""
    x = np.asarray(x, dtype=np.float64)
    d = x - x.mean()
    m2 = np.mean(d * d)
    if m2 == 0:
        return 0.0
    return float(np.mean(d ** 3) / m2 ** 1.5)


@dataclass
class ErrorSummary:
    mean: float
    std: float
    skewness: float
    bin_edges: np.ndarray
    counts: np.ndarray
    n: int
    with_missing: bool


def error_distribution(ideal, initial, include_missing: bool, steps=None) -> ErrorSummary:
    """Distribution of ``ideal - initial`` over all cells or observed cells only.

    ``steps`` optionally restricts the time axis (any index/slice). The
    histogram has 41 equal bins spanning mean +/- 5 std; outliers are
    clipped into the end bins so the counts always sum to ``n``.
    """
    iv, ev = _values(ideal), _values(initial)
    if iv.shape != ev.shape:
        raise ValueError(f"error_distribution: shape mismatch {iv.shape} vs {ev.shape}")
    err = iv - ev
    mask = np.asarray(initial.mask).astype(bool)
    if steps is not None:
        err, mask = err[steps], mask[steps]
    e = err.ravel() if include_missing else err[mask]
    if e.size == 0:
        raise ValueError("error_distribution: no cells selected")
    mu, sd = float(e.mean()), float(e.std())
    half = 5.0 * sd if sd > 0 else 1.0
    edges = np.linspace(mu - half, mu + half, N_BINS + 1)
    counts, _ = np.histogram(np.clip(e, edges[0], edges[-1]), bins=edges)
    return ErrorSummary(mu, sd, skewness(e), edges, counts, int(e.size), bool(include_missing))


def clt_check(sigma: float, n_samples: int, trials: int = 10_000, seed=0) -> tuple[float, float]:
    """Monte Carlo spread of the mean of ``n_samples`` N(0, sigma^2) draws vs sigma/sqrt(n)."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    if trials < 100:
        raise ValueError("trials must be >= 100")
    rng = np.random.default_rng(seed)
    means = rng.normal(0.0, sigma, size=(trials, n_samples)).mean(axis=1)
    return sigma / np.sqrt(n_samples), float(means.std())


def subsampled_cell_errors(ideal, records, road_map, n: int, max_cells: int = 1000, seed=0) -> np.ndarray:
    """Per-cell errors of an n-record mean, drawn by subsampling well-observed cells.

    For up to ``max_cells`` (step, region) cells holding at least ``n``
    matched records, average ``n`` of them picked without replacement and
    return ``ideal - mean`` for each cell.
    """
    recs = ProbeRecords.from_records(records)
    iv = _values(ideal)
    R = iv.shape[1]
    reg = match_regions(recs, road_map)
    hit = reg >= 0
    cell = recs.t[hit] * R + reg[hit]
    speed = recs.speed[hit]
    order = np.argsort(cell, kind="stable")
    cell, speed = cell[order], speed[order]
    uniq, start, count = np.unique(cell, return_index=True, return_counts=True)
    eligible = np.flatnonzero(count >= n)
    rng = np.random.default_rng(seed)
    if len(eligible) > max_cells:
        eligible = np.sort(rng.choice(eligible, max_cells, replace=False))
    out = np.empty(len(eligible))
    for k, i in enumerate(eligible):
        pick = rng.choice(count[i], n, replace=False)
        t, r = divmod(int(uniq[i]), R)
        out[k] = iv[t, r] - speed[start[i] + pick].mean()
    return out


def coverage(initial) -> float:
    return float(np.mean(np.asarray(initial.mask, dtype=np.float64)))


# ---------------------------------------------------------------- report rows

@dataclass
class ReportRow:
    run_id: str
    p: float
    seed: int
    variant: str
    rmse_initial: float
    rmse_recovered: float
    coverage: float
    skew_with_missing: float
    skew_without_missing: float


REPORT_COLUMNS = [f.name for f in fields(ReportRow)]


def format_rows(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    for r in rows:
        d = asdict(r)
        w.writerow([
            d["run_id"], f"{d['p']:g}", d["seed"], d["variant"],
            *(f"{d[k]:.6f}" for k in REPORT_COLUMNS[4:]),
        ])
    return buf.getvalue()


def read_report(path) -> list[ReportRow]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != REPORT_COLUMNS:
            raise ValueError(f"{path}: unexpected report columns {reader.fieldnames}")
        return [
            ReportRow(r["run_id"], float(r["p"]), int(r["seed"]), r["variant"],
                      *(float(r[k]) for k in REPORT_COLUMNS[4:]))
            for r in reader
        ]


def upsert_report(path, rows) -> list[ReportRow]:
    """Merge ``rows`` into the report CSV, replacing rows with the same run_id."""
    path = Path(path)
    existing = {r.run_id: r for r in read_report(path)} if path.exists() else {}
    for r in rows:
        existing[r.run_id] = r
    merged = sorted(existing.values(), key=lambda r: (r.variant, r.p, r.seed))
    write_atomic(path, format_rows(merged).encode())
    return merged
