"""Per-p summaries and plot-ready columnar files from a run directory."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..container import write_atomic
from ..stats import read_report
from .pipeline import REPORT, hist_path

QUANTILES = (0.0, 0.25, 0.5, 0.75, 1.0)


class NoRunsError(FileNotFoundError):
    pass


def _stats(x) -> dict:
    x = np.asarray(x, dtype=np.float64)
    q = np.quantile(x, QUANTILES)
    return {"n": int(x.size), "mean": float(x.mean()), "median": float(q[2]),
            "q25": float(q[1]), "q75": float(q[3]), "min": float(q[0]), "max": float(q[4])}


def summarize(rows) -> dict:
    out: dict = {}
    for variant in sorted({r.variant for r in rows}):
        per_p = {}
        for p in sorted({r.p for r in rows if r.variant == variant}):
            sel = [r for r in rows if r.variant == variant and r.p == p]
            ini = [r.rmse_initial for r in sel]
            rec = [r.rmse_recovered for r in sel]
            per_p[f"{p:g}"] = {
                "rmse_initial": _stats(ini),
                "rmse_recovered": _stats(rec),
                "ratio_of_means": float(np.mean(rec) / np.mean(ini)),
                "coverage_mean": float(np.mean([r.coverage for r in sel])),
                "skew_with_missing_mean": float(np.mean([r.skew_with_missing for r in sel])),
                "skew_without_missing_mean": float(np.mean([r.skew_without_missing for r in sel])),
            }
        out[variant] = per_p
    return out


def cmd_report(out) -> dict:
    """Write summary.json and plots/{rmse_vs_p,rmse_quantiles,error_histograms}.csv under ``out``."""
    out = Path(out)
    path = out / REPORT
    rows = read_report(path) if path.exists() else []
    if not rows:
        raise NoRunsError(f"no runs found in {out}")
    summary = summarize(rows)
    write_atomic(out / "summary.json", (json.dumps(summary, indent=1, sort_keys=True) + "\n").encode())

    lines = ["variant,p,n,rmse_initial_mean,rmse_recovered_mean"]
    quant = ["variant,p,estimate,min,q25,median,q75,max"]
    for variant, per_p in summary.items():
        for p, s in per_p.items():
            lines.append(f"{variant},{p},{s['rmse_initial']['n']},{s['rmse_initial']['mean']:.6f},"
                         f"{s['rmse_recovered']['mean']:.6f}")
            for kind in ("initial", "recovered"):
                st = s[f"rmse_{kind}"]
                quant.append(f"{variant},{p},{kind}," + ",".join(
                    f"{st[k]:.6f}" for k in ("min", "q25", "median", "q75", "max")))
    hist = ["run_id,variant,p,seed,with_missing,bin_lo,bin_hi,count"]
    for r in rows:
        hp = hist_path(out, r.variant, r.p, r.seed)
        if hp.exists():
            for line in hp.read_text().splitlines()[1:]:
                hist.append(f"{r.run_id},{r.variant},{r.p:g},{r.seed},{line}")
    plots = out / "plots"
    for name, body in (("rmse_vs_p", lines), ("rmse_quantiles", quant), ("error_histograms", hist)):
        write_atomic(plots / f"{name}.csv", ("\n".join(body) + "\n").encode())
    return summary
