"""Experiment stages: generate, sparsify, aggregate, train, evaluate, sweep.

Every stage reads its inputs from, and writes its outputs under, one output
directory, then records a manifest with the config digest and the sha256
of each input and output file. Outputs depend only on the config, so
re-running a stage rewrites identical bytes.
"""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path

import numpy as np

from ..container import write_atomic
from ..ingest import aggregate, parse_pvd, read_initial, sparsify, write_initial, write_pvd
from ..stats import ReportRow, error_distribution, rmse, upsert_report
from ..strec import (
    StRecModel,
    WindowDataset,
    frames_from_initial,
    infer_dataset,
    load_checkpoint,
    save_checkpoint,
    train,
)
from ..worldgen import (
    DiurnalProfile,
    free_flow_speeds,
    gen_ideal_field,
    random_events,
    read_field,
    simulate_probes,
    write_field,
)
from .config import ConfigError, ExperimentConfig

log = logging.getLogger("sparseflow")

REPORT = "report.csv"


class MissingInputError(FileNotFoundError):
    """An upstream artifact is absent; the message names the expected path."""


# ---------------------------------------------------------------- layout

def p_tag(p: float) -> str:
    return f"p{p:g}"


def field_path(out: Path, variant: str, day: int) -> Path:
    return out / variant / "world" / f"day{day:02d}" / "field.bin"


def pvd_path(out: Path, variant: str, day: int) -> Path:
    return out / variant / "world" / f"day{day:02d}" / "pvd.csv"


def sparse_path(out: Path, variant: str, p: float, seed: int, day: int) -> Path:
    return out / variant / "sparse" / p_tag(p) / f"s{seed}" / f"day{day:02d}.csv"


def initial_path(out: Path, variant: str, p: float, seed: int, day: int) -> Path:
    return out / variant / "initial" / p_tag(p) / f"s{seed}" / f"day{day:02d}.bin"


def model_path(out: Path, variant: str, p: float) -> Path:
    return out / variant / "models" / p_tag(p) / "model.ckpt"


def history_path(out: Path, variant: str, p: float) -> Path:
    return out / variant / "models" / p_tag(p) / "history.json"


def hist_path(out: Path, variant: str, p: float, seed: int) -> Path:
    return out / variant / "eval" / p_tag(p) / f"s{seed}" / "error_hist.csv"


def manifest_path(out: Path, stage: str, variant: str) -> Path:
    return out / "manifests" / f"{stage}-{variant}.json"


def run_id(variant: str, p: float, seed: int) -> str:
    return f"{variant}-{p_tag(p)}-s{seed}"


def _require(path: Path) -> Path:
    if not path.exists():
        raise MissingInputError(f"missing input: expected {path}")
    return path


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def write_manifest(out: Path, stage: str, variant: str, cfg: ExperimentConfig, inputs, outputs) -> Path:
    def table(paths):
        return {str(Path(p).relative_to(out)): sha256_file(Path(p)) for p in sorted(set(map(str, paths)))}

    doc = {
        "stage": stage,
        "variant": variant,
        "config_digest": cfg.digest,
        "config": json.loads(cfg.canonical()),
        "inputs": table(inputs),
        "outputs": table(outputs),
    }
    path = manifest_path(out, stage, variant)
    write_atomic(path, (json.dumps(doc, indent=1, sort_keys=True) + "\n").encode())
    return path


def verify_manifest(out: Path, path: Path) -> list[str]:
    """Relative paths whose current digest differs from the manifest (or that vanished)."""
    doc = json.loads(Path(path).read_text())
    bad = []
    for section in ("inputs", "outputs"):
        for rel, digest in doc[section].items():
            f = out / rel
            if not f.exists() or sha256_file(f) != digest:
                bad.append(rel)
    return bad


# ---------------------------------------------------------------- generate

def world_day(cfg: ExperimentConfig, variant: str, day: int, v_free=None):
    """Ideal field and full probe records of one day (deterministic in world.seed and day)."""
    w = cfg.world
    s = w["seed"]
    road_map = cfg.road_map(variant)
    if v_free is None:
        v_free = free_flow_speeds(road_map, [s, 0])
    profile = DiurnalProfile.from_clock(w["start"], w["step_minutes"])
    events = random_events(road_map, cfg.T, w["events_per_day"], [s, 1, day])
    field = gen_ideal_field(road_map, cfg.T, events, w["noise_sigma"], [s, 2, day], profile=profile,
                            v_free=v_free, step_minutes=w["step_minutes"])
    recs = simulate_probes(road_map, field, w["n_vehicles"], w["obs_sigma"], seed=[s, 3, day])
    return field, recs


def cmd_generate(cfg: ExperimentConfig, out) -> None:
    out = Path(out)
    for variant in cfg.variants:
        road_map = cfg.road_map(variant)
        v_free = free_flow_speeds(road_map, [cfg.world["seed"], 0])
        outputs = []
        for day in range(cfg.days):
            field, recs = world_day(cfg, variant, day, v_free)
            write_field(field_path(out, variant, day), field)
            write_pvd(pvd_path(out, variant, day), recs)
            outputs += [field_path(out, variant, day), pvd_path(out, variant, day)]
            log.info("generate %s day %d: %d records", variant, day, len(recs))
        write_manifest(out, "generate", variant, cfg, [], outputs)


# ---------------------------------------------------------------- sparsify / aggregate

def cmd_sparsify(cfg: ExperimentConfig, out) -> None:
    """One uniform per vehicle per (seed, day), shared across p, so samples are nested in p."""
    out = Path(out)
    for variant in cfg.variants:
        inputs, outputs = [], []
        for day in range(cfg.days):
            src = _require(pvd_path(out, variant, day))
            inputs.append(src)
            recs = parse_pvd(src)
            for seed in cfg.seeds:
                for p in cfg.sparsity:
                    dst = sparse_path(out, variant, p, seed, day)
                    write_pvd(dst, sparsify(recs, p, [seed, day]))
                    outputs.append(dst)
            log.info("sparsify %s day %d", variant, day)
        write_manifest(out, "sparsify", variant, cfg, inputs, outputs)


def cmd_aggregate(cfg: ExperimentConfig, out) -> None:
    out = Path(out)
    for variant in cfg.variants:
        road_map = cfg.road_map(variant)
        inputs, outputs = [], []
        for p in cfg.sparsity:
            for seed in cfg.seeds:
                for day in range(cfg.days):
                    src = _require(sparse_path(out, variant, p, seed, day))
                    est = aggregate(parse_pvd(src), road_map, cfg.T, cfg.window,
                                    step_minutes=cfg.world["step_minutes"])
                    dst = initial_path(out, variant, p, seed, day)
                    write_initial(dst, est)
                    inputs.append(src)
                    outputs.append(dst)
            log.info("aggregate %s %s", variant, p_tag(p))
        write_manifest(out, "aggregate", variant, cfg, inputs, outputs)


# ---------------------------------------------------------------- train / evaluate

def _check_days(cfg: ExperimentConfig) -> dict:
    split = cfg.split()
    if not split["test"]:
        raise ConfigError("world.days: training and evaluation need at least 2 days")
    return split


def _load_days(cfg, out, variant, p, days, v_scale):
    road_map = cfg.road_map(variant)
    frames, targets, inputs = [], [], []
    fields = {}
    for day in days:
        fp = _require(field_path(out, variant, day))
        fields[day] = read_field(fp, road_map).values
        inputs.append(fp)
    for seed in cfg.seeds:
        for day in days:
            ip = _require(initial_path(out, variant, p, seed, day))
            frames.append(frames_from_initial(read_initial(ip, road_map), v_scale))
            targets.append(fields[day])
            inputs.append(ip)
    return frames, targets, inputs


def _levels(cfg: ExperimentConfig, ps) -> list[float]:
    if ps is None:
        return cfg.sparsity
    missing = [p for p in ps if p not in cfg.sparsity]
    if missing:
        raise ConfigError(f"sparsity: levels {missing} are not in the config")
    return list(ps)


def train_seed(cfg: ExperimentConfig, p: float) -> list[int]:
    return [cfg.raw["training"]["seed"], int(round(p * 1_000_000))]


def cmd_train(cfg: ExperimentConfig, out, ps=None) -> None:
    """One model per (variant, p), trained on every seed's sample of the training days."""
    out = Path(out)
    split = _check_days(cfg)
    opts = cfg.train_options()
    for variant in cfg.variants:
        mcfg = cfg.model_config(variant)
        inputs, outputs = [], []
        for p in _levels(cfg, ps):
            frames, targets, used = _load_days(cfg, out, variant, p, split["train"], mcfg.v_scale)
            data = WindowDataset(frames, targets, mcfg.L)
            val = None
            if split["val"]:
                vf, vt, vused = _load_days(cfg, out, variant, p, split["val"], mcfg.v_scale)
                val = WindowDataset(vf, vt, mcfg.L)
                n = min(len(val), cfg.raw["training"]["val_windows"])
                val.index = val.index[np.linspace(0, len(val) - 1, n).astype(int)]
                used += vused
            seed = train_seed(cfg, p)
            opts.seed = seed
            model = StRecModel(mcfg, seed=seed)
            hist = train(model, data, opts, val=val,
                         log=lambda msg, v=variant, p=p: log.info("train %s %s %s", v, p_tag(p), msg))
            model.meta = {
                "epochs": opts.epochs, "seed": seed, "p": p, "train_windows": len(data),
                "final_total": hist.total[-1] if hist.total else None,
                "final_recon": hist.recon[-1] if hist.recon else None,
                "final_kl": hist.kl[-1] if hist.kl else None,
                "best_epoch": hist.best_epoch,
            }
            save_checkpoint(model, model_path(out, variant, p))
            write_atomic(history_path(out, variant, p),
                         (json.dumps(hist.as_dict(), indent=1) + "\n").encode())
            inputs += used
            outputs += [model_path(out, variant, p), history_path(out, variant, p)]
            log.info("train %s %s done in %.1f s", variant, p_tag(p), hist.seconds)
        write_manifest(out, "train", variant, cfg, inputs, outputs)


def _hist_rows(summary, with_missing: bool) -> list[str]:
    e = summary.bin_edges
    return [f"{int(with_missing)},{e[i]:.6f},{e[i + 1]:.6f},{int(c)}" for i, c in enumerate(summary.counts)]


def evaluate_run(cfg: ExperimentConfig, out: Path, variant: str, p: float, seed: int, model: StRecModel):
    """Report row for one (variant, p, seed) on the held-out day, scored over steps t >= L-1."""
    road_map = cfg.road_map(variant)
    day = cfg.split()["test"][0]
    fp = _require(field_path(out, variant, day))
    ip = _require(initial_path(out, variant, p, seed, day))
    ideal = read_field(fp, road_map).values.astype(np.float64)
    est = read_initial(ip, road_map)
    L = model.config.L
    data = WindowDataset([frames_from_initial(est, model.config.v_scale)], [ideal], L)
    recovered = infer_dataset(model, data).astype(np.float64)
    steps = slice(L - 1, None)
    with_m = error_distribution(ideal, est, True, steps=steps)
    without = error_distribution(ideal, est, False, steps=steps)
    row = ReportRow(
        run_id=run_id(variant, p, seed), p=p, seed=seed, variant=variant,
        rmse_initial=rmse(ideal[steps], est.values[steps]),
        rmse_recovered=rmse(ideal[steps], recovered),
        coverage=float(np.mean(est.mask[steps])),
        skew_with_missing=with_m.skewness, skew_without_missing=without.skewness,
    )
    lines = ["with_missing,bin_lo,bin_hi,count"] + _hist_rows(with_m, True) + _hist_rows(without, False)
    write_atomic(hist_path(out, variant, p, seed), ("\n".join(lines) + "\n").encode())
    return row, [fp, ip]


def cmd_evaluate(cfg: ExperimentConfig, out, ps=None) -> list[ReportRow]:
    out = Path(out)
    _check_days(cfg)
    rows, io = [], {}
    for variant in cfg.variants:
        inputs, outputs = [], []
        for p in _levels(cfg, ps):
            mp = _require(model_path(out, variant, p))
            model = load_checkpoint(mp, variant=variant)
            inputs.append(mp)
            for seed in cfg.seeds:
                row, used = evaluate_run(cfg, out, variant, p, seed, model)
                rows.append(row)
                inputs += used
                outputs.append(hist_path(out, variant, p, seed))
                log.info("evaluate %s: initial %.3f recovered %.3f", row.run_id, row.rmse_initial, row.rmse_recovered)
        io[variant] = (inputs, outputs)
    upsert_report(out / REPORT, rows)
    for variant, (inputs, outputs) in io.items():
        write_manifest(out, "evaluate", variant, cfg, inputs, outputs + [out / REPORT])
    return rows


STAGES = ("generate", "sparsify", "aggregate", "train", "evaluate")


def cmd_sweep(cfg: ExperimentConfig, out) -> list[ReportRow]:
    cmd_generate(cfg, out)
    cmd_sparsify(cfg, out)
    cmd_aggregate(cfg, out)
    cmd_train(cfg, out)
    return cmd_evaluate(cfg, out)
