import json
from pathlib import Path

import pytest

from sparseflow.harness import (
    OUT_ENV,
    ConfigError,
    MissingInputError,
    NoRunsError,
    cmd_aggregate,
    cmd_evaluate,
    cmd_generate,
    cmd_report,
    cmd_sparsify,
    cmd_sweep,
    cmd_train,
    resolve_out,
    validate,
    verify_manifest,
)
from sparseflow.harness.cli import main
from sparseflow.stats import read_report

TINY = {
    "version": 1,
    "world": {"grid": {"H": 8, "W": 8, "cell_size": 0.25}, "graph": {"rows": 3, "cols": 4, "block_km": 0.4},
              "T": 30, "days": 3, "n_vehicles": 200, "events_per_day": 1},
    "sparsity": [0.1, 0.5],
    "seeds": [0, 1],
    "model": {"grid": {"L": 3, "C1": 2, "C2": 2, "d_s": 8, "d_h": 8, "d_z": 2},
              "graph": {"L": 3, "C1": 2, "C2": 2, "d_h": 4, "d_z": 2, "temporal": "attention"}},
    "training": {"epochs": 2, "steps_per_epoch": 3, "batch": 4},
    "output_dir": "unused",
}


def tiny(**over):
    raw = json.loads(json.dumps(TINY))
    raw.update(over)
    return validate(raw)


def tree(out: Path) -> dict:
    return {str(p.relative_to(out)): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}


# ---------------------------------------------------------------- config


def test_defaults_are_the_desk_config():
    cfg = validate({"version": 1})
    assert cfg.variants == ["grid", "graph"]
    assert cfg.sparsity == [0.02, 0.05, 0.10, 0.20] and cfg.seeds == [0, 1, 2, 3, 4]
    assert cfg.T == 360 and cfg.days == 6 and cfg.world["n_vehicles"] == 2000
    assert cfg.road_map("grid").R == 1024 and cfg.road_map("graph").R == 511
    assert cfg.split() == {"train": [0, 1, 2, 3], "val": [4], "test": [5]}
    m = cfg.model_config("grid")
    assert (m.L, m.C1, m.C2, m.d_s, m.d_h, m.d_z, m.beta, m.v_scale) == (12, 16, 32, 128, 128, 32, 1e-3, 120.0)


@pytest.mark.parametrize("raw, field", [
    ({"version": 1, "bogus": 1}, "bogus"),
    ({"version": 1, "world": {"colour": 3}}, "world.colour"),
    ({"version": 1, "sparsity": [0.0]}, "sparsity"),
    ({"version": 1, "sparsity": [1.5]}, "sparsity"),
    ({"version": 1, "seeds": []}, "seeds"),
    ({"version": 1, "world": {"days": 0}}, "world.days"),
    ({"version": 1, "model": {"grid": {"L": 0}}}, "model.grid.L"),
    ({"version": 1, "model": {"graph": {"depth": 3}}}, "model.graph.depth"),
    ({"version": 2}, "version"),
    ({}, "version"),
    ({"version": 1, "training": {"lr": -1}}, "training.lr"),
])
def test_validation_names_field(raw, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        validate(raw)


def test_split_small_day_counts():
    assert tiny(world={**TINY["world"], "days": 2}).split() == {"train": [0], "val": [], "test": [1]}
    with pytest.raises(ConfigError, match="world.days"):
        cmd_train(tiny(world={**TINY["world"], "days": 1}), "/nonexistent")


def test_output_dir_precedence(monkeypatch, tmp_path):
    cfg = tiny()
    monkeypatch.delenv(OUT_ENV, raising=False)
    assert resolve_out(cfg) == Path("unused")
    monkeypatch.setenv(OUT_ENV, str(tmp_path))
    assert resolve_out(cfg) == tmp_path
    assert resolve_out(cfg, "flag") == Path("flag")


# ---------------------------------------------------------------- pipeline


@pytest.fixture(scope="module")
def swept(tmp_path_factory):
    out = tmp_path_factory.mktemp("sweep")
    cmd_sweep(tiny(), out)
    return out


def test_sweep_report_rows(swept):
    rows = read_report(swept / "report.csv")
    assert len(rows) == 2 * 2 * 2  # variants x p x seeds
    assert {r.run_id for r in rows} == {f"{v}-p{p:g}-s{s}" for v in ("grid", "graph") for p in (0.1, 0.5)
                                        for s in (0, 1)}
    assert all(r.rmse_initial > 0 and r.rmse_recovered > 0 for r in rows)


def test_manifests_match_files(swept):
    manifests = sorted((swept / "manifests").glob("*.json"))
    assert len(manifests) == 5 * 2
    for m in manifests:
        doc = json.loads(m.read_text())
        assert doc["config_digest"] == tiny().digest
        assert doc["outputs"]
        assert verify_manifest(swept, m) == []


def test_manifest_detects_tampering(tmp_path):
    cfg = tiny(variants=["grid"])
    cmd_generate(cfg, tmp_path)
    pvd = tmp_path / "grid" / "world" / "day00" / "pvd.csv"
    pvd.write_text(pvd.read_text() + "\n")
    assert verify_manifest(tmp_path, tmp_path / "manifests" / "generate-grid.json") == ["grid/world/day00/pvd.csv"]


def test_sweep_deterministic_and_composable(swept, tmp_path):
    again = tmp_path / "again"
    cmd_sweep(tiny(), again)
    assert (again / "report.csv").read_bytes() == (swept / "report.csv").read_bytes()
    staged = tmp_path / "staged"
    cfg = tiny()
    for stage in (cmd_generate, cmd_sparsify, cmd_aggregate, cmd_train, cmd_evaluate):
        stage(cfg, staged)
    assert tree(staged) == tree(swept)


def test_rerun_is_idempotent(swept):
    before = tree(swept)
    cmd_evaluate(tiny(), swept)
    assert tree(swept) == before


def test_missing_upstream_names_path(tmp_path):
    with pytest.raises(MissingInputError, match="pvd.csv"):
        cmd_sparsify(tiny(), tmp_path)
    with pytest.raises(MissingInputError, match="model.ckpt"):
        cmd_evaluate(tiny(), tmp_path)


def test_report_outputs(swept):
    summary = cmd_report(swept)
    assert set(summary) == {"grid", "graph"} and set(summary["grid"]) == {"0.1", "0.5"}
    assert summary["grid"]["0.1"]["rmse_initial"]["n"] == 2
    for name in ("rmse_vs_p", "rmse_quantiles", "error_histograms"):
        assert (swept / "plots" / f"{name}.csv").exists()
    lines = (swept / "plots" / "rmse_vs_p.csv").read_text().splitlines()
    assert lines[0] == "variant,p,n,rmse_initial_mean,rmse_recovered_mean" and len(lines) == 5
    hist = (swept / "plots" / "error_histograms.csv").read_text().splitlines()
    assert len(hist) == 1 + 8 * 2 * 41


def test_report_empty_dir(tmp_path):
    with pytest.raises(NoRunsError, match="no runs found"):
        cmd_report(tmp_path)


# ---------------------------------------------------------------- CLI


def write_cfg(tmp_path, raw) -> str:
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(raw))
    return str(path)


def test_cli_exit_codes(tmp_path, monkeypatch):
    monkeypatch.delenv(OUT_ENV, raising=False)
    good = write_cfg(tmp_path, TINY)
    out = tmp_path / "out"
    assert main(["generate", "--config", good, "--out", str(out), "--variant", "grid", "-q"]) == 0
    assert (out / "grid" / "world" / "day02" / "field.bin").exists()
    assert not (out / "graph").exists()
    assert main(["train", "--config", good, "--out", str(out), "--variant", "grid", "-q"]) == 2
    bad = write_cfg(tmp_path, {**TINY, "surprise": True})
    assert main(["generate", "--config", bad, "--out", str(out), "-q"]) == 1
    assert main(["generate", "--config", str(tmp_path / "nope.json"), "-q"]) == 2
    assert main(["report", "--out", str(tmp_path / "empty"), "-q"]) == 2
    assert main(["generate", "--out", str(out), "-q"]) == 1


def test_cli_env_override_and_seed_filter(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path, {**TINY, "variants": ["grid"]})
    monkeypatch.setenv(OUT_ENV, str(tmp_path / "env_out"))
    assert main(["generate", "--config", cfg, "-q"]) == 0
    assert main(["sparsify", "--config", cfg, "--seed", "1", "-q"]) == 0
    sparse = tmp_path / "env_out" / "grid" / "sparse" / "p0.1"
    assert sorted(p.name for p in sparse.iterdir()) == ["s1"]
    assert main(["sparsify", "--config", cfg, "--seed", "1", "--variant", "graph", "-q"]) == 1
