import numpy as np
import pytest

from gradcheck import numeric_grad, rel_error
from sparseflow.container import MAGIC
from sparseflow.roadmap import build_graph_map, build_grid_map
from sparseflow.strec import (
    CheckpointError,
    ConfigError,
    ModelConfig,
    StRecModel,
    TrainingError,
    TrainOptions,
    WindowDataset,
    checkpoint_bytes,
    decode,
    default_config,
    encode,
    infer,
    load_checkpoint,
    loss,
    make_frames,
    model_from_bytes,
    save_checkpoint,
    train,
)
from sparseflow.strec.model import LOGVAR_BIAS_INIT

GRID8 = build_grid_map(8, 8, 0.25)
SMALL_GRAPH = build_graph_map(3, 4, 0.4)


def tiny_config(road_map, temporal="gru", **kw):
    base = dict(L=3, C1=2, C2=2, d_s=8, d_h=8, d_z=4)
    base.update(kw)
    return default_config(road_map, temporal, **base)


def random_batch(rng, B, L, R):
    vals = rng.uniform(0, 1, size=(B, L, R)) * (rng.uniform(size=(B, L, R)) < 0.5)
    return np.stack([vals, (vals > 0).astype(float)], axis=2), rng.uniform(10, 110, size=(B, R))


def overfit_pairs(L=12, seed=0):
    """Eight fixed windows of a small synthetic day."""
    rng = np.random.default_rng(seed)
    T, R = 40, GRID8.R
    base = rng.uniform(40, 90, size=R)
    ideal = base * (1 - 0.3 * np.sin(np.linspace(0, 3, T)))[:, None]
    mask = rng.uniform(size=(T, R)) < 0.3
    obs = np.where(mask, ideal + rng.normal(0, 8, size=(T, R)), 0.0)
    ds = WindowDataset([make_frames(obs, mask)], [ideal], L)
    x, y = ds.batch(np.linspace(0, len(ds) - 1, 8).astype(int))
    return WindowDataset.from_pairs(x, y)


# ---------------------------------------------------------------- config


def test_config_validation():
    with pytest.raises(ConfigError, match="L"):
        default_config(GRID8, L=0)
    with pytest.raises(ConfigError, match="beta"):
        default_config(GRID8, beta=-1.0)
    with pytest.raises(ConfigError, match="v_scale"):
        default_config(GRID8, v_scale=0.0)
    with pytest.raises(ConfigError, match="temporal"):
        default_config(GRID8, temporal="lstm")
    with pytest.raises(ConfigError, match="divisible"):
        default_config(build_grid_map(6, 8, 0.25))
    with pytest.raises(ConfigError, match="unknown"):
        ModelConfig.from_dict({**default_config(GRID8).to_dict(), "extra": 1})
    cfg = default_config(SMALL_GRAPH)
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


# ---------------------------------------------------------------- shapes and examples


def test_flattened_length_desk_grid():
    m = StRecModel(default_config(build_grid_map(32, 32, 0.25)), seed=0)
    assert m.store["enc.fc.w"].shape == (32 * 8 * 8, 128)
    assert m.store["dec.fc.w"].shape == (32 + 128, 2048)


@pytest.mark.parametrize("temporal", ["gru", "attention"])
def test_output_shapes(temporal):
    grid = StRecModel(default_config(build_grid_map(32, 32, 0.25), temporal, L=2), seed=0)
    x = np.zeros((2, 2, 1024))
    c, mu, lv = encode(grid, x)
    assert c.shape == (128,) and mu.shape == lv.shape == (32,)
    assert decode(grid, mu, c).shape == (1024,)
    graph_map = build_graph_map(16, 17, 0.4)
    assert graph_map.R == 511
    graph = StRecModel(default_config(graph_map, temporal, L=2), seed=0)
    c, mu, lv = encode(graph, np.zeros((2, 2, 511)))
    assert c.shape == (511, 32) and mu.shape == (511, 8)
    assert decode(graph, mu, c).shape == (511,)
    assert infer(graph, np.zeros((3, 2, 2, 511))).shape == (3, 511)


@pytest.mark.parametrize("road_map", [GRID8, SMALL_GRAPH])
def test_zero_input_zero_heads(road_map):
    model = StRecModel(tiny_config(road_map), seed=3)
    for k in ("head.mu.w", "head.mu.b", "head.logvar.w", "head.logvar.b"):
        model.store.set_value(k, np.zeros_like(model.store[k]))
    _, mu, lv = encode(model, np.zeros((3, 2, road_map.R)))
    assert np.all(mu == 0) and np.all(lv == 0)


@pytest.mark.parametrize("road_map", [GRID8, SMALL_GRAPH])
def test_zero_final_layer_gives_zero_output(road_map):
    model = StRecModel(tiny_config(road_map), seed=3)
    names = ("dec.conv2.w", "dec.conv2.b") if road_map.describe()["kind"] == "grid" else ("dec.fc2.w", "dec.fc2.b")
    for k in names:
        model.store.set_value(k, np.zeros_like(model.store[k]))
    rng = np.random.default_rng(0)
    x, _ = random_batch(rng, 1, 3, road_map.R)
    c, mu, _ = encode(model, x[0])
    assert np.all(decode(model, mu, c) == 0)


def test_decode_deterministic():
    model = StRecModel(tiny_config(GRID8), seed=0)
    rng = np.random.default_rng(1)
    z, c = rng.normal(size=4), rng.normal(size=8)
    assert decode(model, z, c).tobytes() == decode(model, z, c).tobytes()


def test_encode_errors():
    model = StRecModel(tiny_config(GRID8), seed=0)
    with pytest.raises(ValueError, match="sequence length"):
        encode(model, np.zeros((4, 2, 64)))
    with pytest.raises(ValueError, match="frame shape"):
        encode(model, np.zeros((3, 2, 63)))
    with pytest.raises(ValueError, match="decode"):
        decode(model, np.zeros(5), np.zeros(8))


def test_loss_examples():
    y = np.random.default_rng(0).uniform(0, 100, size=(2, 6))
    total, recon, kl = loss(y, y, np.zeros((2, 4)), np.zeros((2, 4)), beta=0.1)
    assert total == recon == kl == 0.0
    total, recon, _ = loss(y + 12, y, np.ones((2, 4)), np.zeros((2, 4)), beta=0.0)
    assert total == recon == pytest.approx(0.01)
    # recon = 0.5 via a uniform offset of sqrt(0.5) * v_scale; kl = 2 via mu^2 / 2 = 2 per unit
    off = np.sqrt(0.5) * 120.0
    total, recon, kl = loss(y + off, y, np.full((2, 4), 2.0), np.zeros((2, 4)), beta=0.1)
    assert recon == pytest.approx(0.5) and kl == pytest.approx(2.0) and total == pytest.approx(0.7)
    with pytest.raises(ValueError):
        loss(y, y[:, :5], np.zeros(4), np.zeros(4), 0.1)


# ---------------------------------------------------------------- gradients


@pytest.mark.parametrize("temporal", ["gru", "attention"])
@pytest.mark.parametrize("kind", ["grid", "graph"])
def test_end_to_end_gradient(kind, temporal):
    road_map = GRID8 if kind == "grid" else SMALL_GRAPH
    model = StRecModel(tiny_config(road_map, temporal, beta=0.5), seed=1).astype(np.float64)
    rng = np.random.default_rng(2)
    for name in model.store:
        if name.endswith(".b"):  # keep ReLU inputs off the kink at exactly 0
            model.store[name][...] += rng.normal(0, 0.1, size=model.store[name].shape)
    x, y = random_batch(rng, 2, 3, road_map.R)
    rows = 2 if kind == "grid" else 2 * road_map.R
    eps = rng.standard_normal((rows, 4))
    model.store.zero_grad()
    model.loss_and_grad(x, y, eps=eps)
    for name, p in model.store.items():
        # h = 1e-4: some entries are ~1e-9, where h = 1e-5 leaves only roundoff
        num = numeric_grad(lambda: model.loss_and_grad(x, y, eps=eps, backward=False)[0], p.value, h=1e-4)
        assert rel_error(p.grad, num) < 1e-3, name


# ---------------------------------------------------------------- training


def test_epochs_zero_leaves_model_unchanged():
    model = StRecModel(tiny_config(GRID8), seed=0)
    before = checkpoint_bytes(model)
    hist = train(model, overfit_pairs(L=3), TrainOptions(epochs=0))
    assert hist.total == [] and checkpoint_bytes(model) == before


def test_empty_dataset_rejected():
    model = StRecModel(tiny_config(GRID8), seed=0)
    empty = WindowDataset([np.zeros((2, 2, 64))], [np.zeros((2, 64))], L=3)
    assert len(empty) == 0
    with pytest.raises(TrainingError, match="empty"):
        train(model, empty, TrainOptions(epochs=1))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_loss_aborts():
    model = StRecModel(tiny_config(GRID8), seed=0)
    pairs = overfit_pairs(L=3)
    pairs.targets[0][-1, 0] = np.inf
    with pytest.raises(TrainingError, match="epoch 0 batch"):
        train(model, pairs, TrainOptions(epochs=1, batch=1))


def test_training_deterministic():
    pairs = overfit_pairs(L=3)
    runs = []
    for _ in range(2):
        model = StRecModel(tiny_config(GRID8), seed=5)
        hist = train(model, pairs, TrainOptions(epochs=5, batch=4, seed=9))
        runs.append((hist.total, checkpoint_bytes(model)))
    assert runs[0] == runs[1]


def test_tiny_overfit():
    pairs = overfit_pairs()
    model = StRecModel(default_config(GRID8), seed=0)
    hist = train(model, pairs, TrainOptions(epochs=500, batch=8, lr=OVERFIT_LR, seed=0))
    assert hist.recon[0] / hist.recon[-1] >= 100
    assert hist.seconds < 60


OVERFIT_LR = 3e-4


def test_early_epochs_strictly_decrease():
    model = StRecModel(default_config(GRID8), seed=0)
    hist = train(model, overfit_pairs(), TrainOptions(epochs=10, batch=8, lr=OVERFIT_LR, seed=0))
    assert np.all(np.diff(hist.total) < 0), hist.total


def test_logvar_head_starts_narrow():
    model = StRecModel(tiny_config(GRID8), seed=0)
    assert np.all(model.store["head.logvar.b"] == LOGVAR_BIAS_INIT)


@pytest.fixture(scope="module")
def trained_gru():
    pairs = overfit_pairs(L=4, seed=3)
    model = StRecModel(default_config(GRID8, L=4, d_h=32, d_z=8, d_s=32), seed=2)
    train(model, pairs, TrainOptions(epochs=30, batch=8, lr=1e-3, seed=1))
    return model, pairs


def test_reversal_changes_condition(trained_gru):
    model, pairs = trained_gru
    x, _ = pairs.batch([0])
    c_fwd, _, _ = encode(model, x[0])
    c_rev, _, _ = encode(model, x[0][::-1])
    assert not np.array_equal(c_fwd, c_rev)


def test_mask_flip_changes_condition(trained_gru):
    model, pairs = trained_gru
    x, _ = pairs.batch([1])
    seq = x[0].copy()
    t, r = np.argwhere(seq[:, 1] == 1)[0]
    c0, _, _ = encode(model, seq)
    seq[t, 1, r] = 0
    c1, _, _ = encode(model, seq)
    assert not np.array_equal(c0, c1)


def test_infer_deterministic_and_clamped(trained_gru):
    model, pairs = trained_gru
    x, _ = pairs.batch(np.arange(8))
    a, b = infer(model, x), infer(model, x)
    assert a.tobytes() == b.tobytes()
    wild = StRecModel(default_config(GRID8, L=4), seed=11)
    wild.store.set_value("dec.conv2.b", np.array([5.0]))  # 600 km/h before clamping
    out = infer(wild, x)
    assert out.min() >= 0 and out.max() <= wild.config.v_max


def test_validation_restores_best_epoch():
    pairs = overfit_pairs(L=3)
    model = StRecModel(tiny_config(GRID8), seed=0)
    hist = train(model, pairs, TrainOptions(epochs=6, batch=8, lr=3e-2, seed=0), val=pairs)
    assert len(hist.val_total) == 6 and hist.best_epoch == int(np.argmin(hist.val_total))


# ---------------------------------------------------------------- checkpoints


@pytest.mark.parametrize("road_map", [GRID8, SMALL_GRAPH])
def test_checkpoint_roundtrip(tmp_path, road_map):
    model = StRecModel(tiny_config(road_map, "attention"), seed=4)
    model.meta = {"epochs": 3, "seed": 4, "final_total": 0.125}
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    blob = path.read_bytes()
    assert blob.startswith(MAGIC)
    back = load_checkpoint(path)
    assert back.config == model.config and back.meta == model.meta
    for k in model.store:
        assert back.store[k].tobytes() == model.store[k].tobytes()
    assert checkpoint_bytes(back) == blob


def test_checkpoint_errors(tmp_path):
    model = StRecModel(tiny_config(GRID8), seed=0)
    blob = bytearray(checkpoint_bytes(model))
    corrupt = bytearray(blob)
    corrupt[-3] ^= 0x10
    with pytest.raises(CheckpointError, match="digest"):
        model_from_bytes(bytes(corrupt))
    with pytest.raises(CheckpointError, match="truncated"):
        model_from_bytes(bytes(blob[:-8]))
    with pytest.raises(ConfigError, match="config error"):
        model_from_bytes(bytes(blob), variant="graph")
    text = bytes(blob).replace(b'"version":1', b'"version":7')
    with pytest.raises(CheckpointError, match="version"):
        model_from_bytes(text)
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.ckpt")
