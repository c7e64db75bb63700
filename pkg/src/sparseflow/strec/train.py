"""Mini-batch training and deterministic inference."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from ..nncore import NonFiniteGradient, adam_step
from .data import WindowDataset
from .model import StRecModel


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainOptions:
    epochs: int = 10
    batch: int = 16
    lr: float = 1e-3
    seed: int = 0
    steps_per_epoch: int | None = None  # cap on mini-batches per epoch
    restore_best: bool = True  # with a validation set, keep the best epoch's weights

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs: must be >= 0")
        if self.batch < 1:
            raise ValueError("batch: must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr: must be > 0")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch: must be >= 1")


@dataclass
class TrainingHistory:
    total: list = field(default_factory=list)
    recon: list = field(default_factory=list)
    kl: list = field(default_factory=list)
    val_total: list = field(default_factory=list)
    best_epoch: int | None = None
    seconds: float = 0.0

    def as_dict(self) -> dict:
        return {
            "total": list(self.total), "recon": list(self.recon), "kl": list(self.kl),
            "val_total": list(self.val_total), "best_epoch": self.best_epoch,
        }


def evaluate_loss(model: StRecModel, dataset: WindowDataset, batch: int = 64, seed=0) -> float:
    """Mean total loss over a dataset with seeded latent noise; no parameter updates."""
    rng = np.random.default_rng(seed)
    tot, n = 0.0, 0
    for lo in range(0, len(dataset), batch):
        idx = np.arange(lo, min(lo + batch, len(dataset)))
        x, y = dataset.batch(idx)
        t, _, _ = model.loss_and_grad(x, y, seed=rng, backward=False)
        tot += t * len(idx)
        n += len(idx)
    return tot / n


def train(model: StRecModel, dataset: WindowDataset, opts: TrainOptions, val: WindowDataset | None = None,
          log=None) -> TrainingHistory:
    """Adam on shuffled mini-batches. Deterministic given ``opts.seed``.

    One generator drives both the shuffles and the reparameterization
    noise. With ``val`` the model ends on the weights of the epoch with the
    lowest validation loss (when ``restore_best``).
    """
    if len(dataset) == 0:
        raise TrainingError("empty dataset")
    hist = TrainingHistory()
    rng = np.random.default_rng(opts.seed)
    best, best_vals = np.inf, None
    t0 = time.perf_counter()
    for epoch in range(opts.epochs):
        order = rng.permutation(len(dataset))
        batches = [order[i:i + opts.batch] for i in range(0, len(order), opts.batch)]
        if opts.steps_per_epoch is not None:
            batches = batches[:opts.steps_per_epoch]
        sums = np.zeros(3)
        n = 0
        for b, idx in enumerate(batches):
            x, y = dataset.batch(idx)
            model.store.zero_grad()
            terms = model.loss_and_grad(x, y, seed=rng)
            if not np.all(np.isfinite(terms)):
                raise TrainingError(f"non-finite loss at epoch {epoch} batch {b}")
            try:
                adam_step(model.store, lr=opts.lr)
            except NonFiniteGradient as exc:
                raise TrainingError(f"non-finite gradient for {exc.name!r} at epoch {epoch} batch {b}") from None
            sums += np.array(terms) * len(idx)
            n += len(idx)
        hist.total.append(float(sums[0] / n))
        hist.recon.append(float(sums[1] / n))
        hist.kl.append(float(sums[2] / n))
        if val is not None and len(val):
            v = evaluate_loss(model, val, seed=opts.seed)
            hist.val_total.append(v)
            if v < best:
                best, best_vals, hist.best_epoch = v, model.store.values(), epoch
        if log is not None:
            extra = f" val {hist.val_total[-1]:.5f}" if hist.val_total else ""
            log(f"epoch {epoch + 1}/{opts.epochs} total {hist.total[-1]:.5f} recon {hist.recon[-1]:.5f}{extra}")
    if opts.restore_best and best_vals is not None:
        model.store.load_values(best_vals)
    hist.seconds = time.perf_counter() - t0
    return hist


def infer(model: StRecModel, seq, chunk: int = 64) -> np.ndarray:
    """Recovered km/h frame(s) using z = mu, clamped to [0, v_max].

    ``seq`` is one (L, 2, R) sequence or a (B, L, 2, R) batch.
    """
    cfg = model.config
    seq = np.asarray(seq)
    single = seq.ndim == 3
    x = seq[None] if single else seq
    model.check_sequence(x)
    outs = []
    for lo in range(0, x.shape[0], chunk):
        c, mu, _, _ = model.encode_batch(x[lo:lo + chunk])
        raw, _ = model.decode_batch(mu, c)
        outs.append(raw)
    out = np.concatenate(outs) if outs else np.zeros((0, model.R), dtype=model.dtype)
    out = np.clip(out * cfg.v_scale, 0.0, cfg.v_max)
    return out[0] if single else out


def infer_dataset(model: StRecModel, dataset: WindowDataset, chunk: int = 64) -> np.ndarray:
    """Inference for every window of ``dataset`` in index order, (n, R)."""
    outs = []
    for lo in range(0, len(dataset), chunk):
        x, _ = dataset.batch(np.arange(lo, min(lo + chunk, len(dataset))))
        outs.append(infer(model, x, chunk))
    return np.concatenate(outs) if outs else np.zeros((0, model.R), dtype=model.dtype)
