"""Spatial-temporal conditional encoder with a VAE decoder.

Frames are ``(2, R)`` arrays: channel 0 is the initial estimate divided by
``v_scale``, channel 1 the observation mask. A sequence stacks ``L`` such
frames in chronological order. The grid variant reshapes each channel to
``H x W`` and runs a small CNN; the graph variant runs two graph
convolutions over the segment adjacency and keeps one embedding per node.
Either way a temporal module (GRU or single-head self-attention) condenses
the sequence into the condition ``c``, from which two affine heads give
``mu`` and ``logvar``. The decoder maps ``[z || c]`` back to a speed frame.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from ..nncore import (
    ParamStore,
    affine_backward,
    affine_forward,
    avgpool2_backward,
    avgpool2_forward,
    conv2d_backward,
    conv2d_forward,
    gaussian_kl,
    gcn_backward,
    gcn_forward,
    glorot_uniform,
    gru_backward,
    gru_forward,
    mse_loss,
    normalized_adjacency,
    relu_backward,
    relu_forward,
    reparameterize,
    reparameterize_backward,
    self_attention_backward,
    self_attention_forward,
    upsample2_backward,
    upsample2_forward,
)
from ..roadmap import map_from_description

VARIANTS = ("grid", "graph")
TEMPORALS = ("gru", "attention")


class ConfigError(ValueError):
    """Invalid or incompatible model configuration."""


@dataclass(frozen=True)
class ModelConfig:
    variant: str
    map: dict
    temporal: str = "gru"
    L: int = 12
    C1: int = 16
    C2: int = 32
    d_s: int = 128
    d_h: int = 128
    d_z: int = 32
    beta: float = 1e-3
    v_scale: float = 120.0
    v_max: float = 120.0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant: expected one of {VARIANTS}, got {self.variant!r}")
        if self.temporal not in TEMPORALS:
            raise ConfigError(f"temporal: expected one of {TEMPORALS}, got {self.temporal!r}")
        if not isinstance(self.map, dict) or self.map.get("kind") != self.variant:
            raise ConfigError(f"map: kind must match variant {self.variant!r}")
        for name in ("L", "C1", "C2", "d_s", "d_h", "d_z"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name}: must be an integer >= 1, got {v!r}")
        if not self.beta >= 0:
            raise ConfigError(f"beta: must be >= 0, got {self.beta!r}")
        if not self.v_scale > 0:
            raise ConfigError(f"v_scale: must be > 0, got {self.v_scale!r}")
        if not self.v_max > 0:
            raise ConfigError(f"v_max: must be > 0, got {self.v_max!r}")
        if self.variant == "grid" and (self.map["H"] % 4 or self.map["W"] % 4):
            raise ConfigError("map: grid H and W must be divisible by 4 (two pooling stages)")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown model config keys: {sorted(extra)}")
        if "variant" not in d or "map" not in d:
            raise ConfigError("model config needs 'variant' and 'map'")
        return cls(**d)


# Initial posterior std exp(-3): early training is not swamped by latent noise.
LOGVAR_BIAS_INIT = -6.0

# Graph defaults are narrower: the temporal module runs once per segment.
GRAPH_DEFAULTS = {"d_h": 32, "d_z": 8}


def default_config(road_map, temporal: str = "gru", **overrides) -> ModelConfig:
    desc = road_map.describe()
    base = dict(GRAPH_DEFAULTS) if desc["kind"] == "graph" else {}
    base.update(overrides)
    return ModelConfig(variant=desc["kind"], map=desc, temporal=temporal, **base)


class StRecModel:
    """Parameters plus fixed structure (map shape, normalized adjacency)."""

    def __init__(self, config: ModelConfig, seed=0, dtype=np.float32):
        self.config = config
        self.road_map = map_from_description(config.map)
        self.R = self.road_map.R
        self.store = ParamStore(dtype)
        self.meta: dict = {}
        if config.variant == "graph":
            self.a_hat = normalized_adjacency(self.road_map.adjacency(), sparse=True)
        else:
            self.H, self.W = config.map["H"], config.map["W"]
        self._init_params(np.random.default_rng(seed))

    @property
    def dtype(self):
        return self.store.dtype

    @property
    def d_in(self) -> int:
        """Width of the per-step embedding fed to the temporal module."""
        return self.config.d_s if self.config.variant == "grid" else self.config.C2

    def astype(self, dtype) -> "StRecModel":
        out = object.__new__(StRecModel)
        out.__dict__.update(self.__dict__)
        out.store = self.store.astype(dtype)
        out.meta = dict(self.meta)
        return out

    def _init_params(self, rng):
        cfg, s = self.config, self.store
        C1, C2, d_h, d_z, d_in = cfg.C1, cfg.C2, cfg.d_h, cfg.d_z, self.d_in

        def dense(name, n_in, n_out):
            s.add(name + ".w", glorot_uniform(rng, (n_in, n_out), n_in, n_out))
            s.add(name + ".b", np.zeros(n_out))

        def conv(name, c_in, c_out):
            s.add(name + ".w", glorot_uniform(rng, (c_out, c_in, 3, 3), 9 * c_in, 9 * c_out))
            s.add(name + ".b", np.zeros(c_out))

        if cfg.variant == "grid":
            flat = C2 * (self.H // 4) * (self.W // 4)
            conv("enc.conv1", 2, C1)
            conv("enc.conv2", C1, C2)
            dense("enc.fc", flat, cfg.d_s)
        else:
            s.add("enc.gcn1.w", glorot_uniform(rng, (2, C1), 2, C1))
            s.add("enc.gcn2.w", glorot_uniform(rng, (C1, C2), C1, C2))
        if cfg.temporal == "gru":
            s.add("tmp.wx", glorot_uniform(rng, (d_in, 3 * d_h), d_in, 3 * d_h))
            s.add("tmp.uh", glorot_uniform(rng, (d_h, 3 * d_h), d_h, 3 * d_h))
            s.add("tmp.b", np.zeros(3 * d_h))
        else:
            s.add("tmp.pos", rng.normal(0.0, 0.1, size=(cfg.L, d_in)))
            for k in ("wq", "wk", "wv"):
                s.add("tmp." + k, glorot_uniform(rng, (d_in, d_in), d_in, d_in))
            dense("tmp.proj", d_in, d_h)
        dense("head.mu", d_h, d_z)
        dense("head.logvar", d_h, d_z)
        s.set_value("head.logvar.b", np.full(d_z, LOGVAR_BIAS_INIT))
        if cfg.variant == "grid":
            dense("dec.fc", d_z + d_h, C2 * (self.H // 4) * (self.W // 4))
            conv("dec.conv1", C2, C1)
            conv("dec.conv2", C1, 1)
        else:
            dense("dec.fc1", d_z + d_h, d_h)
            dense("dec.fc2", d_h, 1)

    # ------------------------------------------------------------ encoder

    def check_sequence(self, x) -> np.ndarray:
        """Validate a (B, L, 2, R) batch and cast it to the parameter dtype."""
        x = np.asarray(x)
        L = self.config.L
        if x.ndim != 4:
            raise ValueError(f"expected a (B, L, 2, R) batch, got shape {x.shape}")
        if x.shape[1] != L:
            raise ValueError(f"sequence length {x.shape[1]} != L = {L}")
        if x.shape[2:] != (2, self.R):
            raise ValueError(f"frame shape {x.shape[2:]} != (2, {self.R})")
        return x.astype(self.dtype, copy=False)

    def encode_batch(self, x):
        """x: (B, L, 2, R). Returns c, mu, logvar with one row per sample (grid) or per node (graph)."""
        cfg, P = self.config, self.store
        x = self.check_sequence(x)
        B, L = x.shape[:2]
        cache = {"B": B}
        if cfg.variant == "grid":
            f = x.reshape(B * L, 2, self.H, self.W)
            h, cache["conv1"] = conv2d_forward(f, P["enc.conv1.w"], P["enc.conv1.b"])
            h, cache["relu1"] = relu_forward(h)
            h, cache["pool1"] = avgpool2_forward(h)
            h, cache["conv2"] = conv2d_forward(h, P["enc.conv2.w"], P["enc.conv2.b"])
            h, cache["relu2"] = relu_forward(h)
            h, cache["pool2"] = avgpool2_forward(h)
            cache["flat_shape"] = h.shape
            e, cache["fc"] = affine_forward(h.reshape(B * L, -1), P["enc.fc.w"], P["enc.fc.b"])
            seq = e.reshape(B, L, cfg.d_s)
        else:
            N = self.R
            f = x.transpose(0, 1, 3, 2).reshape(B * L, N, 2)
            h, cache["gcn1"] = gcn_forward(f, self.a_hat, P["enc.gcn1.w"], relu=True)
            h, cache["gcn2"] = gcn_forward(h, self.a_hat, P["enc.gcn2.w"], relu=False)
            seq = h.reshape(B, L, N, cfg.C2).transpose(0, 2, 1, 3).reshape(B * N, L, cfg.C2)
        if cfg.temporal == "gru":
            h0 = np.zeros((seq.shape[0], cfg.d_h), dtype=self.dtype)
            hs, cache["gru"] = gru_forward(seq, h0, P["tmp.wx"], P["tmp.uh"], P["tmp.b"])
            c = hs[:, -1]
        else:
            a, cache["attn"] = self_attention_forward(seq + P["tmp.pos"], P["tmp.wq"], P["tmp.wk"], P["tmp.wv"])
            c, cache["proj"] = affine_forward(a.mean(axis=1), P["tmp.proj.w"], P["tmp.proj.b"])
        c = np.ascontiguousarray(c)
        mu, cache["mu"] = affine_forward(c, P["head.mu.w"], P["head.mu.b"])
        logvar, cache["logvar"] = affine_forward(c, P["head.logvar.w"], P["head.logvar.b"])
        return c, mu, logvar, cache

    def encode_backward(self, dc, dmu, dlogvar, cache) -> None:
        cfg, s = self.config, self.store
        dc = dc.copy()
        for head, d in (("mu", dmu), ("logvar", dlogvar)):
            dci, dw, db = affine_backward(d, cache[head])
            dc += dci
            s.accumulate(f"head.{head}.w", dw)
            s.accumulate(f"head.{head}.b", db)
        L = cfg.L
        if cfg.temporal == "gru":
            n = dc.shape[0]
            dhs = np.zeros((n, L, cfg.d_h), dtype=dc.dtype)
            dhs[:, -1] = dc
            dseq, _, dwx, duh, db = gru_backward(dhs, cache["gru"])
            s.accumulate("tmp.wx", dwx)
            s.accumulate("tmp.uh", duh)
            s.accumulate("tmp.b", db)
        else:
            dm, dw, db = affine_backward(dc, cache["proj"])
            s.accumulate("tmp.proj.w", dw)
            s.accumulate("tmp.proj.b", db)
            da = np.repeat(dm[:, None, :] / L, L, axis=1)
            dseq, dwq, dwk, dwv = self_attention_backward(da, cache["attn"])
            s.accumulate("tmp.wq", dwq)
            s.accumulate("tmp.wk", dwk)
            s.accumulate("tmp.wv", dwv)
            s.accumulate("tmp.pos", dseq.sum(axis=0))
        B = cache["B"]
        if cfg.variant == "grid":
            de = dseq.reshape(B * L, cfg.d_s)
            dflat, dw, db = affine_backward(de, cache["fc"])
            s.accumulate("enc.fc.w", dw)
            s.accumulate("enc.fc.b", db)
            dh = avgpool2_backward(dflat.reshape(cache["flat_shape"]), cache["pool2"])
            dh = relu_backward(dh, cache["relu2"])
            dh, dw, db = conv2d_backward(dh, cache["conv2"])
            s.accumulate("enc.conv2.w", dw)
            s.accumulate("enc.conv2.b", db)
            dh = avgpool2_backward(dh, cache["pool1"])
            dh = relu_backward(dh, cache["relu1"])
            _, dw, db = conv2d_backward(dh, cache["conv1"])
            s.accumulate("enc.conv1.w", dw)
            s.accumulate("enc.conv1.b", db)
        else:
            N = self.R
            dh = dseq.reshape(B, N, L, cfg.C2).transpose(0, 2, 1, 3).reshape(B * L, N, cfg.C2)
            dh, dw = gcn_backward(dh, cache["gcn2"])
            s.accumulate("enc.gcn2.w", dw)
            _, dw = gcn_backward(dh, cache["gcn1"])
            s.accumulate("enc.gcn1.w", dw)

    # ------------------------------------------------------------ decoder

    def decode_batch(self, z, c):
        """Rows of z and c as returned by :meth:`encode_batch`. Output (B, R) in units of v_scale."""
        cfg, P = self.config, self.store
        zc = np.concatenate([z, c], axis=-1).astype(self.dtype, copy=False)
        cache = {}
        if cfg.variant == "grid":
            B = zc.shape[0]
            h, cache["fc"] = affine_forward(zc, P["dec.fc.w"], P["dec.fc.b"])
            h = h.reshape(B, cfg.C2, self.H // 4, self.W // 4)
            h, cache["up1"] = upsample2_forward(h)
            h, cache["conv1"] = conv2d_forward(h, P["dec.conv1.w"], P["dec.conv1.b"])
            h, cache["relu"] = relu_forward(h)
            h, cache["up2"] = upsample2_forward(h)
            h, cache["conv2"] = conv2d_forward(h, P["dec.conv2.w"], P["dec.conv2.b"])
            out = h.reshape(B, self.R)
        else:
            h, cache["fc1"] = affine_forward(zc, P["dec.fc1.w"], P["dec.fc1.b"])
            h, cache["relu"] = relu_forward(h)
            h, cache["fc2"] = affine_forward(h, P["dec.fc2.w"], P["dec.fc2.b"])
            out = h.reshape(-1, self.R)
        return out, cache

    def decode_backward(self, dout, cache):
        """Accumulate decoder gradients; return (dz, dc)."""
        cfg, s = self.config, self.store
        if cfg.variant == "grid":
            B = dout.shape[0]
            dh = dout.reshape(B, 1, self.H, self.W)
            dh, dw, db = conv2d_backward(dh, cache["conv2"])
            s.accumulate("dec.conv2.w", dw)
            s.accumulate("dec.conv2.b", db)
            dh = upsample2_backward(dh, cache["up2"])
            dh = relu_backward(dh, cache["relu"])
            dh, dw, db = conv2d_backward(dh, cache["conv1"])
            s.accumulate("dec.conv1.w", dw)
            s.accumulate("dec.conv1.b", db)
            dh = upsample2_backward(dh, cache["up1"])
            dzc, dw, db = affine_backward(dh.reshape(B, -1), cache["fc"])
            s.accumulate("dec.fc.w", dw)
            s.accumulate("dec.fc.b", db)
        else:
            dh, dw, db = affine_backward(dout.reshape(-1, 1), cache["fc2"])
            s.accumulate("dec.fc2.w", dw)
            s.accumulate("dec.fc2.b", db)
            dh = relu_backward(dh, cache["relu"])
            dzc, dw, db = affine_backward(dh, cache["fc1"])
            s.accumulate("dec.fc1.w", dw)
            s.accumulate("dec.fc1.b", db)
        d_z = cfg.d_z
        return dzc[:, :d_z], dzc[:, d_z:]

    # ------------------------------------------------------------ training step

    def loss_and_grad(self, x, y, eps=None, seed=None, backward=True):
        """One forward pass on a batch and (optionally) accumulate gradients.

        y is the ideal frame in km/h, shape (B, R). ``eps`` fixes the
        reparameterization noise; otherwise it is drawn from ``seed``.
        Returns (total, recon, kl).
        """
        cfg = self.config
        c, mu, logvar, ecache = self.encode_batch(x)
        z, rcache = reparameterize(mu, logvar, seed=seed, eps=eps)
        z = z.astype(self.dtype, copy=False)
        raw, dcache = self.decode_batch(z, c)
        y = np.asarray(y, dtype=self.dtype)
        if y.shape != raw.shape:
            raise ValueError(f"target shape {y.shape} != output shape {raw.shape}")
        total, recon, kl, draw, dmu_kl, dlv_kl = _loss_terms(raw, y / cfg.v_scale, mu, logvar, cfg.beta)
        if backward:
            dz, dc = self.decode_backward(draw.astype(self.dtype, copy=False), dcache)
            dmu, dlv = reparameterize_backward(dz, rcache)
            self.encode_backward(dc, dmu + cfg.beta * dmu_kl, dlv + cfg.beta * dlv_kl, ecache)
        return total, recon, kl


def _loss_terms(pred_n, target_n, mu, logvar, beta):
    """Loss on normalized frames plus gradients wrt pred, mu and logvar (KL part unscaled by beta)."""
    recon, dpred = mse_loss(pred_n, target_n)
    kl_rows, dmu, dlv = gaussian_kl(mu, logvar)
    d_z = mu.shape[-1]
    denom = kl_rows.size * d_z
    kl = float(np.sum(kl_rows) / denom)
    return recon + beta * kl, recon, kl, dpred, dmu / denom, dlv / denom


# ---------------------------------------------------------------- public API

def _batchify(model: StRecModel, seq):
    seq = np.asarray(seq)
    single = seq.ndim == 3
    return (seq[None] if single else seq), single


def encode(model: StRecModel, seq):
    """Condition and posterior parameters for one sequence (L, 2, R) or a batch (B, L, 2, R).

    Grid: c is (d_h,), mu/logvar (d_z,). Graph: one row per segment, (N, d_h) and (N, d_z).
    A leading batch axis is kept when the input is batched.
    """
    x, single = _batchify(model, seq)
    c, mu, logvar, _ = model.encode_batch(x)
    if model.config.variant == "graph":
        B = x.shape[0]
        c, mu, logvar = (a.reshape(B, model.R, -1) for a in (c, mu, logvar))
    if single:
        c, mu, logvar = c[0], mu[0], logvar[0]
    return c, mu, logvar


def decode(model: StRecModel, z, c):
    """Recovered frame(s) in km/h from latent z and condition c (shapes as returned by :func:`encode`)."""
    cfg = model.config
    z, c = np.asarray(z), np.asarray(c)
    node_axis = cfg.variant == "graph"
    single = z.ndim == (2 if node_axis else 1)
    if single:
        z, c = z[None], c[None]
    want_z = (cfg.d_z,) if not node_axis else (model.R, cfg.d_z)
    want_c = (cfg.d_h,) if not node_axis else (model.R, cfg.d_h)
    if z.shape[1:] != want_z or c.shape[1:] != want_c or z.shape[0] != c.shape[0]:
        raise ValueError(f"decode: z {z.shape} / c {c.shape} do not match {want_z} / {want_c}")
    B = z.shape[0]
    if node_axis:
        z, c = z.reshape(B * model.R, -1), c.reshape(B * model.R, -1)
    raw, _ = model.decode_batch(z, c)
    out = raw * cfg.v_scale
    return out[0] if single else out


def loss(recovered, ideal, mu, logvar, beta: float, v_scale: float = 120.0):
    """(total, recon, kl) with recon on v_scale-normalized frames and kl averaged per latent unit."""
    recovered = np.asarray(recovered, dtype=np.float64)
    ideal = np.asarray(ideal, dtype=np.float64)
    if recovered.shape != ideal.shape:
        raise ValueError(f"loss: shape mismatch {recovered.shape} vs {ideal.shape}")
    mu, logvar = np.asarray(mu, dtype=np.float64), np.asarray(logvar, dtype=np.float64)
    if mu.shape != logvar.shape:
        raise ValueError(f"loss: mu {mu.shape} vs logvar {logvar.shape}")
    total, recon, kl, *_ = _loss_terms(recovered / v_scale, ideal / v_scale, mu, logvar, beta)
    return total, recon, kl
