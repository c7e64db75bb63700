"""Forward/backward kernels for the layers used by the estimator.

Every ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
takes ``(dout, cache)``. Arrays carry a leading batch axis where noted; the
single-sample shapes are accepted too and handled by adding the axis.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from numpy.lib.stride_tricks import sliding_window_view


# ---------------------------------------------------------------- elementwise

def relu_forward(x):
    out = np.maximum(x, 0)
    return out, x > 0


def relu_backward(dout, cache):
    return dout * cache


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------- affine

def affine_forward(x, w, b):
    """y = x @ w + b over the last axis of ``x``."""
    if x.shape[-1] != w.shape[0]:
        raise ValueError(f"affine: input width {x.shape[-1]} != weight rows {w.shape[0]}")
    if b.shape != (w.shape[1],):
        raise ValueError(f"affine: bias shape {b.shape} != ({w.shape[1]},)")
    return x @ w + b, (x, w)


def affine_backward(dout, cache):
    x, w = cache
    x2 = x.reshape(-1, x.shape[-1])
    d2 = dout.reshape(-1, dout.shape[-1])
    dw = x2.T @ d2
    db = d2.sum(axis=0)
    dx = dout @ w.T
    return dx, dw, db


# ---------------------------------------------------------------- conv / pool

def _as_batch(x, ndim):
    if x.ndim == ndim - 1:
        return x[None], True
    if x.ndim != ndim:
        raise ValueError(f"expected {ndim - 1}-d or {ndim}-d input, got shape {x.shape}")
    return x, False


def conv2d_forward(x, w, b):
    """3x3 cross-correlation, stride 1, zero padding 1.

    x: (N, C_in, H, W) or (C_in, H, W); w: (C_out, C_in, 3, 3); b: (C_out,).
    """
    x, squeezed = _as_batch(x, 4)
    n, c, h, wd = x.shape
    c_out = w.shape[0]
    if w.shape[1:] != (c, 3, 3):
        raise ValueError(f"conv2d: kernel shape {w.shape} does not match {c} input channels with 3x3 window")
    if b.shape != (c_out,):
        raise ValueError(f"conv2d: bias shape {b.shape} != ({c_out},)")
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = sliding_window_view(xp, (3, 3), axis=(2, 3))  # n, c, h, w, 3, 3
    cols = cols.transpose(0, 2, 3, 1, 4, 5).reshape(n * h * wd, c * 9)
    out = cols @ w.reshape(c_out, -1).T + b
    out = out.reshape(n, h, wd, c_out).transpose(0, 3, 1, 2)
    if squeezed:
        out = out[0]
    return np.ascontiguousarray(out), (cols, w, x.shape, squeezed)


def conv2d_backward(dout, cache):
    cols, w, xshape, squeezed = cache
    n, c, h, wd = xshape
    c_out = w.shape[0]
    if squeezed:
        dout = dout[None]
    d2 = dout.transpose(0, 2, 3, 1).reshape(-1, c_out)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(c_out, -1)).reshape(n, h, wd, c, 3, 3)
    dxp = np.zeros((n, c, h + 2, wd + 2), dtype=dout.dtype)
    for i in range(3):
        for j in range(3):
            dxp[:, :, i:i + h, j:j + wd] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    dx = dxp[:, :, 1:-1, 1:-1]
    if squeezed:
        dx = dx[0]
    return np.ascontiguousarray(dx), dw, db


def avgpool2_forward(x):
    """Non-overlapping 2x2 mean over the last two axes."""
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise ValueError(f"avgpool2: spatial extent {h}x{w} must be even")
    lead = x.shape[:-2]
    out = x.reshape(*lead, h // 2, 2, w // 2, 2).mean(axis=(-3, -1))
    return out, x.shape


def avgpool2_backward(dout, cache):
    g = dout * 0.25
    return np.repeat(np.repeat(g, 2, axis=-2), 2, axis=-1)


def upsample2_forward(x):
    """Nearest-neighbour x2 upsampling over the last two axes."""
    return np.repeat(np.repeat(x, 2, axis=-2), 2, axis=-1), x.shape


def upsample2_backward(dout, cache):
    h, w = dout.shape[-2:]
    lead = dout.shape[:-2]
    return dout.reshape(*lead, h // 2, 2, w // 2, 2).sum(axis=(-3, -1))


# ---------------------------------------------------------------- graph conv

def normalized_adjacency(adj, sparse: bool | None = None):
    """D^-1/2 (A + I) D^-1/2 for a symmetric 0/1 adjacency matrix.

    Returns a CSR matrix when ``adj`` is sparse (or ``sparse=True``),
    otherwise a dense array.
    """
    if sparse is None:
        sparse = sp.issparse(adj)
    if sp.issparse(adj):
        a = sp.csr_matrix(adj, dtype=np.float64)
    else:
        a = sp.csr_matrix(np.asarray(adj, dtype=np.float64))
    n = a.shape[0]
    if a.shape != (n, n):
        raise ValueError(f"adjacency must be square, got {a.shape}")
    a = a + sp.identity(n, format="csr")
    deg = np.asarray(a.sum(axis=1)).ravel()
    d = sp.diags(1.0 / np.sqrt(deg))
    out = (d @ a @ d).tocsr()
    return out if sparse else out.toarray()


def _propagate(a_hat, y):
    """a_hat @ y applied over the node axis of y: (B, N, F)."""
    b, n, f = y.shape
    flat = y.transpose(1, 0, 2).reshape(n, b * f)
    out = a_hat @ flat
    return np.asarray(out, dtype=y.dtype).reshape(n, b, f).transpose(1, 0, 2)


def gcn_forward(x, a_hat, w, relu: bool = True):
    """One graph convolution: ``A_hat @ X @ W`` with optional ReLU.

    x: (B, N, F) or (N, F); a_hat: (N, N) dense or sparse; w: (F, F').
    """
    x, squeezed = _as_batch(x, 3)
    n = x.shape[1]
    if a_hat.shape != (n, n):
        raise ValueError(f"gcn: A_hat shape {a_hat.shape} does not match {n} nodes")
    if w.shape[0] != x.shape[2]:
        raise ValueError(f"gcn: feature width {x.shape[2]} != weight rows {w.shape[0]}")
    xw = x @ w
    pre = _propagate(a_hat, xw)
    mask = None
    out = pre
    if relu:
        mask = pre > 0
        out = pre * mask
    if squeezed:
        out = out[0]
    return out, (x, a_hat, w, mask, squeezed)


def gcn_backward(dout, cache):
    x, a_hat, w, mask, squeezed = cache
    if squeezed:
        dout = dout[None]
    if mask is not None:
        dout = dout * mask
    dxw = _propagate(a_hat.T, dout)
    dw = x.reshape(-1, x.shape[2]).T @ dxw.reshape(-1, dxw.shape[2])
    dx = dxw @ w.T
    if squeezed:
        dx = dx[0]
    return dx, dw


# ---------------------------------------------------------------- GRU

def gru_forward(x, h0, wx, uh, b):
    """Run a GRU over a batch of sequences.

    x: (B, L, d_in); h0: (B, d_h); wx: (d_in, 3*d_h); uh: (d_h, 3*d_h);
    b: (3*d_h,). Gate blocks are ordered [update z | reset r | candidate].

    Returns all hidden states (B, L, d_h) and a cache for
    :func:`gru_backward`. A zero-length sequence yields an empty state array.
    """
    bsz, length, d_in = x.shape
    d_h = h0.shape[1]
    if wx.shape != (d_in, 3 * d_h) or uh.shape != (d_h, 3 * d_h) or b.shape != (3 * d_h,):
        raise ValueError(
            f"gru: parameter shapes {wx.shape}, {uh.shape}, {b.shape} do not match d_in={d_in}, d_h={d_h}"
        )
    ax = x @ wx + b  # input contributions for every step at once
    hs = np.empty((bsz, length, d_h), dtype=x.dtype)
    steps = []
    h = h0
    for t in range(length):
        a = ax[:, t]
        zr = sigmoid(a[:, :2 * d_h] + h @ uh[:, :2 * d_h])
        z, r = zr[:, :d_h], zr[:, d_h:]
        rh = r * h
        hh = np.tanh(a[:, 2 * d_h:] + rh @ uh[:, 2 * d_h:])
        h_new = (1 - z) * h + z * hh
        steps.append((h, z, r, rh, hh))
        hs[:, t] = h_new
        h = h_new
    return hs, (x, h0, wx, uh, steps)


def gru_backward(dhs, cache):
    """Backpropagation through time.

    ``dhs`` is the upstream gradient for every hidden state (B, L, d_h);
    pass zeros except the last step to train on the final state only.
    Returns (dx, dh0, dwx, duh, db).
    """
    x, h0, wx, uh, steps = cache
    bsz, length, _ = x.shape
    d_h = h0.shape[1]
    dwx = np.zeros_like(wx)
    duh = np.zeros_like(uh)
    db = np.zeros(3 * d_h, dtype=wx.dtype)
    da_all = np.zeros((bsz, length, 3 * d_h), dtype=x.dtype)
    dh_next = np.zeros_like(h0)
    u_zr = uh[:, :2 * d_h]
    u_c = uh[:, 2 * d_h:]
    for t in reversed(range(length)):
        h, z, r, rh, hh = steps[t]
        dh = dhs[:, t] + dh_next
        dhh = dh * z
        dz = dh * (hh - h)
        dh_prev = dh * (1 - z)
        dc = dhh * (1 - hh * hh)
        duh[:, 2 * d_h:] += rh.T @ dc
        drh = dc @ u_c.T
        dr = drh * h
        dh_prev += drh * r
        dzr = np.concatenate([dz * z * (1 - z), dr * r * (1 - r)], axis=1)
        duh[:, :2 * d_h] += h.T @ dzr
        dh_prev += dzr @ u_zr.T
        da_all[:, t, :2 * d_h] = dzr
        da_all[:, t, 2 * d_h:] = dc
        dh_next = dh_prev
    dx = da_all @ wx.T
    dwx += x.reshape(-1, x.shape[2]).T @ da_all.reshape(-1, 3 * d_h)
    db += da_all.sum(axis=(0, 1))
    return dx, dh_next, dwx, duh, db


# ---------------------------------------------------------------- attention

def softmax(s, axis=-1):
    e = np.exp(s - s.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def self_attention_forward(x, wq, wk, wv):
    """Single-head scaled dot-product self-attention.

    x: (B, L, d) or (L, d); wq, wk, wv: (d, d).
    """
    x, squeezed = _as_batch(x, 3)
    d = x.shape[2]
    for w in (wq, wk, wv):
        if w.shape != (d, d):
            raise ValueError(f"self_attention: weight shape {w.shape} != ({d}, {d})")
    scale = 1.0 / np.sqrt(d)
    q = x @ wq
    k = x @ wk
    v = x @ wv
    p = softmax(q @ k.transpose(0, 2, 1) * scale)
    out = p @ v
    if squeezed:
        out = out[0]
    return out, (x, wq, wk, wv, q, k, v, p, scale, squeezed)


def self_attention_backward(dout, cache):
    x, wq, wk, wv, q, k, v, p, scale, squeezed = cache
    if squeezed:
        dout = dout[None]
    dp = dout @ v.transpose(0, 2, 1)
    dv = p.transpose(0, 2, 1) @ dout
    ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True)) * scale
    dq = ds @ k
    dk = ds.transpose(0, 2, 1) @ q
    x2 = x.reshape(-1, x.shape[2])
    dwq = x2.T @ dq.reshape(-1, dq.shape[2])
    dwk = x2.T @ dk.reshape(-1, dk.shape[2])
    dwv = x2.T @ dv.reshape(-1, dv.shape[2])
    dx = dq @ wq.T + dk @ wk.T + dv @ wv.T
    if squeezed:
        dx = dx[0]
    return dx, dwq, dwk, dwv


# ---------------------------------------------------------------- losses / VAE

def mse_loss(pred, target):
    """Mean squared error over all cells and its gradient w.r.t. ``pred``."""
    if pred.shape != target.shape:
        raise ValueError(f"mse_loss: shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def gaussian_kl(mu, logvar):
    """KL(N(mu, exp(logvar)) || N(0, I)) summed over the last axis.

    Returns (kl, dmu, dlogvar); ``kl`` has the leading shape of ``mu``.
    """
    ev = np.exp(logvar)
    kl = 0.5 * np.sum(ev + mu * mu - 1.0 - logvar, axis=-1)
    return kl, mu.copy(), 0.5 * (ev - 1.0)


def reparameterize(mu, logvar, seed=None, eps=None):
    """z = mu + exp(logvar / 2) * eps with eps ~ N(0, I).

    ``seed`` may be an int or a ``numpy.random.Generator``. Supplying ``eps``
    directly pins the noise (used for gradient checks). Returns (z, cache).
    """
    if eps is None:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        eps = rng.standard_normal(mu.shape).astype(mu.dtype, copy=False)
    std = np.exp(0.5 * logvar)
    return mu + std * eps, (eps, std)


def reparameterize_backward(dz, cache):
    eps, std = cache
    return dz, dz * eps * std * 0.5
