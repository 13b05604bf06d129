"""Training for the toy model: batched forward/backward in plain numpy and a
small Adam loop.

The backward pass is written by hand and checked against central finite
differences (tests pin 1e-4 relative error on every tensor). Training always
runs undefended; defenses only exist at inference time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from qbba_lab.model import ModelConfig, ModelWeights, init_weights
from qbba_lab.numerics import LN_EPS
from qbba_lab.rng import RngStream

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


class TrainingDiverged(RuntimeError):
    def __init__(self, step: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at step {step}")
        self.step = step


@dataclass(frozen=True)
class TrainHyperParams:
    steps: int = 3000
    batch_size: int = 64
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 1.0
    # caps the achievable logit margin at log((1-a+a/K)/(a/K)); keeps the toy
    # model calibrated instead of arbitrarily overconfident
    label_smoothing: float = 0.15


def _gelu(z):
    return 0.5 * z * (1.0 + erf(z * _INV_SQRT2))


def _gelu_grad(z):
    return 0.5 * (1.0 + erf(z * _INV_SQRT2)) + z * np.exp(-0.5 * z * z) * _INV_SQRT2PI


def _layer_norm_fwd(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv)


def _layer_norm_bwd(dy, g, cache):
    xhat, inv = cache
    dxhat = dy * g
    dg = np.sum(dy * xhat, axis=tuple(range(dy.ndim - 1)))
    db = np.sum(dy, axis=tuple(range(dy.ndim - 1)))
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = (dxhat - m1 - xhat * m2) * inv
    return dx, dg, db


def _batch_patchify(images: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    b = images.shape[0]
    s, p, c = cfg.image_size, cfg.patch_size, cfg.channels
    g = s // p
    return (images.reshape(b, g, p, g, p, c)
                  .transpose(0, 1, 3, 2, 4, 5)
                  .reshape(b, g * g, p * p * c))


def forward_batch(images: np.ndarray, w: ModelWeights):
    """Undefended batched forward; returns (logits, cache for backward)."""
    cfg = w.config
    n_heads, dh = cfg.num_heads, cfg.head_dim
    scale = 1.0 / np.sqrt(dh)

    patches = _batch_patchify(np.asarray(images, dtype=np.float64), cfg)
    b, n_p, _ = patches.shape
    h = np.empty((b, n_p + 1, cfg.embed_dim))
    h[:, 0] = w.cls + w.pos[0]
    h[:, 1:] = patches @ w.patch_w + w.patch_b + w.pos[1:]

    layers = []
    n_tok = n_p + 1
    for li in range(cfg.num_blocks):
        h_in = h
        u, ln1c = _layer_norm_fwd(h_in, w.ln1_g[li], w.ln1_b[li])
        # head layout (b, heads, tokens, head_dim) keeps everything on matmul
        qh = (u @ w.wq[li]).reshape(b, n_tok, n_heads, dh).transpose(0, 2, 1, 3)
        kh = (u @ w.wk[li]).reshape(b, n_tok, n_heads, dh).transpose(0, 2, 1, 3)
        vh = (u @ w.wv[li]).reshape(b, n_tok, n_heads, dh).transpose(0, 2, 1, 3)
        s = (qh @ kh.transpose(0, 1, 3, 2)) * scale
        s -= s.max(axis=-1, keepdims=True)
        e = np.exp(s)
        a = e / e.sum(axis=-1, keepdims=True)
        ctx = (a @ vh).transpose(0, 2, 1, 3).reshape(b, n_tok, cfg.embed_dim)
        msa = ctx @ w.wo[li] + w.bo[li]
        h_mid = h_in + msa
        u2, ln2c = _layer_norm_fwd(h_mid, w.ln2_g[li], w.ln2_b[li])
        z1 = u2 @ w.w1[li] + w.b1[li]
        a1 = _gelu(z1)
        mlp = a1 @ w.w2[li] + w.b2[li]
        h = h_mid + mlp
        layers.append((h_in, u, ln1c, qh, kh, vh, a, ctx, h_mid, u2, ln2c, z1, a1))

    f, lnfc = _layer_norm_fwd(h, w.lnf_g, w.lnf_b)
    cls_repr = f[:, 0, :]
    logits = cls_repr @ w.head_w + w.head_b
    cache = (patches, layers, lnfc, f, cls_repr)
    return logits, cache


def loss_and_gradients(images: np.ndarray, labels: np.ndarray, w: ModelWeights,
                       label_smoothing: float = 0.0):
    """Mean cross-entropy over the batch and gradients for every tensor.

    With label_smoothing > 0 the targets are the smoothed distribution
    (1-a) * onehot + a/K; a=0 is the plain one-hot cross-entropy.
    """
    cfg = w.config
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= cfg.num_classes:
        raise ValueError("label out of range")

    logits, cache = forward_batch(images, w)
    patches, layers, lnfc, f, cls_repr = cache
    b = logits.shape[0]
    n_heads, dh = cfg.num_heads, cfg.head_dim
    scale = 1.0 / np.sqrt(dh)

    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz

    target = np.zeros_like(logp)
    target[np.arange(b), labels] = 1.0
    if label_smoothing > 0:
        a = label_smoothing
        target = (1.0 - a) * target + a / cfg.num_classes
    loss = float(-(target * logp).sum(axis=1).mean())

    probs = np.exp(logp)
    dlogits = (probs - target) / b

    g = {name: np.zeros_like(arr) for name, arr in w.tensors()}

    g["head_w"] = cls_repr.T @ dlogits
    g["head_b"] = dlogits.sum(axis=0)
    df = np.zeros_like(f)
    df[:, 0, :] = dlogits @ w.head_w.T
    dh_acc, g["lnf_g"], g["lnf_b"] = _layer_norm_bwd(df, w.lnf_g, lnfc)

    d_emb = cfg.embed_dim
    n_tok = f.shape[1]

    def flat(arr):
        return np.ascontiguousarray(arr).reshape(-1, arr.shape[-1])

    for li in reversed(range(cfg.num_blocks)):
        h_in, u, ln1c, qh, kh, vh, a, ctx, h_mid, u2, ln2c, z1, a1 = layers[li]

        dmlp = dh_acc
        da1 = dmlp @ w.w2[li].T
        g["w2"][li] = flat(a1).T @ flat(dmlp)
        g["b2"][li] = dmlp.sum(axis=(0, 1))
        dz1 = da1 * _gelu_grad(z1)
        g["w1"][li] = flat(u2).T @ flat(dz1)
        g["b1"][li] = dz1.sum(axis=(0, 1))
        du2 = dz1 @ w.w1[li].T
        dh_mid_ln, g["ln2_g"][li], g["ln2_b"][li] = _layer_norm_bwd(du2, w.ln2_g[li], ln2c)
        dh_mid = dh_acc + dh_mid_ln

        dmsa = dh_mid
        dctx = (dmsa @ w.wo[li].T).reshape(b, n_tok, n_heads, dh).transpose(0, 2, 1, 3)
        g["wo"][li] = flat(ctx).T @ flat(dmsa)
        g["bo"][li] = dmsa.sum(axis=(0, 1))
        da = dctx @ vh.transpose(0, 1, 3, 2)
        dvh = a.transpose(0, 1, 3, 2) @ dctx
        ds = a * (da - np.sum(da * a, axis=-1, keepdims=True))
        dqh = (ds @ kh) * scale
        dkh = (ds.transpose(0, 1, 3, 2) @ qh) * scale
        dq = dqh.transpose(0, 2, 1, 3).reshape(b, n_tok, d_emb)
        dk = dkh.transpose(0, 2, 1, 3).reshape(b, n_tok, d_emb)
        dv = dvh.transpose(0, 2, 1, 3).reshape(b, n_tok, d_emb)
        g["wq"][li] = flat(u).T @ flat(dq)
        g["wk"][li] = flat(u).T @ flat(dk)
        g["wv"][li] = flat(u).T @ flat(dv)
        du = dq @ w.wq[li].T + dk @ w.wk[li].T + dv @ w.wv[li].T
        dh_in_ln, g["ln1_g"][li], g["ln1_b"][li] = _layer_norm_bwd(du, w.ln1_g[li], ln1c)
        dh_acc = dh_mid + dh_in_ln

    dtok = dh_acc
    g["cls"] = dtok[:, 0, :].sum(axis=0)
    g["pos"][0] = dtok[:, 0, :].sum(axis=0)
    g["pos"][1:] = dtok[:, 1:, :].sum(axis=0)
    g["patch_w"] = flat(patches).T @ flat(dtok[:, 1:, :])
    g["patch_b"] = dtok[:, 1:, :].sum(axis=(0, 1))
    return loss, g


def train(train_images: np.ndarray, train_labels: np.ndarray, cfg: ModelConfig,
          hp: TrainHyperParams, rng: RngStream):
    """Adam training from scratch; deterministic given the stream.

    Returns (weights, history) where history is a list of (step, loss).
    """
    w = init_weights(cfg, rng.fork("init"))
    batches = rng.fork("batches")
    n = train_images.shape[0]

    m = {name: np.zeros_like(arr) for name, arr in w.tensors()}
    v = {name: np.zeros_like(arr) for name, arr in w.tensors()}
    history = []

    for step in range(1, hp.steps + 1):
        idx = batches.integers(0, n, size=hp.batch_size)
        loss, grads = loss_and_gradients(train_images[idx], train_labels[idx], w,
                                         label_smoothing=hp.label_smoothing)
        if not np.isfinite(loss):
            raise TrainingDiverged(step, loss)
        history.append((step, loss))

        if hp.grad_clip > 0:
            total = np.sqrt(sum(float(np.sum(gr * gr)) for gr in grads.values()))
            if total > hp.grad_clip:
                factor = hp.grad_clip / total
                for gr in grads.values():
                    gr *= factor

        bc1 = 1.0 - hp.beta1 ** step
        bc2 = 1.0 - hp.beta2 ** step
        for name, arr in w.tensors():
            gr = grads[name]
            m[name] = hp.beta1 * m[name] + (1 - hp.beta1) * gr
            v[name] = hp.beta2 * v[name] + (1 - hp.beta2) * gr * gr
            arr -= hp.lr * (m[name] / bc1) / (np.sqrt(v[name] / bc2) + hp.adam_eps)

    return w, history
