"""Training for the toy engine: batched forward/backward and Adam.

The backward pass is hand-written against the same architecture as the
inference path; tests pin it to finite differences and to the inference
forward. Math is dtype-parametric so gradient checks can run in float64
while production training stays float32.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, fields

import numpy as np

from ..errors import TrainingDivergedError
from .config import ModelConfig
from .model import (
    LN_EPS,
    _GELU_A,
    _GELU_C,
    LayerWeights,
    ModelWeights,
    init_model,
    rope_coeffs,
)


def zeros_like_weights(weights: ModelWeights) -> ModelWeights:
    layers = [
        LayerWeights(**{f.name: np.zeros_like(getattr(lw, f.name)) for f in fields(LayerWeights)})
        for lw in weights.layers
    ]
    return ModelWeights(
        config=weights.config,
        embedding=np.zeros_like(weights.embedding),
        layers=layers,
        ln_f_g=np.zeros_like(weights.ln_f_g),
        ln_f_b=np.zeros_like(weights.ln_f_b),
        unembed=np.zeros_like(weights.unembed),
    )


def cast_weights(weights: ModelWeights, dtype) -> ModelWeights:
    layers = [
        LayerWeights(**{f.name: getattr(lw, f.name).astype(dtype) for f in fields(LayerWeights)})
        for lw in weights.layers
    ]
    return ModelWeights(
        config=weights.config,
        embedding=weights.embedding.astype(dtype),
        layers=layers,
        ln_f_g=weights.ln_f_g.astype(dtype),
        ln_f_b=weights.ln_f_b.astype(dtype),
        unembed=weights.unembed.astype(dtype),
    )


def _ln_forward(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv
    return (xhat * g + b).astype(x.dtype), xhat, inv


def _ln_backward(dout, xhat, inv, g):
    dxhat = dout * g
    dg = (dout * xhat).sum(axis=tuple(range(dout.ndim - 1)))
    db = dout.sum(axis=tuple(range(dout.ndim - 1)))
    mean1 = dxhat.mean(axis=-1, keepdims=True)
    mean2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - mean1 - xhat * mean2)
    return dx.astype(dout.dtype), dg, db


def _gelu_forward(x):
    u = _GELU_C * (x + _GELU_A * x**3)
    t = np.tanh(u)
    return 0.5 * x * (1.0 + t), t


def _gelu_backward(dout, x, t):
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return dout * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def _rope_pair(x, cos, sin):
    even = x[..., 0::2]
    odd = x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out


def _forward_tape(weights: ModelWeights, tokens: np.ndarray):
    cfg = weights.config
    dtype = weights.embedding.dtype
    B, T = tokens.shape
    H, hd = cfg.num_heads, cfg.head_dim
    scale = 1.0 / np.sqrt(hd)

    cos64, sin64 = rope_coeffs(np.arange(T), hd, cfg.rope_base)
    cos = cos64.astype(dtype)[None, None, :, :]  # (1, 1, T, hd/2)
    sin = sin64.astype(dtype)[None, None, :, :]
    neg = np.where(np.arange(T)[None, :] > np.arange(T)[:, None], -np.inf, 0.0).astype(dtype)

    if tokens.min() < 0 or tokens.max() >= cfg.vocab_size:
        raise ValueError(f"token id outside [0, {cfg.vocab_size})")
    x = weights.embedding[tokens]
    tape = []
    for lw in weights.layers:
        x_in = x
        a, xhat1, inv1 = _ln_forward(x_in, lw.ln1_g, lw.ln1_b)
        a2 = a.reshape(B * T, -1)
        q = (a2 @ lw.wq).reshape(B, T, H, hd).transpose(0, 2, 1, 3)
        k = (a2 @ lw.wk).reshape(B, T, H, hd).transpose(0, 2, 1, 3)
        v = (a2 @ lw.wv).reshape(B, T, H, hd).transpose(0, 2, 1, 3)
        qr = _rope_pair(q, cos, sin)
        kr = _rope_pair(k, cos, sin)
        scores = np.matmul(qr, kr.transpose(0, 1, 3, 2)) * dtype.type(scale) + neg
        scores -= scores.max(axis=-1, keepdims=True)
        probs = np.exp(scores)
        probs /= probs.sum(axis=-1, keepdims=True)
        ctx = np.matmul(probs, v)  # (B, H, T, hd)
        ctx_flat = ctx.transpose(0, 2, 1, 3).reshape(B * T, -1)
        x_mid = x_in + (ctx_flat @ lw.wo).reshape(B, T, -1)

        c, xhat2, inv2 = _ln_forward(x_mid, lw.ln2_g, lw.ln2_b)
        f1 = c.reshape(B * T, -1) @ lw.w1 + lw.b1
        g1, tanh1 = _gelu_forward(f1)
        x = x_mid + (g1 @ lw.w2).reshape(B, T, -1) + lw.b2
        tape.append((x_in, a, xhat1, inv1, qr, kr, v, probs, ctx_flat, x_mid, c, xhat2, inv2, f1, g1, tanh1))

    y, xhatf, invf = _ln_forward(x, weights.ln_f_g, weights.ln_f_b)
    logits = y.reshape(B * T, -1) @ weights.unembed  # (B*T, V)
    aux = (y, xhatf, invf, cos, sin, neg)
    return logits, tape, aux


def forward_logits(weights: ModelWeights, tokens: np.ndarray) -> np.ndarray:
    """Per-position next-token logits via the training path, shape (B, T, V)."""
    B, T = tokens.shape
    logits, _, _ = _forward_tape(weights, tokens)
    return logits.reshape(B, T, -1)


def forward_backward(weights: ModelWeights, tokens: np.ndarray, target_mask: np.ndarray):
    """Masked next-token cross-entropy and parameter gradients.

    tokens: (B, T) int; target_mask: (B, T) where a truthy value at j marks
    token j as a supervised target (position 0 can never be a target).
    Returns (loss, grads) with grads shaped like the weights.
    """
    cfg = weights.config
    dtype = weights.embedding.dtype
    B, T = tokens.shape
    H, hd = cfg.num_heads, cfg.head_dim
    scale = 1.0 / np.sqrt(hd)

    logits, tape, (y, xhatf, invf, cos, sin, neg) = _forward_tape(weights, tokens)

    # masked CE: logits at position i predict token i+1
    z = logits.reshape(B, T, -1)[:, :-1]
    targets = tokens[:, 1:]
    w = (target_mask[:, 1:] != 0).astype(dtype)
    denom = w.sum()
    if denom == 0:
        raise ValueError("target mask selects no positions")
    zmax = z.max(axis=-1, keepdims=True)
    lse = zmax[..., 0] + np.log(np.exp(z - zmax).sum(axis=-1))
    tlogit = np.take_along_axis(z, targets[..., None], axis=-1)[..., 0]
    loss = float(((lse - tlogit) * w).sum() / denom)

    dz = np.exp(z - zmax)
    dz /= dz.sum(axis=-1, keepdims=True)
    np.put_along_axis(dz, targets[..., None], np.take_along_axis(dz, targets[..., None], -1) - 1.0, -1)
    dz *= (w / denom)[..., None]
    dlogits = np.zeros((B, T, cfg.vocab_size), dtype=dtype)
    dlogits[:, :-1] = dz
    dlogits = dlogits.reshape(B * T, -1)

    grads = zeros_like_weights(weights)
    grads.unembed[...] = y.reshape(B * T, -1).T @ dlogits
    dy = (dlogits @ weights.unembed.T).reshape(B, T, -1)
    dx, dgf, dbf = _ln_backward(dy, xhatf, invf, weights.ln_f_g)
    grads.ln_f_g[...] = dgf
    grads.ln_f_b[...] = dbf

    for lw, gw, rec in zip(reversed(weights.layers), reversed(grads.layers), reversed(tape)):
        (x_in, a, xhat1, inv1, qr, kr, v, probs, ctx_flat, x_mid, c, xhat2, inv2, f1, g1, tanh1) = rec
        # feed-forward
        df3 = dx.reshape(B * T, -1)
        gw.b2[...] = df3.sum(axis=0)
        gw.w2[...] = g1.T @ df3
        dg1 = df3 @ lw.w2.T
        df1 = _gelu_backward(dg1, f1, tanh1)
        gw.b1[...] = df1.sum(axis=0)
        gw.w1[...] = c.reshape(B * T, -1).T @ df1
        dc = (df1 @ lw.w1.T).reshape(B, T, -1)
        dmid_ln, dg2, db2 = _ln_backward(dc, xhat2, inv2, lw.ln2_g)
        gw.ln2_g[...] = dg2
        gw.ln2_b[...] = db2
        dx_mid = dx + dmid_ln

        # attention
        dattn = dx_mid.reshape(B * T, -1)
        gw.wo[...] = ctx_flat.T @ dattn
        dctx = (dattn @ lw.wo.T).reshape(B, T, H, hd).transpose(0, 2, 1, 3)
        dprobs = np.matmul(dctx, v.transpose(0, 1, 3, 2))
        dv = np.matmul(probs.transpose(0, 1, 3, 2), dctx)
        dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
        dqr = np.matmul(dscores, kr) * dtype.type(scale)
        dkr = np.matmul(dscores.transpose(0, 1, 3, 2), qr) * dtype.type(scale)
        dq = _rope_pair(dqr, cos, -sin)  # inverse rotation
        dk = _rope_pair(dkr, cos, -sin)

        def _unheads(t4):
            return t4.transpose(0, 2, 1, 3).reshape(B * T, -1)

        a_flat = a.reshape(B * T, -1)
        gw.wq[...] = a_flat.T @ _unheads(dq)
        gw.wk[...] = a_flat.T @ _unheads(dk)
        gw.wv[...] = a_flat.T @ _unheads(dv)
        da = _unheads(dq) @ lw.wq.T + _unheads(dk) @ lw.wk.T + _unheads(dv) @ lw.wv.T
        da = da.reshape(B, T, -1)
        dx_ln, dg1_, db1_ = _ln_backward(da, xhat1, inv1, lw.ln1_g)
        gw.ln1_g[...] = dg1_
        gw.ln1_b[...] = db1_
        dx = dx_mid + dx_ln

    demb = grads.embedding
    np.add.at(demb, tokens.reshape(-1), dx.reshape(B * T, -1))
    return loss, grads


def batch_loss(weights: ModelWeights, tokens: np.ndarray, target_mask: np.ndarray) -> float:
    loss, _ = forward_backward(weights, tokens, target_mask)
    return loss


@dataclass
class AdamState:
    m: ModelWeights
    v: ModelWeights
    t: int = 0

    @classmethod
    def for_weights(cls, weights: ModelWeights) -> "AdamState":
        return cls(m=zeros_like_weights(weights), v=zeros_like_weights(weights))


def adam_step(
    weights: ModelWeights,
    grads: ModelWeights,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    clip_norm: float = 1.0,
) -> None:
    gs = grads.param_arrays()
    if clip_norm:
        total = np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in gs))
        if total > clip_norm:
            factor = np.float32(clip_norm / total)
            for g in gs:
                g *= factor
    state.t += 1
    correction = np.sqrt(1.0 - beta2**state.t) / (1.0 - beta1**state.t)
    step = np.float32(lr * correction)
    for p, g, m, v in zip(
        weights.param_arrays(), gs, state.m.param_arrays(), state.v.param_arrays()
    ):
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= step * m / (np.sqrt(v) + eps)


@dataclass
class TrainResult:
    weights: ModelWeights
    loss_trace: list[float]


def train_toy(
    config: ModelConfig,
    task,
    steps: int,
    learning_rate: float,
    batch_size: int = 48,
    beta2: float = 0.98,
    warmup_steps: int = 150,
    log_every: int = 0,
) -> TrainResult:
    """Run `steps` Adam updates of masked next-token cross-entropy on batches
    drawn from `task` (anything with sample_batch(rng, batch_size)).

    Linear learning-rate warmup over warmup_steps, then flat. Deterministic
    given config.seed and task.seed. steps=0 returns the raw initialization.
    """
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    if learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    weights = init_model(config)
    if steps == 0:
        return TrainResult(weights=weights, loss_trace=[])

    rng = np.random.default_rng(task.seed)
    state = AdamState.for_weights(weights)
    losses: list[float] = []
    started = time.perf_counter()
    for step in range(steps):
        tokens, mask = task.sample_batch(rng, batch_size)
        loss, grads = forward_backward(weights, tokens, mask)
        if not np.isfinite(loss):
            raise TrainingDivergedError(step)
        losses.append(loss)
        lr = learning_rate * min(1.0, (step + 1) / warmup_steps) if warmup_steps else learning_rate
        adam_step(weights, grads, state, lr=lr, beta2=beta2)
        if log_every and (step + 1) % log_every == 0:
            rate = (step + 1) / (time.perf_counter() - started)
            print(f"step {step + 1}/{steps}  loss {loss:.4f}  ({rate:.1f} steps/s)")
    return TrainResult(weights=weights, loss_trace=losses)
