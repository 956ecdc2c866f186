"""Deterministic decoder-only transformer with rotary positions and explicit caches.

Pre-layer-norm blocks, GELU feed-forward with hidden size 4d, untied
embedding/unembedding, no biases on the attention projections. All
computation is 32-bit; rotation coefficients are evaluated in float64 so
position arithmetic stays accurate at large offsets.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, fields

import numpy as np

from ..errors import CapacityError
from .cache import KVCache, empty_cache
from .config import ModelConfig, SamplingParams, UsageStats

LN_EPS = 1e-5
INIT_STD = 0.02
_GELU_C = 0.7978845608028654  # sqrt(2/pi)
_GELU_A = 0.044715


@dataclass
class LayerWeights:
    ln1_g: np.ndarray
    ln1_b: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    ln2_g: np.ndarray
    ln2_b: np.ndarray
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass
class ModelWeights:
    config: ModelConfig
    embedding: np.ndarray
    layers: list[LayerWeights]
    ln_f_g: np.ndarray
    ln_f_b: np.ndarray
    unembed: np.ndarray

    def param_arrays(self) -> list[np.ndarray]:
        """All parameter tensors in the canonical (serialization) order."""
        out = [self.embedding]
        for layer in self.layers:
            out.extend(getattr(layer, f.name) for f in fields(LayerWeights))
        out.extend([self.ln_f_g, self.ln_f_b, self.unembed])
        return out

    def check_finite(self) -> None:
        for arr in self.param_arrays():
            if not np.all(np.isfinite(arr)):
                raise ValueError("weights contain non-finite values")


def init_model(config: ModelConfig) -> ModelWeights:
    """Deterministic initialization from config.seed; same config, same bits."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    d, v = config.model_dim, config.vocab_size
    hidden = 4 * d
    resid_scale = 1.0 / np.sqrt(2.0 * config.num_layers)

    def normal(*shape, scale=INIT_STD):
        return rng.normal(0.0, scale, size=shape).astype(np.float32)

    embedding = normal(v, d)
    layers = []
    for _ in range(config.num_layers):
        layers.append(
            LayerWeights(
                ln1_g=np.ones(d, dtype=np.float32),
                ln1_b=np.zeros(d, dtype=np.float32),
                wq=normal(d, d),
                wk=normal(d, d),
                wv=normal(d, d),
                wo=normal(d, d, scale=INIT_STD * resid_scale),
                ln2_g=np.ones(d, dtype=np.float32),
                ln2_b=np.zeros(d, dtype=np.float32),
                w1=normal(d, hidden),
                b1=np.zeros(hidden, dtype=np.float32),
                w2=normal(hidden, d, scale=INIT_STD * resid_scale),
                b2=np.zeros(d, dtype=np.float32),
            )
        )
    return ModelWeights(
        config=config,
        embedding=embedding,
        layers=layers,
        ln_f_g=np.ones(d, dtype=np.float32),
        ln_f_b=np.zeros(d, dtype=np.float32),
        unembed=normal(d, v),
    )


def layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + LN_EPS) * g + b


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_A * x * x * x)))


def rope_coeffs(positions: np.ndarray, head_dim: int, rope_base: float):
    """cos/sin tables, float64, shape (len(positions), head_dim/2)."""
    j = np.arange(head_dim // 2, dtype=np.float64)
    freqs = rope_base ** (-2.0 * j / head_dim)
    angles = np.asarray(positions, dtype=np.float64)[:, None] * freqs[None, :]
    return np.cos(angles), np.sin(angles)


def apply_rope(x: np.ndarray, cos: np.ndarray, sin: np.ndarray) -> np.ndarray:
    """Rotate 2-D pairs (x[..., 2j], x[..., 2j+1]); cos/sin broadcast over heads."""
    even = x[..., 0::2]
    odd = x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = (even * cos - odd * sin).astype(x.dtype)
    out[..., 1::2] = (even * sin + odd * cos).astype(x.dtype)
    return out


def _validate_tokens(tokens, vocab_size: int) -> np.ndarray:
    arr = np.asarray(tokens, dtype=np.int64)
    if arr.ndim != 1:
        raise ValueError("token sequence must be one-dimensional")
    if arr.size and (arr.min() < 0 or arr.max() >= vocab_size):
        raise ValueError(f"token id outside [0, {vocab_size})")
    return arr


def forward_tokens(
    weights: ModelWeights,
    tokens,
    cache: KVCache | None = None,
    position_base: int = 0,
) -> tuple[np.ndarray, KVCache]:
    """Process tokens against an optional existing cache.

    Returns next-token logits at the final position and a cache extended by
    len(tokens). With cache=None this is a fresh prefill at position_base.
    """
    cfg = weights.config
    arr = _validate_tokens(tokens, cfg.vocab_size)
    t_new = int(arr.size)
    if t_new == 0:
        raise ValueError("token sequence must be non-empty")

    if cache is None:
        cache = empty_cache(cfg, position_base)
    base = cache.position_base
    t_old = cache.current_len
    if base + t_old + t_new > cfg.max_seq_len:
        raise CapacityError(
            f"sequence of {base + t_old + t_new} positions exceeds max_seq_len {cfg.max_seq_len}"
        )

    h, hd = cfg.num_heads, cfg.head_dim
    positions = base + t_old + np.arange(t_new)
    cos, sin = rope_coeffs(positions, hd, cfg.rope_base)
    cos = cos[:, None, :]  # broadcast over heads: (T, 1, hd/2)
    sin = sin[:, None, :]

    # query i (global index t_old+i) may attend keys 0..t_old+i
    if t_new > 1:
        qi = np.arange(t_new)[:, None]
        kj = np.arange(t_old + t_new)[None, :]
        neg = np.where(kj > t_old + qi, -np.inf, 0.0).astype(np.float32)
    else:
        neg = None

    x = weights.embedding[arr]
    new_keys, new_values = [], []
    scale = np.float32(1.0 / np.sqrt(hd))
    for layer_idx, lw in enumerate(weights.layers):
        a = layer_norm(x, lw.ln1_g, lw.ln1_b)
        q = (a @ lw.wq).reshape(t_new, h, hd)
        k = (a @ lw.wk).reshape(t_new, h, hd)
        v = (a @ lw.wv).reshape(t_new, h, hd)
        q = apply_rope(q, cos, sin)
        k = apply_rope(k, cos, sin)
        full_k = np.concatenate([cache.keys[layer_idx], k]) if t_old else k
        full_v = np.concatenate([cache.values[layer_idx], v]) if t_old else v
        new_keys.append(full_k)
        new_values.append(full_v)

        scores = np.matmul(q.transpose(1, 0, 2), full_k.transpose(1, 2, 0)) * scale
        if neg is not None:
            scores = scores + neg
        scores -= scores.max(axis=-1, keepdims=True)
        probs = np.exp(scores)
        probs /= probs.sum(axis=-1, keepdims=True)
        ctx = np.matmul(probs, full_v.transpose(1, 0, 2))  # (H, T, hd)
        x = x + ctx.transpose(1, 0, 2).reshape(t_new, -1) @ lw.wo

        c = layer_norm(x, lw.ln2_g, lw.ln2_b)
        x = x + gelu(c @ lw.w1 + lw.b1) @ lw.w2 + lw.b2

    final = layer_norm(x[-1], weights.ln_f_g, weights.ln_f_b)
    logits = final @ weights.unembed

    new_cache = KVCache(
        config=cfg,
        keys=new_keys,
        values=new_values,
        position_base=base,
        last_token=int(arr[-1]),
        last_logits=logits,
    )
    return logits, new_cache


def prefill(weights: ModelWeights, tokens, position_base: int = 0) -> tuple[np.ndarray, KVCache]:
    """Run a fresh sequence; returns final-position logits and its cache."""
    if position_base < 0:
        raise ValueError("position_base must be nonnegative")
    return forward_tokens(weights, tokens, cache=None, position_base=position_base)


def decode_step(weights: ModelWeights, cache: KVCache, token: int) -> tuple[np.ndarray, KVCache]:
    """Append one token to the cache and return its next-token logits."""
    return forward_tokens(weights, [int(token)], cache=cache)


def reanchor(weights: ModelWeights, cache: KVCache) -> tuple[np.ndarray, KVCache]:
    """Recompute next-token logits for a cache whose seam distribution is unknown.

    Re-runs the final cached token against the rest of the combined context
    (a spliced cache's final entry was produced before the splice, so its
    output distribution has to be derived in the new context).
    """
    if cache.last_logits is not None:
        return cache.last_logits, cache
    if cache.last_token is None or cache.current_len == 0:
        raise ValueError("cannot derive logits: cache has no final token recorded")
    return decode_step(weights, cache.drop_last(), cache.last_token)


def sample_token(logits: np.ndarray, params: SamplingParams, rng) -> int:
    if params.mode == "greedy":
        return int(np.argmax(logits))  # argmax takes the lowest index on ties
    z = logits.astype(np.float64) / params.temperature
    z -= z.max()
    p = np.exp(z)
    p /= p.sum()
    return int(rng.choice(len(p), p=p))


def generate(
    weights: ModelWeights,
    cache: KVCache,
    params: SamplingParams,
    max_new_tokens: int,
    stop_tokens=frozenset(),
) -> tuple[list[int], KVCache, UsageStats]:
    """Decode up to max_new_tokens from a cache, stopping at any stop token.

    Hitting the context capacity mid-generation truncates the output and
    flags usage.truncated instead of raising; budget-limited runs are a
    normal experiment condition.
    """
    if max_new_tokens < 1:
        raise ValueError("max_new_tokens must be >= 1")
    stop = frozenset(int(t) for t in stop_tokens)
    start = time.perf_counter()
    logits, cache = reanchor(weights, cache)
    rng = np.random.default_rng(params.rng_seed) if params.mode == "temperature" else None

    out: list[int] = []
    truncated = False
    cfg = weights.config
    for _ in range(max_new_tokens):
        if cache.end_position + 1 > cfg.max_seq_len:
            truncated = True
            break
        token = sample_token(logits, params, rng)
        logits, cache = decode_step(weights, cache, token)
        out.append(token)
        if token in stop:
            break
    usage = UsageStats(
        decoded_tokens=len(out),
        wall_seconds=time.perf_counter() - start,
        generations=1,
        truncated=truncated,
    )
    return out, cache, usage
