"""Latent cache communication: rotation algebra, re-positioning, and splicing.

A cache transplanted behind another context must read as one continuous
sequence. Keys are stored already rotated at their absolute positions, so
moving a cache by n positions only needs the delta rotation R(n) applied to
every stored key (rotation angles are linear in position, so
R(t + n) == R(n) R(t)).
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

import numpy as np

from .engine.cache import KVCache
from .engine.config import ModelConfig, SamplingParams
from .engine.model import ModelWeights, generate, prefill, rope_coeffs
from .errors import CapacityError, IncompatibleCacheError, WeightsFormatError


@dataclass(frozen=True)
class RotationSpec:
    """Per-pair rotation frequencies for a head dimension and angle base."""

    head_dim: int
    rope_base: float

    def __post_init__(self):
        if self.head_dim < 2 or self.head_dim % 2 != 0:
            raise ValueError("head_dim must be a positive even integer")
        if self.rope_base <= 1.0:
            raise ValueError("rope_base must exceed 1.0")

    @property
    def frequencies(self) -> np.ndarray:
        j = np.arange(self.head_dim // 2, dtype=np.float64)
        return self.rope_base ** (-2.0 * j / self.head_dim)

    @classmethod
    def for_config(cls, config: ModelConfig) -> "RotationSpec":
        return cls(head_dim=config.head_dim, rope_base=config.rope_base)


def rope_rotate(vector, position: int, spec: RotationSpec) -> np.ndarray:
    """Rotate each 2-D pair (v[2j], v[2j+1]) by angle position * freq[j]."""
    v = np.asarray(vector)
    if v.shape[-1] != spec.head_dim:
        raise ValueError(f"vector length {v.shape[-1]} != head_dim {spec.head_dim}")
    if position < 0:
        raise ValueError("position must be nonnegative")
    angles = position * spec.frequencies
    cos = np.cos(angles)
    sin = np.sin(angles)
    even = v[..., 0::2]
    odd = v[..., 1::2]
    out = np.empty_like(v)
    out[..., 0::2] = (even * cos - odd * sin).astype(v.dtype)
    out[..., 1::2] = (even * sin + odd * cos).astype(v.dtype)
    return out


@dataclass
class SpliceReport:
    prefix_len: int
    suffix_len: int
    total_len: int
    applied_offset: int


@dataclass
class AlignmentReport:
    """Outcome of comparing spliced-cache decoding against full-text decoding."""

    max_abs_logit_diff: float
    per_position_diffs: list[float]
    tokens_match: bool
    tolerance: float
    decoded_spliced: list[int] = field(default_factory=list)
    decoded_fulltext: list[int] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.max_abs_logit_diff <= self.tolerance


def reencode_cache(cache: KVCache, offset: int) -> KVCache:
    """Shift a cache by `offset` positions: every stored key picks up the
    delta rotation R(offset); values are untouched."""
    if offset < 0:
        raise ValueError("offset must be nonnegative")
    cfg = cache.config
    if cache.end_position + offset > cfg.max_seq_len:
        raise CapacityError(
            f"re-encoding to base {cache.position_base + offset} exceeds "
            f"max_seq_len {cfg.max_seq_len}"
        )
    if offset == 0:
        return cache
    cos, sin = rope_coeffs(np.array([offset]), cfg.head_dim, cfg.rope_base)
    cos = cos[0][None, None, :]  # broadcast over (T, H, pairs)
    sin = sin[0][None, None, :]
    new_keys = []
    for k in cache.keys:
        even = k[..., 0::2]
        odd = k[..., 1::2]
        rotated = np.empty_like(k)
        rotated[..., 0::2] = (even * cos - odd * sin).astype(k.dtype)
        rotated[..., 1::2] = (even * sin + odd * cos).astype(k.dtype)
        new_keys.append(rotated)
    return KVCache(
        config=cfg,
        keys=new_keys,
        values=[v.copy() for v in cache.values],
        position_base=cache.position_base + offset,
        last_token=cache.last_token,
        last_logits=None,
    )


def splice(prefix: KVCache, suffix: KVCache, reencode: bool = True) -> tuple[KVCache, SpliceReport]:
    """Concatenate two caches into one continuous sequence: result holds the
    prefix entries followed by the suffix entries re-positioned to start at
    prefix.current_len.

    `reencode=False` skips the positional re-encoding of the suffix keys.
    That is an ablation hook for experiments and negative-control tests, not
    a fast path: without it the result's positions are inconsistent.
    """
    if prefix.config != suffix.config:
        raise IncompatibleCacheError(
            "cannot splice caches from different model configurations "
            "(latent transfer requires identical weights and positional scheme)"
        )
    if prefix.position_base != 0:
        raise ValueError("splice prefix must start at position 0")
    cfg = prefix.config
    n_prefix = prefix.current_len
    n_suffix = suffix.current_len
    total = n_prefix + n_suffix
    if total > cfg.max_seq_len:
        raise CapacityError(f"spliced length {total} exceeds max_seq_len {cfg.max_seq_len}")

    report = SpliceReport(
        prefix_len=n_prefix, suffix_len=n_suffix, total_len=total, applied_offset=n_prefix
    )
    if n_suffix == 0:
        return prefix, report

    moved = suffix
    if reencode:
        # delta rotation from wherever the suffix currently sits to n_prefix
        delta = n_prefix - suffix.position_base
        if delta < 0:
            raise ValueError(
                f"suffix already positioned at base {suffix.position_base}, "
                f"beyond splice point {n_prefix}"
            )
        moved = reencode_cache(suffix, delta)

    combined = KVCache(
        config=cfg,
        keys=[np.concatenate([pk, sk]) for pk, sk in zip(prefix.keys, moved.keys)],
        values=[np.concatenate([pv, sv]) for pv, sv in zip(prefix.values, moved.values)],
        position_base=0,
        last_token=suffix.last_token,
        last_logits=None,
    )
    return combined, report


def fold_splice(prefix: KVCache, suffixes, reencode: bool = True) -> KVCache:
    """Left-fold splice of several caches behind a common prefix, in the
    given (index) order."""
    acc = prefix
    for suffix in suffixes:
        acc, _ = splice(acc, suffix, reencode=reencode)
    return acc


def verify_alignment(
    weights: ModelWeights,
    seq_a,
    sysprompt_b,
    probe_len: int,
    tolerance: float,
    reencode: bool = True,
) -> AlignmentReport:
    """Greedy-decode probe_len tokens from (a) the spliced cache
    [sysprompt_b cache ; seq_a cache] and (b) a prefill of the concatenated
    token sequence, and report the max-abs logit gap plus token agreement.

    Exact agreement (up to float error) holds when each layer's keys and
    values depend only on token identity and position, i.e. for single-layer
    stacks; with more layers the transplanted entries lack the prefix's
    contextual influence and a depth-dependent residual appears. Callers
    choosing tolerances should measure at their configuration.
    """
    if probe_len < 1:
        raise ValueError("probe_len must be >= 1")
    seq_a = list(seq_a)
    sysprompt_b = list(sysprompt_b)
    if not seq_a:
        raise ValueError("seq_a must be non-empty")

    greedy = SamplingParams()
    _, cache_a = prefill(weights, seq_a, 0)
    if sysprompt_b:
        _, cache_b = prefill(weights, sysprompt_b, 0)
        spliced, _ = splice(cache_b, cache_a, reencode=reencode)
    else:
        spliced = cache_a

    toks_spliced, _, _ = generate(weights, spliced, greedy, probe_len)
    _, cache_full = prefill(weights, sysprompt_b + seq_a, 0)
    toks_full, _, _ = generate(weights, cache_full, greedy, probe_len)

    # replay both paths teacher-forced on the full-text tokens so logits are
    # compared position by position even after a decoding divergence
    diffs = _probe_logit_diffs(weights, spliced, cache_full, toks_full)
    return AlignmentReport(
        max_abs_logit_diff=float(max(diffs)),
        per_position_diffs=[float(x) for x in diffs],
        tokens_match=toks_spliced == toks_full,
        tolerance=tolerance,
        decoded_spliced=toks_spliced,
        decoded_fulltext=toks_full,
    )


def _probe_logit_diffs(weights, cache_lhs, cache_rhs, forced_tokens):
    from .engine.model import decode_step, reanchor

    logits_l, cache_lhs = reanchor(weights, cache_lhs)
    logits_r, cache_rhs = reanchor(weights, cache_rhs)
    diffs = [np.abs(logits_l - logits_r).max()]
    for token in forced_tokens[:-1]:
        logits_l, cache_lhs = decode_step(weights, cache_lhs, token)
        logits_r, cache_rhs = decode_step(weights, cache_rhs, token)
        diffs.append(np.abs(logits_l - logits_r).max())
    return diffs


# --- cache dump format ------------------------------------------------------

CACHE_MAGIC = b"KVC1"
_CACHE_HEADER = struct.Struct("<5q")


def cache_to_bytes(cache: KVCache) -> bytes:
    cfg = cache.config
    buf = io.BytesIO()
    buf.write(CACHE_MAGIC)
    buf.write(
        _CACHE_HEADER.pack(
            cfg.num_layers, cfg.num_heads, cfg.head_dim,
            cache.current_len, cache.position_base,
        )
    )
    for k in cache.keys:
        buf.write(np.ascontiguousarray(k, dtype="<f4").tobytes())
    for v in cache.values:
        buf.write(np.ascontiguousarray(v, dtype="<f4").tobytes())
    return buf.getvalue()


def cache_from_bytes(data: bytes, config: ModelConfig) -> KVCache:
    if data[:4] != CACHE_MAGIC:
        raise WeightsFormatError(f"bad magic {data[:4]!r}; expected {CACHE_MAGIC!r}")
    nl, nh, hd, length, base = _CACHE_HEADER.unpack_from(data, 4)
    if (nl, nh, hd) != (config.num_layers, config.num_heads, config.head_dim):
        raise WeightsFormatError(
            f"cache header (layers={nl}, heads={nh}, head_dim={hd}) does not match "
            f"config (layers={config.num_layers}, heads={config.num_heads}, "
            f"head_dim={config.head_dim})"
        )
    per = length * nh * hd
    expected = 4 + _CACHE_HEADER.size + 2 * nl * per * 4
    if len(data) != expected:
        raise WeightsFormatError(
            f"payload size mismatch: file has {len(data)} bytes, header implies {expected}"
        )
    offset = 4 + _CACHE_HEADER.size
    arrays = []
    for _ in range(2 * nl):
        arr = np.frombuffer(data, dtype="<f4", count=per, offset=offset)
        arrays.append(arr.reshape(length, nh, hd).copy())
        offset += per * 4
    return KVCache(
        config=config,
        keys=arrays[:nl],
        values=arrays[nl:],
        position_base=base,
    )


def save_cache(cache: KVCache, path) -> None:
    with open(path, "wb") as fh:
        fh.write(cache_to_bytes(cache))


def load_cache(path, config: ModelConfig) -> KVCache:
    with open(path, "rb") as fh:
        return cache_from_bytes(fh.read(), config)
