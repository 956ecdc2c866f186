"""Per-layer key/value cache: the unit of inter-agent communication."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .config import ModelConfig


@dataclass
class KVCache:
    """Keys and values for every processed position, one (T, H, head_dim)
    float32 array pair per layer.

    Keys are stored with the rotary encoding already applied at their
    absolute positions (position_base + local index); re-positioning a
    cache therefore only needs the delta rotation.

    last_token / last_logits are generation bookkeeping: the token id held
    at the final position and, when known, the next-token logits computed
    for it. Spliced caches lose last_logits (the distribution at the seam
    depends on the combined context) and generation re-derives it.
    """

    config: ModelConfig
    keys: list[np.ndarray]
    values: list[np.ndarray]
    position_base: int = 0
    last_token: int | None = None
    last_logits: np.ndarray | None = None

    @property
    def current_len(self) -> int:
        return int(self.keys[0].shape[0]) if self.keys else 0

    @property
    def end_position(self) -> int:
        """Absolute position one past the final cached entry."""
        return self.position_base + self.current_len

    def check_coherent(self) -> None:
        n = self.current_len
        for layer, (k, v) in enumerate(zip(self.keys, self.values)):
            if k.shape[0] != n or v.shape[0] != n:
                raise ValueError(f"layer {layer} length differs from layer 0")

    def drop_last(self) -> "KVCache":
        """Cache without its final position (bookkeeping cleared)."""
        if self.current_len == 0:
            raise ValueError("cannot drop from an empty cache")
        return KVCache(
            config=self.config,
            keys=[k[:-1] for k in self.keys],
            values=[v[:-1] for v in self.values],
            position_base=self.position_base,
        )

    def content_hash(self) -> str:
        """Digest of the cached tensors and position bookkeeping."""
        h = hashlib.sha256()
        h.update(f"{self.position_base}:{self.current_len}".encode())
        for k, v in zip(self.keys, self.values):
            h.update(np.ascontiguousarray(k, dtype=np.float32).tobytes())
            h.update(np.ascontiguousarray(v, dtype=np.float32).tobytes())
        return h.hexdigest()


def empty_cache(config: ModelConfig, position_base: int = 0) -> KVCache:
    shape = (0, config.num_heads, config.head_dim)
    return KVCache(
        config=config,
        keys=[np.zeros(shape, dtype=np.float32) for _ in range(config.num_layers)],
        values=[np.zeros(shape, dtype=np.float32) for _ in range(config.num_layers)],
        position_base=position_base,
    )
