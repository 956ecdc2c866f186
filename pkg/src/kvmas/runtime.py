"""Agent-facing inference session over the toy engine.

LocalEngine is the in-repo implementation of the surface the primitives
need: tokenization, system-prompt caches (memoized, since a role prompt
never depends on other agents' output), context extension, generation, and
cache splicing. Any object with the same methods can stand in, which is the
seam for plugging an external backend.
"""

from __future__ import annotations

from .engine.cache import KVCache
from .engine.config import SamplingParams, UsageStats
from .engine.io import load_weights, save_weights, weights_fingerprint
from .engine.model import ModelWeights, forward_tokens, generate, init_model, prefill
from .engine.tokenizer import BOS, EOS, tokenize
from .latent import splice


class LocalEngine:
    def __init__(self, weights: ModelWeights):
        self.weights = weights
        self._sys_caches: dict[str, KVCache] = {}

    @classmethod
    def from_file(cls, path) -> "LocalEngine":
        return cls(load_weights(path))

    @classmethod
    def from_config(cls, config) -> "LocalEngine":
        return cls(init_model(config))

    @property
    def config(self):
        return self.weights.config

    @property
    def max_seq_len(self) -> int:
        return self.weights.config.max_seq_len

    @property
    def stop_token(self) -> int:
        return EOS

    def tokenize(self, text) -> list[int]:
        return tokenize(text)

    def sys_cache(self, system_prompt: str) -> KVCache:
        """Prefilled [BOS] + prompt cache at position 0, computed once per
        prompt text. Callers must treat the result as immutable (all cache
        operations already copy)."""
        cached = self._sys_caches.get(system_prompt)
        if cached is None:
            _, cached = prefill(self.weights, [BOS] + tokenize(system_prompt), 0)
            self._sys_caches[system_prompt] = cached
        return cached

    def prefill(self, tokens, position_base: int = 0):
        return prefill(self.weights, tokens, position_base)

    def extend(self, cache: KVCache, tokens):
        return forward_tokens(self.weights, tokens, cache=cache)

    def generate(
        self,
        cache: KVCache,
        params: SamplingParams,
        max_new_tokens: int,
        stop_tokens=frozenset(),
    ) -> tuple[list[int], KVCache, UsageStats]:
        return generate(self.weights, cache, params, max_new_tokens, stop_tokens)

    def splice(self, prefix: KVCache, suffix: KVCache, reencode: bool = True):
        return splice(prefix, suffix, reencode=reencode)

    def fingerprint(self) -> str:
        return weights_fingerprint(self.weights)

    def save(self, path) -> None:
        save_weights(self.weights, path)
