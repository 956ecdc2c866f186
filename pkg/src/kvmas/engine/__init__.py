"""Toy decoder engine: config, tokenizer, forward ops, persistence, training."""

from .cache import KVCache, empty_cache
from .config import GREEDY, ModelConfig, SamplingParams, UsageStats, default_config
from .io import load_weights, save_weights, weights_fingerprint, weights_to_bytes
from .model import (
    ModelWeights,
    decode_step,
    forward_tokens,
    generate,
    init_model,
    prefill,
    reanchor,
)
from .tokenizer import BOS, EOS, MARKER, MIN_VOCAB, decode_text, detokenize, tokenize

__all__ = [
    "BOS", "EOS", "GREEDY", "KVCache", "MARKER", "MIN_VOCAB", "ModelConfig",
    "ModelWeights", "SamplingParams", "UsageStats", "decode_step", "decode_text",
    "default_config", "detokenize", "empty_cache", "forward_tokens", "generate",
    "init_model", "load_weights", "prefill", "reanchor", "save_weights",
    "tokenize", "weights_fingerprint", "weights_to_bytes",
]
