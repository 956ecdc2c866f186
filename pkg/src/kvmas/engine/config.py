"""Model hyperparameters, sampling settings, and usage accounting."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from ..errors import ConfigError


@dataclass(frozen=True)
class ModelConfig:
    """Shape and determinism parameters of the toy decoder.

    ``head_dim`` is derived (``model_dim // num_heads``); pass 0 to have it
    filled in. Field declaration order is load-bearing: the weights file
    header serializes fields in exactly this order.
    """

    num_layers: int
    model_dim: int
    num_heads: int
    head_dim: int
    vocab_size: int
    max_seq_len: int
    rope_base: float = 10000.0
    seed: int = 0

    def __post_init__(self):
        if self.head_dim == 0 and self.num_heads > 0 and self.model_dim % self.num_heads == 0:
            object.__setattr__(self, "head_dim", self.model_dim // self.num_heads)
        self.validate()

    def validate(self) -> None:
        if self.num_layers < 1:
            raise ConfigError("num_layers must be positive")
        if self.model_dim < 2 or self.model_dim % 2 != 0:
            raise ConfigError("model_dim must be a positive even integer")
        if self.num_heads < 1:
            raise ConfigError("num_heads must be positive")
        if self.model_dim % self.num_heads != 0:
            raise ConfigError("model_dim not divisible by num_heads")
        if self.head_dim != self.model_dim // self.num_heads:
            raise ConfigError("head_dim must equal model_dim // num_heads")
        if self.head_dim % 2 != 0:
            raise ConfigError("head_dim must be even (rotations act on 2-D pairs)")
        if self.vocab_size < 1:
            raise ConfigError("vocab_size must be positive")
        if self.max_seq_len < 1:
            raise ConfigError("max_seq_len must be >= 1")
        if self.rope_base <= 1.0:
            raise ConfigError("rope_base must exceed 1.0 for decreasing pair frequencies")

    def with_seed(self, seed: int) -> "ModelConfig":
        return replace(self, seed=seed)


def default_config(seed: int = 0) -> ModelConfig:
    """Shipped toy configuration.

    max_seq_len is 4096 rather than something smaller because the default
    agent role prompts run to ~500 byte-level tokens each and the review
    loop splices whole caches; smaller windows overflow before the second
    round completes.
    """
    return ModelConfig(
        num_layers=4,
        model_dim=128,
        num_heads=4,
        head_dim=32,
        vocab_size=260,
        max_seq_len=4096,
        rope_base=10000.0,
        seed=seed,
    )


@dataclass(frozen=True)
class SamplingParams:
    """Decoding mode. Greedy is fully deterministic (ties break toward the
    lowest token id); temperature mode is deterministic given rng_seed."""

    mode: str = "greedy"
    temperature: float = 1.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.mode not in ("greedy", "temperature"):
            raise ValueError(f"unknown sampling mode: {self.mode!r}")
        if self.mode == "temperature" and self.temperature <= 0:
            raise ValueError("temperature must be positive")


GREEDY = SamplingParams()


@dataclass
class UsageStats:
    """Token and wall-clock accounting for one or more generations.

    decoded_tokens counts sampled tokens; prefill_tokens counts tokens that
    entered a context as text (system prompts, inputs, relayed text), never
    content transferred by cache splicing.
    """

    decoded_tokens: int = 0
    prefill_tokens: int = 0
    wall_seconds: float = 0.0
    generations: int = 0
    truncated: bool = False

    def add(self, other: "UsageStats") -> None:
        self.decoded_tokens += other.decoded_tokens
        self.prefill_tokens += other.prefill_tokens
        self.wall_seconds += other.wall_seconds
        self.generations += other.generations
        self.truncated = self.truncated or other.truncated
