"""kvmas: KV-cache latent communication runtime for desk-scale multi-agent systems.

A toy decoder-only transformer with explicit per-layer caches, rotary
positional re-encoding and cache splicing for latent inter-agent transfer,
the review / voting / planning agent primitives, an organizer with a
knowledge pool, and a deterministic stress-test harness.
"""

from .engine import (
    GREEDY,
    KVCache,
    ModelConfig,
    ModelWeights,
    SamplingParams,
    UsageStats,
    decode_step,
    default_config,
    generate,
    init_model,
    load_weights,
    prefill,
    save_weights,
    tokenize,
)
from .latent import (
    AlignmentReport,
    RotationSpec,
    SpliceReport,
    reencode_cache,
    rope_rotate,
    splice,
    verify_alignment,
)
from .organizer import (
    CompositionPlan,
    KnowledgeEntry,
    KnowledgePool,
    execute_plan,
    load_pool,
    plan,
    retrieve,
    validate_plan,
)
from .primitives import (
    AgentSpec,
    PlanningConfig,
    PrimitiveResult,
    ReviewConfig,
    VotingConfig,
    run_planning,
    run_review,
    run_single,
    run_text_relay,
    run_voting,
)
from .runtime import LocalEngine

__version__ = "0.1.0"

__all__ = [
    "AgentSpec", "AlignmentReport", "CompositionPlan", "GREEDY", "KVCache",
    "KnowledgeEntry", "KnowledgePool", "LocalEngine", "ModelConfig",
    "ModelWeights", "PlanningConfig", "PrimitiveResult", "ReviewConfig",
    "RotationSpec", "SamplingParams", "SpliceReport", "UsageStats",
    "VotingConfig", "decode_step", "default_config", "execute_plan",
    "generate", "init_model", "load_pool", "load_weights", "plan", "prefill",
    "reencode_cache", "retrieve", "rope_rotate", "run_planning", "run_review",
    "run_single", "run_text_relay", "run_voting", "save_weights", "splice",
    "tokenize", "validate_plan", "verify_alignment",
]
