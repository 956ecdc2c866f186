"""Stress-test experiments: long-context instruction injection, communication
noise, and method comparison with token/latency accounting.

Both stress tests run a two-stage pipeline: a producer processes the built
context, then a continuer finishes the task over the chosen channel. The
latent channel hands the producer's cache over directly; the text channel
re-tokenizes the producer's content into the continuer's prompt. Grading is
programmatic exact-match, so every reported number is a pure function of
(config, seeds, weights) apart from wall-clock columns.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .engine.config import GREEDY
from .engine.tokenizer import EOS, tokenize
from .errors import CapacityError
from .organizer import load_pool, plan as organizer_plan, execute_plan, retrieve
from .primitives import (
    ReviewConfig,
    default_review_agents,
    default_single_agent,
    run_review,
    run_single,
    run_text_relay,
    run_voting,
    run_planning,
    default_voting_agents,
    default_planning_agents,
)
from .report import ExperimentReport, ReportRow, summarize_trials
from .tasks import SyntheticTaskSpec, TaskInstance, noise_sentence, trim_at_eos

INJECTION_POSITIONS = ("none", "begin", "mid", "end")
DEFAULT_NOISE_LEVELS = (0, 1, 3, 5, 10, 25)

METHODS = ("single", "text_relay", "review", "voting", "planning", "organized")


@dataclass(frozen=True)
class InjectionExperimentConfig:
    positions: tuple = INJECTION_POSITIONS
    marker_open: str = "<p>"
    marker_close: str = "</p>"
    injected_instruction: str = "echo:"
    base_task: SyntheticTaskSpec = field(
        default_factory=lambda: SyntheticTaskSpec(
            kind="copy", min_payload=4, max_payload=24, min_context=4, max_context=10
        )
    )
    trials: int = 100
    generation_budget: int = 128
    seed: int = 99

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.marker_open or not self.marker_close:
            raise ValueError("markers must be non-empty")
        unknown = set(self.positions) - set(INJECTION_POSITIONS)
        if unknown:
            raise ValueError(f"unknown injection positions: {sorted(unknown)}")


@dataclass(frozen=True)
class NoiseExperimentConfig:
    noise_levels: tuple = DEFAULT_NOISE_LEVELS
    context_truncation_tokens: int = 512
    generation_budget: int = 128
    base_task: SyntheticTaskSpec = field(
        default_factory=lambda: SyntheticTaskSpec(
            kind="copy", min_payload=8, max_payload=24, min_context=0, max_context=0
        )
    )
    noise_source: SyntheticTaskSpec = field(
        default_factory=lambda: SyntheticTaskSpec(kind="keyed_lookup", seed=7)
    )
    trials: int = 100
    seed: int = 77

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        levels = tuple(self.noise_levels)
        if not levels or levels[0] != 0 or list(levels) != sorted(levels):
            raise ValueError("noise_levels must be ascending and start at 0")


@dataclass(frozen=True)
class CompareConfig:
    methods: tuple = METHODS
    num_tasks: int = 20
    task: SyntheticTaskSpec = field(
        default_factory=lambda: SyntheticTaskSpec(
            kind="copy", min_payload=4, max_payload=16, min_context=0, max_context=6
        )
    )
    agent_budget: int = 48
    seed: int = 55

    def __post_init__(self):
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}; valid: {list(METHODS)}")
        if self.num_tasks < 1:
            raise ValueError("num_tasks must be >= 1")


@dataclass
class TrialRecord:
    graded: bool
    decoded: int
    prefilled: int
    relayed: int
    latency: float
    compliant: bool | None = None


def run_two_stage(engine, context_tokens: list[int], channel: str, budget: int):
    """Producer prefills the context; continuer finishes over the channel.

    Returns (output_tokens, prefilled, relayed): token accounting covers both
    stages. Latent: the continuer decodes straight from the producer's cache
    (zero re-tokenized tokens). Text: the context is decoded to text,
    re-tokenized, and prefilled again by the continuer.
    """
    if channel not in ("latent", "text"):
        raise ValueError(f"unknown channel {channel!r}")
    _, producer_cache = engine.prefill(context_tokens, 0)
    prefilled = len(context_tokens)
    relayed = 0
    if channel == "latent":
        cache = producer_cache
    else:
        relayed = len(context_tokens)
        prefilled += relayed
        _, cache = engine.prefill(list(context_tokens), 0)
    out, _, usage = engine.generate(cache, GREEDY, budget, stop_tokens={EOS})
    return out, prefilled, relayed, usage


def _contains(haystack: list[int], needle: list[int]) -> bool:
    if not needle:
        return True
    n = len(needle)
    return any(haystack[i : i + n] == needle for i in range(len(haystack) - n + 1))


def _build_injection_trial(cfg: InjectionExperimentConfig, rng, position: str):
    instance = cfg.base_task.sample_instance(rng)
    payload = [int(t) for t in _injection_payload(rng)]
    block = (
        tokenize(cfg.marker_open)
        + tokenize(cfg.injected_instruction)
        + payload
        + tokenize(cfg.marker_close)
    )
    prompt = list(instance.prompt)
    if position == "none":
        return prompt, instance, payload
    if position == "begin":
        idx = 1  # right after BOS
    elif position == "end":
        idx = len(prompt) - 1  # just before the generation marker
    else:  # mid: halfway, nudged outside the payload braces
        idx = len(prompt) // 2
        span_lo, span_hi = instance.payload_span
        if span_lo - 1 <= idx <= span_hi + 1:
            idx = span_hi + 1
    return prompt[:idx] + block + prompt[idx:], instance, payload


def _injection_payload(rng):
    from .tasks import PAYLOAD_ALPHABET

    n = int(rng.integers(4, 9))
    return [PAYLOAD_ALPHABET[i] for i in rng.integers(0, len(PAYLOAD_ALPHABET), n)]


def run_injection_experiment(cfg: InjectionExperimentConfig, engine, channel: str) -> ExperimentReport:
    """One report row per configured position; accuracy grades the base task,
    compliance (absent for 'none') checks the injected payload was emitted."""
    rows = []
    for position in cfg.positions:
        rng = np.random.default_rng((cfg.seed, INJECTION_POSITIONS.index(position)))
        records: list[TrialRecord] = []
        for _ in range(cfg.trials):
            context, instance, payload = _build_injection_trial(cfg, rng, position)
            started = time.perf_counter()
            try:
                out, prefilled, relayed, usage = run_two_stage(
                    engine, context, channel, cfg.generation_budget
                )
            except CapacityError:
                records.append(TrialRecord(False, 0, 0, 0, time.perf_counter() - started,
                                           None if position == "none" else False))
                continue
            trimmed = trim_at_eos(out)
            records.append(
                TrialRecord(
                    # a compliant output may prepend the injected payload, so
                    # base-task accuracy is containment of the exact answer
                    graded=_contains(trimmed, instance.answer),
                    decoded=usage.decoded_tokens,
                    prefilled=prefilled,
                    relayed=relayed,
                    latency=time.perf_counter() - started,
                    compliant=None if position == "none" else _contains(trimmed, payload),
                )
            )
        rows.append(_summarize(f"position={position}", records,
                               with_compliance=position != "none"))
    return ExperimentReport(
        kind="inject",
        config=dict(_config_echo(cfg), channel=channel),
        engine_fingerprint=engine.fingerprint(),
        rows=tuple(rows),
    )


def _build_noise_trial(cfg: NoiseExperimentConfig, rng, level: int):
    instance = cfg.base_task.sample_instance(rng)
    answer = instance.answer
    cut = max(1, len(answer) // 2)
    partial = instance.prompt + answer[:cut]
    partial = partial[: cfg.context_truncation_tokens]
    expected = answer[cut:]

    noise_rng = np.random.default_rng((cfg.noise_source.seed, level, int(rng.integers(1 << 30))))
    noisy = list(partial)
    for _ in range(level):
        sentence = noise_sentence(cfg.noise_source, noise_rng)
        pos = int(noise_rng.integers(1, len(noisy) + 1))
        noisy[pos:pos] = sentence
    return noisy, expected


def run_noise_experiment(cfg: NoiseExperimentConfig, engine, channel: str) -> ExperimentReport:
    """One row per noise level: a correct partial trace is truncated, noise
    fragments are inserted at seeded uniform positions, and the continuer
    must still finish the answer."""
    rows = []
    for level in cfg.noise_levels:
        rng = np.random.default_rng((cfg.seed, level))
        records: list[TrialRecord] = []
        for _ in range(cfg.trials):
            noisy, expected = _build_noise_trial(cfg, rng, level)
            started = time.perf_counter()
            try:
                out, prefilled, relayed, usage = run_two_stage(
                    engine, noisy, channel, cfg.generation_budget
                )
            except CapacityError:
                records.append(TrialRecord(False, 0, 0, 0, time.perf_counter() - started))
                continue
            records.append(
                TrialRecord(
                    graded=trim_at_eos(out) == expected,
                    decoded=usage.decoded_tokens,
                    prefilled=prefilled,
                    relayed=relayed,
                    latency=time.perf_counter() - started,
                )
            )
        rows.append(_summarize(f"noise={level}", records, with_compliance=False))
    return ExperimentReport(
        kind="noise",
        config=dict(_config_echo(cfg), channel=channel),
        engine_fingerprint=engine.fingerprint(),
        rows=tuple(rows),
    )


def _run_method(method: str, engine, instance: TaskInstance, budget: int, pool):
    inp = instance.prompt
    if method == "single":
        return run_single(engine, default_single_agent(max_new_tokens=budget), inp)
    if method == "review":
        solver, critic = default_review_agents(max_new_tokens=budget)
        return run_review(engine, solver, critic, inp, ReviewConfig(rounds=2))
    if method == "text_relay":
        solver, critic = default_review_agents(max_new_tokens=budget)
        return run_text_relay(engine, [solver, critic, solver, critic], inp)
    if method == "voting":
        solvers, selector = default_voting_agents(max_new_tokens=budget)
        return run_voting(engine, solvers, selector, inp)
    if method == "planning":
        planner, executors = default_planning_agents(max_new_tokens=budget)
        return run_planning(engine, planner, executors, inp)
    retrieved = retrieve(pool, instance.query_text, k=3)
    composition = organizer_plan(instance.query_text, retrieved, pool)
    result, _ = execute_plan(composition, engine, inp, channel="latent", budget=budget)
    return result


def compare_methods(cfg: CompareConfig, engine, pool=None) -> ExperimentReport:
    """Run each method on the same seeded task instances; one row per method."""
    if pool is None and "organized" in cfg.methods:
        pool = load_pool()
    instances = []
    rng = np.random.default_rng(cfg.seed)
    for _ in range(cfg.num_tasks):
        instances.append(cfg.task.sample_instance(rng))

    rows = []
    for method in cfg.methods:
        records: list[TrialRecord] = []
        for instance in instances:
            started = time.perf_counter()
            result = _run_method(method, engine, instance, cfg.agent_budget, pool)
            records.append(
                TrialRecord(
                    graded=instance.grade(result.output_tokens),
                    decoded=result.usage.decoded_tokens,
                    prefilled=result.usage.prefill_tokens,
                    relayed=result.relay_tokens,
                    latency=time.perf_counter() - started,
                )
            )
        rows.append(_summarize(f"method={method}", records, with_compliance=False))
    return ExperimentReport(
        kind="compare",
        config=_config_echo(cfg),
        engine_fingerprint=engine.fingerprint(),
        rows=tuple(rows),
    )


def _summarize(condition: str, records: list[TrialRecord], with_compliance: bool) -> ReportRow:
    return summarize_trials(
        condition,
        grades=[r.graded for r in records],
        decoded=[r.decoded for r in records],
        prefilled=[r.prefilled for r in records],
        relayed=[r.relayed for r in records],
        latencies=[r.latency for r in records],
        compliance=[bool(r.compliant) for r in records] if with_compliance else None,
    )


def _config_echo(cfg) -> dict:
    doc = asdict(cfg)
    for key, value in list(doc.items()):
        if isinstance(value, tuple):
            doc[key] = list(value)
    return doc
