"""The three agent primitives plus single-agent and text-relay baselines.

Every primitive consumes input tokens and returns a PrimitiveResult, the
same external shape as a single agent, so primitives compose and substitute
freely. Internal coordination is cache splicing only: no agent's output is
ever re-tokenized for another agent, and each trace entry records how many
relayed text tokens (always zero here) entered its context.

Token accounting convention: a step's prefill_tokens counts tokens that
entered its context as text (its system prompt, the task input, relayed
text). Content arriving via cache splice costs zero prefill tokens; that
difference is the structural saving of the latent channel.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

from .engine.cache import KVCache
from .engine.config import GREEDY, SamplingParams, UsageStats
from .engine.tokenizer import EOS
from .errors import CapacityError

# Shipped role prompts. These define role boundaries and interaction
# assumptions only; they carry no task-specific strategy.

REVIEW_SOLVER_PROMPT = """\
You are a helpful assistant acting as a Solver within a Review Primitive.
Your role is to participate in iterative refinement of a solution.
You may generate, evaluate, or revise intermediate internal reasoning states.

You should focus on identifying errors, inconsistencies, or missing reasoning,
and incorporate feedback from other internal agents to improve the solution.

Do not assume access to complete or finalized outputs from other agents.
Only the final refined result should be exposed as the external output."""

REVIEW_CRITIC_PROMPT = """\
You are a helpful assistant acting as a Critic within a Review Primitive.

Your role is to evaluate intermediate solution states and identify potential issues,
including errors, inconsistencies, or missing reasoning steps.

You should provide targeted feedback that helps guide further improvement,
but you must not revise, rewrite, or complete the solution yourself.

Do not produce a final answer.
Only provide evaluative signals to support refinement by other internal agents."""

VOTING_SOLVER_PROMPT = """\
You are a helpful assistant acting as a Solver within a Voting and Selection Primitive.

Your role is to independently generate a candidate solution to the given task.
You should rely only on the input query and your own reasoning process.

Do not assume access to solutions produced by other agents.
Do not attempt to coordinate or align with other Solvers.

Only your candidate solution will be used for subsequent comparison or selection."""

VOTING_SELECTOR_PROMPT = """\
You are a helpful assistant acting as a Selector within a Voting and Selection Primitive.

Your role is to evaluate multiple candidate solutions produced by different agents
and select or aggregate them into a single final result.

You should base your decision on correctness, consistency, and overall solution quality.
Do not introduce new reasoning that is not grounded in the provided candidates.

Only the selected or aggregated result should be exposed as the external output."""

PLANNER_PROMPT = """\
You are a helpful assistant acting as a Planner within a Planning and Execution Primitive.

Your role is to analyze the input task and construct a structured plan
that decomposes the task into intermediate steps or subgoals.

Focus on outlining what needs to be done rather than performing the task itself.
Do not produce the final solution.

The generated plan will be used to guide subsequent task execution."""

EXECUTOR_PROMPT = """\
You are a helpful assistant acting as an Executor within a Planning and Execution Primitive.

Your role is to perform task-specific reasoning and execution
based on a plan produced by another internal agent.

You should follow the given plan and focus on completing the required steps.
Do not modify or redesign the plan.

Only the final execution result should be exposed as the external output."""

SINGLE_AGENT_PROMPT = "You are a helpful assistant. Solve the given task."


@dataclass(frozen=True)
class AgentSpec:
    name: str
    system_prompt: str
    sampling: SamplingParams = GREEDY
    max_new_tokens: int = 48
    stop_tokens: frozenset = frozenset({EOS})

    def __post_init__(self):
        if not self.system_prompt:
            raise ValueError("system_prompt must be non-empty")
        if self.max_new_tokens < 1:
            raise ValueError("max_new_tokens must be >= 1")

    def with_budget(self, max_new_tokens: int) -> "AgentSpec":
        return replace(self, max_new_tokens=max_new_tokens)


@dataclass
class AgentStep:
    agent: str
    role: str
    decoded_tokens: int
    context_len: int
    prefill_tokens: int
    relay_tokens: int
    wall_seconds: float


@dataclass
class PrimitiveResult:
    output_tokens: list[int]
    final_cache: KVCache
    usage: UsageStats
    trace: list[AgentStep] = field(default_factory=list)

    def check_accounting(self) -> None:
        assert self.usage.decoded_tokens == sum(s.decoded_tokens for s in self.trace)
        assert self.usage.generations == len(self.trace)

    @property
    def relay_tokens(self) -> int:
        return sum(s.relay_tokens for s in self.trace)


@dataclass(frozen=True)
class ReviewConfig:
    """Round cap plus an observable early-stop: the loop ends when the
    critic's first emitted token is approval_token (None disables it) or the
    pluggable stop predicate fires on the critic's latent state."""

    rounds: int = 2
    approval_token: Optional[int] = None
    stop_predicate: Optional[Callable[[KVCache, list[int]], bool]] = None

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")


@dataclass(frozen=True)
class VotingConfig:
    num_solvers: int = 3

    def __post_init__(self):
        if self.num_solvers < 1:
            raise ValueError("num_solvers must be >= 1")


@dataclass(frozen=True)
class PlanningConfig:
    num_executors: int = 3
    reducer: Optional[Callable[[list[list[int]]], list[int]]] = None

    def __post_init__(self):
        if self.num_executors < 1:
            raise ValueError("num_executors must be >= 1")


def default_single_agent(**overrides) -> AgentSpec:
    return AgentSpec(name="single", system_prompt=SINGLE_AGENT_PROMPT, **overrides)


def default_review_agents(**overrides) -> tuple[AgentSpec, AgentSpec]:
    solver = AgentSpec(name="solver", system_prompt=REVIEW_SOLVER_PROMPT, **overrides)
    critic = AgentSpec(name="critic", system_prompt=REVIEW_CRITIC_PROMPT, **overrides)
    return solver, critic


def default_voting_agents(num_solvers: int = 3, **overrides):
    solvers = [
        AgentSpec(name=f"solver-{i + 1}", system_prompt=VOTING_SOLVER_PROMPT, **overrides)
        for i in range(num_solvers)
    ]
    selector = AgentSpec(name="selector", system_prompt=VOTING_SELECTOR_PROMPT, **overrides)
    return solvers, selector


def default_planning_agents(num_executors: int = 3, **overrides):
    planner = AgentSpec(name="planner", system_prompt=PLANNER_PROMPT, **overrides)
    executors = [
        AgentSpec(name=f"executor-{i + 1}", system_prompt=EXECUTOR_PROMPT, **overrides)
        for i in range(num_executors)
    ]
    return planner, executors


def _entry_context(engine, agent: AgentSpec, input_tokens, upstream_cache):
    """Fresh context for an agent: its system prompt, an optional upstream
    cache spliced behind it, then any input tokens."""
    cache = engine.sys_cache(agent.system_prompt)
    prefilled = cache.current_len
    if upstream_cache is not None and upstream_cache.current_len:
        cache, _ = engine.splice(cache, upstream_cache)
    if input_tokens:
        _, cache = engine.extend(cache, list(input_tokens))
        prefilled += len(input_tokens)
    return cache, prefilled


def _run_step(engine, agent: AgentSpec, cache, prefilled: int, relay: int, role: str):
    started = time.perf_counter()
    context_len = cache.current_len
    tokens, cache, gen_usage = engine.generate(
        cache, agent.sampling, agent.max_new_tokens, agent.stop_tokens
    )
    step = AgentStep(
        agent=agent.name,
        role=role,
        decoded_tokens=len(tokens),
        context_len=context_len,
        prefill_tokens=prefilled,
        relay_tokens=relay,
        wall_seconds=time.perf_counter() - started,
    )
    usage = UsageStats(
        decoded_tokens=len(tokens),
        prefill_tokens=prefilled,
        wall_seconds=step.wall_seconds,
        generations=1,
        truncated=gen_usage.truncated,
    )
    return tokens, cache, step, usage


def run_single(engine, agent: AgentSpec, input_tokens, upstream_cache=None) -> PrimitiveResult:
    cache, prefilled = _entry_context(engine, agent, input_tokens, upstream_cache)
    tokens, cache, step, usage = _run_step(engine, agent, cache, prefilled, 0, "single")
    return PrimitiveResult(output_tokens=tokens, final_cache=cache, usage=usage, trace=[step])


def run_review(
    engine,
    solver: AgentSpec,
    critic: AgentSpec,
    input_tokens,
    cfg: ReviewConfig = ReviewConfig(),
    upstream_cache=None,
) -> PrimitiveResult:
    """Latent self-critique loop: the critic reads the solver's cache, the
    solver refines conditioned on the critic's cache, both by splicing."""
    usage = UsageStats()
    trace: list[AgentStep] = []
    solver_out: list[int] = []
    solver_cache = None
    critic_cache = None

    for round_no in range(1, cfg.rounds + 1):
        try:
            if round_no == 1:
                ctx, prefilled = _entry_context(engine, solver, input_tokens, upstream_cache)
            else:
                # refinement: the solver's own full cache, critic feedback behind it
                ctx, _ = engine.splice(solver_cache, critic_cache)
                prefilled = 0
            solver_out, solver_cache, step, u = _run_step(
                engine, solver, ctx, prefilled, 0, "solver"
            )
            trace.append(step)
            usage.add(u)

            critic_ctx, critic_prefilled = _entry_context(engine, critic, [], None)
            critic_ctx, _ = engine.splice(critic_ctx, solver_cache)
            critic_out, critic_cache, step, u = _run_step(
                engine, critic, critic_ctx, critic_prefilled, 0, "critic"
            )
            trace.append(step)
            usage.add(u)
        except CapacityError as exc:
            raise CapacityError(f"review round {round_no}: {exc}") from exc

        if cfg.approval_token is not None and critic_out and critic_out[0] == cfg.approval_token:
            break
        if cfg.stop_predicate is not None and cfg.stop_predicate(critic_cache, critic_out):
            break

    result = PrimitiveResult(
        output_tokens=solver_out, final_cache=solver_cache, usage=usage, trace=trace
    )
    result.check_accounting()
    return result


def run_voting(
    engine,
    solvers: list[AgentSpec],
    selector: AgentSpec,
    input_tokens,
    cfg: VotingConfig = VotingConfig(),
    upstream_cache=None,
) -> PrimitiveResult:
    """Independent solver fan-out; the selector decodes conditioned on all
    candidate caches spliced behind its prompt in solver-index order."""
    if len(solvers) != cfg.num_solvers:
        raise ValueError(f"expected {cfg.num_solvers} solvers, got {len(solvers)}")
    usage = UsageStats()
    trace: list[AgentStep] = []
    candidates: list[KVCache] = []
    for solver in solvers:
        ctx, prefilled = _entry_context(engine, solver, input_tokens, upstream_cache)
        _, cache, step, u = _run_step(engine, solver, ctx, prefilled, 0, "solver")
        trace.append(step)
        usage.add(u)
        candidates.append(cache)

    sel_ctx, sel_prefilled = _entry_context(engine, selector, [], None)
    for idx, cand in enumerate(candidates):
        try:
            sel_ctx, _ = engine.splice(sel_ctx, cand)
        except CapacityError as exc:
            raise CapacityError(f"folding candidate {idx}: {exc}") from exc
    out, sel_cache, step, u = _run_step(engine, selector, sel_ctx, sel_prefilled, 0, "selector")
    trace.append(step)
    usage.add(u)

    result = PrimitiveResult(output_tokens=out, final_cache=sel_cache, usage=usage, trace=trace)
    result.check_accounting()
    return result


def run_planning(
    engine,
    planner: AgentSpec,
    executors: list[AgentSpec],
    input_tokens,
    cfg: PlanningConfig = PlanningConfig(),
    upstream_cache=None,
) -> PrimitiveResult:
    """Planner emits a latent plan; every executor decodes conditioned on the
    identical plan cache. Executor outputs concatenate in index order unless
    a reducer is supplied."""
    if len(executors) != cfg.num_executors:
        raise ValueError(f"expected {cfg.num_executors} executors, got {len(executors)}")
    usage = UsageStats()
    trace: list[AgentStep] = []

    ctx, prefilled = _entry_context(engine, planner, input_tokens, upstream_cache)
    _, plan_cache, step, u = _run_step(engine, planner, ctx, prefilled, 0, "planner")
    trace.append(step)
    usage.add(u)

    outputs: list[list[int]] = []
    last_cache = plan_cache
    for executor in executors:
        ex_ctx, ex_prefilled = _entry_context(engine, executor, [], None)
        ex_ctx, _ = engine.splice(ex_ctx, plan_cache)
        out, last_cache, step, u = _run_step(engine, executor, ex_ctx, ex_prefilled, 0, "executor")
        trace.append(step)
        usage.add(u)
        outputs.append(out)

    reduce = cfg.reducer or (lambda outs: [t for o in outs for t in o])
    result = PrimitiveResult(
        output_tokens=reduce(outputs), final_cache=last_cache, usage=usage, trace=trace
    )
    result.check_accounting()
    return result


def run_text_relay(engine, agents: list[AgentSpec], input_tokens) -> PrimitiveResult:
    """Baseline channel: each agent's decoded text is re-tokenized and
    appended to the next agent's prompt, accumulating the full history."""
    if len(agents) < 2:
        raise ValueError("text relay needs at least 2 agents")
    usage = UsageStats()
    trace: list[AgentStep] = []
    history: list[int] = []
    out: list[int] = []
    cache = None
    for agent in agents:
        relayed = list(history)
        ctx, prefilled = _entry_context(engine, agent, list(input_tokens) + relayed, None)
        out, cache, step, u = _run_step(
            engine, agent, ctx, prefilled, len(relayed), agent.name
        )
        trace.append(step)
        usage.add(u)
        history.extend(out)

    result = PrimitiveResult(output_tokens=out, final_cache=cache, usage=usage, trace=trace)
    result.check_accounting()
    return result
