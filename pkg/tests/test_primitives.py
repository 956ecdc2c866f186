from dataclasses import dataclass, field

import numpy as np
import pytest

from kvmas.engine import EOS, GREEDY, UsageStats, default_config
from kvmas.errors import CapacityError
from kvmas.primitives import (
    AgentSpec,
    PlanningConfig,
    PrimitiveResult,
    ReviewConfig,
    VotingConfig,
    default_planning_agents,
    default_review_agents,
    default_single_agent,
    default_voting_agents,
    run_planning,
    run_review,
    run_single,
    run_text_relay,
    run_voting,
)
from kvmas.runtime import LocalEngine

from conftest import random_tokens


@pytest.fixture(scope="module")
def engine():
    """Default-shape engine (randomly initialized weights)."""
    return LocalEngine.from_config(default_config(seed=42))


@pytest.fixture(scope="module")
def small_engine(tiny_weights):
    return LocalEngine(tiny_weights)


def short(spec_factory, budget=6):
    """Default agents with a small decoding budget for quick tests."""
    out = spec_factory()
    if isinstance(out, tuple):
        first, rest = out[0], out[1]
        if isinstance(first, list):
            return [a.with_budget(budget) for a in first], rest.with_budget(budget)
        if isinstance(rest, list):
            return first.with_budget(budget), [a.with_budget(budget) for a in rest]
        return first.with_budget(budget), rest.with_budget(budget)
    return out.with_budget(budget)


# --- stub engine ----------------------------------------------------------------

@dataclass
class StubCache:
    parts: tuple
    current_len: int
    position_base: int = 0


@dataclass
class StubReport:
    prefix_len: int
    suffix_len: int
    total_len: int
    applied_offset: int


@dataclass
class StubEngine:
    """Scripted engine: every generation emits `script`, contexts are tuples
    of labels so tests can see exactly what was spliced where."""

    script: list = field(default_factory=lambda: [7, 8, 9])
    splices: list = field(default_factory=list)

    def sys_cache(self, prompt):
        return StubCache(parts=(("sys", prompt[:16]),), current_len=1 + len(prompt))

    def extend(self, cache, tokens):
        new = StubCache(cache.parts + (("text", tuple(tokens)),), cache.current_len + len(tokens))
        return None, new

    def splice(self, prefix, suffix, reencode=True):
        combined = StubCache(
            parts=prefix.parts + (("spliced", suffix.parts),),
            current_len=prefix.current_len + suffix.current_len,
        )
        self.splices.append((prefix.current_len, suffix.current_len))
        return combined, StubReport(prefix.current_len, suffix.current_len,
                                    combined.current_len, prefix.current_len)

    def generate(self, cache, params, max_new_tokens, stop_tokens=frozenset()):
        out = list(self.script[:max_new_tokens])
        new = StubCache(cache.parts + (("gen", tuple(out)),), cache.current_len + len(out))
        return out, new, UsageStats(decoded_tokens=len(out), generations=1)


# --- run_single -------------------------------------------------------------------

def test_single_trace_and_budget(small_engine, rng):
    agent = AgentSpec(name="a", system_prompt="do the task", max_new_tokens=5)
    result = run_single(small_engine, agent, random_tokens(rng, 6))
    assert len(result.trace) == 1
    assert result.usage.decoded_tokens <= 5
    assert result.usage.generations == 1
    result.check_accounting()


def test_single_greedy_deterministic(small_engine, rng):
    agent = AgentSpec(name="a", system_prompt="do the task", max_new_tokens=8)
    inp = random_tokens(rng, 5)
    r1 = run_single(small_engine, agent, inp)
    r2 = run_single(small_engine, agent, inp)
    assert r1.output_tokens == r2.output_tokens
    assert r1.final_cache.content_hash() == r2.final_cache.content_hash()


def test_agent_spec_validation():
    with pytest.raises(ValueError, match="non-empty"):
        AgentSpec(name="x", system_prompt="")
    with pytest.raises(ValueError, match="max_new_tokens"):
        AgentSpec(name="x", system_prompt="p", max_new_tokens=0)


# --- review -----------------------------------------------------------------------

def test_review_default_shape(engine, rng):
    solver, critic = short(default_review_agents)
    result = run_review(engine, solver, critic, random_tokens(rng, 8), ReviewConfig(rounds=2))
    assert len(result.trace) == 4
    assert [s.role for s in result.trace] == ["solver", "critic", "solver", "critic"]
    assert result.usage.generations == 4
    assert result.relay_tokens == 0
    # output is the solver's final generation (trace entry 2)
    assert len(result.output_tokens) == result.trace[2].decoded_tokens


def test_review_early_stop_on_approval():
    stub = StubEngine(script=[42, 3, 3])
    solver, critic = default_review_agents()
    result = run_review(stub, solver.with_budget(3), critic.with_budget(3),
                        [1, 2], ReviewConfig(rounds=2, approval_token=42))
    assert len(result.trace) == 2
    assert [s.role for s in result.trace] == ["solver", "critic"]


def test_review_stop_predicate_hook():
    stub = StubEngine(script=[1, 2, 3])
    solver, critic = default_review_agents()
    calls = []

    def predicate(cache, tokens):
        calls.append((cache.current_len, tuple(tokens)))
        return True

    result = run_review(stub, solver.with_budget(3), critic.with_budget(3),
                        [1, 2], ReviewConfig(rounds=3, stop_predicate=predicate))
    assert len(result.trace) == 2
    assert len(calls) == 1


def test_review_zero_relay_tokens(engine, rng):
    solver, critic = short(default_review_agents)
    result = run_review(engine, solver, critic, random_tokens(rng, 4), ReviewConfig(rounds=2))
    assert all(s.relay_tokens == 0 for s in result.trace)


def test_review_capacity_error_names_round(tiny_weights, rng):
    engine = LocalEngine(tiny_weights)  # max_seq_len 512
    solver = AgentSpec(name="s", system_prompt="x" * 100, max_new_tokens=8)
    critic = AgentSpec(name="c", system_prompt="y" * 100, max_new_tokens=8)
    with pytest.raises(CapacityError, match="review round"):
        run_review(engine, solver, critic, random_tokens(rng, 40), ReviewConfig(rounds=3))


# --- voting -----------------------------------------------------------------------

def test_voting_default_shape(engine, rng):
    solvers, selector = short(default_voting_agents)
    result = run_voting(engine, solvers, selector, random_tokens(rng, 8))
    assert len(result.trace) == 4
    assert [s.role for s in result.trace] == ["solver", "solver", "solver", "selector"]
    assert result.relay_tokens == 0
    result.check_accounting()


def test_voting_selector_context_length():
    stub = StubEngine()
    solvers, selector = default_voting_agents()
    solvers = [s.with_budget(3) for s in solvers]
    result = run_voting(stub, solvers, selector.with_budget(3), [1, 2, 3])
    sel_step = result.trace[-1]
    sel_prompt_len = stub.sys_cache(selector.system_prompt).current_len
    candidate_lens = [stub.sys_cache(s.system_prompt).current_len + 3 + 3 for s in solvers]
    assert sel_step.context_len == sel_prompt_len + sum(candidate_lens)


def test_voting_stub_pipeline_contains_all_candidates():
    stub = StubEngine(script=[5, 5, 5])
    solvers, selector = default_voting_agents()
    result = run_voting(stub, [s.with_budget(3) for s in solvers], selector.with_budget(3), [9])
    assert len(result.trace) == 4
    # selector's fold made exactly 3 splices after the 0 solver splices
    assert len(stub.splices) == 3


def test_voting_solver_count_mismatch(engine):
    solvers, selector = default_voting_agents(num_solvers=2)
    with pytest.raises(ValueError, match="expected 3 solvers"):
        run_voting(engine, solvers, selector, [1], VotingConfig(num_solvers=3))


# --- planning ---------------------------------------------------------------------

def test_planning_default_shape(engine, rng):
    planner, executors = short(default_planning_agents)
    result = run_planning(engine, planner, executors, random_tokens(rng, 8))
    assert len(result.trace) == 4
    assert [s.role for s in result.trace] == ["planner", "executor", "executor", "executor"]
    assert result.relay_tokens == 0


def test_planning_executors_share_identical_plan():
    stub = StubEngine(script=[4, 4])
    planner, executors = default_planning_agents()
    run_planning(stub, planner.with_budget(2), [e.with_budget(2) for e in executors], [1, 2])
    # three splices (one per executor), all with the same suffix length
    assert len(stub.splices) == 3
    assert len({suffix for _, suffix in stub.splices}) == 1


def test_planning_identical_executor_outputs(engine, rng):
    planner, executors = short(default_planning_agents)
    result = run_planning(engine, planner, executors, random_tokens(rng, 6))
    per_exec = result.output_tokens
    n = len(per_exec) // 3
    assert per_exec[:n] == per_exec[n : 2 * n] == per_exec[2 * n :]


def test_planning_reducer_hook():
    stub = StubEngine(script=[4, 4])
    planner, executors = default_planning_agents()
    cfg = PlanningConfig(reducer=lambda outs: outs[0])
    result = run_planning(stub, planner.with_budget(2), [e.with_budget(2) for e in executors],
                          [1], cfg)
    assert result.output_tokens == [4, 4]


# --- text relay ---------------------------------------------------------------------

def test_text_relay_requires_two_agents(engine):
    with pytest.raises(ValueError, match="at least 2"):
        run_text_relay(engine, [default_single_agent()], [1])


def test_text_relay_passes_tokens_forward(small_engine, rng):
    a1 = AgentSpec(name="a1", system_prompt="first", max_new_tokens=5)
    a2 = AgentSpec(name="a2", system_prompt="second", max_new_tokens=5)
    result = run_text_relay(small_engine, [a1, a2], random_tokens(rng, 4))
    first_out = result.trace[0].decoded_tokens
    assert result.trace[1].relay_tokens == first_out
    assert result.trace[1].prefill_tokens >= first_out
    assert result.relay_tokens > 0


def test_text_relay_vs_latent_review_accounting(engine, rng):
    """The structural source of the latent channel's savings: on the same
    4-agent pipeline, text relay re-tokenizes agent output (relay > 0) and
    prefills strictly more; the latent loop relays exactly zero."""
    solver, critic = short(default_review_agents)
    inp = random_tokens(rng, 8)
    latent = run_review(engine, solver, critic, inp, ReviewConfig(rounds=2))
    text = run_text_relay(engine, [solver, critic, solver, critic], inp)
    assert latent.relay_tokens == 0
    assert text.relay_tokens > 0
    assert text.usage.prefill_tokens > latent.usage.prefill_tokens


# --- uniform interface ----------------------------------------------------------------

def test_primitives_are_substitutable(engine, rng):
    """Every primitive consumes tokens and yields a PrimitiveResult."""
    inp = random_tokens(rng, 5)
    solver, critic = short(default_review_agents, budget=4)
    solvers, selector = short(default_voting_agents, budget=4)
    planner, executors = short(default_planning_agents, budget=4)
    results = [
        run_single(engine, default_single_agent(max_new_tokens=4), inp),
        run_review(engine, solver, critic, inp),
        run_voting(engine, solvers, selector, inp),
        run_planning(engine, planner, executors, inp),
        run_text_relay(engine, [default_single_agent(max_new_tokens=4),
                                default_single_agent(max_new_tokens=4)], inp),
    ]
    for r in results:
        assert isinstance(r, PrimitiveResult)
        assert isinstance(r.output_tokens, list)
        assert r.usage.generations == len(r.trace)
        assert all(s.wall_seconds >= 0 for s in r.trace)


def test_primitive_accepts_upstream_cache(small_engine, rng):
    _, upstream = small_engine.prefill(random_tokens(rng, 10), 0)
    agent = AgentSpec(name="a", system_prompt="continue", max_new_tokens=4)
    result = run_single(small_engine, agent, [], upstream_cache=upstream)
    assert result.trace[0].context_len == small_engine.sys_cache("continue").current_len + 10
    assert result.trace[0].prefill_tokens == small_engine.sys_cache("continue").current_len
