"""Query-to-structure planning over a knowledge pool, plus plan execution.

The organizer retrieves prior (query pattern -> structure) entries by
character-trigram cosine similarity, then either copies the best structure
(rule-based mode, fully offline) or asks an external chat service to
compose one, falling back to rule-based on any malformed response. Every
plan leaving plan() passes validate_plan.
"""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources

from .engine.config import UsageStats
from .errors import PlanExecutionError, PlanningError, PoolError
from .primitives import (
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
    run_voting,
)

log = logging.getLogger(__name__)

PLAN_KINDS = ("single", "review", "voting", "planning")

ORGANIZER_PROMPT = """\
You are a helpful assistant acting as the Organizer.

Your role is to construct a primitive-based multi-agent system for a given input query.
You are responsible for selecting appropriate Agent Primitives
and determining how they should be composed to fulfill the task.

You must reason at the level of primitives, not individual agent behaviors.
Do not design task-specific agent roles or natural-language interaction protocols.

You must not solve the task or generate the final answer.
Your output should describe system structure only.

Input

You are given:
- A user query specifying the task.
- A set of available Agent Primitives, including Review,
  Voting and Selection, and Planning and Execution.
- A Knowledge Pool containing previously observed queries
  paired with effective multi-agent system structures.

Instruction

Given the input query:
1. Analyze the task requirements and complexity.
2. Select appropriate Agent Primitives from the available set.
3. Determine the execution order and composition structure of the selected primitives.

When consulting the Knowledge Pool, use retrieved examples only as structural guidance.
Abstract retrieved systems into compositions of Agent Primitives,
and replace task-specific agents with corresponding primitives.

Output

Produce a primitive composition plan that specifies:
- Which Agent Primitives are instantiated.
- How the primitives are composed in code.

Do not include task solutions, intermediate reasoning, or final answers."""

PLAN_FORMAT_INSTRUCTIONS = """\
Return the composition plan as a single fenced JSON block:

```json
{"nodes": [{"id": "<node id>", "kind": "single|review|voting|planning",
            "config": {...}}],
 "edges": [["<from>", "<to>"], ...],
 "entry": "<node id>", "exit": "<node id>"}
```

Config keys: review -> {"rounds": int}; voting -> {"num_solvers": int};
planning -> {"num_executors": int}; single -> {}. Anything outside the
fenced block is ignored."""


# --- composition plans --------------------------------------------------------------


@dataclass(frozen=True)
class PlanNode:
    node_id: str
    kind: str
    config: dict = field(default_factory=dict)
    agent_overrides: dict = field(default_factory=dict)


@dataclass(frozen=True)
class CompositionPlan:
    nodes: tuple
    edges: tuple  # (from_id, to_id) pairs
    entry: str
    exit: str

    def node_map(self) -> dict:
        return {n.node_id: n for n in self.nodes}

    def to_dict(self) -> dict:
        return {
            "nodes": [
                {"id": n.node_id, "kind": n.kind, "config": dict(n.config)}
                for n in self.nodes
            ],
            "edges": [list(e) for e in self.edges],
            "entry": self.entry,
            "exit": self.exit,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CompositionPlan":
        if not isinstance(doc, dict):
            raise ValueError("plan document must be a JSON object")
        raw_nodes = doc.get("nodes")
        if not isinstance(raw_nodes, list) or not raw_nodes:
            raise ValueError("plan must define a non-empty 'nodes' list")
        nodes = []
        for item in raw_nodes:
            if not isinstance(item, dict) or "id" not in item or "kind" not in item:
                raise ValueError("every node needs 'id' and 'kind'")
            cfg = item.get("config", {})
            if not isinstance(cfg, dict):
                raise ValueError("node 'config' must be an object")
            nodes.append(PlanNode(node_id=str(item["id"]), kind=str(item["kind"]), config=cfg))
        raw_edges = doc.get("edges", [])
        if not isinstance(raw_edges, list):
            raise ValueError("'edges' must be a list")
        edges = []
        for e in raw_edges:
            if not isinstance(e, (list, tuple)) or len(e) != 2:
                raise ValueError("every edge must be a [from, to] pair")
            edges.append((str(e[0]), str(e[1])))
        if "entry" not in doc or "exit" not in doc:
            raise ValueError("plan must name 'entry' and 'exit' nodes")
        return cls(
            nodes=tuple(nodes),
            edges=tuple(edges),
            entry=str(doc["entry"]),
            exit=str(doc["exit"]),
        )


def single_node_plan(kind: str, config: dict | None = None) -> CompositionPlan:
    node = PlanNode(node_id="n1", kind=kind, config=config or {})
    return CompositionPlan(nodes=(node,), edges=(), entry="n1", exit="n1")


def validate_plan(plan: CompositionPlan) -> list[str]:
    """Full list of invariant violations; empty means valid."""
    violations: list[str] = []
    ids = [n.node_id for n in plan.nodes]
    if not ids:
        return ["plan has no nodes"]
    seen = set()
    for i in ids:
        if i in seen:
            violations.append(f"duplicate node id '{i}'")
        seen.add(i)
    node_map = {n.node_id: n for n in plan.nodes}

    if plan.entry not in node_map:
        violations.append(f"entry node '{plan.entry}' not defined")
    if plan.exit not in node_map:
        violations.append(f"exit node '{plan.exit}' not defined")

    adjacency: dict[str, list[str]] = {i: [] for i in node_map}
    indegree = {i: 0 for i in node_map}
    for src, dst in plan.edges:
        if src not in node_map:
            violations.append(f"edge references unknown node '{src}'")
            continue
        if dst not in node_map:
            violations.append(f"edge references unknown node '{dst}'")
            continue
        adjacency[src].append(dst)
        indegree[dst] += 1

    if plan.entry in node_map and indegree.get(plan.entry, 0) > 0:
        violations.append(f"entry node '{plan.entry}' has incoming edges")

    # cycle check (Kahn)
    order, queue = [], sorted(i for i, d in indegree.items() if d == 0)
    deg = dict(indegree)
    while queue:
        cur = queue.pop(0)
        order.append(cur)
        for nxt in adjacency[cur]:
            deg[nxt] -= 1
            if deg[nxt] == 0:
                queue.append(nxt)
        queue.sort()
    if len(order) != len(node_map):
        stuck = sorted(set(node_map) - set(order))
        violations.append(f"cycle detected involving nodes {stuck}")

    if plan.entry in node_map and len(order) == len(node_map):
        reachable = {plan.entry}
        frontier = [plan.entry]
        while frontier:
            cur = frontier.pop()
            for nxt in adjacency[cur]:
                if nxt not in reachable:
                    reachable.add(nxt)
                    frontier.append(nxt)
        unreachable = sorted(set(node_map) - reachable)
        if unreachable:
            violations.append(f"nodes unreachable from entry: {unreachable}")

    for node in plan.nodes:
        violations.extend(_validate_node_config(node))
    return violations


def _validate_node_config(node: PlanNode) -> list[str]:
    if node.kind not in PLAN_KINDS:
        return [f"node '{node.node_id}': unknown kind '{node.kind}'"]
    bad = []
    cfg = node.config
    if node.kind == "review":
        rounds = cfg.get("rounds", 2)
        if not isinstance(rounds, int) or rounds < 1:
            bad.append(f"node '{node.node_id}': review needs rounds >= 1")
    elif node.kind == "voting":
        n = cfg.get("num_solvers", 3)
        if not isinstance(n, int) or n < 1:
            bad.append(f"node '{node.node_id}': voting needs num_solvers >= 1")
    elif node.kind == "planning":
        n = cfg.get("num_executors", 3)
        if not isinstance(n, int) or n < 1:
            bad.append(f"node '{node.node_id}': planning needs num_executors >= 1")
    return bad


# --- knowledge pool -------------------------------------------------------------------


@dataclass(frozen=True)
class KnowledgeEntry:
    entry_id: str
    query_pattern: str
    structure: CompositionPlan
    source_tag: str = ""


@dataclass(frozen=True)
class KnowledgePool:
    version: str
    entries: tuple

    def __post_init__(self):
        ids = [e.entry_id for e in self.entries]
        if len(ids) != len(set(ids)):
            raise PoolError("knowledge pool entry ids must be unique")


def pool_from_dict(doc: dict) -> KnowledgePool:
    if not isinstance(doc, dict) or "entries" not in doc:
        raise PoolError("pool document must be an object with an 'entries' list")
    entries = []
    for item in doc["entries"]:
        entry_id = item.get("id", "<missing id>")
        try:
            structure = CompositionPlan.from_dict(item["structure"])
            violations = validate_plan(structure)
            if violations:
                raise ValueError("; ".join(violations))
        except (KeyError, ValueError) as exc:
            raise PoolError(f"pool entry '{entry_id}' invalid: {exc}") from exc
        if not item.get("query_pattern"):
            raise PoolError(f"pool entry '{entry_id}' invalid: empty query_pattern")
        entries.append(
            KnowledgeEntry(
                entry_id=str(entry_id),
                query_pattern=str(item["query_pattern"]),
                structure=structure,
                source_tag=str(item.get("source_tag", "")),
            )
        )
    return KnowledgePool(version=str(doc.get("version", "0")), entries=tuple(entries))


def load_pool(path=None) -> KnowledgePool:
    """Load a pool file; with no path, the shipped seed pool."""
    if path is None:
        data = resources.files("kvmas.data").joinpath("seed_pool.json").read_text()
    else:
        with open(path, "r", encoding="utf-8") as fh:
            data = fh.read()
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise PoolError(f"pool file is not valid JSON: {exc}") from exc
    return pool_from_dict(doc)


# --- retrieval ---------------------------------------------------------------------------


def _trigram_counts(text: str) -> Counter:
    norm = " ".join(text.lower().split())
    if len(norm) < 3:
        return Counter({norm: 1}) if norm else Counter()
    return Counter(norm[i : i + 3] for i in range(len(norm) - 2))


def _cosine(a: Counter, b: Counter) -> float:
    if not a or not b:
        return 0.0
    dot = sum(cnt * b[g] for g, cnt in a.items())
    if dot == 0:
        return 0.0
    na = sum(c * c for c in a.values())
    nb = sum(c * c for c in b.values())
    if dot * dot == na * nb:  # integer arithmetic: exact parallel vectors
        return 1.0
    return dot / (na**0.5 * nb**0.5)


@dataclass
class RetrievalResult:
    ranked: list  # (entry_id, score), scores non-increasing

    def top_entry_id(self) -> str:
        return self.ranked[0][0]


def retrieve(pool: KnowledgePool, query: str, k: int) -> RetrievalResult:
    """Top-k entries by trigram cosine similarity; ties break by entry id."""
    if not pool.entries:
        raise PoolError("cannot retrieve from an empty knowledge pool")
    if k < 1:
        raise ValueError("k must be >= 1")
    qv = _trigram_counts(query)
    scored = sorted(
        ((e.entry_id, _cosine(qv, _trigram_counts(e.query_pattern))) for e in pool.entries),
        key=lambda pair: (-pair[1], pair[0]),
    )
    return RetrievalResult(ranked=scored[: min(k, len(scored))])


# --- planning ---------------------------------------------------------------------------


class RuleBasedOrganizer:
    """Offline organizer: copy the structure of the best-retrieved entry."""

    def plan(self, query: str, retrieved: RetrievalResult, pool: KnowledgePool) -> CompositionPlan:
        by_id = {e.entry_id: e for e in pool.entries}
        return by_id[retrieved.top_entry_id()].structure


class ExternalOrganizer:
    """Organizer backed by a chat-completion endpoint via the gateway."""

    def __init__(self, endpoint_config):
        self.endpoint_config = endpoint_config

    def plan(self, query: str, retrieved: RetrievalResult, pool: KnowledgePool) -> CompositionPlan:
        from .gateway import ChatMessage, chat_complete

        by_id = {e.entry_id: e for e in pool.entries}
        guidance = [
            {
                "query_pattern": by_id[eid].query_pattern,
                "source_tag": by_id[eid].source_tag,
                "structure": by_id[eid].structure.to_dict(),
            }
            for eid, _ in retrieved.ranked
            if eid in by_id
        ]
        user = (
            f"Query:\n{query}\n\nRetrieved structures:\n"
            f"{json.dumps(guidance, indent=2)}\n\n{PLAN_FORMAT_INSTRUCTIONS}"
        )
        text = chat_complete(
            self.endpoint_config,
            [ChatMessage("system", ORGANIZER_PROMPT), ChatMessage("user", user)],
        )
        return parse_plan_document(text)


_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)


def parse_plan_document(text: str) -> CompositionPlan:
    """Extract the fenced JSON plan; raises ValueError on any deviation."""
    if not isinstance(text, str):
        raise ValueError("plan document must be text")
    match = _FENCE_RE.search(text)
    if not match:
        raise ValueError("no fenced JSON block found")
    doc = json.loads(match.group(1))
    plan = CompositionPlan.from_dict(doc)
    violations = validate_plan(plan)
    if violations:
        raise ValueError("invalid plan: " + "; ".join(violations))
    return plan


def plan(
    query: str,
    retrieved: RetrievalResult | None,
    pool: KnowledgePool,
    backend=None,
) -> CompositionPlan:
    """Produce a validated composition plan for the query.

    With a backend, malformed or invalid responses log a warning and fall
    back to the rule-based copy; with neither retrieval nor backend there is
    nothing to plan from.
    """
    have_retrieval = retrieved is not None and bool(retrieved.ranked)
    if not have_retrieval and backend is None:
        raise PlanningError("no retrieved structures and no backend configured")

    if backend is not None:
        try:
            candidate = backend.plan(query, retrieved, pool)
            violations = validate_plan(candidate)
            if violations:
                raise ValueError("; ".join(violations))
            return candidate
        except Exception as exc:  # malformed response, transport failure, bad plan
            if not have_retrieval:
                raise PlanningError(f"backend failed with no retrieval fallback: {exc}") from exc
            log.warning("organizer backend failed (%s); falling back to rule-based plan", exc)

    result = RuleBasedOrganizer().plan(query, retrieved, pool)
    violations = validate_plan(result)
    if violations:  # seed pool entries are validated on load; belt and braces
        raise PlanningError("rule-based plan invalid: " + "; ".join(violations))
    return result


# --- execution ---------------------------------------------------------------------------


@dataclass
class NodeRecord:
    node_id: str
    kind: str
    usage: UsageStats
    output_len: int


@dataclass
class PlanTrace:
    nodes: list = field(default_factory=list)
    total: UsageStats = field(default_factory=UsageStats)

    def record(self, node_id: str, kind: str, result: PrimitiveResult) -> None:
        self.nodes.append(
            NodeRecord(node_id=node_id, kind=kind, usage=result.usage,
                       output_len=len(result.output_tokens))
        )
        self.total.add(result.usage)


def _node_agents(node: PlanNode, budget: int | None):
    kw = {} if budget is None else {"max_new_tokens": budget}
    if node.kind == "single":
        return (default_single_agent(**kw),)
    if node.kind == "review":
        return default_review_agents(**kw)
    if node.kind == "voting":
        n = node.config.get("num_solvers", 3)
        return default_voting_agents(num_solvers=n, **kw)
    n = node.config.get("num_executors", 3)
    return default_planning_agents(num_executors=n, **kw)


def run_node(engine, node: PlanNode, input_tokens, upstream_cache=None,
             budget: int | None = None) -> PrimitiveResult:
    if node.kind == "single":
        (agent,) = _node_agents(node, budget)
        return run_single(engine, agent, input_tokens, upstream_cache=upstream_cache)
    if node.kind == "review":
        solver, critic = _node_agents(node, budget)
        cfg = ReviewConfig(rounds=node.config.get("rounds", 2))
        return run_review(engine, solver, critic, input_tokens, cfg, upstream_cache=upstream_cache)
    if node.kind == "voting":
        solvers, selector = _node_agents(node, budget)
        cfg = VotingConfig(num_solvers=len(solvers))
        return run_voting(engine, solvers, selector, input_tokens, cfg, upstream_cache=upstream_cache)
    planner, executors = _node_agents(node, budget)
    cfg = PlanningConfig(num_executors=len(executors))
    return run_planning(engine, planner, executors, input_tokens, cfg, upstream_cache=upstream_cache)


def execute_plan(
    plan: CompositionPlan,
    engine,
    input_tokens,
    channel: str = "latent",
    budget: int | None = None,
) -> tuple[PrimitiveResult, PlanTrace]:
    """Topological execution. A node's input is its predecessors' output
    tokens; with the latent channel and a single predecessor, the
    predecessor's final cache is spliced instead of re-tokenizing.
    """
    violations = validate_plan(plan)
    if violations:
        raise PlanningError("refusing to execute invalid plan: " + "; ".join(violations))
    if channel not in ("latent", "text"):
        raise ValueError(f"unknown channel {channel!r}")

    node_map = plan.node_map()
    preds: dict[str, list[str]] = {i: [] for i in node_map}
    succs: dict[str, list[str]] = {i: [] for i in node_map}
    for src, dst in plan.edges:
        preds[dst].append(src)
        succs[src].append(dst)

    order = []
    ready = sorted(i for i in node_map if not preds[i])
    deg = {i: len(preds[i]) for i in node_map}
    while ready:
        cur = ready.pop(0)
        order.append(cur)
        for nxt in succs[cur]:
            deg[nxt] -= 1
            if deg[nxt] == 0:
                ready.append(nxt)
        ready.sort()

    trace = PlanTrace()
    results: dict[str, PrimitiveResult] = {}
    for node_id in order:
        node = node_map[node_id]
        parents = sorted(preds[node_id])
        upstream_cache = None
        if not parents:
            node_input = list(input_tokens)
        elif channel == "latent" and len(parents) == 1:
            upstream_cache = results[parents[0]].final_cache
            node_input = []
        else:
            node_input = [t for p in parents for t in results[p].output_tokens]
        try:
            result = run_node(engine, node, node_input, upstream_cache=upstream_cache,
                              budget=budget)
        except Exception as exc:
            raise PlanExecutionError(node_id, str(exc), partial_trace=trace) from exc
        results[node_id] = result
        trace.record(node_id, node.kind, result)

    return results[plan.exit], trace
