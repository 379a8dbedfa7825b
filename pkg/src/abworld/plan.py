"""Goal-directed planning over imagined successors, plan execution, world-graph export."""
from __future__ import annotations

import heapq
import itertools
import json
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Hashable, Iterable, NamedTuple

from .abmdp import AbMdpConfig, run_behaviour
from .core import AbstractState, AbstractTransition, Behaviour, Item, Vocabulary, apply_delta


@dataclass(frozen=True)
class GoalPredicate:
    """Conjunction of required ``(identity, attribute)`` memberships."""

    required_items: frozenset

    def __post_init__(self):
        object.__setattr__(self, "required_items", frozenset(Item(*it) for it in self.required_items))
        if not self.required_items:
            raise ValueError("a goal needs at least one required item")

    def __call__(self, state: AbstractState) -> bool:
        return all(it in state for it in self.required_items)

    satisfied_by = __call__

    @classmethod
    def parse(cls, vocab: Vocabulary, terms: Iterable[tuple[str, str]]) -> "GoalPredicate":
        return cls(frozenset(vocab.item(name, attr) for name, attr in terms))

    def describe(self, vocab: Vocabulary) -> str:
        return " & ".join(vocab.describe(it) for it in sorted(self.required_items))


class Plan(NamedTuple):
    behaviours: tuple[Behaviour, ...]
    probability: float
    states: tuple[AbstractState, ...]  # imagined states, start first
    found: bool = True

    def __len__(self):
        return len(self.behaviours)


NO_PLAN = Plan((), 0.0, (), False)


def edge_weight(model, state: AbstractState, behaviour: Behaviour) -> float:
    return -math.log(model.predict(state, behaviour))


def shortest_plan(start: Hashable, is_goal: Callable, successors: Callable, max_iters: int = 100):
    """Dijkstra on ``-ln p`` weights.

    ``successors(node)`` yields ``(label, next_node, p)``; ties are broken by
    yield order. Returns ``(labels, nodes, probability)`` or ``None`` when no
    goal is settled within ``max_iters`` expansions.
    """
    tick = itertools.count()
    heap = [(0.0, next(tick), start)]
    parent: dict = {start: None}
    best = {start: 0.0}
    settled = set()
    expansions = 0
    while heap:
        dist, _, node = heapq.heappop(heap)
        if node in settled:
            continue
        settled.add(node)
        if is_goal(node):
            labels, nodes, prob = [], [node], 1.0
            while parent[node] is not None:
                prev, label, p = parent[node]
                labels.append(label)
                nodes.append(prev)
                prob *= p
                node = prev
            return labels[::-1], nodes[::-1], prob
        if expansions >= max_iters:
            return None
        expansions += 1
        for label, nxt, p in successors(node):
            if nxt in settled or p <= 0:
                continue
            d = dist - math.log(p)
            if d < best.get(nxt, math.inf):
                best[nxt] = d
                parent[nxt] = (node, label, p)
                heapq.heappush(heap, (d, next(tick), nxt))
    return None


def _wrap(result) -> Plan:
    if result is None:
        return NO_PLAN
    labels, nodes, prob = result
    return Plan(tuple(labels), prob, tuple(nodes))


def model_successors(model, prob_cutoff: float = 0.1):
    """Imagined edges ``X -> apply_delta(X, b)`` with predicted probability above the cutoff."""
    def successors(state):
        for b, q in zip(model.behaviours_for(state), model.success_probs(state)):
            if q > prob_cutoff:
                nxt = apply_delta(state, b)
                if nxt != state:
                    yield b, nxt, float(q)
    return successors


def dijkstra_plan(model, start: AbstractState, goal: GoalPredicate, max_iters: int = 100,
                  prob_cutoff: float = 0.1) -> Plan:
    """Most probable behaviour sequence to a goal state under the model."""
    return _wrap(shortest_plan(start, goal, model_successors(model, prob_cutoff), max_iters))


def modal_plan(model, start: AbstractState, goal: GoalPredicate, max_iters: int = 100,
               prob_cutoff: float = 0.1) -> Plan:
    """Planner for the generative model: each edge leads to the modal next state."""
    def successors(state):
        for b, nxt, p in model.modal_transitions(state):
            if p > prob_cutoff and nxt != state:
                yield b, nxt, p
    return _wrap(shortest_plan(start, goal, successors, max_iters))


class EpisodeOutcome(NamedTuple):
    success: bool
    abstract_steps: int
    low_level_steps: int
    transitions: list


def execute_plan(env, env_state, planner: Callable[[AbstractState], Plan], goal: GoalPredicate,
                 replan: bool = True, config: AbMdpConfig = AbMdpConfig(),
                 step_limit: int | None = None, plan: Plan | None = None) -> EpisodeOutcome:
    """Run a plan in the environment until the goal holds or the step limit passes.

    With ``replan`` the planner is called again from every observed abstract
    state. Without it the initial plan is followed in order and a behaviour
    that does not succeed is retried. No plan means the episode fails.
    """
    limit = env.episode_limit if step_limit is None else step_limit
    state = env.abstract(env_state)
    steps = 0
    transitions: list[AbstractTransition] = []
    first = planner(state) if plan is None else plan
    queue = list(first.behaviours) if first.found else []
    while not goal(state) and steps < limit:
        if replan and transitions:
            fresh = planner(state)
            queue = list(fresh.behaviours) if fresh.found else []
        if not queue:
            break
        b = queue[0]
        budget = min(config.k, limit - steps)
        step_cfg = config if budget == config.k else AbMdpConfig(budget, config.items_per_behaviour,
                                                                 config.exact_success)
        tr, env_state = run_behaviour(env, env_state, b, step_cfg)
        transitions.append(tr)
        steps += tr.low_level_steps
        state = tr.next_state
        if tr.success:
            queue.pop(0)
    return EpisodeOutcome(goal(state), len(transitions), steps, transitions)


@dataclass
class WorldGraph:
    nodes: list[AbstractState] = field(default_factory=list)
    edges: list[tuple[int, Behaviour, int, float]] = field(default_factory=list)
    threshold: float = 0.1

    def index(self, state: AbstractState) -> int | None:
        try:
            return self.nodes.index(state)
        except ValueError:
            return None

    def successors(self, state: AbstractState) -> list[AbstractState]:
        i = self.index(state)
        return [self.nodes[t] for f, _, t, _ in self.edges if f == i]

    def to_dot(self, vocab: Vocabulary, name: str = "world") -> str:
        lines = [f"digraph {_dot_id(name)} {{", "  node [shape=box];"]
        for i, state in enumerate(self.nodes):
            label = "\\n".join(vocab.describe(it) for it in state.items if it.identity != 0) or "(empty)"
            lines.append(f"  n{i} [label={_dot_str(label)}];")
        for f, b, t, p in self.edges:
            lines.append(f"  n{f} -> n{t} [label={_dot_str(f'{b.describe(vocab)} / {p:.3f}')}];")
        lines.append("}")
        return "\n".join(lines) + "\n"

    def to_json(self, vocab: Vocabulary) -> str:
        nodes = [{"id": i, "hash": f"{s.canonical_hash:016x}", "items": s.to_list(), "label": s.describe(vocab)}
                 for i, s in enumerate(self.nodes)]
        adjacency = {str(i): [] for i in range(len(self.nodes))}
        for f, b, t, p in self.edges:
            adjacency[str(f)].append({"to": t, "behaviour": b.to_list(), "label": b.describe(vocab),
                                      "probability": round(p, 6)})
        return json.dumps({"threshold": self.threshold, "nodes": nodes, "adjacency": adjacency}, indent=1)


def _dot_id(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch == "_" else "_" for ch in name) or "world"


def _dot_str(text: str) -> str:
    return '"' + text.replace("\\n", "\0").replace("\\", "\\\\").replace('"', '\\"').replace("\0", "\\n") + '"'


def extract_world_graph(model, root: AbstractState, threshold: float = 0.1, max_nodes: int = 1000) -> WorldGraph:
    """Breadth-first expansion along edges the model rates above ``threshold``.

    Edges whose imagined successor equals the source state are left out.
    """
    graph = WorldGraph([root], [], threshold)
    ids = {root: 0}
    frontier = deque([root])
    while frontier:
        state = frontier.popleft()
        src = ids[state]
        for b, q in zip(model.behaviours_for(state), model.success_probs(state)):
            if q <= threshold:
                continue
            nxt = apply_delta(state, b)
            if nxt == state:
                continue
            if nxt not in ids:
                if len(graph.nodes) >= max_nodes:
                    continue
                ids[nxt] = len(graph.nodes)
                graph.nodes.append(nxt)
                frontier.append(nxt)
            graph.edges.append((src, b, ids[nxt], float(q)))
    return graph
