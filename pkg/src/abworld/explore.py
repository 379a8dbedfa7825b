"""Count-based novelty bonus and a max-backup tree search over imagined transitions.

The search never touches the environment: children are ``apply_delta``
successors gated by the model's predicted success probability.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .abmdp import enumerate_behaviours
from .core import AbstractState, Behaviour, apply_delta

DEFAULT_EPSILON = 1e-3


@dataclass
class VisitCounter:
    """``N(X, b)`` keyed by the state's canonical hash, plus the step total ``T``."""

    epsilon: float = DEFAULT_EPSILON
    visits: dict = field(default_factory=dict)
    total_steps: int = 0

    def record(self, state: AbstractState, behaviour: Behaviour) -> None:
        key = (state.canonical_hash, behaviour)
        self.visits[key] = self.visits.get(key, 0) + 1
        self.total_steps += 1

    def count(self, state: AbstractState, behaviour: Behaviour) -> int:
        return self.visits.get((state.canonical_hash, behaviour), 0)

    def copy(self) -> "VisitCounter":
        return VisitCounter(self.epsilon, dict(self.visits), self.total_steps)


def _bonus(total: float, n: float, eps: float) -> float:
    return math.sqrt(total / (n + eps * total))


def intrinsic_reward(counter: VisitCounter, state: AbstractState, behaviour: Behaviour) -> float:
    """``sqrt(T / (N + eps*T))``; needs at least one recorded step."""
    if counter.total_steps < 1:
        raise ValueError("intrinsic reward needs T >= 1")
    return _bonus(counter.total_steps, counter.count(state, behaviour), counter.epsilon)


@dataclass(frozen=True)
class MctsConfig:
    num_simulations: int = 16
    max_depth: int = 4
    edge_validity_threshold: float = 0.5
    random_behaviour_prob: float = 0.2
    c_uct: float = math.sqrt(2)

    def __post_init__(self):
        if self.num_simulations < 1 or self.max_depth < 1:
            raise ValueError("num_simulations and max_depth must be positive")
        if not 0 < self.edge_validity_threshold < 1:
            raise ValueError("edge_validity_threshold must lie in (0, 1)")
        if not 0 < self.random_behaviour_prob <= 1:
            raise ValueError("random_behaviour_prob must lie in (0, 1]")
        if self.c_uct <= 0:
            raise ValueError("c_uct must be positive")


class _Edge:
    __slots__ = ("behaviour", "reward", "child", "visits", "value")

    def __init__(self, behaviour, reward, child):
        self.behaviour = behaviour
        self.reward = reward
        self.child = child
        self.visits = 0
        self.value = -math.inf


class _Node:
    __slots__ = ("state", "depth", "edges", "visits")

    def __init__(self, state, depth):
        self.state = state
        self.depth = depth
        self.edges: list[_Edge] | None = None
        self.visits = 0


def _admissible(model, counter, node, path_states, config, rng, total):
    """Edges out of ``node``: confident ones, plus others admitted at random; no loops."""
    state = node.state
    behaviours = model.behaviours_for(state)
    probs = model.success_probs(state)
    coins = rng.random(len(behaviours))
    edges = []
    for b, q, coin in zip(behaviours, probs, coins):
        if q <= config.edge_validity_threshold and coin >= config.random_behaviour_prob:
            continue
        nxt = apply_delta(state, b)
        if nxt in path_states:
            continue
        r = _bonus(total, counter.count(state, b), counter.epsilon)
        edges.append(_Edge(b, r, _Node(nxt, node.depth + 1)))
    return edges


def _uct_pick(node, config, rng):
    untried = [e for e in node.edges if e.visits == 0]
    if untried:
        return untried[rng.integers(len(untried))]
    # values are rescaled by the best sibling so the bonus range is unit-free
    top = max(e.value for e in node.edges)
    scale = top if top > 0 else 1.0
    log_n = math.log(node.visits)
    scores = np.array([e.value / scale + config.c_uct * math.sqrt(log_n / e.visits) for e in node.edges])
    best = np.flatnonzero(scores == scores.max())
    return node.edges[best[rng.integers(len(best))]]


def search_tree(model, counter: VisitCounter, root: AbstractState, config: MctsConfig = MctsConfig(),
                seed: int = 0) -> _Node:
    """Run the simulations and return the root node (exposed for inspection)."""
    rng = np.random.default_rng(seed)
    total = max(counter.total_steps, 1)
    top = _Node(root, 0)
    for _ in range(config.num_simulations):
        node = top
        path_states = {root}
        trail: list[_Edge] = []
        # no rollout: every simulation expands down to the fixed depth
        while node.depth < config.max_depth:
            if node.edges is None:
                node.edges = _admissible(model, counter, node, path_states, config, rng, total)
            if not node.edges:
                break
            edge = _uct_pick(node, config, rng)
            trail.append(edge)
            node = edge.child
            path_states.add(node.state)
        # max-backup: each edge keeps the best reward seen on or below it
        best = -math.inf
        for edge in reversed(trail):
            best = max(best, edge.reward)
            edge.value = max(edge.value, best)
            edge.visits += 1
        top.visits += 1
        for edge in trail[:-1]:
            edge.child.visits += 1
    return top


def mcts_select_behaviour(model, counter: VisitCounter, root: AbstractState, config: MctsConfig = MctsConfig(),
                          seed: int = 0) -> Behaviour:
    """First behaviour on the path to the most novel imagined state-behaviour."""
    top = search_tree(model, counter, root, config, seed)
    rng = np.random.default_rng([seed, 1])
    edges = [e for e in (top.edges or []) if e.visits > 0]
    if not edges:
        options = model.behaviours_for(root)
        return options[rng.integers(len(options))]
    values = np.array([e.value for e in edges])
    best = np.flatnonzero(values == values.max())
    return edges[best[rng.integers(len(best))]].behaviour


def random_explore_behaviour(root: AbstractState, seed: int | np.random.Generator = 0, items_per_behaviour: int = 1,
                             n_attributes: int = 3) -> Behaviour:
    """Uniform draw from the full behaviour space of ``root``."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    options = enumerate_behaviours(root, items_per_behaviour, n_attributes)
    return options[rng.integers(len(options))]
