"""Count-based (non-parametric) estimate of behaviour success probabilities."""
from __future__ import annotations

import copy

import numpy as np

from ..abmdp import enumerate_behaviours
from ..core import AbstractState, AbstractTransition, Behaviour

DEFAULT_EPSILON = 1e-3


class TransitionCounts:
    """Hash map ``(state, behaviour) -> [successes, total]`` plus the raw dataset.

    States key the table by value (their canonical item tuple); the 64-bit
    ``canonical_hash`` is only used when persisting.
    """

    def __init__(self, epsilon: float = DEFAULT_EPSILON):
        self.epsilon = epsilon
        self.table: dict[tuple[AbstractState, Behaviour], list[int]] = {}
        self.dataset: list[AbstractTransition] = []

    def __len__(self):
        return len(self.table)

    def record(self, t: AbstractTransition) -> None:
        entry = self.table.setdefault((t.state, t.behaviour), [0, 0])
        entry[1] += 1
        if t.success:
            entry[0] += 1
        self.dataset.append(t)

    def counts(self, state: AbstractState, behaviour: Behaviour) -> tuple[int, int]:
        s, n = self.table.get((state, behaviour), (0, 0))
        return s, n

    def success_prob(self, state: AbstractState, behaviour: Behaviour) -> float:
        s, n = self.counts(state, behaviour)
        return (s + self.epsilon) / (n + 2 * self.epsilon)

    def training_set(self) -> tuple[list[AbstractState], list[Behaviour], np.ndarray]:
        """Unique keys in insertion order with their smoothed targets."""
        states, behaviours, rho = [], [], []
        eps = self.epsilon
        for (state, b), (s, n) in self.table.items():
            states.append(state)
            behaviours.append(b)
            rho.append((s + eps) / (n + 2 * eps))
        return states, behaviours, np.asarray(rho)

    def snapshot(self) -> "TransitionCounts":
        snap = TransitionCounts(self.epsilon)
        snap.table = copy.deepcopy(self.table)
        snap.dataset = list(self.dataset)
        return snap

    @classmethod
    def from_dataset(cls, dataset, epsilon: float = DEFAULT_EPSILON) -> "TransitionCounts":
        counts = cls(epsilon)
        for t in dataset:
            counts.record(t)
        return counts


def empirical_success_prob(counts: TransitionCounts, state: AbstractState, behaviour: Behaviour) -> float:
    return counts.success_prob(state, behaviour)


def record_transition(counts: TransitionCounts, t: AbstractTransition) -> None:
    counts.record(t)


class CountModel:
    """Plans directly on the smoothed empirical estimate (no fitting)."""

    def __init__(self, counts: TransitionCounts, items_per_behaviour: int = 1, n_attributes: int = 3):
        self.counts = counts
        self.items_per_behaviour = items_per_behaviour
        self.n_attributes = n_attributes

    def behaviours_for(self, state: AbstractState) -> list[Behaviour]:
        return enumerate_behaviours(state, self.items_per_behaviour, self.n_attributes)

    def predict(self, state: AbstractState, behaviour: Behaviour) -> float:
        return self.counts.success_prob(state, behaviour)

    def success_probs(self, state: AbstractState) -> np.ndarray:
        return np.array([self.counts.success_prob(state, b) for b in self.behaviours_for(state)])
