"""Run behaviours in the base MDP until an abstract transition occurs."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

from .core import EMPTY, AbstractState, AbstractTransition, Behaviour, Item, apply_delta, is_success
from .env_craft import CraftEnv, LowLevelState


@dataclass(frozen=True)
class AbMdpConfig:
    """``k`` bounds the low-level steps per abstract step; ``items_per_behaviour`` is I.

    ``exact_success`` decides whether a transition only has to contain the
    proposed changes or must equal ``apply_delta(state, behaviour)``. ``None``
    means exact for multi-item behaviours and containment for single-item ones.
    """

    k: int = 8
    items_per_behaviour: int = 1
    exact_success: bool | None = None

    def __post_init__(self):
        if self.k < 1 or self.items_per_behaviour < 1:
            raise ValueError("k and items_per_behaviour must be positive")

    @property
    def exact(self) -> bool:
        if self.exact_success is None:
            return self.items_per_behaviour > 1
        return self.exact_success


def enumerate_behaviours(state: AbstractState, config: AbMdpConfig | int = 1,
                         n_attributes: int = 3) -> list[Behaviour]:
    """All ``C(N, I) * m**I`` behaviours over the non-empty slots.

    Ordered by identity id, then attribute id, so search is reproducible.
    """
    size = config.items_per_behaviour if isinstance(config, AbMdpConfig) else int(config)
    idents = sorted(i for i, _ in state.items if i != EMPTY)
    out = []
    for group in itertools.combinations(idents, size):
        for attrs in itertools.product(range(n_attributes), repeat=size):
            out.append(Behaviour(tuple(Item(i, a) for i, a in zip(group, attrs))))
    return out


def transition_success(state: AbstractState, behaviour: Behaviour, next_state: AbstractState,
                       exact: bool) -> bool:
    ok = behaviour.satisfied_by(next_state)
    if ok and exact:
        ok = next_state == apply_delta(state, behaviour)
    return ok


def run_behaviour(env: CraftEnv, env_state: LowLevelState, behaviour: Behaviour,
                  config: AbMdpConfig = AbMdpConfig()) -> tuple[AbstractTransition, LowLevelState]:
    """Execute the behaviour's policy until the abstract state changes or k steps pass."""
    start = env.abstract(env_state)
    current = start
    s = env_state
    steps = 0
    while steps < config.k:
        s = env.step(s, env.behaviour_policy(s, behaviour))
        steps += 1
        current = env.abstract(s)
        if current != start:
            break
    tr = AbstractTransition(start, behaviour, current, False, steps)
    success = is_success(tr)
    if success and config.exact:
        success = current == apply_delta(start, behaviour)
    return AbstractTransition(start, behaviour, current, success, steps), s
