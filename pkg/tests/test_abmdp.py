from dataclasses import replace

import numpy as np
import pytest

from abworld.abmdp import AbMdpConfig, enumerate_behaviours, run_behaviour
from abworld.core import AbstractState, Behaviour, apply_delta, count_behaviours


def test_enumeration_counts():
    x = AbstractState([(1, 0), (2, 1), (3, 2)])
    assert len(enumerate_behaviours(x, 1)) == 9
    assert len(enumerate_behaviours(x, 2)) == 27
    assert enumerate_behaviours(AbstractState([(4, 0)]), 1) == [Behaviour.of((4, a)) for a in range(3)]


def test_enumeration_skips_empty_slots_and_is_ordered():
    x = AbstractState([(3, 0), (0, 0), (1, 2)])
    bs = enumerate_behaviours(x, AbMdpConfig(items_per_behaviour=1))
    assert bs == [Behaviour.of((1, a)) for a in range(3)] + [Behaviour.of((3, a)) for a in range(3)]
    assert len(enumerate_behaviours(x, 2)) == count_behaviours(2, 3, 2)


def test_config_validation():
    with pytest.raises(ValueError):
        AbMdpConfig(k=0)
    assert AbMdpConfig().exact is False
    assert AbMdpConfig(items_per_behaviour=2).exact is True
    assert AbMdpConfig(items_per_behaviour=2, exact_success=False).exact is False


def test_adjacent_grab_takes_one_step(craft2):
    s = craft2.reset(0)
    s = replace(s, agent_pos=s.position("pickaxe"))
    tr, _ = run_behaviour(craft2, s, craft2.vocab.behaviour(("pickaxe", "IN_INVENTORY")))
    assert tr.low_level_steps == 1 and tr.success


def test_stairs_side_effect_is_observed(craft4):
    s = craft4.reset(0)
    s = replace(s, inventory=(("plank", 1),))
    b = craft4.vocab.behaviour(("wooden_stairs", "IN_INVENTORY"))
    tr, _ = run_behaviour(craft4, s, b)
    assert tr.success
    assert ("plank", "ABSENT") in {(craft4.vocab.identities[i], craft4.vocab.attributes[a])
                                   for i, a in tr.next_state.items}
    assert tr.next_state != apply_delta(tr.state, b)


@pytest.mark.parametrize("name", ["craft2", "craft3", "craft4", "craft_adversarial"])
def test_transition_invariants(name, request):
    from abworld.env_craft import make_env
    env = make_env(name)
    rng = np.random.default_rng(3)
    for items in (1, 2):
        cfg = AbMdpConfig(k=8, items_per_behaviour=items)
        s = env.reset(7)
        for _ in range(150):
            x = env.abstract(s)
            options = enumerate_behaviours(x, cfg)
            b = options[rng.integers(len(options))]
            tr, s = run_behaviour(env, s, b, cfg)
            assert 1 <= tr.low_level_steps <= cfg.k
            if tr.low_level_steps < cfg.k:
                assert tr.next_state != tr.state
            if tr.success:
                assert b.satisfied_by(tr.next_state)
            if s.steps >= env.episode_limit:
                s = env.reset(int(rng.integers(1000)))


def test_exact_success_for_pairs(adversarial):
    v = adversarial.vocab
    s = adversarial.reset(0)
    s = replace(s, inventory=(("plank", 1),))
    loose = AbMdpConfig(items_per_behaviour=2, exact_success=False)
    exact = AbMdpConfig(items_per_behaviour=2)
    # a no-op partner hides the plank being used up
    b = v.behaviour(("wooden_stairs", "IN_INVENTORY"), ("wooden_door", "ABSENT"))
    assert run_behaviour(adversarial, s, b, loose)[0].success
    assert not run_behaviour(adversarial, s, b, exact)[0].success
    b = v.behaviour(("wooden_stairs", "IN_INVENTORY"), ("plank", "ABSENT"))
    assert run_behaviour(adversarial, s, b, exact)[0].success
