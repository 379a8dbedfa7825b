import itertools

import numpy as np
import pytest

from abworld.abmdp import AbMdpConfig, enumerate_behaviours, run_behaviour
from abworld.core import AbstractState, AbstractTransition, Behaviour, Vocabulary, apply_delta
from abworld.worldmodel import (CountModel, FitConfig, GenerativeModel, NumericalError, OptimizerState,
                                ParametricModel, TransitionCounts, empirical_success_prob, fit,
                                fit_generative, load_dataset, load_weights, next_state_distribution,
                                record_transition, save_dataset, save_weights)

EPS = 1e-3


def _tr(state, b, success, steps=1):
    nxt = apply_delta(state, b) if success else state
    return AbstractTransition(state, b, nxt, success, steps)


def _random_transitions(env, n, seed, items=1):
    rng = np.random.default_rng(seed)
    cfg = AbMdpConfig(8, items)
    s = env.reset(seed)
    out = []
    for _ in range(n):
        opts = enumerate_behaviours(env.abstract(s), cfg)
        tr, s = run_behaviour(env, s, opts[rng.integers(len(opts))], cfg)
        out.append(tr)
        if s.steps >= env.episode_limit:
            s = env.reset(int(rng.integers(10_000)))
    return out


def synthetic_table(n_keys, seed, lo=0.05, hi=0.95, n=20):
    """Counts table over a toy vocabulary whose smoothed targets lie in [lo, hi]."""
    vocab = Vocabulary(tuple(f"o{i}" for i in range(6)))
    rng = np.random.default_rng(seed)
    states = [AbstractState([(i + 1, a) for i, a in enumerate(attrs)])
              for attrs in itertools.product(range(3), repeat=4)]
    keys = [(x, b) for x in states for b in enumerate_behaviours(x, 1)]
    pick = rng.choice(len(keys), n_keys, replace=False)
    counts = TransitionCounts(EPS)
    for j in pick:
        x, b = keys[j]
        s = int(np.clip(round(rng.uniform(lo, hi) * n), 1, n - 1))
        counts.table[(x, b)] = [s, n]
    return vocab, counts


def test_counts_hand_case(toy_state):
    c = TransitionCounts()
    b = Behaviour.of((1, 1))
    for ok in (True, True, False):
        record_transition(c, _tr(toy_state, b, ok))
    assert c.counts(toy_state, b) == (2, 3)
    assert empirical_success_prob(c, toy_state, b) == pytest.approx((2 + EPS) / (3 + 2 * EPS), abs=1e-12)
    assert empirical_success_prob(c, toy_state, Behaviour.of((2, 0))) == pytest.approx(0.5)
    assert len(c.dataset) == 3 and len(c) == 1


def test_rho_stays_open_interval(toy_state):
    c = TransitionCounts()
    b = Behaviour.of((1, 1))
    for _ in range(1000):
        c.record(_tr(toy_state, b, True))
    assert 0.999 < c.success_prob(toy_state, b) < 1
    c2 = TransitionCounts.from_dataset([_tr(toy_state, b, False)] * 1000)
    assert 0 < c2.success_prob(toy_state, b) < 1e-3


def test_counts_match_recount_and_snapshot(craft3):
    data = _random_transitions(craft3, 500, 0)
    c = TransitionCounts.from_dataset(data)
    snap = c.snapshot()
    c.record(data[0])
    for (x, b), (s, n) in snap.table.items():
        sub = [t for t in data if t.state == x and t.behaviour == b]
        assert (s, n) == (sum(t.success for t in sub), len(sub))
    assert len(snap.dataset) == 500 and len(c.dataset) == 501


def test_count_model_planning_interface(craft2):
    data = _random_transitions(craft2, 200, 1)
    model = CountModel(TransitionCounts.from_dataset(data))
    x = data[0].state
    probs = model.success_probs(x)
    assert len(probs) == len(model.behaviours_for(x))
    assert all(0 < p < 1 for p in probs)


@pytest.mark.parametrize("cls", [ParametricModel, GenerativeModel])
def test_gradients_match_central_differences(cls, craft4, rng):
    data = _random_transitions(craft4, 60, 2)
    model = cls(craft4.vocab, 1, hidden=16, seed=3, dtype=np.float64)
    for k, v in model.params.items():
        model.params[k] = np.array(rng.normal(size=v.shape) * 0.3)
    batch = model.batch([t.state for t in data], [t.behaviour for t in data])
    if cls is ParametricModel:
        target = rng.uniform(size=len(batch))
    else:
        target = rng.dirichlet(np.ones(3), size=(len(batch), batch.X.shape[1]))
    _, grads, _ = model.loss_and_grad(batch, target)
    h = 1e-5
    for name, w in model.params.items():
        for _ in range(15):
            idx = tuple(rng.integers(s) for s in w.shape)
            old = w[idx]
            w[idx] = old + h
            lp = model.loss_and_grad(batch, target)[0]
            w[idx] = old - h
            lm = model.loss_and_grad(batch, target)[0]
            w[idx] = old
            num = (lp - lm) / (2 * h)
            ana = grads[name][idx]
            assert abs(num - ana) <= 1e-4 * max(abs(num), abs(ana), 1e-6), name


def test_prediction_is_permutation_invariant(craft4, rng):
    model = ParametricModel(craft4.vocab, 1, 32, 0, np.float64)
    x = craft4.abstract(craft4.reset(0))
    perm = AbstractState([x.items[i] for i in rng.permutation(len(x))])
    for b in enumerate_behaviours(x, 1):
        assert model.predict(x, b) == pytest.approx(model.predict(perm, b), abs=1e-12)


def test_batched_prediction_matches_single(craft3):
    data = _random_transitions(craft3, 80, 4)
    model = ParametricModel(craft3.vocab, 1, 32, 5, np.float64)
    states, bs = [t.state for t in data], [t.behaviour for t in data]
    batched = model.predict_batch(states, bs)
    single = [model.predict(x, b) for x, b in zip(states, bs)]
    assert np.allclose(batched, single, atol=1e-12)


def test_fit_recovers_synthetic_rates():
    vocab, counts = synthetic_table(5, 0)
    model = ParametricModel(vocab, 1, 64, 0)
    report = fit(model, counts, OptimizerState(), config=FitConfig(accuracy_threshold=1.01, max_steps=6000))
    states, bs, rho = counts.training_set()
    assert np.abs(model.predict_batch(states, bs) - rho).max() <= 0.05
    assert report.steps == 6000


def test_fit_stops_on_accuracy_after_min_steps(craft2):
    counts = TransitionCounts.from_dataset(_random_transitions(craft2, 300, 6))
    model = ParametricModel(craft2.vocab, 1, 64, 0)
    report = fit(model, counts, OptimizerState(), min_steps=300)
    assert report.accuracy >= 0.95 and 300 <= report.steps < 20_000


def test_fit_rejects_empty_table(toy_vocab):
    with pytest.raises(ValueError):
        fit(ParametricModel(toy_vocab), TransitionCounts())
    with pytest.raises(ValueError):
        fit_generative(GenerativeModel(toy_vocab), [])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_gradient_raises():
    vocab, counts = synthetic_table(5, 1)
    model = ParametricModel(vocab, 1, 16, 0)
    model.params["w_out"][:] = np.nan  # poisons the loss on the first step
    with pytest.raises(NumericalError):
        fit(model, counts, min_steps=1, max_steps=5)


def test_reset_weights_is_seeded(toy_vocab):
    a, b = ParametricModel(toy_vocab, 1, 16, 0), ParametricModel(toy_vocab, 1, 16, 0)
    a.reset_weights(9)
    b.reset_weights(9)
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    b.reset_weights(10)
    assert not np.array_equal(a.params["W_in"], b.params["W_in"])


def test_weights_round_trip(tmp_path, craft3):
    data = _random_transitions(craft3, 40, 7)
    for cls in (ParametricModel, GenerativeModel):
        model = cls(craft3.vocab, 2, 32, 11)
        save_weights(model, tmp_path / "w.bin", step=5)
        back = load_weights(tmp_path / "w.bin")
        assert type(back) is cls and back.vocab == model.vocab
        assert all(np.array_equal(model.params[k], back.params[k]) for k in model.params)
        x = data[0].state
        assert np.array_equal(model.success_probs(x), back.success_probs(x))
    (tmp_path / "bad.bin").write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_weights(tmp_path / "bad.bin")


def test_dataset_round_trip(tmp_path, craft2):
    data = _random_transitions(craft2, 50, 8, items=2)
    assert save_dataset(data, tmp_path / "d.jsonl") == 50
    assert load_dataset(tmp_path / "d.jsonl") == data


def test_next_state_distribution(toy_vocab, toy_state):
    model = ParametricModel(toy_vocab, 1, 16, 0)
    b = Behaviour.of((1, 1))
    (nxt, q), (same, r) = next_state_distribution(model, toy_state, b)
    assert nxt == apply_delta(toy_state, b) and same == toy_state
    assert q + r == pytest.approx(1.0)
    # a behaviour that changes nothing has a single certain outcome
    assert next_state_distribution(model, toy_state, Behaviour.of((2, 1))) == [(toy_state, 1.0)]


def test_generative_fit_learns_modes(craft2):
    data = _random_transitions(craft2, 300, 9)
    model = GenerativeModel(craft2.vocab, 1, 64, 0)
    report = fit_generative(model, data, min_steps=500)
    assert report.accuracy >= 0.95
    t = next(t for t in data if t.success and t.next_state != t.state)
    dist = model.predict_distribution(t.state, t.behaviour)
    assert dist.shape == (len(t.state), 3)
    assert np.allclose(dist.sum(axis=1), 1)
    modes = {b: nxt for b, nxt, _ in model.modal_transitions(t.state)}
    assert modes[t.behaviour] == t.next_state
