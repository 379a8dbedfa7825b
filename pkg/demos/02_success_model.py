"""
Counting successes and fitting the attention model
==================================================

Random behaviours on craft3 fill a count table. The smoothed success rate
of each (state, behaviour) key is the regression target for a small
attention network trained with binary cross-entropy.
"""
import numpy as np

from abworld.abmdp import enumerate_behaviours, run_behaviour
from abworld.core import apply_delta
from abworld.env_craft import make_env
from abworld.worldmodel import ParametricModel, TransitionCounts, empirical_success_prob, fit

env = make_env("craft3")
rng = np.random.default_rng(0)
counts = TransitionCounts()
state, used = env.reset(0), 0
for _ in range(600):
    options = enumerate_behaviours(env.abstract(state), 1)
    tr, state = run_behaviour(env, state, options[rng.integers(len(options))])
    counts.record(tr)
    used += tr.low_level_steps
    if used >= env.episode_limit:
        state, used = env.reset(int(rng.integers(1000))), 0

states, behaviours, rho = counts.training_set()
print(f"{len(counts.dataset)} transitions, {len(counts)} unique keys, {np.mean(rho > 0.5):.0%} mostly successful")

model = ParametricModel(env.vocab, items_per_behaviour=1, hidden=128, seed=0)
report = fit(model, counts)
pred = model.predict_batch(states, behaviours)
print(f"fit: {report.steps} steps, {report.resets} resets, running accuracy {report.accuracy:.3f}")
print(f"mean |prediction - rate| = {np.abs(pred - rho).mean():.4f}")

# behaviours that would change the start state, with the model's answer and the raw rate
x = env.abstract(env.reset(42))
print(x.describe(env.vocab))
for b, q in zip(model.behaviours_for(x), model.success_probs(x)):
    if apply_delta(x, b) != x:
        seen = counts.counts(x, b)[1]
        rate = f"{empirical_success_prob(counts, x, b):.3f}" if seen else "  -  "
        print(f"  {b.describe(env.vocab):28s} q={q:.3f}  rate={rate}  seen={seen}")
