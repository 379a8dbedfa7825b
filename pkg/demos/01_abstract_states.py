"""
Items, attributes and behaviours in a crafting grid
===================================================

A low-level grid state is mapped to a small set of (item, attribute) pairs.
A behaviour names the change we want, and a scripted policy walks the grid
until the abstract state changes or k steps run out.
"""
from abworld.abmdp import AbMdpConfig, enumerate_behaviours, run_behaviour
from abworld.core import apply_delta
from abworld.env_craft import make_env

env = make_env("craft2")
state = env.reset(seed=3)
print(env.render(state))

# the object-centric view: every tracked item with its attribute
x = env.abstract(state)
print("abstract state:", x.describe(env.vocab))

# behaviours are proposed attribute changes; with one item per behaviour
# there are (items x attributes) of them
options = enumerate_behaviours(x, AbMdpConfig(items_per_behaviour=1))
print(len(options), "behaviours, e.g.", options[0].describe(env.vocab))

# ask for the pickaxe, then for the gold
for change in (("pickaxe", "IN_INVENTORY"), ("gold", "IN_INVENTORY")):
    b = env.vocab.behaviour(change)
    expected = apply_delta(env.abstract(state), b)
    tr, state = run_behaviour(env, state, b)
    print(f"{b.describe(env.vocab):28s} success={tr.success} steps={tr.low_level_steps}")
    print("   observed:", tr.next_state.describe(env.vocab))
    print("   expected:", expected.describe(env.vocab))

# gold needs the pickaxe; from a fresh layout the same request fails after k steps
tr, _ = run_behaviour(env, env.reset(seed=3), env.vocab.behaviour(("gold", "IN_INVENTORY")))
print("gold first -> success", tr.success, "after", tr.low_level_steps, "steps")
