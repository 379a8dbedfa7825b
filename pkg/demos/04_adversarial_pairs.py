"""
When single-item changes are not enough
=======================================

In the adversarial environment stairs and door each use up a plank, and the
tree stops giving planks after the first craft. Asking only for "stairs in
inventory" hides the fact that a plank disappears, so a single-item model
happily plans to craft too early. Behaviours that name two items make the
side effect part of the request.

The count model (no network) is enough to show the difference.
"""
from abworld import harness

for items in (1, 2):
    cfg = harness.ExperimentConfig(env="craft_adversarial", model="nonparametric", explorer="random",
                                   items_per_behaviour=items, budget=60_000, eval_episodes=50)
    run = harness.train_seed(cfg, seed=0)
    plan = harness.planner_for(run.model, harness.goal_of(run.env))(run.root)
    print(f"I={items}: success {run.metrics[-1].mean_return:.2f} after {run.low_level_steps} steps")
    for b in plan.behaviours:
        print("    ", b.describe(run.env.vocab))
