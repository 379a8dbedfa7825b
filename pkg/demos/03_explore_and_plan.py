"""
Curious exploration, then planning to a goal
============================================

The training loop alternates between collecting experience with a tree
search that seeks rarely tried behaviours, and refitting the success model.
Planning is a most-probable-path search over imagined item changes.
"""
from abworld import harness
from abworld.plan import extract_world_graph

cfg = harness.ExperimentConfig(env="craft2", budget=5000, eval_episodes=50)


def show(run, rec):
    print(f"round {rec.round}: {rec.low_level_steps} steps, {rec.dataset_keys} keys, "
          f"{rec.unique_transitions} distinct item changes, success {rec.mean_return:.2f}")


run = harness.train_seed(cfg, seed=0, progress=show)

goal = harness.goal_of(run.env)
planner = harness.planner_for(run.model, goal)
plan = planner(run.root)
print("goal:", goal.describe(run.env.vocab))
for b in plan.behaviours:
    print("  ", b.describe(run.env.vocab))
print(f"plan probability {plan.probability:.3f}")

graph = extract_world_graph(run.model, run.root, threshold=0.5)
print(f"world graph: {len(graph.nodes)} states, {len(graph.edges)} confident edges")
print(graph.to_dot(run.env.vocab, "craft2"))
