"""Experiment driver: collect, reset, fit, evaluate, and write run artifacts."""
from __future__ import annotations

import configparser
import csv
import dataclasses
import io
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .abmdp import AbMdpConfig, enumerate_behaviours, run_behaviour
from .core import AbstractState, Behaviour, changed_items
from .env_craft import CraftEnv, make_env
from .explore import MctsConfig, VisitCounter, mcts_select_behaviour
from .plan import GoalPredicate, dijkstra_plan, execute_plan, extract_world_graph, modal_plan
from .worldmodel import (CountModel, FitConfig, GenerativeModel, NumericalError, OptimizerState,
                         ParametricModel, TransitionCounts, fit, fit_generative, save_dataset, save_weights)

log = logging.getLogger(__name__)

METRICS_VERSION = "abworld-metrics v1"
METRICS_COLUMNS = ("round", "low_level_steps", "abstract_steps", "mean_return", "ci_half_width",
                   "unique_transitions", "dataset_keys", "model_accuracy", "fit_steps", "fit_resets")
EXPLORERS = ("mcts", "random")
MODELS = ("parametric", "nonparametric", "generative")
ENV_OUTPUT_DIR = "ABWORLD_OUTPUT_DIR"
ENV_SEED = "ABWORLD_SEED"
EVAL_SEED_BASE = 1_000_000_000


@dataclass
class ExperimentConfig:
    env: str = "craft2"
    seeds: tuple = (0,)
    budget: int = 20_000
    frames_per_collection: int = 2500
    min_fit_steps: int = 2500
    max_fit_steps: int = 20_000
    accuracy_threshold: float = 0.95
    explorer: str = "mcts"
    model: str = "parametric"
    items_per_behaviour: int = 1
    k: int = 8
    hidden: int = 128
    eval_episodes: int = 100
    replan: bool = True
    # stop a seed early once an evaluation reaches this mean return (0 disables)
    stop_at_success: float = 0.0
    mcts: MctsConfig = field(default_factory=MctsConfig)
    dijkstra_max_iters: int = 100
    prob_cutoff: float = 0.1
    output_dir: str = "runs"

    def __post_init__(self):
        if self.explorer not in EXPLORERS:
            raise ValueError(f"explorer must be one of {EXPLORERS}")
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if self.budget < 0 or self.frames_per_collection < 1:
            raise ValueError("budget must be >= 0 and frames_per_collection >= 1")
        if self.eval_episodes < 0:
            raise ValueError("eval_episodes must be >= 0 (0 skips evaluation)")
        self.seeds = tuple(int(s) for s in self.seeds)
        if not self.seeds:
            raise ValueError("need at least one seed")

    @property
    def abmdp(self) -> AbMdpConfig:
        return AbMdpConfig(self.k, self.items_per_behaviour)

    @property
    def fit_config(self) -> FitConfig:
        return FitConfig(min_steps=self.min_fit_steps, max_steps=self.max_fit_steps,
                         accuracy_threshold=self.accuracy_threshold)

    def replace(self, **changes) -> "ExperimentConfig":
        mcts = {k[5:]: changes.pop(k) for k in list(changes) if k.startswith("mcts_")}
        if mcts:
            changes["mcts"] = dataclasses.replace(self.mcts, **mcts)
        return dataclasses.replace(self, **changes)

    # -- key-value file ---------------------------------------------------
    def to_ini(self) -> str:
        parser = configparser.ConfigParser()
        flat = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if f.name == "mcts":
                continue
            flat[f.name] = ", ".join(map(str, value)) if f.name == "seeds" else str(value)
        parser["experiment"] = flat
        parser["mcts"] = {f.name: str(getattr(self.mcts, f.name)) for f in dataclasses.fields(self.mcts)}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str, **overrides) -> "ExperimentConfig":
        parser = configparser.ConfigParser()
        if not text.lstrip().startswith("["):
            text = "[experiment]\n" + text
        parser.read_string(text)
        known = {f.name: f for f in dataclasses.fields(cls)}
        values = {}
        section = parser["experiment"] if parser.has_section("experiment") else {}
        for key, raw in section.items():
            if key not in known or key == "mcts":
                raise ValueError(f"unknown config key {key!r}")
            values[key] = _coerce(key, raw, cls)
        if parser.has_section("mcts"):
            mfields = {f.name: f for f in dataclasses.fields(MctsConfig)}
            mvals = {}
            for key, raw in parser["mcts"].items():
                if key not in mfields:
                    raise ValueError(f"unknown mcts key {key!r}")
                mvals[key] = int(raw) if key in ("num_simulations", "max_depth") else float(raw)
            values["mcts"] = MctsConfig(**mvals)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)

    @classmethod
    def load(cls, path, **overrides) -> "ExperimentConfig":
        return cls.from_ini(Path(path).read_text(), **overrides)


def _coerce(key, raw, cls):
    default = {f.name: f.default for f in dataclasses.fields(cls)}[key]
    if key == "seeds":
        return tuple(int(s) for s in raw.replace(",", " ").split())
    if isinstance(default, bool):
        return raw.strip().lower() in ("1", "true", "yes", "on")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


def apply_env_overrides(config: ExperimentConfig, environ=os.environ) -> ExperimentConfig:
    """Only the output directory and the seed may come from the environment."""
    changes = {}
    if environ.get(ENV_OUTPUT_DIR):
        changes["output_dir"] = environ[ENV_OUTPUT_DIR]
    if environ.get(ENV_SEED):
        changes["seeds"] = (int(environ[ENV_SEED]),)
    return config.replace(**changes) if changes else config


@dataclass
class MetricsRecord:
    round: int
    low_level_steps: int
    abstract_steps: int
    mean_return: float
    ci_half_width: float
    unique_transitions: int
    dataset_keys: int
    model_accuracy: float
    fit_steps: int
    fit_resets: int
    wall_clock: float = 0.0  # kept out of the metrics CSV so reruns compare bit-for-bit

    def row(self) -> list[str]:
        out = []
        for name in METRICS_COLUMNS:
            v = getattr(self, name)
            out.append(f"{v:.6f}" if isinstance(v, float) else str(v))
        return out


@dataclass
class EvalResult:
    mean: float
    half_width: float
    episodes: int
    successes: int

    @property
    def interval(self) -> tuple[float, float]:
        return self.mean - self.half_width, self.mean + self.half_width


@dataclass
class Run:
    config: ExperimentConfig
    seed: int
    env: CraftEnv
    model: object
    counts: TransitionCounts
    visits: VisitCounter
    metrics: list = field(default_factory=list)
    unique: set = field(default_factory=set)
    low_level_steps: int = 0

    @property
    def root(self) -> AbstractState:
        return self.env.abstract(self.env.reset(_episode_seed(self.seed, 0)))


def _episode_seed(seed: int, episode: int) -> int:
    return seed * 1_000_003 + episode


def goal_of(env: CraftEnv) -> GoalPredicate:
    return GoalPredicate.parse(env.vocab, env.config.goal)


def make_model(config: ExperimentConfig, env: CraftEnv, counts: TransitionCounts, seed: int):
    I = config.items_per_behaviour
    if config.model == "nonparametric":
        return CountModel(counts, I, env.vocab.n_attributes)
    cls = ParametricModel if config.model == "parametric" else GenerativeModel
    return cls(env.vocab, I, hidden=config.hidden, seed=seed)


def planner_for(model, goal: GoalPredicate, max_iters: int = 100, prob_cutoff: float = 0.1):
    """State -> plan, memoised; the model must not change while it is in use."""
    search = modal_plan if isinstance(model, GenerativeModel) else dijkstra_plan
    cache: dict = {}

    def planner(state):
        hit = cache.get(state)
        if hit is None:
            hit = cache[state] = search(model, state, goal, max_iters, prob_cutoff)
        return hit
    return planner


def confidence(successes: int, n: int, z: float = 1.96) -> EvalResult:
    mean = successes / n if n else float("nan")
    half = z * math.sqrt(mean * (1 - mean) / n) if n else float("nan")
    return EvalResult(mean, half, n, successes)


def evaluate(config: ExperimentConfig, model, episodes: int | None = None, env: CraftEnv | None = None,
             seed_base: int = EVAL_SEED_BASE) -> EvalResult:
    """Plan-and-execute with replanning on fresh seeded layouts; return 1 per goal reached."""
    env = env or make_env(config.env)
    episodes = config.eval_episodes if episodes is None else episodes
    goal = goal_of(env)
    planner = planner_for(model, goal, config.dijkstra_max_iters, config.prob_cutoff)
    wins = 0
    for i in range(episodes):
        out = execute_plan(env, env.reset(seed_base + i), planner, goal, config.replan, config.abmdp)
        wins += out.success
    return confidence(wins, episodes)


def _fit_model(config, model, counts, seed, round_idx):
    """Reset the weights, then fit to the accuracy threshold."""
    init = int(np.random.SeedSequence([seed, round_idx]).generate_state(1)[0])
    model.reset_weights(init)
    if isinstance(model, GenerativeModel):
        return fit_generative(model, counts.dataset, OptimizerState(), config=config.fit_config, seed=init)
    return fit(model, counts, OptimizerState(), config=config.fit_config, seed=init)


def train_seed(config: ExperimentConfig, seed: int, progress=None) -> Run:
    """One seed of the collect / reset / fit loop, evaluated after every collection."""
    env = make_env(config.env)
    counts = TransitionCounts()
    run = Run(config, seed, env, make_model(config, env, counts, seed), counts, VisitCounter())
    rng = np.random.default_rng([seed, 17])
    episode = 0
    env_state = env.reset(_episode_seed(seed, episode))
    episode_steps = 0
    round_idx = 0
    started = time.perf_counter()
    while run.low_level_steps < config.budget:
        frames = 0
        while frames < config.frames_per_collection and run.low_level_steps < config.budget:
            state = env.abstract(env_state)
            if config.explorer == "mcts":
                b = mcts_select_behaviour(run.model, run.visits, state, config.mcts, int(rng.integers(2**31)))
            else:
                options = enumerate_behaviours(state, config.items_per_behaviour, env.vocab.n_attributes)
                b = options[rng.integers(len(options))]
            # clamp k so the budget, the round quota and the episode limit are met exactly
            remaining = min(config.budget - run.low_level_steps, config.frames_per_collection - frames,
                            env.episode_limit - episode_steps)
            ab = config.abmdp if remaining >= config.k else dataclasses.replace(config.abmdp, k=remaining)
            tr, env_state = run_behaviour(env, env_state, b, ab)
            counts.record(tr)
            run.visits.record(state, b)
            run.unique.update(changed_items(tr.state, tr.next_state))
            frames += tr.low_level_steps
            run.low_level_steps += tr.low_level_steps
            episode_steps += tr.low_level_steps
            if episode_steps >= env.episode_limit:
                episode += 1
                env_state = env.reset(_episode_seed(seed, episode))
                episode_steps = 0
        accuracy, fit_steps, resets = float("nan"), 0, 0
        if config.model != "nonparametric":
            try:
                report = _fit_model(config, run.model, counts, seed, round_idx)
            except NumericalError:
                export_run(run, Path(config.output_dir) / f"{config.env}_seed{seed}_failed")
                raise
            accuracy, fit_steps, resets = report.accuracy, report.steps, report.resets
        if config.eval_episodes > 0:
            result = evaluate(config, run.model, env=env)
        else:
            result = EvalResult(float("nan"), float("nan"), 0, 0)
        rec = MetricsRecord(round_idx, run.low_level_steps, len(counts.dataset), result.mean, result.half_width,
                            len(run.unique), len(counts), accuracy, fit_steps, resets,
                            time.perf_counter() - started)
        run.metrics.append(rec)
        if progress:
            progress(run, rec)
        log.info("%s seed=%d steps=%d return=%.3f unique=%d", config.env, seed, rec.low_level_steps,
                 rec.mean_return, rec.unique_transitions)
        round_idx += 1
        if config.stop_at_success and result.mean >= config.stop_at_success:
            break
    return run


def train(config: ExperimentConfig, progress=None) -> list[Run]:
    return [train_seed(config, seed, progress) for seed in config.seeds]


def steps_to_threshold(run: Run, threshold: float) -> int | None:
    """Low-level steps at the first evaluation reaching ``threshold``."""
    for rec in run.metrics:
        if rec.mean_return >= threshold:
            return rec.low_level_steps
    return None


# -- expert data and the generative/discriminative ablation -------------------

def solution_of(env: CraftEnv) -> list[Behaviour]:
    if not env.config.solution:
        raise ValueError(f"environment {env.name} has no scripted solution")
    return [Behaviour.of(env.vocab.item(i, a)) for i, a in env.config.solution]


def expert_dataset(env: CraftEnv, size: int, seed: int, noise: float = 0.3,
                   config: AbMdpConfig = AbMdpConfig()) -> list:
    """Transitions from the scripted route, replaced by a random behaviour with probability ``noise``.

    The script resumes after the furthest route step already true in the state.
    """
    route = solution_of(env)
    goal = goal_of(env)
    rng = np.random.default_rng([seed, 23])
    data = []
    episode = 0
    env_state = env.reset(_episode_seed(seed, episode))
    used = 0
    while len(data) < size:
        state = env.abstract(env_state)
        if goal(state) or used >= env.episode_limit:
            episode += 1
            env_state = env.reset(_episode_seed(seed, episode))
            used = 0
            continue
        if rng.random() < noise:
            options = enumerate_behaviours(state, config.items_per_behaviour, env.vocab.n_attributes)
            b = options[rng.integers(len(options))]
        else:
            done = [j for j, step in enumerate(route) if step.satisfied_by(state)]
            b = route[min(max(done) + 1 if done else 0, len(route) - 1)]
        tr, env_state = run_behaviour(env, env_state, b, config)
        used += tr.low_level_steps
        data.append(tr)
    return data


ABLATION_COLUMNS = ("dataset_size", "seed", "discriminative_success", "generative_success",
                    "discriminative_accuracy", "generative_accuracy")


def ablation_gen_vs_disc(config: ExperimentConfig, sizes, episodes: int | None = None, noise: float = 0.3) -> list[dict]:
    """Fit both model classes on identical expert data and compare planning success."""
    env = make_env(config.env)
    rows = []
    for size in sizes:
        for seed in config.seeds:
            data = expert_dataset(env, size, seed, noise, config.abmdp)
            counts = TransitionCounts.from_dataset(data)
            init = int(np.random.SeedSequence([seed, size]).generate_state(1)[0])
            disc = ParametricModel(env.vocab, config.items_per_behaviour, config.hidden, init)
            gen = GenerativeModel(env.vocab, config.items_per_behaviour, config.hidden, init)
            r_disc = fit(disc, counts, OptimizerState(), config=config.fit_config, seed=init)
            r_gen = fit_generative(gen, data, OptimizerState(), config=config.fit_config, seed=init)
            rows.append({
                "dataset_size": size, "seed": seed,
                "discriminative_success": evaluate(config, disc, episodes, env).mean,
                "generative_success": evaluate(config, gen, episodes, env).mean,
                "discriminative_accuracy": r_disc.accuracy, "generative_accuracy": r_gen.accuracy,
            })
    return rows


def explore_ablation(config: ExperimentConfig, progress=None) -> list[dict]:
    """Unique valid transitions found by each explorer at equal budget.

    Evaluation is skipped, and the random arm keeps counts only since its
    choices never consult a model.
    """
    rows = []
    for explorer in EXPLORERS:
        arm = config.replace(explorer=explorer, stop_at_success=0.0, eval_episodes=0)
        if explorer == "random":
            arm = arm.replace(model="nonparametric")
        for run in train(arm, progress):
            rows.append({"explorer": explorer, "seed": run.seed, "low_level_steps": run.low_level_steps,
                         "unique_transitions": len(run.unique)})
    return rows


def write_rows(rows: list[dict], path, columns=None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    columns = columns or (list(rows[0]) if rows else [])
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for r in rows:
            w.writerow([f"{r[c]:.6f}" if isinstance(r[c], float) else r[c] for c in columns])
    return path


# -- artifacts -------------------------------------------------------------------

def metrics_csv(records: list[MetricsRecord]) -> str:
    buf = io.StringIO()
    buf.write(f"# {METRICS_VERSION}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_COLUMNS)
    for rec in records:
        w.writerow(rec.row())
    return buf.getvalue()


def export_run(run: Run, out_dir) -> dict[str, Path]:
    """Metrics CSV, transition log, weights, config echo, world graph, timings."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"metrics": out / "metrics.csv", "transitions": out / "transitions.jsonl",
             "config": out / "config.ini", "graph_dot": out / "world_graph.dot",
             "graph_json": out / "world_graph.json", "timing": out / "timing.csv"}
    paths["metrics"].write_text(metrics_csv(run.metrics))
    save_dataset(run.counts.dataset, paths["transitions"])
    paths["config"].write_text(run.config.replace(seeds=(run.seed,)).to_ini())
    with paths["timing"].open("w") as fh:
        fh.write("round,wall_clock_seconds\n")
        for rec in run.metrics:
            fh.write(f"{rec.round},{rec.wall_clock:.3f}\n")
    if isinstance(run.model, (ParametricModel, GenerativeModel)):
        paths["weights"] = out / "weights.bin"
        save_weights(run.model, paths["weights"], step=sum(r.fit_steps for r in run.metrics))
    graph = extract_world_graph(run.model, run.root, 0.1, max_nodes=200)
    paths["graph_dot"].write_text(graph.to_dot(run.env.vocab, run.env.name))
    paths["graph_json"].write_text(graph.to_json(run.env.vocab))
    (out / "summary.json").write_text(json.dumps({
        "env": run.config.env, "seed": run.seed, "low_level_steps": run.low_level_steps,
        "abstract_transitions": len(run.counts.dataset), "unique_transitions": len(run.unique),
        "final_return": run.metrics[-1].mean_return if run.metrics else None,
    }, indent=1))
    paths["summary"] = out / "summary.json"
    return paths
