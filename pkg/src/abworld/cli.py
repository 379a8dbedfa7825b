"""Command-line entry point: train, eval, ablate-gen-disc, ablate-explore, export-graph."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import harness
from .env_craft import ConfigError, make_env
from .plan import extract_world_graph
from .worldmodel import NumericalError, load_weights

log = logging.getLogger("abworld")


def _config(args) -> harness.ExperimentConfig:
    overrides = {
        "env": args.env, "budget": args.budget, "explorer": args.explorer, "model": args.model,
        "items_per_behaviour": args.items, "eval_episodes": args.episodes, "output_dir": args.out,
    }
    if args.seeds:
        overrides["seeds"] = tuple(args.seeds)
    if args.config:
        cfg = harness.ExperimentConfig.load(args.config, **overrides)
    else:
        cfg = harness.ExperimentConfig(**{k: v for k, v in overrides.items() if v is not None})
    return harness.apply_env_overrides(cfg)


def _progress(run, rec):
    log.info("seed %d round %d: steps=%d return=%.3f +/- %.3f unique=%d", run.seed, rec.round,
             rec.low_level_steps, rec.mean_return, rec.ci_half_width, rec.unique_transitions)


def cmd_train(args) -> int:
    cfg = _config(args)
    for run in harness.train(cfg, _progress):
        out = Path(cfg.output_dir) / f"{cfg.env}_{cfg.model}_{cfg.explorer}_seed{run.seed}"
        harness.export_run(run, out)
        print(f"seed {run.seed}: {run.low_level_steps} steps, final return "
              f"{run.metrics[-1].mean_return if run.metrics else float('nan'):.3f} -> {out}")
    return 0


def _load_model(args, cfg):
    env = make_env(cfg.env)
    if not args.weights:
        raise ValueError("--weights is required")
    model = load_weights(args.weights)
    if model.vocab != env.vocab:
        raise ValueError(f"weights were trained on a different vocabulary than {cfg.env}")
    return env, model


def cmd_eval(args) -> int:
    cfg = _config(args)
    env, model = _load_model(args, cfg)
    res = harness.evaluate(cfg, model, env=env)
    lo, hi = res.interval
    print(f"{cfg.env}: mean return {res.mean:.3f} (95% CI {lo:.3f}..{hi:.3f}) over {res.episodes} episodes")
    return 0


def cmd_ablate_gen_disc(args) -> int:
    cfg = _config(args)
    rows = harness.ablation_gen_vs_disc(cfg, args.sizes, noise=args.noise)
    path = harness.write_rows(rows, Path(cfg.output_dir) / f"gen_vs_disc_{cfg.env}.csv", harness.ABLATION_COLUMNS)
    for r in rows:
        print(f"size={r['dataset_size']} seed={r['seed']} disc={r['discriminative_success']:.2f} "
              f"gen={r['generative_success']:.2f}")
    print(f"wrote {path}")
    return 0


def cmd_ablate_explore(args) -> int:
    cfg = _config(args)
    rows = harness.explore_ablation(cfg, _progress)
    path = harness.write_rows(rows, Path(cfg.output_dir) / f"explore_{cfg.env}.csv")
    for r in rows:
        print(f"{r['explorer']:>6} seed={r['seed']} unique={r['unique_transitions']}")
    print(f"wrote {path}")
    return 0


def cmd_export_graph(args) -> int:
    cfg = _config(args)
    env, model = _load_model(args, cfg)
    root = env.abstract(env.reset(cfg.seeds[0]))
    graph = extract_world_graph(model, root, args.threshold, args.max_nodes)
    out = Path(args.graph_out or Path(cfg.output_dir) / f"world_graph_{cfg.env}")
    out.parent.mkdir(parents=True, exist_ok=True)
    out.with_suffix(".dot").write_text(graph.to_dot(env.vocab, env.name))
    out.with_suffix(".json").write_text(graph.to_json(env.vocab))
    print(f"{len(graph.nodes)} nodes, {len(graph.edges)} edges -> {out.with_suffix('.dot')}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="abworld", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment key-value file")
        p.add_argument("--env")
        p.add_argument("--seeds", type=int, nargs="+")
        p.add_argument("--budget", type=int)
        p.add_argument("--explorer", choices=harness.EXPLORERS)
        p.add_argument("--model", choices=harness.MODELS)
        p.add_argument("--items", type=int, help="items per behaviour")
        p.add_argument("--episodes", type=int, help="evaluation episodes")
        p.add_argument("--out", help="output directory")
        return p

    common(sub.add_parser("train", help="collect, fit and evaluate")).set_defaults(func=cmd_train)
    p = common(sub.add_parser("eval", help="evaluate saved weights"))
    p.add_argument("--weights")
    p.set_defaults(func=cmd_eval)
    p = common(sub.add_parser("ablate-gen-disc", help="generative vs discriminative on expert data"))
    p.add_argument("--sizes", type=int, nargs="+", default=[25, 100, 400])
    p.add_argument("--noise", type=float, default=0.3)
    p.set_defaults(func=cmd_ablate_gen_disc)
    common(sub.add_parser("ablate-explore", help="mcts vs random exploration")).set_defaults(func=cmd_ablate_explore)
    p = common(sub.add_parser("export-graph", help="world graph of saved weights"))
    p.add_argument("--weights")
    p.add_argument("--threshold", type=float, default=0.1)
    p.add_argument("--max-nodes", type=int, default=200)
    p.add_argument("--graph-out", help="output path without suffix")
    p.set_defaults(func=cmd_export_graph)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, ValueError, OSError, KeyError) as exc:
        print(f"abworld: error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"abworld: numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
