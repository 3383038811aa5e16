"""Command-line entry point: ``safebrs <subcommand> ...``."""
from __future__ import annotations

import argparse
import logging
import random
import sys
from pathlib import Path

from . import classify, harness
from .gridworld import GridPos, GridSpec, Heading, ObstacleDir, pretrain_spec, save_spec
from .harness import ConfigError, Strategy
from .reachability import brs_labels, brute_force_brs, value_trace
from .tabular_rl import Algorithm

log = logging.getLogger("safebrs")

_ALGOS = {"q": Algorithm.QLEARNING, "sarsa": Algorithm.SARSA}
_STRATEGIES = {"egreedy": Strategy.EPSILON_GREEDY, "safe": Strategy.SAFE_EXPLORATION}


class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of printing usage and exiting."""

    def error(self, message):
        raise ConfigError(message)


def cmd_pretrain(args) -> None:
    cfg = harness.load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = pretrain_spec()
    save_spec(spec, out / "pretrain_spec.txt")
    trajectories, _ = harness.run_pretraining(cfg, spec)
    harness.write_trajectories_csv(out / "trajectories.csv", trajectories)
    X, y = classify.as_arrays(classify.build_dataset(trajectories, cfg.horizon, spec, cfg.feature_offsets))
    classify.write_dataset_csv(out / "dataset.csv", X, y)
    log.info("%d episodes, %d samples, positive fraction %.4f", len(trajectories), len(y),
             float(y.mean()) if len(y) else 0.0)


def cmd_fit(args) -> None:
    cfg = harness.load_config(args.config)
    X, y = classify.read_dataset_csv(args.data)
    model, report = harness.fit_classifier(cfg, X, y, kind=args.model)
    classify.save_model(model, args.out)
    classify.write_report_csv(args.report, [(args.model, report)])
    log.info("%s held-out accuracy %.4f f1 %.4f", args.model, report.accuracy, report.f1)


def cmd_run(args) -> None:
    cfg = harness.load_config(args.config)
    strategy = _STRATEGIES[args.strategy]
    model = None
    if strategy is Strategy.SAFE_EXPLORATION:
        if not args.model:
            raise ConfigError("--strategy safe requires --model (missing model file)")
        model = classify.load_model(args.model)
    records = harness.run_task(cfg, args.task, _ALGOS[args.algo], strategy, model, workers=args.workers)
    harness.write_episodes_csv(args.out, records)


def cmd_report(args) -> None:
    rows = harness.build_report(args.in_dir, args.out, window=args.window)
    for r in rows:
        log.info("%s task%d %s collision=%.3f success=%.3f reward=%.3f", r.algorithm, r.task, r.strategy,
                 r.avg_collision_rate, r.avg_success_rate, r.sum_of_reward)


def cmd_pipeline(args) -> None:
    cfg = harness.load_config(args.config)
    harness.run_pipeline(cfg, args.out, workers=args.workers)


def oracle_check(size: int, horizon: int, episodes: int = 2000, seed: int = 0) -> tuple[int, int]:
    """Label seeded epsilon-greedy rollouts and count labels the oracle rejects.

    Returns (violations, positive labels checked).
    """
    spec = GridSpec(
        width=size, height=size, goal=GridPos(size - 1, 0), blocked=frozenset(),
        obstacle_column=size // 2, obstacle_init_row=0, obstacle_init_dir=ObstacleDir.DOWN,
        agent_start=GridPos(0, size // 2), agent_start_heading=Heading.EAST, max_steps=4 * (size + size),
    )
    oracle = brute_force_brs(spec, horizon)
    run = harness.train(spec, harness.ExperimentConfig().learner(Algorithm.QLEARNING, epsilon=0.6), episodes,
                        random.Random(seed), log_trajectories=True)
    violations = positives = 0
    for traj in run.trajectories:
        for s, lab in zip(traj.states, brs_labels(value_trace(traj, horizon, spec))):
            if lab:
                positives += 1
                violations += s not in oracle
    return violations, positives


def cmd_oracle_check(args) -> int:
    violations, positives = oracle_check(args.size, args.horizon, args.episodes, args.seed)
    print(f"oracle-check size={args.size} horizon={args.horizon}: {positives} BRS labels, {violations} violations")
    return 1 if violations else 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="safebrs", description="Safe exploration with learned backward-reachable-set shields.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("pretrain", help="run pre-training and write trajectories + dataset CSV")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_pretrain)

    s = sub.add_parser("fit", help="fit a BRS classifier on a dataset CSV")
    s.add_argument("--data", required=True)
    s.add_argument("--model", choices=("svm", "knn", "tree"), default="svm")
    s.add_argument("--out", required=True)
    s.add_argument("--report", required=True)
    s.add_argument("--config")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("run", help="train on one task and write the episodes CSV")
    s.add_argument("--task", type=int, required=True, choices=(1, 2, 3))
    s.add_argument("--algo", choices=tuple(_ALGOS), required=True)
    s.add_argument("--strategy", choices=tuple(_STRATEGIES), required=True)
    s.add_argument("--model")
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("report", help="summary CSV + learning-curve CSVs from episodes CSVs")
    s.add_argument("--in", dest="in_dir", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--window", type=int, default=10)
    s.set_defaults(func=cmd_report)

    s = sub.add_parser("pipeline", help="full pre-train -> fit -> train -> report run")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("oracle-check", help="check trajectory BRS labels against the brute-force oracle")
    s.add_argument("--size", type=int, default=6)
    s.add_argument("--horizon", type=int, default=2)
    s.add_argument("--episodes", type=int, default=2000)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_oracle_check)
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        status = args.func(args)
        return int(status or 0)
    except (ConfigError, classify.ModelFormatError, classify.FitError, OSError, ValueError) as exc:
        print(f"safebrs: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
