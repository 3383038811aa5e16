"""Experiment orchestration: pre-training, BRS classifier fitting, shielded task training, metrics."""
from __future__ import annotations

import csv
import dataclasses
import random
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import classify
from .classify import Model, SvmConfig, TreeConfig
from .gridworld import GridSpec, Outcome, generate_task, pretrain_spec, reset, save_spec, step
from .kvfile import KVFormatError, format_kv, parse_kv
from .reachability import Trajectory
from .shield import EMPTY_PLAN, Source, shield_decide
from .tabular_rl import (Algorithm, LearnerConfig, QTable, greedy_action, q_update, sarsa_update,
                         select_action, tabular_state)


class ConfigError(ValueError):
    pass


class Strategy(Enum):
    EPSILON_GREEDY = "egreedy"
    SAFE_EXPLORATION = "safe"


@dataclass(frozen=True)
class ExperimentConfig:
    master_seed: int = 0
    pretrain_episodes: int = 4000
    pretrain_epsilon: float = 0.6
    pretrain_algorithm: Algorithm = Algorithm.QLEARNING
    tasks: tuple[int, ...] = (1, 2, 3)
    train_episodes: int = 2000
    train_runs: int = 20
    train_epsilon: float = 0.2
    gamma: float = 0.99
    alpha: float = 0.5
    random_ties: bool = True
    horizon: int = 2
    classifier: str = "svm"
    svm: SvmConfig = SvmConfig()
    knn_k: int = 5
    tree: TreeConfig = TreeConfig()
    feature_offsets: bool = False
    test_fraction: float = 0.2
    strategy: Strategy = Strategy.EPSILON_GREEDY

    def __post_init__(self):
        if self.pretrain_episodes < 0:
            raise ConfigError("pretrain.episodes must be >= 0")
        if self.train_episodes < 1 or self.train_runs < 1:
            raise ConfigError("train.episodes and train.runs must be >= 1")
        if self.horizon < 0:
            raise ConfigError("horizon must be >= 0")
        if self.classifier not in ("svm", "knn", "tree"):
            raise ConfigError(f"unknown classifier kind {self.classifier!r}")
        if not self.tasks:
            raise ConfigError("at least one task seed is required")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("classifier.test_fraction must lie in (0, 1)")
        try:
            self.learner(Algorithm.QLEARNING)
            LearnerConfig(self.gamma, self.alpha, self.pretrain_epsilon)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def learner(self, algorithm: Algorithm, epsilon: float | None = None) -> LearnerConfig:
        eps = self.train_epsilon if epsilon is None else epsilon
        return LearnerConfig(self.gamma, self.alpha, eps, algorithm, self.random_ties)


# -- config files --------------------------------------------------------------

def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _algorithm(text: str) -> Algorithm:
    low = text.lower()
    if low in ("q", "qlearning", "q-learning"):
        return Algorithm.QLEARNING
    if low == "sarsa":
        return Algorithm.SARSA
    raise ValueError(f"unknown algorithm {text!r}")


def _int_tuple(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


# key -> (path into the config, parser, formatter)
_CONFIG_KEYS = {
    "master_seed": (("master_seed",), int, str),
    "pretrain.episodes": (("pretrain_episodes",), int, str),
    "pretrain.epsilon": (("pretrain_epsilon",), float, repr),
    "pretrain.algorithm": (("pretrain_algorithm",), _algorithm, lambda a: a.value),
    "tasks": (("tasks",), _int_tuple, lambda t: ",".join(map(str, t))),
    "train.episodes": (("train_episodes",), int, str),
    "train.runs": (("train_runs",), int, str),
    "train.epsilon": (("train_epsilon",), float, repr),
    "train.gamma": (("gamma",), float, repr),
    "train.alpha": (("alpha",), float, repr),
    "train.random_ties": (("random_ties",), _bool, lambda b: str(b).lower()),
    "horizon": (("horizon",), int, str),
    "strategy": (("strategy",), Strategy, lambda s: s.value),
    "classifier.kind": (("classifier",), str, str),
    "classifier.offsets": (("feature_offsets",), _bool, lambda b: str(b).lower()),
    "classifier.test_fraction": (("test_fraction",), float, repr),
    "classifier.svm.learning_rate": (("svm", "learning_rate"), float, repr),
    "classifier.svm.regularization": (("svm", "regularization"), float, repr),
    "classifier.svm.epochs": (("svm", "epochs"), int, str),
    "classifier.svm.batch_size": (("svm", "batch_size"), int, str),
    "classifier.svm.class_weighting": (("svm", "class_weighting"), _bool, lambda b: str(b).lower()),
    "classifier.svm.seed": (("svm", "seed"), int, str),
    "classifier.knn.k": (("knn_k",), int, str),
    "classifier.tree.max_depth": (("tree", "max_depth"), int, str),
    "classifier.tree.min_leaf": (("tree", "min_leaf"), int, str),
    "classifier.tree.ties_positive": (("tree", "ties_positive"), _bool, lambda b: str(b).lower()),
}


def config_from_text(text: str) -> ExperimentConfig:
    kv = parse_kv(text)
    unknown = sorted(set(kv) - set(_CONFIG_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    top: dict = {}
    nested: dict[str, dict] = {"svm": {}, "tree": {}}
    for key, raw in kv.items():
        path, parse, _ = _CONFIG_KEYS[key]
        try:
            value = parse(raw)
        except ValueError as exc:
            raise ConfigError(f"{key}: {exc}") from None
        if len(path) == 2:
            nested[path[0]][path[1]] = value
        else:
            top[path[0]] = value
    base = ExperimentConfig()
    try:
        return ExperimentConfig(**{
            **top,
            "svm": dataclasses.replace(base.svm, **nested["svm"]),
            "tree": dataclasses.replace(base.tree, **nested["tree"]),
        })
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def config_to_text(cfg: ExperimentConfig) -> str:
    items = {}
    for key, (path, _, fmt) in _CONFIG_KEYS.items():
        value = cfg
        for part in path:
            value = getattr(value, part)
        items[key] = fmt(value)
    return format_kv(items)


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    try:
        return config_from_text(Path(path).read_text())
    except KVFormatError as exc:
        raise ConfigError(str(exc)) from None


# -- seeds ---------------------------------------------------------------------

def run_seed(master_seed: int, task_index: int, run_id: int) -> int:
    """Fixed affine seed mixing. Task index 0 is reserved for pre-training."""
    return master_seed * 1000003 + task_index * 1009 + run_id


# -- records -------------------------------------------------------------------

@dataclass(frozen=True)
class EpisodeRecord:
    run_id: int
    episode_idx: int
    steps: int
    outcome: Outcome
    discounted_return: float
    shield_activations: int = 0


@dataclass
class TrainingRun:
    records: list[EpisodeRecord]
    q: QTable
    trajectories: list[Trajectory] = field(default_factory=list)


def discounted_return(steps: int, terminal_reward: float, gamma: float) -> float:
    if terminal_reward == 0.0:
        return 0.0
    return gamma ** (steps - 1) * terminal_reward


def train(spec: GridSpec, lcfg: LearnerConfig, episodes: int, rng: random.Random, *,
          model: Model | None = None, offsets: bool = False, run_id: int = 0,
          log_trajectories: bool = False, q: QTable | None = None) -> TrainingRun:
    """Train one learner for ``episodes`` episodes, shielded when ``model`` is given.

    Only learner-chosen transitions are used for TD updates. For SARSA, a
    learner transition followed by a safe-policy step bootstraps from the
    greedy action in the next state.
    """
    q = QTable() if q is None else q
    sarsa = lcfg.algorithm is Algorithm.SARSA
    eps = lcfg.epsilon
    ties = lcfg.random_ties
    records = []
    trajectories = []
    for ep in range(episodes):
        state = reset(spec)
        s = tabular_state(state)
        visited = [s] if log_trajectories else None
        plan = EMPTY_PLAN
        pending = None  # SARSA transition waiting for its next action
        activations = 0
        while True:
            if model is None:
                source, action = Source.LEARNER, select_action(q, s, eps, rng, ties)
            else:
                (source, action), plan = shield_decide(s, model, q, plan, eps, rng, spec, offsets, ties)
            if pending is not None:
                a_next = action if source is Source.LEARNER else greedy_action(q, s)
                sarsa_update(q, *pending, a_next, False, lcfg)
                pending = None
            res = step(state, action, spec)
            s_next = tabular_state(res.next)
            if source is Source.LEARNER:
                if not sarsa:
                    q_update(q, s, action, res.reward, s_next, res.done, lcfg)
                elif res.done:
                    sarsa_update(q, s, action, res.reward, s_next, None, True, lcfg)
                else:
                    pending = (s, action, res.reward, s_next)
            else:
                activations += 1
            state, s = res.next, s_next
            if visited is not None:
                visited.append(s)
            if res.done:
                break
        steps = state.steps_elapsed
        records.append(EpisodeRecord(run_id, ep, steps, res.outcome,
                                     discounted_return(steps, res.reward, lcfg.gamma), activations))
        if visited is not None:
            trajectories.append(Trajectory(tuple(visited), res.outcome))
    return TrainingRun(records, q, trajectories)


def run_pretraining(cfg: ExperimentConfig, spec: GridSpec | None = None) -> tuple[list[Trajectory], QTable]:
    spec = spec or pretrain_spec()
    rng = random.Random(run_seed(cfg.master_seed, 0, 0))
    lcfg = cfg.learner(cfg.pretrain_algorithm, epsilon=cfg.pretrain_epsilon)
    out = train(spec, lcfg, cfg.pretrain_episodes, rng, log_trajectories=True)
    return out.trajectories, out.q


def fit_classifier(cfg: ExperimentConfig, X: np.ndarray, y: np.ndarray, kind: str | None = None
                   ) -> tuple[Model, classify.EvalReport]:
    """Stratified split, fit on the training part, evaluate on the held-out part."""
    kind = kind or cfg.classifier
    train_idx, test_idx = classify.stratified_split(y, cfg.test_fraction, seed=cfg.master_seed)
    Xtr, ytr = X[train_idx], y[train_idx]
    if kind == "svm":
        model = classify.fit_svm(Xtr, ytr, cfg.svm)
    elif kind == "knn":
        model = classify.fit_knn(Xtr, ytr, cfg.knn_k)
    elif kind == "tree":
        model = classify.fit_tree(Xtr, ytr, cfg.tree)
    else:
        raise ConfigError(f"unknown classifier kind {kind!r}")
    return model, classify.evaluate(model, X[test_idx], y[test_idx])


def task_spec(cfg: ExperimentConfig, task_number: int) -> GridSpec:
    if not 1 <= task_number <= len(cfg.tasks):
        raise ConfigError(f"task must be in 1..{len(cfg.tasks)}, got {task_number}")
    return generate_task(cfg.tasks[task_number - 1])


def _one_run(args) -> list[EpisodeRecord]:
    spec, lcfg, episodes, seed, model, offsets, run_id = args
    return train(spec, lcfg, episodes, random.Random(seed), model=model, offsets=offsets, run_id=run_id).records


def run_task(cfg: ExperimentConfig, task_number: int, algorithm: Algorithm, strategy: Strategy,
             model: Model | None = None, workers: int = 1) -> list[EpisodeRecord]:
    """All ``cfg.train_runs`` independent runs on one task, ordered by (run_id, episode_idx)."""
    if strategy is Strategy.SAFE_EXPLORATION and model is None:
        raise ConfigError("safe exploration requires a fitted BRS model")
    spec = task_spec(cfg, task_number)
    lcfg = cfg.learner(algorithm)
    shield_model = model if strategy is Strategy.SAFE_EXPLORATION else None
    jobs = [
        (spec, lcfg, cfg.train_episodes, run_seed(cfg.master_seed, task_number, r), shield_model,
         cfg.feature_offsets, r)
        for r in range(cfg.train_runs)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_run = list(pool.map(_one_run, jobs))
    else:
        per_run = [_one_run(j) for j in jobs]
    return [rec for run in per_run for rec in run]


# -- metrics -------------------------------------------------------------------

@dataclass(frozen=True)
class SummaryRow:
    algorithm: str
    task: int
    strategy: str
    avg_collision_rate: float
    avg_success_rate: float
    sum_of_reward: float


def _by_run(records: Iterable[EpisodeRecord]) -> dict[int, list[EpisodeRecord]]:
    runs: dict[int, list[EpisodeRecord]] = {}
    for rec in records:
        runs.setdefault(rec.run_id, []).append(rec)
    for run in runs.values():
        run.sort(key=lambda r: r.episode_idx)
    return dict(sorted(runs.items()))


def summarize(records: Sequence[EpisodeRecord], algorithm: str, task: int, strategy: str) -> SummaryRow:
    runs = _by_run(records)
    if not runs:
        raise ValueError("no records to summarize")
    collision, success, reward = [], [], []
    for run in runs.values():
        n = len(run)
        collision.append(sum(r.outcome is Outcome.COLLISION for r in run) / n)
        success.append(sum(r.outcome is Outcome.GOAL for r in run) / n)
        reward.append(sum(r.discounted_return for r in run))
    return SummaryRow(algorithm, task, strategy, float(np.mean(collision)), float(np.mean(success)),
                      float(np.mean(reward)))


def _trailing_mean(x: np.ndarray, window: int) -> np.ndarray:
    csum = np.concatenate(([0.0], np.cumsum(x)))
    idx = np.arange(len(x))
    lo = np.maximum(0, idx + 1 - window)
    return (csum[idx + 1] - csum[lo]) / (idx + 1 - lo)


def learning_curves(records: Sequence[EpisodeRecord], window: int = 10) -> tuple[np.ndarray, np.ndarray]:
    """Trailing-window return mean and collision fraction per episode index, averaged over runs."""
    if window < 1:
        raise ValueError("window must be >= 1")
    runs = _by_run(records)
    if not runs:
        return np.zeros(0), np.zeros(0)
    returns, collisions = [], []
    for run in runs.values():
        returns.append(_trailing_mean(np.array([r.discounted_return for r in run]), window))
        collisions.append(_trailing_mean(np.array([r.outcome is Outcome.COLLISION for r in run], float), window))
    return np.mean(returns, axis=0), np.mean(collisions, axis=0)


# -- CSV I/O -------------------------------------------------------------------

EPISODE_COLUMNS = ("run_id", "episode_idx", "steps", "outcome", "discounted_return", "shield_activations")
SUMMARY_COLUMNS = ("algorithm", "task", "strategy", "avg_collision_rate", "avg_success_rate", "sum_of_reward")
CURVE_COLUMNS = ("episode_idx", "rolling_return_mean", "rolling_collision_rate")


def write_episodes_csv(path: str | Path, records: Iterable[EpisodeRecord]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPISODE_COLUMNS)
        for r in records:
            w.writerow([r.run_id, r.episode_idx, r.steps, r.outcome.value, repr(r.discounted_return),
                        r.shield_activations])


def read_episodes_csv(path: str | Path) -> list[EpisodeRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != EPISODE_COLUMNS:
            raise ValueError(f"{path}: unexpected episodes header {reader.fieldnames}")
        return [
            EpisodeRecord(int(row["run_id"]), int(row["episode_idx"]), int(row["steps"]),
                          Outcome(row["outcome"]), float(row["discounted_return"]),
                          int(row["shield_activations"]))
            for row in reader
        ]


def write_summary_csv(path: str | Path, rows: Iterable[SummaryRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_COLUMNS)
        for r in rows:
            w.writerow([r.algorithm, r.task, r.strategy, f"{r.avg_collision_rate:.6f}",
                        f"{r.avg_success_rate:.6f}", f"{r.sum_of_reward:.6f}"])


def write_curves_csv(path: str | Path, returns: np.ndarray, collisions: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for i, (ret, col) in enumerate(zip(returns.tolist(), collisions.tolist())):
            w.writerow([i, f"{ret:.6f}", f"{col:.6f}"])


def write_trajectories_csv(path: str | Path, trajectories: Iterable[Trajectory]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("episode", "t", "agent_x", "agent_y", "obstacle_row", "obstacle_dir", "heading", "outcome"))
        for ep, traj in enumerate(trajectories):
            for t, s in enumerate(traj.states):
                w.writerow([ep, t, s.agent_x, s.agent_y, s.obstacle_row, s.obstacle_dir.name.lower(),
                            s.heading.name.lower(), traj.outcome.value])


EPISODES_NAME = re.compile(r"^episodes_(qlearning|sarsa)_task(\d+)_(egreedy|safe)\.csv$")


def episodes_filename(algorithm: Algorithm, task: int, strategy: Strategy) -> str:
    return f"episodes_{algorithm.value}_task{task}_{strategy.value}.csv"


def build_report(in_dir: str | Path, summary_path: str | Path, window: int = 10) -> list[SummaryRow]:
    """Summary CSV plus one curves CSV per episodes file, written next to the summary."""
    in_dir = Path(in_dir)
    summary_path = Path(summary_path)
    found = []
    for path in in_dir.iterdir():
        m = EPISODES_NAME.match(path.name)
        if m:
            found.append(((m.group(1), int(m.group(2)), m.group(3)), path))
    if not found:
        raise FileNotFoundError(f"no episodes_*.csv files in {in_dir}")
    found.sort()
    rows = []
    for (algo, task, strat), path in found:
        records = read_episodes_csv(path)
        rows.append(summarize(records, algo, task, strat))
        ret, col = learning_curves(records, window)
        write_curves_csv(summary_path.parent / f"curves_{algo}_task{task}_{strat}.csv", ret, col)
    write_summary_csv(summary_path, rows)
    return rows


def run_pipeline(cfg: ExperimentConfig, out_dir: str | Path, workers: int = 1,
                 algorithms: Sequence[Algorithm] = (Algorithm.QLEARNING, Algorithm.SARSA),
                 strategies: Sequence[Strategy] = (Strategy.EPSILON_GREEDY, Strategy.SAFE_EXPLORATION),
                 ) -> list[SummaryRow]:
    """Pre-train, label, fit, train every (algorithm, task, strategy) cell and report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config_to_text(cfg))
    spec = pretrain_spec()
    save_spec(spec, out / "pretrain_spec.txt")
    trajectories, _ = run_pretraining(cfg, spec)
    write_trajectories_csv(out / "trajectories.csv", trajectories)
    X, y = classify.as_arrays(classify.build_dataset(trajectories, cfg.horizon, spec, cfg.feature_offsets))
    classify.write_dataset_csv(out / "dataset.csv", X, y)
    model, report = fit_classifier(cfg, X, y)
    classify.save_model(model, out / "model.txt")
    classify.write_report_csv(out / "classifier_report.csv", [(cfg.classifier, report)])
    for task in range(1, len(cfg.tasks) + 1):
        save_spec(task_spec(cfg, task), out / f"task{task}.txt")
        for algo in algorithms:
            for strat in strategies:
                records = run_task(cfg, task, algo, strat, model, workers=workers)
                write_episodes_csv(out / episodes_filename(algo, task, strat), records)
    return build_report(out, out / "summary.csv")
