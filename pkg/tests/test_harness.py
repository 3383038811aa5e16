import dataclasses
import math
import random
from pathlib import Path

import numpy as np
import pytest

from safebrs.classify import LinearSvm
from safebrs.gridworld import Outcome, pretrain_spec
from safebrs.harness import (ConfigError, EpisodeRecord, ExperimentConfig, Strategy, build_report,
                             config_from_text, config_to_text, discounted_return, episodes_filename,
                             learning_curves, read_episodes_csv, run_pretraining, run_seed, run_task,
                             summarize, train, write_episodes_csv, write_summary_csv)
from safebrs.tabular_rl import Algorithm, LearnerConfig

SMALL = ExperimentConfig(pretrain_episodes=30, train_episodes=15, train_runs=3)
NEVER = LinearSvm(np.zeros(6), -1.0, np.zeros(6), np.ones(6))


def rec(run, idx, outcome, ret=0.0, steps=1):
    return EpisodeRecord(run, idx, steps, outcome, ret)


def test_default_config_values():
    cfg = ExperimentConfig()
    assert (cfg.pretrain_episodes, cfg.pretrain_epsilon, cfg.pretrain_algorithm) == (4000, 0.6, Algorithm.QLEARNING)
    assert (cfg.train_episodes, cfg.train_runs, cfg.train_epsilon, cfg.gamma, cfg.alpha) == (2000, 20, 0.2, 0.99, 0.5)
    assert cfg.horizon == 2 and len(cfg.tasks) == 3
    assert (cfg.svm.learning_rate, cfg.svm.regularization, cfg.svm.epochs) == (0.01, 0.01, 50)
    assert (cfg.knn_k, cfg.tree.max_depth, cfg.tree.min_leaf) == (5, 8, 5)


def test_config_round_trip():
    cfg = dataclasses.replace(SMALL, master_seed=7, tasks=(4, 5, 6), random_ties=False, classifier="tree",
                              strategy=Strategy.SAFE_EXPLORATION, feature_offsets=True)
    assert config_from_text(config_to_text(cfg)) == cfg
    assert config_from_text("") == ExperimentConfig()


@pytest.mark.parametrize("text", ["bogus = 1\n", "train.runs = 0\n", "train.epsilon = 2\n", "horizon = x\n",
                                  "classifier.kind = forest\n", "train.random_ties = maybe\n"])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        config_from_text(text)


def test_run_seed_scheme():
    assert run_seed(0, 1, 0) == 1009
    assert run_seed(2, 3, 5) == 2 * 1000003 + 3 * 1009 + 5


def test_discounted_return_examples():
    assert discounted_return(30, 1.0, 0.99) == pytest.approx(0.7471720943, abs=1e-9)
    assert discounted_return(10, -1.0, 0.99) == pytest.approx(-0.9135172475, abs=1e-9)
    assert discounted_return(50, 0.0, 0.99) == 0.0


def test_run_task_cardinality_and_record_invariants():
    cfg = dataclasses.replace(SMALL, train_runs=1, train_episodes=1)
    assert len(run_task(cfg, 1, Algorithm.QLEARNING, Strategy.EPSILON_GREEDY)) == 1
    records = run_task(SMALL, 2, Algorithm.SARSA, Strategy.EPSILON_GREEDY)
    assert len(records) == SMALL.train_runs * SMALL.train_episodes
    assert [(r.run_id, r.episode_idx) for r in records] == [(r, e) for r in range(3) for e in range(15)]
    for r in records:
        reward = {Outcome.GOAL: 1.0, Outcome.COLLISION: -1.0, Outcome.TIMEOUT: 0.0}[r.outcome]
        assert r.discounted_return == discounted_return(r.steps, reward, SMALL.gamma)
        assert r.shield_activations == 0


def test_run_task_safe_requires_model():
    with pytest.raises(ConfigError):
        run_task(SMALL, 1, Algorithm.QLEARNING, Strategy.SAFE_EXPLORATION)
    with pytest.raises(ConfigError):
        run_task(SMALL, 4, Algorithm.QLEARNING, Strategy.EPSILON_GREEDY)


def test_runs_are_independent_of_execution_order():
    serial = run_task(SMALL, 1, Algorithm.QLEARNING, Strategy.EPSILON_GREEDY)
    parallel = run_task(SMALL, 1, Algorithm.QLEARNING, Strategy.EPSILON_GREEDY, workers=2)
    assert serial == parallel
    one = dataclasses.replace(SMALL, train_runs=1)
    assert run_task(one, 1, Algorithm.QLEARNING, Strategy.EPSILON_GREEDY) == serial[:SMALL.train_episodes]


def test_never_positive_shield_matches_egreedy():
    a = run_task(SMALL, 3, Algorithm.QLEARNING, Strategy.EPSILON_GREEDY)
    b = run_task(SMALL, 3, Algorithm.QLEARNING, Strategy.SAFE_EXPLORATION, NEVER)
    assert a == b


def test_pretraining_examples():
    assert run_pretraining(dataclasses.replace(SMALL, pretrain_episodes=0))[0] == []
    trajs, q = run_pretraining(SMALL)
    assert len(trajs) == 30 and trajs == run_pretraining(SMALL)[0]
    spec = pretrain_spec()
    for t in trajs:
        assert (t.states[0].agent_x, t.states[0].agent_y) == spec.agent_start


def test_summarize_examples():
    outcomes = [Outcome.GOAL, Outcome.COLLISION, Outcome.TIMEOUT, Outcome.GOAL]
    row = summarize([rec(0, i, o) for i, o in enumerate(outcomes)], "qlearning", 1, "egreedy")
    assert (row.avg_collision_rate, row.avg_success_rate) == (0.25, 0.5)
    row = summarize([rec(0, i, Outcome.GOAL, 1.0) for i in range(7)], "sarsa", 2, "safe")
    assert row.sum_of_reward == 7.0


def test_summarize_averages_over_runs():
    recs = [rec(0, 0, Outcome.GOAL, 1.0), rec(0, 1, Outcome.GOAL, 1.0),
            rec(1, 0, Outcome.COLLISION, -1.0), rec(1, 1, Outcome.GOAL, 0.5)]
    row = summarize(recs[::-1], "q", 1, "egreedy")
    assert row.avg_collision_rate == 0.25 and row.avg_success_rate == 0.75
    assert row.sum_of_reward == pytest.approx((2.0 + -0.5) / 2)
    assert row.avg_collision_rate + row.avg_success_rate <= 1.0


def test_learning_curve_examples():
    ret, col = learning_curves([rec(0, i, Outcome.GOAL, 1.0) for i in range(25)])
    assert np.all(ret == 1.0) and np.all(col == 0.0) and len(ret) == 25
    alternating = [rec(0, i, Outcome.GOAL if i % 2 == 0 else Outcome.COLLISION) for i in range(30)]
    _, col = learning_curves(alternating, 10)
    assert col[0] == 0.0 and col[1] == 0.5
    assert np.all(col[9:] == 0.5)


def test_learning_curves_average_runs_at_equal_indices():
    recs = [rec(0, i, Outcome.COLLISION) for i in range(3)] + [rec(1, i, Outcome.GOAL) for i in range(3)]
    _, col = learning_curves(recs, 2)
    assert np.allclose(col, 0.5)
    with pytest.raises(ValueError):
        learning_curves(recs, 0)


def test_episodes_csv_round_trip(tmp_path):
    recs = [EpisodeRecord(0, 0, 30, Outcome.GOAL, 0.99 ** 29, 2), EpisodeRecord(0, 1, 4, Outcome.TIMEOUT, 0.0, 0)]
    path = tmp_path / "e.csv"
    write_episodes_csv(path, recs)
    lines = path.read_text().splitlines()
    assert lines[0] == "run_id,episode_idx,steps,outcome,discounted_return,shield_activations"
    assert lines[2] == "0,1,4,timeout,0.0,0"
    assert read_episodes_csv(path) == recs


def test_summary_csv_format(tmp_path):
    path = tmp_path / "s.csv"
    row = summarize([rec(0, 0, Outcome.GOAL, 1.0), rec(0, 1, Outcome.COLLISION, -1 / 3)], "qlearning", 1, "egreedy")
    write_summary_csv(path, [row])
    assert path.read_text() == ("algorithm,task,strategy,avg_collision_rate,avg_success_rate,sum_of_reward\n"
                                "qlearning,1,egreedy,0.500000,0.500000,0.666667\n")


def test_build_report(tmp_path):
    for algo in Algorithm:
        records = run_task(SMALL, 1, algo, Strategy.EPSILON_GREEDY)
        write_episodes_csv(tmp_path / episodes_filename(algo, 1, Strategy.EPSILON_GREEDY), records)
    rows = build_report(tmp_path, tmp_path / "summary.csv")
    assert [(r.algorithm, r.task, r.strategy) for r in rows] == [("qlearning", 1, "egreedy"), ("sarsa", 1, "egreedy")]
    curve = (tmp_path / "curves_sarsa_task1_egreedy.csv").read_text().splitlines()
    assert curve[0] == "episode_idx,rolling_return_mean,rolling_collision_rate"
    assert len(curve) == SMALL.train_episodes + 1
    empty = tmp_path / "empty"
    empty.mkdir()
    with pytest.raises(FileNotFoundError):
        build_report(empty, tmp_path / "x.csv")


def test_outcome_fractions_sum_to_one_per_run():
    records = run_task(SMALL, 1, Algorithm.QLEARNING, Strategy.EPSILON_GREEDY)
    for run in range(SMALL.train_runs):
        mine = [r for r in records if r.run_id == run]
        counts = {o: sum(r.outcome is o for r in mine) for o in (Outcome.GOAL, Outcome.COLLISION, Outcome.TIMEOUT)}
        assert sum(counts.values()) == len(mine)


def test_sarsa_bootstraps_over_safe_steps_without_updating_them():
    # Shielded SARSA never writes a Q entry for a state where only safe actions were taken.
    spec = pretrain_spec()
    always = LinearSvm(np.zeros(6), 1.0, np.zeros(6), np.ones(6))
    run = train(spec, LearnerConfig(algorithm=Algorithm.SARSA), 3, random.Random(0), model=always)
    assert len(run.q) == 0
    assert all(r.outcome is Outcome.TIMEOUT for r in run.records)
    assert all(math.isclose(r.discounted_return, 0.0) for r in run.records)


def test_readme_config_block_is_the_default_config():
    readme = (Path(__file__).parent.parent / "README.md").read_text()
    block = readme.split("The config file is flat")[1].split("```")[1]
    assert config_from_text(block) == ExperimentConfig()
    assert config_from_text("train.runs = 4  # trailing comment\n").train_runs == 4
