"""Tabular Q-Learning and SARSA with epsilon-greedy exploration."""
from __future__ import annotations

import random
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Iterator, NamedTuple

from .gridworld import Action, EnvState, Heading, ObstacleDir

LEARNER_ACTIONS = (Action.TURN_LEFT, Action.TURN_RIGHT, Action.FORWARD)
N_LEARNER_ACTIONS = len(LEARNER_ACTIONS)


class TabularState(NamedTuple):
    agent_x: int
    agent_y: int
    obstacle_row: int
    obstacle_dir: ObstacleDir
    heading: Heading


def tabular_state(state: EnvState) -> TabularState:
    return TabularState(state.agent[0], state.agent[1], state.obstacle_row, state.obstacle_dir, state.heading)


class Algorithm(Enum):
    QLEARNING = "qlearning"
    SARSA = "sarsa"


@dataclass(frozen=True)
class LearnerConfig:
    gamma: float = 0.99
    alpha: float = 0.5
    epsilon: float = 0.2
    algorithm: Algorithm = Algorithm.QLEARNING
    random_ties: bool = False

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError(f"epsilon must lie in [0, 1], got {self.epsilon}")


_ZEROS = (0.0, 0.0, 0.0)


class QTable:
    """Sparse state-action values; entries never written read as 0."""

    def __init__(self):
        self._values: dict[TabularState, list[float]] = {}

    def row(self, s: TabularState) -> tuple[float, float, float] | list[float]:
        return self._values.get(s, _ZEROS)

    def get(self, s: TabularState, a: Action) -> float:
        return self.row(s)[a]

    def set(self, s: TabularState, a: Action, value: float) -> None:
        self.mutable_row(s)[a] = value

    def mutable_row(self, s: TabularState) -> list[float]:
        row = self._values.get(s)
        if row is None:
            row = self._values[s] = [0.0, 0.0, 0.0]
        return row

    def max_value(self, s: TabularState) -> float:
        return max(self.row(s))

    def __len__(self) -> int:
        return len(self._values)

    def items(self) -> Iterator[tuple[TabularState, list[float]]]:
        return iter(sorted(self._values.items()))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, QTable) and self._values == other._values

    def to_text(self) -> str:
        """Debug dump, one ``state fields, action, value`` line per stored entry."""
        lines = ["agent_x,agent_y,obstacle_row,obstacle_dir,heading,action,value"]
        for s, row in self.items():
            for a in LEARNER_ACTIONS:
                lines.append(
                    f"{s.agent_x},{s.agent_y},{s.obstacle_row},{ObstacleDir(s.obstacle_dir).name.lower()},"
                    f"{Heading(s.heading).name.lower()},{a.name.lower()},{row[a]!r}"
                )
        return "\n".join(lines) + "\n"


def greedy_action(q: QTable, s: TabularState) -> Action:
    # Strict '>' keeps the first maximum: TurnLeft < TurnRight < Forward.
    row = q.row(s)
    best = 0
    if row[1] > row[best]:
        best = 1
    if row[2] > row[best]:
        best = 2
    return LEARNER_ACTIONS[best]


def select_action(q: QTable, s: TabularState, epsilon: float, rng: random.Random,
                  random_ties: bool = False) -> Action:
    """Epsilon-greedy over the learner actions. Always draws exactly one uniform first.

    With ``random_ties`` the exploiting branch picks uniformly among tied
    maxima (one extra draw, only when there is a tie); otherwise the first
    maximum in action order wins.
    """
    if rng.random() < epsilon:
        return LEARNER_ACTIONS[rng.randrange(N_LEARNER_ACTIONS)]
    if not random_ties:
        return greedy_action(q, s)
    row = q.row(s)
    top = max(row)
    tied = [i for i in range(N_LEARNER_ACTIONS) if row[i] == top]
    if len(tied) == 1:
        return LEARNER_ACTIONS[tied[0]]
    return LEARNER_ACTIONS[tied[rng.randrange(len(tied))]]


def q_update(q: QTable, s: TabularState, a: Action, reward: float, s_next: TabularState,
             done: bool, cfg: LearnerConfig) -> QTable:
    bootstrap = 0.0 if done else cfg.gamma * max(q.row(s_next))
    row = q.mutable_row(s)
    row[a] += cfg.alpha * (reward + bootstrap - row[a])
    return q


def sarsa_update(q: QTable, s: TabularState, a: Action, reward: float, s_next: TabularState,
                 a_next: Action | None, done: bool, cfg: LearnerConfig) -> QTable:
    if done:
        bootstrap = 0.0
    else:
        if a_next is None:
            raise ValueError("a_next is required for a non-terminal SARSA update")
        bootstrap = cfg.gamma * q.row(s_next)[a_next]
    row = q.mutable_row(s)
    row[a] += cfg.alpha * (reward + bootstrap - row[a])
    return q


def greedy_policy(q: QTable) -> Callable[[TabularState], Action]:
    return lambda s: greedy_action(q, s)
