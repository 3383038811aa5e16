"""Rule-based safe policy and the classifier-gated switch in front of the learner.

While the classifier flags the current state as BRS, actions come from the
safe policy: step out of the obstacle's column by the shortest turn-and-move
sequence, then hold still. Otherwise the epsilon-greedy learner acts.
"""
from __future__ import annotations

import random
from enum import Enum
from typing import NamedTuple

from .classify import Model, extract_features
from .gridworld import Action, GridSpec, Heading
from .tabular_rl import QTable, TabularState, select_action

EMPTY_PLAN: tuple[Action, ...] = ()


class Source(Enum):
    LEARNER = "learner"
    SAFE = "safe"


class ShieldDecision(NamedTuple):
    source: Source
    action: Action


def in_obstacle_path(s: TabularState, spec: GridSpec) -> bool:
    return spec.obstacle_column is not None and s.agent_x == spec.obstacle_column


def _rotations(heading: Heading, target: Heading) -> tuple[Action, ...]:
    diff = (target - heading) % 4
    if diff == 0:
        return ()
    if diff == 1:
        return (Action.TURN_RIGHT,)
    if diff == 3:
        return (Action.TURN_LEFT,)
    return (Action.TURN_RIGHT, Action.TURN_RIGHT)


def exit_plan(s: TabularState, spec: GridSpec) -> tuple[Action, ...]:
    """Shortest action sequence moving one column off the obstacle's path.

    East is tried first and wins ties. Empty if neither side cell is free.
    """
    best: tuple[Action, ...] | None = None
    for dx, facing in ((1, Heading.EAST), (-1, Heading.WEST)):
        tx = s.agent_x + dx
        if not spec.in_bounds(tx, s.agent_y) or (tx, s.agent_y) in spec.blocked:
            continue
        plan = _rotations(s.heading, facing) + (Action.FORWARD,)
        if best is None or len(plan) < len(best):
            best = plan
    return best or EMPTY_PLAN


def safe_action(s: TabularState, plan: tuple[Action, ...], spec: GridSpec) -> tuple[Action, tuple[Action, ...]]:
    if plan:
        return plan[0], plan[1:]
    if not in_obstacle_path(s, spec):
        return Action.DO_NOTHING, EMPTY_PLAN
    fresh = exit_plan(s, spec)
    if not fresh:
        return Action.DO_NOTHING, EMPTY_PLAN
    return fresh[0], fresh[1:]


def shield_decide(s: TabularState, model: Model, q: QTable, plan: tuple[Action, ...], epsilon: float,
                  rng: random.Random, spec: GridSpec, offsets: bool = False, random_ties: bool = False
                  ) -> tuple[ShieldDecision, tuple[Action, ...]]:
    """Route to the safe policy while the state is flagged; drop the plan once it is not."""
    if model.predict_one(extract_features(s, spec, offsets)):
        action, plan = safe_action(s, plan, spec)
        return ShieldDecision(Source.SAFE, action), plan
    return ShieldDecision(Source.LEARNER, select_action(q, s, epsilon, rng, random_ties)), EMPTY_PLAN
