"""Signed distance, windowed trajectory values, BRS labels and a brute-force BRS oracle."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

from .gridworld import Action, EnvState, GridPos, GridSpec, Heading, ObstacleDir, Outcome, step
from .tabular_rl import TabularState


class OracleSizeError(ValueError):
    pass


@dataclass(frozen=True)
class Trajectory:
    states: tuple[TabularState, ...]
    outcome: Outcome

    def __post_init__(self):
        if not self.states:
            raise ValueError("trajectory must contain at least one state")
        if self.outcome is Outcome.RUNNING:
            raise ValueError("trajectory outcome must be terminal")

    def __len__(self) -> int:
        return len(self.states)


def signed_distance(s: TabularState, spec: GridSpec) -> float:
    """Euclidean agent-obstacle distance; 0 exactly on collision states."""
    if spec.obstacle_column is None:
        return math.inf
    return math.hypot(s.agent_x - spec.obstacle_column, s.agent_y - s.obstacle_row)


def windowed_min(values: Sequence[float], horizon: int) -> list[float]:
    """out[i] = min(values[i : i + horizon + 1]), clipped at the end."""
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    n = len(values)
    return [min(values[i:min(n, i + horizon + 1)]) for i in range(n)]


def value_trace(traj: Trajectory, horizon: int, spec: GridSpec) -> list[float]:
    return windowed_min([signed_distance(s, spec) for s in traj.states], horizon)


def brs_labels(trace: Iterable[float]) -> list[bool]:
    return [v <= 0 for v in trace]


# -- brute-force oracle ------------------------------------------------------

ORACLE_ACTIONS = (Action.TURN_LEFT, Action.TURN_RIGHT, Action.FORWARD, Action.DO_NOTHING)
MAX_ORACLE_WORK = 20_000_000


def all_states(spec: GridSpec) -> list[TabularState]:
    """Every tabular state with the agent on a free cell (collision states included)."""
    rows = range(spec.height) if spec.obstacle_column is not None else [spec.obstacle_init_row]
    out = []
    for x in range(spec.width):
        for y in range(spec.height):
            if (x, y) in spec.blocked:
                continue
            for row in rows:
                for d in ObstacleDir:
                    for h in Heading:
                        out.append(TabularState(x, y, row, d, h))
    return out


def is_failure(s: TabularState, spec: GridSpec) -> bool:
    return spec.obstacle_column is not None and s.agent_x == spec.obstacle_column and s.agent_y == s.obstacle_row


def _collides_within(state: EnvState, spec: GridSpec, depth: int) -> bool:
    if depth == 0:
        return False
    for a in ORACLE_ACTIONS:
        res = step(state, a, spec)
        if res.outcome is Outcome.COLLISION:
            return True
        if not res.done and _collides_within(res.next, spec, depth - 1):
            return True
    return False


def brute_force_brs(spec: GridSpec, horizon: int) -> set[TabularState]:
    """States from which SOME action sequence of length <= horizon collides.

    Exhaustive enumeration over all sequences drawn from the four actions
    (DoNothing included), stepping the real environment. The step cap is
    lifted so that only goal arrival or collision ends a sequence.
    """
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    states = all_states(spec)
    work = len(states) * len(ORACLE_ACTIONS) ** horizon
    if work > MAX_ORACLE_WORK:
        raise OracleSizeError(f"oracle would enumerate {work} sequences (limit {MAX_ORACLE_WORK})")
    uncapped = dataclasses.replace(spec, max_steps=horizon + 1)
    out = set()
    for s in states:
        if is_failure(s, spec):
            out.add(s)
            continue
        if (s.agent_x, s.agent_y) == spec.goal:
            continue
        env = EnvState(GridPos(s.agent_x, s.agent_y), s.heading, s.obstacle_row, s.obstacle_dir, 0)
        if _collides_within(env, uncapped, horizon):
            out.add(s)
    return out
