"""Deterministic grid navigation task with one vertically patrolling obstacle.

Coordinates: ``x`` is the column (grows rightward), ``y`` the row (grows
downward). The obstacle lives in a fixed column and bounces between row 0
and row ``height - 1``. "Up" means decreasing ``y``.

A step applies the agent's action, checks for a collision, moves the
obstacle, checks for a collision again, then checks the goal and finally the
step cap.
"""
from __future__ import annotations

import math
import random
from collections import deque
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import NamedTuple

from .kvfile import KVFormatError, format_kv, parse_kv


class SpecError(ValueError):
    """Raised for a GridSpec that violates its invariants."""


class UsageError(RuntimeError):
    """Raised when stepping an episode that has already terminated."""


class TaskGenerationError(RuntimeError):
    pass


class Heading(IntEnum):
    NORTH = 0
    EAST = 1
    SOUTH = 2
    WEST = 3


class Action(IntEnum):
    TURN_LEFT = 0
    TURN_RIGHT = 1
    FORWARD = 2
    DO_NOTHING = 3


class ObstacleDir(IntEnum):
    UP = 0
    DOWN = 1


class Outcome(Enum):
    RUNNING = "running"
    GOAL = "goal"
    COLLISION = "collision"
    TIMEOUT = "timeout"


# Lookup tables indexed by Heading value.
_RIGHT_OF = (Heading.EAST, Heading.SOUTH, Heading.WEST, Heading.NORTH)
_LEFT_OF = (Heading.WEST, Heading.NORTH, Heading.EAST, Heading.SOUTH)
HEADING_DELTA = ((0, -1), (1, 0), (0, 1), (-1, 0))

_HEADING_CODES = {"n": Heading.NORTH, "e": Heading.EAST, "s": Heading.SOUTH, "w": Heading.WEST}
_DIR_CODES = {"up": ObstacleDir.UP, "down": ObstacleDir.DOWN}


def turn_right(h: Heading) -> Heading:
    return _RIGHT_OF[h]


def turn_left(h: Heading) -> Heading:
    return _LEFT_OF[h]


class GridPos(NamedTuple):
    x: int
    y: int


@dataclass(frozen=True)
class GridSpec:
    """Static description of one navigation task.

    ``obstacle_column=None`` gives an obstacle-free task (used for sanity
    checks of the learners); the obstacle row then never changes.
    """

    width: int
    height: int
    goal: GridPos
    blocked: frozenset = field(default_factory=frozenset)
    obstacle_column: int | None = 0
    obstacle_init_row: int = 0
    obstacle_init_dir: ObstacleDir = ObstacleDir.DOWN
    agent_start: GridPos = GridPos(0, 0)
    agent_start_heading: Heading = Heading.EAST
    max_steps: int = 1

    def __post_init__(self):
        object.__setattr__(self, "goal", GridPos(*self.goal))
        object.__setattr__(self, "agent_start", GridPos(*self.agent_start))
        object.__setattr__(self, "blocked", frozenset(GridPos(*p) for p in self.blocked))
        object.__setattr__(self, "obstacle_init_dir", ObstacleDir(self.obstacle_init_dir))
        object.__setattr__(self, "agent_start_heading", Heading(self.agent_start_heading))

    def in_bounds(self, x: int, y: int) -> bool:
        return 0 <= x < self.width and 0 <= y < self.height

    @property
    def obstacle_start(self) -> GridPos | None:
        if self.obstacle_column is None:
            return None
        return GridPos(self.obstacle_column, self.obstacle_init_row)

    def validate(self) -> None:
        if self.width < 1 or self.height < 1:
            raise SpecError("grid dimensions must be positive")
        if self.max_steps < 1:
            raise SpecError("max_steps must be >= 1")
        for name, pos in (("goal", self.goal), ("agent_start", self.agent_start)):
            if not self.in_bounds(*pos):
                raise SpecError(f"{name} {tuple(pos)} out of bounds")
        for p in self.blocked:
            if not self.in_bounds(*p):
                raise SpecError(f"blocked cell {tuple(p)} out of bounds")
        if self.goal in self.blocked:
            raise SpecError("goal is blocked")
        if self.agent_start in self.blocked:
            raise SpecError("agent_start is blocked")
        if self.agent_start == self.goal:
            raise SpecError("agent_start equals goal")
        obs = self.obstacle_start
        if obs is not None:
            if not self.in_bounds(*obs):
                raise SpecError(f"obstacle start {tuple(obs)} out of bounds")
            if obs in self.blocked or obs == self.goal:
                raise SpecError("obstacle start cell is blocked or the goal")
            if obs == self.agent_start:
                raise SpecError("obstacle starts on the agent")


class EnvState(NamedTuple):
    agent: GridPos
    heading: Heading
    obstacle_row: int
    obstacle_dir: ObstacleDir
    steps_elapsed: int = 0


class StepResult(NamedTuple):
    next: EnvState
    reward: float
    done: bool
    outcome: Outcome


def reset(spec: GridSpec) -> EnvState:
    spec.validate()
    return EnvState(
        spec.agent_start,
        spec.agent_start_heading,
        spec.obstacle_init_row,
        spec.obstacle_init_dir,
        0,
    )


def advance_obstacle(row: int, direction: ObstacleDir, height: int) -> tuple[int, ObstacleDir]:
    """Move the obstacle one row, reversing at the top and bottom rows."""
    if height == 1:
        return row, direction
    if direction == ObstacleDir.UP:
        if row == 0:
            return 1, ObstacleDir.DOWN
        return row - 1, direction
    if row == height - 1:
        return row - 1, ObstacleDir.UP
    return row + 1, direction


def terminal_outcome(state: EnvState, spec: GridSpec) -> Outcome:
    """Outcome implied by a state alone; RUNNING if the episode can continue."""
    x, y = state.agent
    if spec.obstacle_column is not None and x == spec.obstacle_column and y == state.obstacle_row:
        return Outcome.COLLISION
    if state.agent == spec.goal:
        return Outcome.GOAL
    if state.steps_elapsed >= spec.max_steps:
        return Outcome.TIMEOUT
    return Outcome.RUNNING


_FORWARD, _LEFT, _RIGHT = Action.FORWARD, Action.TURN_LEFT, Action.TURN_RIGHT


def step(state: EnvState, action: Action, spec: GridSpec) -> StepResult:
    x, y = state.agent
    col = spec.obstacle_column
    if (x == col and y == state.obstacle_row) or state.agent == spec.goal or state.steps_elapsed >= spec.max_steps:
        raise UsageError("cannot step a terminal state")
    heading = state.heading
    if action == _FORWARD:
        dx, dy = HEADING_DELTA[heading]
        nx, ny = x + dx, y + dy
        if 0 <= nx < spec.width and 0 <= ny < spec.height and (nx, ny) not in spec.blocked:
            x, y = nx, ny
    elif action == _LEFT:
        heading = _LEFT_OF[heading]
    elif action == _RIGHT:
        heading = _RIGHT_OF[heading]

    agent = GridPos(x, y)
    row, odir = state.obstacle_row, state.obstacle_dir
    steps = state.steps_elapsed + 1
    if col is not None:
        if x == col and y == row:
            return StepResult(EnvState(agent, heading, row, odir, steps), -1.0, True, Outcome.COLLISION)
        row, odir = advance_obstacle(row, odir, spec.height)
        if x == col and y == row:
            return StepResult(EnvState(agent, heading, row, odir, steps), -1.0, True, Outcome.COLLISION)
    nxt = EnvState(agent, heading, row, odir, steps)
    if agent == spec.goal:
        return StepResult(nxt, 1.0, True, Outcome.GOAL)
    if steps >= spec.max_steps:
        return StepResult(nxt, 0.0, True, Outcome.TIMEOUT)
    return StepResult(nxt, 0.0, False, Outcome.RUNNING)


def default_max_steps(width: int, height: int) -> int:
    """Four times the cell count (900 for 15x15, 400 for 10x10)."""
    return 4 * width * height


def goal_reachable(spec: GridSpec) -> bool:
    """BFS over 4-connected free cells from the start, ignoring the obstacle."""
    start, goal = spec.agent_start, spec.goal
    seen = {start}
    frontier = deque([start])
    while frontier:
        x, y = frontier.popleft()
        if (x, y) == goal:
            return True
        for dx, dy in HEADING_DELTA:
            nxt = GridPos(x + dx, y + dy)
            if spec.in_bounds(*nxt) and nxt not in spec.blocked and nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    return False


N_BLOCKED = 5
MAX_GENERATION_ATTEMPTS = 1000


def generate_task(seed: int, width: int = 15, height: int = 15, max_steps: int | None = None) -> GridSpec:
    """Random task: goal in the right third, obstacle column left of it, 5 blocked cells.

    The obstacle column is drawn from columns 1 .. ceil(2w/3)-1 so it never
    shares the agent's start column.
    """
    if width < 6 or height < 6:
        raise ValueError("generate_task needs width, height >= 6")
    rng = random.Random(seed)
    split = math.ceil(2 * width / 3)
    goal = GridPos(rng.randrange(split, width), rng.randrange(height))
    obstacle_column = rng.randrange(1, split)
    obstacle_row = rng.randrange(height)
    obstacle_dir = rng.choice((ObstacleDir.UP, ObstacleDir.DOWN))
    start = GridPos(0, height // 2)
    candidates = [
        GridPos(x, y)
        for x in range(width)
        for y in range(height)
        if x != obstacle_column and (x, y) != goal and (x, y) != start
    ]
    for _ in range(MAX_GENERATION_ATTEMPTS):
        blocked = frozenset(rng.sample(candidates, N_BLOCKED))
        spec = GridSpec(
            width=width,
            height=height,
            goal=goal,
            blocked=blocked,
            obstacle_column=obstacle_column,
            obstacle_init_row=obstacle_row,
            obstacle_init_dir=obstacle_dir,
            agent_start=start,
            agent_start_heading=Heading.EAST,
            max_steps=max_steps or default_max_steps(width, height),
        )
        if goal_reachable(spec):
            spec.validate()
            return spec
    raise TaskGenerationError(f"no solvable layout after {MAX_GENERATION_ATTEMPTS} attempts (seed={seed})")


def pretrain_spec() -> GridSpec:
    """Fixed 10x10 obstacle-only pre-training zone."""
    return GridSpec(
        width=10,
        height=10,
        goal=GridPos(8, 3),
        blocked=frozenset(),
        obstacle_column=4,
        obstacle_init_row=0,
        obstacle_init_dir=ObstacleDir.DOWN,
        agent_start=GridPos(0, 5),
        agent_start_heading=Heading.EAST,
        max_steps=default_max_steps(10, 10),
    )


# -- serialization ---------------------------------------------------------

def spec_to_text(spec: GridSpec) -> str:
    blocked = ";".join(f"{p.x},{p.y}" for p in sorted(spec.blocked))
    return format_kv({
        "width": spec.width,
        "height": spec.height,
        "goal_x": spec.goal.x,
        "goal_y": spec.goal.y,
        "blocked": blocked,
        "obstacle_column": "none" if spec.obstacle_column is None else spec.obstacle_column,
        "obstacle_init_row": spec.obstacle_init_row,
        "obstacle_init_dir": spec.obstacle_init_dir.name.lower(),
        "agent_start_x": spec.agent_start.x,
        "agent_start_y": spec.agent_start.y,
        "agent_start_heading": spec.agent_start_heading.name[0].lower(),
        "max_steps": spec.max_steps,
    })


def spec_from_text(text: str) -> GridSpec:
    kv = parse_kv(text)
    try:
        blocked = frozenset(
            GridPos(*map(int, pair.split(","))) for pair in kv.pop("blocked").split(";") if pair.strip()
        )
        col = kv.pop("obstacle_column")
        spec = GridSpec(
            width=int(kv.pop("width")),
            height=int(kv.pop("height")),
            goal=GridPos(int(kv.pop("goal_x")), int(kv.pop("goal_y"))),
            blocked=blocked,
            obstacle_column=None if col.lower() == "none" else int(col),
            obstacle_init_row=int(kv.pop("obstacle_init_row")),
            obstacle_init_dir=_DIR_CODES[kv.pop("obstacle_init_dir").lower()],
            agent_start=GridPos(int(kv.pop("agent_start_x")), int(kv.pop("agent_start_y"))),
            agent_start_heading=_HEADING_CODES[kv.pop("agent_start_heading").lower()],
            max_steps=int(kv.pop("max_steps")),
        )
    except KeyError as exc:
        raise KVFormatError(f"missing or invalid grid spec key: {exc}") from None
    if kv:
        raise KVFormatError(f"unknown grid spec keys: {sorted(kv)}")
    spec.validate()
    return spec


def save_spec(spec: GridSpec, path: str | Path) -> None:
    Path(path).write_text(spec_to_text(spec))


def load_spec(path: str | Path) -> GridSpec:
    return spec_from_text(Path(path).read_text())
