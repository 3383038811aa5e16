import dataclasses
from collections import deque

import pytest

from safebrs.gridworld import GridPos, GridSpec, Heading, ObstacleDir, pretrain_spec, reset, step
from safebrs.tabular_rl import greedy_policy, tabular_state


def open_grid(size=6, column=3, goal=None, blocked=(), max_steps=None, start=None):
    """Square grid with no walls; obstacle patrols ``column`` starting at row 0 moving down."""
    return GridSpec(
        width=size,
        height=size,
        goal=goal or GridPos(size - 1, 0),
        blocked=frozenset(blocked),
        obstacle_column=column,
        obstacle_init_row=0,
        obstacle_init_dir=ObstacleDir.DOWN,
        agent_start=start or GridPos(0, size // 2),
        agent_start_heading=Heading.EAST,
        max_steps=max_steps or 8 * size,
    )


@pytest.fixture
def grid6():
    return open_grid(6)


def shortest_action_count(spec):
    """BFS over (position, heading) with the three learner actions, ignoring the obstacle."""
    start = (spec.agent_start, spec.agent_start_heading)
    dist = {start: 0}
    frontier = deque([start])
    deltas = {Heading.NORTH: (0, -1), Heading.EAST: (1, 0), Heading.SOUTH: (0, 1), Heading.WEST: (-1, 0)}
    while frontier:
        (pos, h) = node = frontier.popleft()
        if pos == spec.goal:
            return dist[node]
        dx, dy = deltas[h]
        nxt_pos = GridPos(pos.x + dx, pos.y + dy)
        if not spec.in_bounds(*nxt_pos) or nxt_pos in spec.blocked:
            nxt_pos = pos
        for nxt in ((pos, Heading((h + 3) % 4)), (pos, Heading((h + 1) % 4)), (nxt_pos, h)):
            if nxt not in dist:
                dist[nxt] = dist[node] + 1
                frontier.append(nxt)
    raise AssertionError("goal unreachable")


def greedy_rollout_steps(spec, q):
    pi = greedy_policy(q)
    s = reset(spec)
    while True:
        res = step(s, pi(tabular_state(s)), spec)
        s = res.next
        if res.done:
            return res.outcome, s.steps_elapsed


def obstacle_free_10x10(goal=GridPos(9, 5)):
    return dataclasses.replace(pretrain_spec(), obstacle_column=None, goal=goal)


# -- acceptance reporting ------------------------------------------------------

ACCEPTANCE_RESULTS: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    ACCEPTANCE_RESULTS.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(line)
