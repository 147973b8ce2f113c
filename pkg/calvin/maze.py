"""Procedural maze worlds and their navigation semantics.

Mazes are ``(2n+1) x (2n+1)`` occupancy grids carved from an ``n x n`` lattice
with Wilson's algorithm (a uniform spanning tree), so every free cell is
reachable and corridors never form loops.

Action indices
--------------

``POSITIONAL``  0..7 = N, NE, E, SE, S, SW, W, NW; 8 = done
``POSITIONAL4`` 0..3 = N, E, S, W; 4 = done
``EMBODIED``    0 = forward, 1 = backward, 2 = rotate-left, 3 = rotate-right, 4 = done

Orientation index ``k`` is the heading ``45 * k`` degrees counter-clockwise from
north. Rotate-left decrements the index and rotate-right increments it, both
modulo 8.
"""
from __future__ import annotations

import enum
import json
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ShapeError, TaskPlacementError

Cell = Tuple[int, int]

ORIENTATIONS = 8
HEADINGS: Tuple[Cell, ...] = (
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
)

KNOWN, OBSTACLE, TARGET = 0, 1, 2
OBSERVATION_CHANNELS = 3
VISIBILITY_RADIUS = 2


@dataclass(frozen=True)
class Motion:
    """An action set together with the kinematics it induces."""

    name: str
    action_names: Tuple[str, ...]
    offsets: Tuple[Cell, ...] = ()
    embodied: bool = False

    @property
    def num_actions(self) -> int:
        return len(self.action_names)

    @property
    def done(self) -> int:
        return self.num_actions - 1

    @property
    def orientations(self) -> int:
        return ORIENTATIONS if self.embodied else 1

    @property
    def move_actions(self) -> Tuple[int, ...]:
        return tuple(range(self.num_actions - 1))


POSITIONAL = Motion(
    name="positional",
    action_names=("N", "NE", "E", "SE", "S", "SW", "W", "NW", "done"),
    offsets=((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)),
)
POSITIONAL4 = Motion(
    name="positional4",
    action_names=("N", "E", "S", "W", "done"),
    offsets=((-1, 0), (0, 1), (1, 0), (0, -1)),
)
EMBODIED = Motion(
    name="embodied",
    action_names=("forward", "backward", "rotate-left", "rotate-right", "done"),
    embodied=True,
)
FORWARD, BACKWARD, ROTATE_LEFT, ROTATE_RIGHT = 0, 1, 2, 3

MOTIONS: Dict[str, Motion] = {m.name: m for m in (POSITIONAL, POSITIONAL4, EMBODIED)}


def get_motion(name: str) -> Motion:
    try:
        return MOTIONS[name]
    except KeyError as exc:
        raise ValueError(f"Unknown motion model '{name}'; expected one of {sorted(MOTIONS)}") from exc


@dataclass(frozen=True, order=True)
class AgentState:
    """Grid cell plus an optional orientation index (embodied agents only)."""

    row: int
    col: int
    theta: Optional[int] = None

    def __post_init__(self) -> None:
        if self.theta is not None and not 0 <= self.theta < ORIENTATIONS:
            raise ValueError(f"Orientation index must be in [0, {ORIENTATIONS}), got {self.theta}")

    @property
    def cell(self) -> Cell:
        return (self.row, self.col)

    @property
    def index(self) -> Tuple[int, ...]:
        if self.theta is None:
            return (self.row, self.col)
        return (self.theta, self.row, self.col)

    @property
    def plane_index(self) -> Tuple[int, int, int]:
        """Index into ``M x H x W`` value planes; positional agents use plane 0."""
        return (0 if self.theta is None else self.theta, self.row, self.col)


class Outcome(str, enum.Enum):
    MOVED = "moved"
    COLLISION = "collision"
    SUCCESS = "success"
    FALSE_DONE = "false-done"


@dataclass(frozen=True)
class StepResult:
    outcome: Outcome
    state: AgentState


@dataclass(frozen=True, eq=False)
class Maze:
    """Occupancy grid (``True`` = obstacle) with an optional navigation task."""

    grid: np.ndarray
    seed: int = 0
    lattice_n: int = 0
    start: Optional[Cell] = None
    target: Optional[Cell] = None

    def __post_init__(self) -> None:
        grid = np.array(self.grid, dtype=bool)
        if grid.ndim != 2 or min(grid.shape) < 1:
            raise ShapeError(f"Maze grid must be a non-empty 2D array, got shape {grid.shape}")
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        for label in ("start", "target"):
            cell = getattr(self, label)
            if cell is None:
                continue
            cell = (int(cell[0]), int(cell[1]))
            object.__setattr__(self, label, cell)
            if not self.is_free(cell):
                raise ValueError(f"Maze {label} {cell} is not a free cell")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.grid.shape  # type: ignore[return-value]

    @property
    def side(self) -> int:
        return max(self.shape)

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.shape[0] and 0 <= cell[1] < self.shape[1]

    def is_free(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and not bool(self.grid[cell])

    def free_cells(self) -> List[Cell]:
        return [(int(r), int(c)) for r, c in zip(*np.nonzero(~self.grid))]

    def with_task(self, start: Cell, target: Cell) -> "Maze":
        return replace(self, start=tuple(start), target=tuple(target))

    def mirrored(self) -> "Maze":
        """Left-right mirror image, task cells mirrored too."""
        width = self.shape[1]
        flip = lambda cell: None if cell is None else (cell[0], width - 1 - cell[1])  # noqa: E731
        return Maze(self.grid[:, ::-1], self.seed, self.lattice_n, flip(self.start), flip(self.target))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Maze):
            return NotImplemented
        return (
            np.array_equal(self.grid, other.grid)
            and (self.seed, self.lattice_n, self.start, self.target)
            == (other.seed, other.lattice_n, other.start, other.target)
        )

    def __hash__(self) -> int:
        return hash((self.grid.tobytes(), self.grid.shape, self.seed, self.start, self.target))


# Generation


def generate_maze(lattice_n: int, seed: int) -> Maze:
    """Carve a ``(2n+1)``-sided maze from a uniform spanning tree of the ``n x n`` lattice."""
    if lattice_n < 1:
        raise ValueError("lattice_n must be at least 1")
    rng = np.random.default_rng(seed)
    side = 2 * lattice_n + 1
    grid = np.ones((side, side), dtype=bool)
    cells = [(i, j) for i in range(lattice_n) for j in range(lattice_n)]
    for i, j in cells:
        grid[2 * i + 1, 2 * j + 1] = False

    in_tree = np.zeros((lattice_n, lattice_n), dtype=bool)
    root = cells[int(rng.integers(len(cells)))]
    in_tree[root] = True
    steps = ((-1, 0), (0, 1), (1, 0), (0, -1))

    for cell in cells:
        if in_tree[cell]:
            continue
        # Loop-erased random walk: remembering only the last exit from each cell erases loops.
        exit_dir: Dict[Cell, Cell] = {}
        current = cell
        while not in_tree[current]:
            options = [
                (di, dj)
                for di, dj in steps
                if 0 <= current[0] + di < lattice_n and 0 <= current[1] + dj < lattice_n
            ]
            move = options[int(rng.integers(len(options)))]
            exit_dir[current] = move
            current = (current[0] + move[0], current[1] + move[1])
        current = cell
        while not in_tree[current]:
            di, dj = exit_dir[current]
            grid[2 * current[0] + 1 + di, 2 * current[1] + 1 + dj] = False
            in_tree[current] = True
            current = (current[0] + di, current[1] + dj)

    return Maze(grid=grid, seed=int(seed), lattice_n=lattice_n)


def place_task(maze: Maze, seed: int) -> Tuple[Cell, Cell]:
    """Pick a start/target pair whose 8-neighbour BFS distance is at least the grid side.

    Raises :class:`TaskPlacementError` when no such pair exists.
    """
    free = maze.free_cells()
    pairs: List[Tuple[Cell, Cell]] = []
    for source in free:
        distances = bfs_distances(maze, AgentState(*source), POSITIONAL)
        for target in free:
            if distances[target] >= maze.side:
                pairs.append((source, target))
    if not pairs:
        raise TaskPlacementError(
            f"No start/target pair at distance >= {maze.side} in maze seed {maze.seed}"
        )
    rng = np.random.default_rng(seed)
    return pairs[int(rng.integers(len(pairs)))]


def generate_task_maze(lattice_n: int, seed: int, max_attempts: int = 100) -> Maze:
    """Generate mazes from consecutive seeds until a task can be placed."""
    for attempt in range(max_attempts):
        maze = generate_maze(lattice_n, seed + attempt)
        try:
            start, target = place_task(maze, maze.seed)
        except TaskPlacementError:
            continue
        return maze.with_task(start, target)
    raise TaskPlacementError(
        f"No placeable maze within {max_attempts} seeds starting at {seed} (lattice_n={lattice_n})"
    )


# Dynamics


def kinematic_move(state: AgentState, action: int, motion: Motion) -> AgentState:
    """State reached by ``action`` when nothing blocks it."""
    if not 0 <= action < motion.num_actions:
        raise ValueError(f"Invalid action index {action} for motion '{motion.name}'")
    if action == motion.done:
        return state
    if not motion.embodied:
        dr, dc = motion.offsets[action]
        return AgentState(state.row + dr, state.col + dc)
    theta = 0 if state.theta is None else state.theta
    if action == ROTATE_LEFT:
        return AgentState(state.row, state.col, (theta - 1) % ORIENTATIONS)
    if action == ROTATE_RIGHT:
        return AgentState(state.row, state.col, (theta + 1) % ORIENTATIONS)
    dr, dc = HEADINGS[theta]
    sign = 1 if action == FORWARD else -1
    return AgentState(state.row + sign * dr, state.col + sign * dc, theta)


def step(maze: Maze, state: AgentState, action: int, motion: Motion) -> StepResult:
    """Apply one action; collisions leave the agent in place."""
    if not 0 <= action < motion.num_actions:
        raise ValueError(f"Invalid action index {action} for motion '{motion.name}'")
    if action == motion.done:
        outcome = Outcome.SUCCESS if state.cell == maze.target else Outcome.FALSE_DONE
        return StepResult(outcome, state)
    nxt = kinematic_move(state, action, motion)
    if not maze.is_free(nxt.cell):
        return StepResult(Outcome.COLLISION, state)
    return StepResult(Outcome.MOVED, nxt)


def legal_actions(maze: Maze, state: AgentState, motion: Motion) -> Tuple[int, ...]:
    """Actions that do not collide from ``state``; done is always legal."""
    return tuple(
        a
        for a in range(motion.num_actions)
        if a == motion.done or maze.is_free(kinematic_move(state, a, motion).cell)
    )


def all_states(maze: Maze, motion: Motion) -> List[AgentState]:
    cells = maze.free_cells()
    if not motion.embodied:
        return [AgentState(r, c) for r, c in cells]
    return [AgentState(r, c, t) for t in range(ORIENTATIONS) for r, c in cells]


def bfs_distances(maze: Maze, source: AgentState, motion: Motion) -> np.ndarray:
    """Unit-cost action counts from ``source`` to every state; ``-1`` if unreachable.

    Positional motions return an ``H x W`` array, embodied an ``8 x H x W`` array.
    """
    shape = (ORIENTATIONS,) + maze.shape if motion.embodied else maze.shape
    distances = np.full(shape, -1, dtype=np.int64)
    if motion.embodied and source.theta is None:
        source = AgentState(source.row, source.col, 0)
    distances[source.index] = 0
    queue = deque([source])
    while queue:
        state = queue.popleft()
        for action in motion.move_actions:
            result = step(maze, state, action, motion)
            if result.outcome is not Outcome.MOVED:
                continue
            nxt = result.state
            if distances[nxt.index] < 0:
                distances[nxt.index] = distances[state.index] + 1
                queue.append(nxt)
    return distances


# Visibility and observations


def _segment_cells(origin: Cell, cell: Cell) -> List[Cell]:
    """Cells whose interior the segment between two cell centres passes through."""
    a = np.asarray(origin, dtype=np.float64)
    delta = np.asarray(cell, dtype=np.float64) - a
    crossings = [0.0, 1.0]
    for axis in range(2):
        if delta[axis] == 0:
            continue
        lo, hi = sorted((a[axis], a[axis] + delta[axis]))
        for boundary in np.arange(np.floor(lo) + 0.5, hi, 1.0):
            if lo < boundary < hi:
                crossings.append((boundary - a[axis]) / delta[axis])
    crossings = np.unique(np.asarray(crossings))
    cells: List[Cell] = []
    for t0, t1 in zip(crossings[:-1], crossings[1:]):
        if t1 - t0 <= 1e-12:
            continue
        point = a + 0.5 * (t0 + t1) * delta
        visited = (int(np.floor(point[0] + 0.5)), int(np.floor(point[1] + 0.5)))
        if not cells or cells[-1] != visited:
            cells.append(visited)
    return cells


def visible_cells(maze: Maze, position: Cell, radius: int = VISIBILITY_RADIUS) -> FrozenSet[Cell]:
    """Cells within Chebyshev ``radius`` whose line of sight crosses no obstacle.

    The first obstacle met along a ray is itself visible.
    """
    position = (int(position[0]), int(position[1]))
    seen = {position}
    for dr in range(-radius, radius + 1):
        for dc in range(-radius, radius + 1):
            cell = (position[0] + dr, position[1] + dc)
            if cell == position or not maze.in_bounds(cell):
                continue
            between = [c for c in _segment_cells(position, cell) if c not in (position, cell)]
            if all(maze.is_free(c) for c in between):
                seen.add(cell)
    return frozenset(seen)


def all_cells(maze: Maze) -> FrozenSet[Cell]:
    rows, cols = maze.shape
    return frozenset((r, c) for r in range(rows) for c in range(cols))


@dataclass(frozen=True)
class ObservationMap:
    """``3 x H x W`` channels (known mask, obstacle, target) and the revealed cells."""

    channels: np.ndarray
    revealed: FrozenSet[Cell] = field(default_factory=frozenset)

    def digest(self) -> bytes:
        return self.channels.tobytes()


def revealed_mask(shape: Tuple[int, int], revealed: Iterable[Cell]) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    cells = list(revealed)
    if cells:
        rows, cols = zip(*cells)
        mask[list(rows), list(cols)] = True
    return mask


def encode_observation(maze: Maze, revealed: Iterable[Cell]) -> ObservationMap:
    revealed = frozenset(revealed)
    for cell in revealed:
        if not maze.in_bounds(cell):
            raise ShapeError(f"Revealed cell {cell} lies outside the {maze.shape} grid")
    known = revealed_mask(maze.shape, revealed)
    channels = np.zeros((OBSERVATION_CHANNELS,) + maze.shape, dtype=np.float32)
    channels[KNOWN] = known
    channels[OBSTACLE] = known & maze.grid
    if maze.target is not None and known[maze.target]:
        channels[TARGET][maze.target] = 1.0
    channels.setflags(write=False)
    return ObservationMap(channels=channels, revealed=revealed)


# Serialisation and display


def maze_to_dict(maze: Maze) -> Dict[str, object]:
    return {
        "seed": maze.seed,
        "lattice_n": maze.lattice_n,
        "grid": ["".join("#" if wall else "." for wall in row) for row in maze.grid],
        "start": list(maze.start) if maze.start is not None else None,
        "target": list(maze.target) if maze.target is not None else None,
    }


def maze_from_dict(payload: Dict[str, object]) -> Maze:
    rows = payload["grid"]
    grid = np.array([[ch == "#" for ch in row] for row in rows], dtype=bool)  # type: ignore[union-attr]
    start = payload.get("start")
    target = payload.get("target")
    return Maze(
        grid=grid,
        seed=int(payload.get("seed", 0)),  # type: ignore[arg-type]
        lattice_n=int(payload.get("lattice_n", 0)),  # type: ignore[arg-type]
        start=tuple(start) if start is not None else None,  # type: ignore[arg-type]
        target=tuple(target) if target is not None else None,  # type: ignore[arg-type]
    )


def maze_to_json(maze: Maze) -> str:
    return json.dumps(maze_to_dict(maze), sort_keys=True, separators=(",", ":"))


def maze_from_json(text: str) -> Maze:
    return maze_from_dict(json.loads(text))


def ascii_render(maze: Maze, path: Optional[Sequence[Cell]] = None) -> str:
    chars = np.where(maze.grid, "#", ".").astype("<U1")
    for cell in path or ():
        chars[tuple(cell)] = "*"
    if maze.start is not None:
        chars[maze.start] = "S"
    if maze.target is not None:
        chars[maze.target] = "T"
    return "\n".join("".join(row) for row in chars)
