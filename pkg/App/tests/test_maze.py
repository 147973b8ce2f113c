"""
Maze world tests

This test suite covers:
- Wilson spanning-tree generation and task placement
- Positional and embodied kinematics, collisions and done
- Line-of-sight visibility and observation encoding
"""

import unittest

import numpy as np
import pytest

from calvin.errors import ShapeError, TaskPlacementError
from calvin.maze import (
    BACKWARD,
    EMBODIED,
    FORWARD,
    KNOWN,
    OBSTACLE,
    POSITIONAL,
    POSITIONAL4,
    ROTATE_LEFT,
    ROTATE_RIGHT,
    TARGET,
    AgentState,
    Maze,
    Outcome,
    all_states,
    ascii_render,
    bfs_distances,
    encode_observation,
    generate_maze,
    generate_task_maze,
    get_motion,
    kinematic_move,
    legal_actions,
    maze_from_json,
    maze_to_json,
    place_task,
    step,
    visible_cells,
)


def open_room(side=7):
    grid = np.ones((side, side), dtype=bool)
    grid[1:-1, 1:-1] = False
    return Maze(grid)


class MazeGenerationTests(unittest.TestCase):
    """Uniform spanning-tree mazes"""

    def test_single_lattice_cell(self):
        maze = generate_maze(1, 0)
        self.assertEqual(maze.shape, (3, 3))
        self.assertEqual(maze.free_cells(), [(1, 1)])

    def test_tree_has_one_opening_per_edge(self):
        for n in (2, 3, 5):
            maze = generate_maze(n, 11)
            self.assertEqual(maze.shape, (2 * n + 1, 2 * n + 1))
            # n*n lattice cells plus n*n - 1 carved walls
            self.assertEqual(len(maze.free_cells()), 2 * n * n - 1)

    def test_corridors_form_a_spanning_tree(self):
        for seed in range(100):
            maze = generate_maze(4, seed)
            free = maze.free_cells()
            parent = {cell: cell for cell in free}

            def find(cell):
                while parent[cell] != cell:
                    parent[cell] = parent[parent[cell]]
                    cell = parent[cell]
                return cell

            for row, col in free:
                for neighbour in ((row + 1, col), (row, col + 1)):
                    if neighbour not in parent:
                        continue
                    a, b = find((row, col)), find(neighbour)
                    self.assertNotEqual(a, b, f"seed {seed}: corridor loop through {neighbour}")
                    parent[a] = b
            self.assertEqual(len({find(cell) for cell in free}), 1, f"seed {seed}: maze is disconnected")

    def test_every_free_cell_is_reachable(self):
        maze = generate_maze(5, 4)
        distances = bfs_distances(maze, AgentState(1, 1), POSITIONAL4)
        for cell in maze.free_cells():
            self.assertGreaterEqual(distances[cell], 0)

    def test_border_is_solid(self):
        grid = generate_maze(4, 2).grid
        self.assertTrue(grid[0].all() and grid[-1].all() and grid[:, 0].all() and grid[:, -1].all())

    def test_same_seed_same_maze(self):
        self.assertEqual(generate_maze(4, 9), generate_maze(4, 9))
        self.assertNotEqual(generate_maze(4, 9).grid.tobytes(), generate_maze(4, 10).grid.tobytes())

    def test_invalid_lattice_rejected(self):
        with self.assertRaises(ValueError):
            generate_maze(0, 0)


class TaskPlacementTests(unittest.TestCase):
    """Start/target pairs at 8-neighbour distance of at least the grid side"""

    def test_placed_task_is_far_enough(self):
        maze = generate_task_maze(4, 3)
        distances = bfs_distances(maze, AgentState(*maze.start), POSITIONAL)
        self.assertGreaterEqual(distances[maze.target], maze.side)
        self.assertTrue(maze.is_free(maze.start) and maze.is_free(maze.target))

    def test_placement_is_deterministic(self):
        maze = generate_maze(4, 5)
        try:
            first = place_task(maze, 1)
        except TaskPlacementError:
            self.skipTest("maze seed 5 admits no task")
        self.assertEqual(first, place_task(maze, 1))

    def test_two_by_two_lattice_never_admits_a_task(self):
        """Every 5x5 maze is a U-shaped corridor shorter than its side"""
        with self.assertRaises(TaskPlacementError):
            generate_task_maze(2, 0, max_attempts=5)

    def test_task_cells_must_be_free(self):
        with self.assertRaises(ValueError):
            generate_maze(2, 0).with_task((0, 0), (1, 1))


class KinematicsTests(unittest.TestCase):
    """Action semantics"""

    def test_positional_offsets(self):
        origin = AgentState(5, 5)
        self.assertEqual(kinematic_move(origin, 0, POSITIONAL), AgentState(4, 5))
        self.assertEqual(kinematic_move(origin, 1, POSITIONAL), AgentState(4, 6))
        self.assertEqual(kinematic_move(origin, 6, POSITIONAL), AgentState(5, 4))
        self.assertEqual(kinematic_move(origin, POSITIONAL.done, POSITIONAL), origin)

    def test_embodied_forward_follows_heading(self):
        self.assertEqual(kinematic_move(AgentState(3, 3, 0), FORWARD, EMBODIED), AgentState(2, 3, 0))
        self.assertEqual(kinematic_move(AgentState(3, 3, 0), BACKWARD, EMBODIED), AgentState(4, 3, 0))
        self.assertEqual(kinematic_move(AgentState(3, 3, 1), FORWARD, EMBODIED), AgentState(2, 2, 1))
        self.assertEqual(kinematic_move(AgentState(3, 3, 6), FORWARD, EMBODIED), AgentState(3, 4, 6))

    def test_rotations_wrap(self):
        self.assertEqual(kinematic_move(AgentState(3, 3, 0), ROTATE_LEFT, EMBODIED).theta, 7)
        self.assertEqual(kinematic_move(AgentState(3, 3, 7), ROTATE_RIGHT, EMBODIED).theta, 0)

    def test_collision_leaves_agent_in_place(self):
        maze = open_room(5)
        result = step(maze, AgentState(1, 1), 0, POSITIONAL)
        self.assertIs(result.outcome, Outcome.COLLISION)
        self.assertEqual(result.state, AgentState(1, 1))

    def test_diagonal_only_checks_target_cell(self):
        grid = np.ones((4, 4), dtype=bool)
        grid[1, 1] = grid[2, 2] = False
        result = step(Maze(grid), AgentState(1, 1), 3, POSITIONAL)
        self.assertIs(result.outcome, Outcome.MOVED)

    def test_done_outcomes(self):
        maze = open_room(5).with_task((1, 1), (3, 3))
        self.assertIs(step(maze, AgentState(3, 3), POSITIONAL.done, POSITIONAL).outcome, Outcome.SUCCESS)
        self.assertIs(step(maze, AgentState(1, 1), POSITIONAL.done, POSITIONAL).outcome, Outcome.FALSE_DONE)

    def test_invalid_action_rejected(self):
        with self.assertRaises(ValueError):
            step(open_room(5), AgentState(2, 2), 9, POSITIONAL)
        with self.assertRaises(ValueError):
            AgentState(1, 1, 8)

    def test_legal_actions_in_corner(self):
        legal = legal_actions(open_room(5), AgentState(1, 1), POSITIONAL)
        self.assertEqual(legal, (2, 3, 4, POSITIONAL.done))

    def test_embodied_state_space(self):
        maze = open_room(5)
        self.assertEqual(len(all_states(maze, EMBODIED)), 8 * 9)
        self.assertEqual(bfs_distances(maze, AgentState(2, 2), EMBODIED).shape, (8, 5, 5))

    def test_unknown_motion(self):
        with self.assertRaises(ValueError):
            get_motion("hover")


class VisibilityTests(unittest.TestCase):
    """Chebyshev radius with line of sight"""

    def test_open_room_centre_sees_full_window(self):
        self.assertEqual(len(visible_cells(open_room(7), (3, 3))), 25)

    def test_enclosed_cell_sees_its_ring(self):
        grid = np.ones((5, 5), dtype=bool)
        grid[2, 2] = False
        visible = visible_cells(Maze(grid), (2, 2))
        self.assertEqual(len(visible), 9)

    def test_window_clipped_at_border(self):
        visible = visible_cells(open_room(7), (1, 1))
        self.assertTrue(all(0 <= r < 7 and 0 <= c < 7 for r, c in visible))
        interior = {(r, c) for r in range(1, 4) for c in range(1, 4)}
        self.assertTrue(interior <= visible)
        self.assertLessEqual(len(visible), 16)

    def test_wall_blocks_cells_behind_it(self):
        grid = np.zeros((5, 5), dtype=bool)
        grid[2, 3] = True
        visible = visible_cells(Maze(grid), (2, 2))
        self.assertIn((2, 3), visible)
        self.assertNotIn((2, 4), visible)

    def test_mirror_symmetry(self):
        maze = generate_maze(3, 8)
        mirrored = maze.mirrored()
        width = maze.shape[1]
        for row, col in maze.free_cells():
            expected = {(r, width - 1 - c) for r, c in visible_cells(maze, (row, col))}
            self.assertEqual(visible_cells(mirrored, (row, width - 1 - col)), expected)


class ObservationTests(unittest.TestCase):
    """Known-mask, obstacle and target channels"""

    def test_channels_only_cover_revealed_cells(self):
        maze = open_room(5).with_task((1, 1), (3, 3))
        obs = encode_observation(maze, visible_cells(maze, (1, 1))).channels
        self.assertEqual(obs.shape, (3, 5, 5))
        self.assertEqual(obs[KNOWN, 4, 4], 0.0)
        self.assertEqual(obs[OBSTACLE, 0, 0], 1.0)
        self.assertEqual(obs[TARGET, 3, 3], 1.0)
        self.assertEqual(obs[TARGET].sum(), 1.0)

    def test_target_hidden_until_revealed(self):
        maze = open_room(7).with_task((1, 1), (5, 5))
        obs = encode_observation(maze, visible_cells(maze, (1, 1))).channels
        self.assertEqual(obs[TARGET].sum(), 0.0)

    def test_revealed_set_grows_along_a_path(self):
        maze = generate_task_maze(4, 1)
        revealed = frozenset()
        for cell in maze.free_cells():
            grown = revealed | visible_cells(maze, cell)
            self.assertTrue(revealed <= grown)
            known = encode_observation(maze, grown).channels[KNOWN]
            self.assertGreaterEqual(known.sum(), len(revealed))
            revealed = grown

    def test_out_of_grid_cells_rejected(self):
        with self.assertRaises(ShapeError):
            encode_observation(open_room(5), [(5, 5)])


def test_json_round_trip_and_ascii_render():
    maze = generate_task_maze(3, 0)
    assert maze_from_json(maze_to_json(maze)) == maze
    text = ascii_render(maze, [maze.start, maze.target])
    rows = text.splitlines()
    assert len(rows) == maze.shape[0]
    assert rows[maze.start[0]][maze.start[1]] == "S"
    assert rows[maze.target[0]][maze.target[1]] == "T"


@pytest.mark.parametrize("motion", [POSITIONAL, POSITIONAL4, EMBODIED])
def test_done_is_last_action(motion):
    assert motion.done == motion.num_actions - 1
    assert motion.done not in motion.move_actions
