"""Executable examples for the planning toolkit.

Run this module directly to generate a small maze, solve it exactly, train a
tiny CALVIN on a handful of expert demonstrations and roll it out. Use it as a
starting point for experimentation or as documentation for the data structures.
"""
from __future__ import annotations

from pprint import pprint

from . import (
    POSITIONAL,
    AgentState,
    PlannerPolicy,
    TrainConfig,
    ascii_render,
    build_maze_mdp,
    generate_dataset,
    generate_task_maze,
    greedy_path,
    make_trajectory,
    rollout,
    train,
    vi_exact,
)


def build_demo_config() -> TrainConfig:
    """A configuration small enough to train in seconds."""
    return TrainConfig(
        planner="calvin",
        motion="positional",
        observability="full",
        lattice_n=3,
        trajectories=12,
        epochs=2,
        batch_size=8,
        hidden=16,
        k=20,
        seed=7,
    )


def run_demo() -> None:
    """Solve and learn one demo maze and print readable diagnostics."""

    # Maze and expert ---------------------------------------------------------
    maze = generate_task_maze(lattice_n=3, seed=11)
    expert = make_trajectory(maze, seed=11, motion=POSITIONAL)
    print("Maze with expert path:")
    print(ascii_render(maze, [s.cell for s in expert.states]))

    # Exact value iteration ---------------------------------------------------
    maze_mdp = build_maze_mdp(maze, POSITIONAL, gamma=0.99)
    result = vi_exact(maze_mdp.mdp, k=4 * maze.side)
    start = AgentState(*maze.start)
    path = greedy_path(maze_mdp, result, start)
    print("\nExact VI greedy path length:", len(path) - 1, "moves")

    # Training ----------------------------------------------------------------
    config = build_demo_config()
    dataset = generate_dataset(config.trajectories, config.lattice_n, POSITIONAL, seed=config.seed)
    trained = train(config, dataset)
    print("\nEpoch history:")
    pprint([record.as_row() for record in trained.history])

    # Rollout -----------------------------------------------------------------
    model = trained.model
    outcome = rollout(maze, start, PlannerPolicy(model), model.backbone, POSITIONAL, config.step_limit)
    print("\nRollout outcome:", outcome.outcome.value, "after", outcome.steps, "steps")


if __name__ == "__main__":
    run_demo()
