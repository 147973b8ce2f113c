"""Grayscale renders of predicted value and reward maps.

Each image is min-max normalised on its own (higher is brighter); a constant
map renders as mid gray. Embodied maps are drawn twice: averaged over the 8
orientations, and radially, with each cell split into 8 sectors so that the
sector pointing along heading ``theta`` shows the value for that heading.
"""
from __future__ import annotations

import logging
import os
from typing import List, Optional

import numpy as np

from .maze import HEADINGS, ORIENTATIONS, AgentState, Maze
from .model import PlanningModel
from .planners import PlannerOutput
from .rollout import PlannerPolicy, rollout

logger = logging.getLogger(__name__)

DEFAULT_CELL_PIXELS = 8


def normalise(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    low, high = image.min(), image.max()
    if high - low <= 0:
        return np.full(image.shape, 0.5)
    return (image - low) / (high - low)


def to_gray(image: np.ndarray) -> np.ndarray:
    return np.round(normalise(image) * 255).astype(np.uint8)


def upscale(grid: np.ndarray, cell_pixels: int) -> np.ndarray:
    return np.kron(grid, np.ones((cell_pixels, cell_pixels), dtype=grid.dtype))


def sector_layout(cell_pixels: int) -> np.ndarray:
    """Heading index of every pixel inside one cell, by its direction from the centre."""
    centre = (cell_pixels - 1) / 2.0
    dy, dx = np.mgrid[0:cell_pixels, 0:cell_pixels] - centre
    angle = np.degrees(np.arctan2(-dx, -dy))
    sectors = np.round(angle / (360.0 / ORIENTATIONS)).astype(int) % ORIENTATIONS
    return sectors


def radial_image(planes: np.ndarray, cell_pixels: int) -> np.ndarray:
    """``M x H x W`` orientation planes drawn as 8-sector cells."""
    planes = np.asarray(planes, dtype=np.float64)
    if planes.shape[0] != len(HEADINGS):
        raise ValueError(f"Radial rendering needs {len(HEADINGS)} orientation planes, got {planes.shape[0]}")
    sectors = sector_layout(cell_pixels)
    height, width = planes.shape[1:]
    tiled = np.tile(sectors, (height, width))
    rows = np.repeat(np.arange(height), cell_pixels)[:, None]
    cols = np.repeat(np.arange(width), cell_pixels)[None, :]
    return planes[tiled, rows, cols]


def write_pgm(path: str, image: np.ndarray) -> str:
    """Binary (P5) 8-bit grayscale image."""
    image = np.asarray(image, dtype=np.uint8)
    height, width = image.shape
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        handle.write(np.ascontiguousarray(image).tobytes())
    return path


def read_pgm(path: str) -> np.ndarray:
    with open(path, "rb") as handle:
        payload = handle.read()
    magic, size, maxval, body = payload.split(b"\n", 3)
    if magic != b"P5" or int(maxval) != 255:
        raise ValueError(f"{path} is not an 8-bit binary PGM")
    width, height = size.split()
    return np.frombuffer(body, dtype=np.uint8).reshape(int(height), int(width))


def write_png(path: str, image: np.ndarray) -> str:
    import matplotlib

    matplotlib.use("Agg")
    from matplotlib import pyplot as plt

    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    plt.imsave(path, np.asarray(image, dtype=np.uint8), cmap="gray", vmin=0, vmax=255)
    return path


def _emit(out_dir: str, stem: str, grid: np.ndarray, png: bool, radial: bool, cell_pixels: int) -> List[str]:
    image = to_gray(radial_image(grid, cell_pixels) if radial else upscale(grid, cell_pixels))
    paths = [write_pgm(os.path.join(out_dir, f"{stem}.pgm"), image)]
    if png:
        paths.append(write_png(os.path.join(out_dir, f"{stem}.png"), image))
    return paths


def render_output(
    output: PlannerOutput,
    out_dir: str,
    step: int = 0,
    cell_pixels: int = DEFAULT_CELL_PIXELS,
    png: bool = False,
) -> List[str]:
    """Write value and reward images of one planner output; returns the written paths."""
    values = np.asarray(output.v.data, dtype=np.float64)
    reward = np.asarray(output.reward.data, dtype=np.float64)
    # CALVIN rewards are per action; show the best action's reward per state.
    if reward.ndim == 4:
        reward = reward.max(axis=0)
    maps = {"value": values, "reward": reward}
    paths: List[str] = []
    for name, planes in maps.items():
        prefix = f"step{step:03d}_{name}"
        if planes.shape[0] == ORIENTATIONS:
            paths += _emit(out_dir, f"{prefix}_mean", planes.mean(axis=0), png, False, cell_pixels)
            paths += _emit(out_dir, f"{prefix}_radial", planes, png, True, cell_pixels)
        else:
            paths += _emit(out_dir, prefix, planes.mean(axis=0), png, False, cell_pixels)
    logger.info("Maps rendered", extra={"event": "maps_rendered", "step": step, "files": len(paths)})
    return paths


def render_maps(
    model: PlanningModel,
    maze: Maze,
    out_dir: str,
    step: int = 0,
    start: Optional[AgentState] = None,
    cell_pixels: int = DEFAULT_CELL_PIXELS,
    png: bool = False,
) -> List[str]:
    """Render the planner's maps after ``step`` greedy moves of the model on ``maze``."""
    if step < 0:
        raise ValueError("step must be non-negative")
    if start is None:
        start = AgentState(maze.start[0], maze.start[1], 0 if model.motion.embodied else None)
    result = rollout(maze, start, PlannerPolicy(model), model.backbone, model.motion, step + 1)
    visited = list(result.states[: step + 1]) or [start]
    episode = model.backbone.start(maze)  # type: ignore[attr-defined]
    for state in visited:
        episode.observe(state)
    return render_output(model.plan(episode.snapshot()), out_dir, step, cell_pixels, png)
