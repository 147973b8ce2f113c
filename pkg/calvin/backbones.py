"""Perception backbones turning what the agent has seen into planner input.

A backbone opens one :class:`Episode` per maze. The episode is fed the agent's
poses in order and can be snapshotted at any time; the snapshot is a constant
array, and :meth:`encode` turns it into the planner's observation tensor
(differentiably, when the backbone has parameters).
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import FrozenSet, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .expert import derive_seed
from .lpn import FEATURE_CLASSES, LatticeMemory, MapEncoder, synthetic_scan
from .maze import (
    OBSERVATION_CHANNELS,
    AgentState,
    Cell,
    Maze,
    all_cells,
    encode_observation,
    visible_cells,
)
from .nn import ParameterStore
from .tensor import Tensor, as_tensor

CARDINAL_HEADINGS = (0, 2, 4, 6)


class Episode:
    def observe(self, state: AgentState) -> None:
        raise NotImplementedError

    def snapshot(self) -> np.ndarray:
        raise NotImplementedError

    def digest(self) -> str:
        return hashlib.sha1(np.ascontiguousarray(self.snapshot()).tobytes()).hexdigest()


class OracleEpisode(Episode):
    def __init__(self, maze: Maze, partial: bool) -> None:
        self.maze = maze
        self.partial = partial
        self.revealed: FrozenSet[Cell] = frozenset() if partial else all_cells(maze)

    def observe(self, state: AgentState) -> None:
        if self.partial:
            self.revealed = self.revealed | visible_cells(self.maze, state.cell)

    def snapshot(self) -> np.ndarray:
        return encode_observation(self.maze, self.revealed).channels


@dataclass(frozen=True)
class OracleBackbone:
    """Known-mask, obstacle and target channels of the revealed cells."""

    partial: bool = True

    @property
    def channels(self) -> int:
        return OBSERVATION_CHANNELS

    def init_params(self, store: ParameterStore) -> None:
        return None

    def start(self, maze: Maze) -> OracleEpisode:
        return OracleEpisode(maze, self.partial)

    def encode(self, snapshot: np.ndarray, params: Mapping[str, Tensor]) -> Tensor:
        return as_tensor(snapshot)


class LatticeEpisode(Episode):
    def __init__(self, maze: Maze, backbone: "LatticeBackbone") -> None:
        self.maze = maze
        self.backbone = backbone
        self.memory = LatticeMemory(maze.shape, len(FEATURE_CLASSES), window=backbone.window)
        self.steps = 0
        if not backbone.partial:
            # Full observability: one survey from every free cell, later poses add nothing.
            self._scan([(AgentState(*cell), h) for cell in maze.free_cells() for h in CARDINAL_HEADINGS])

    def _scan(self, poses: Sequence[Tuple[AgentState, int]]) -> None:
        rng = np.random.default_rng(derive_seed(self.maze.seed, self.steps))
        frames = [
            synthetic_scan(self.maze, state, rng, heading=h, rays=self.backbone.rays, noise=self.backbone.noise)
            for state, h in poses
        ]
        self.memory.add_frames(frames)
        self.steps += 1

    def observe(self, state: AgentState) -> None:
        if not self.backbone.partial:
            return
        headings = (state.theta,) if state.theta is not None else CARDINAL_HEADINGS
        self._scan([(state, h) for h in headings])

    def snapshot(self) -> np.ndarray:
        lattice = self.memory.map
        return np.concatenate([lattice.pooled(), lattice.mask[None].astype(np.float64)]).astype(np.float32)


@dataclass(frozen=True)
class LatticeBackbone:
    """Synthetic scans pooled onto the lattice, refined by a learned map encoder."""

    hidden: int = 32
    out_channels: int = 3
    rays: int = 9
    noise: float = 0.05
    window: Optional[int] = None
    partial: bool = True

    @property
    def encoder(self) -> MapEncoder:
        return MapEncoder(len(FEATURE_CLASSES), self.hidden, self.out_channels)

    @property
    def channels(self) -> int:
        return self.encoder.channels

    def init_params(self, store: ParameterStore) -> None:
        self.encoder.init_params(store)

    def start(self, maze: Maze) -> LatticeEpisode:
        return LatticeEpisode(maze, self)

    def encode(self, snapshot: np.ndarray, params: Mapping[str, Tensor]) -> Tensor:
        features = len(FEATURE_CLASSES)
        return self.encoder(snapshot[:features], snapshot[features], params)


def trajectory_snapshots(backbone, maze: Maze, states, upto: int) -> List[np.ndarray]:
    """Snapshots after observing ``states[0..t]`` for ``t = 0..upto``."""
    episode = backbone.start(maze)
    snapshots = []
    for state in states[: upto + 1]:
        episode.observe(state)
        snapshots.append(episode.snapshot())
    return snapshots


def build_backbone(kind: str, partial: bool = True, **options):
    if kind == "oracle":
        return OracleBackbone(partial=partial)
    if kind == "lpn":
        allowed = {"hidden", "out_channels", "rays", "noise", "window"}
        return LatticeBackbone(partial=partial, **{k: v for k, v in options.items() if k in allowed})
    raise ValueError(f"Unknown backbone '{kind}'; expected 'oracle' or 'lpn'")
