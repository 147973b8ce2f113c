"""Lattice PointNet: world-space point pooling onto the planner lattice.

Observed pixels are lifted to world coordinates with the camera pose, binned
onto a 2D lattice of cell size ``tau`` and mean-pooled. The map keeps running
per-cell sums and counts, so its memory does not grow with the trajectory.

World coordinates put cell ``(i, j)`` of the maze at ``x in [i, i+1)``,
``y in [j, j+1)`` (times ``tau``); ``z`` is height.

Usage overview
--------------

1. Produce :class:`CameraFrame` objects (see :func:`synthetic_scan`).
2. Lift them with :func:`project_pixels` and bin them with :func:`bin_and_pool`.
3. Fold each frame into a :class:`LatticeMap` with :func:`update_map` and feed
   :meth:`LatticeMap.pooled` to the :class:`MapEncoder`.
"""
from __future__ import annotations

import json
import logging
import os
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from . import checkpoint
from .errors import ShapeError
from .maze import HEADINGS, AgentState, Cell, Maze
from .nn import ParameterStore, TwoLayerCNN
from .tensor import Tensor, as_tensor, concat, mul

logger = logging.getLogger(__name__)

FEATURE_CLASSES = ("wall", "free", "target")
WALL_CLASS, FREE_CLASS, TARGET_CLASS = 0, 1, 2
CAMERA_HEIGHT = 0.5
PIXEL_PITCH = 0.5


@dataclass(frozen=True)
class CameraFrame:
    """Pixels with depth and features, plus the camera pose and intrinsics."""

    pixels: np.ndarray
    depth: np.ndarray
    features: np.ndarray
    position: np.ndarray
    rotation: np.ndarray
    intrinsics: np.ndarray
    valid: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        pixels = np.asarray(self.pixels, dtype=np.float64).reshape(-1, 2)
        depth = np.asarray(self.depth, dtype=np.float64).reshape(-1)
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim == 1:
            features = features.reshape(len(depth), -1)
        rotation = np.asarray(self.rotation, dtype=np.float64)
        position = np.asarray(self.position, dtype=np.float64).reshape(3)
        intrinsics = np.asarray(self.intrinsics, dtype=np.float64)
        if len(pixels) != len(depth) or len(features) != len(depth):
            raise ShapeError("pixels, depth and features must describe the same number of points")
        if rotation.shape != (3, 3) or intrinsics.shape != (3, 3):
            raise ShapeError("rotation and intrinsics must be 3x3 matrices")
        if not np.allclose(rotation.T @ rotation, np.eye(3), atol=1e-5):
            raise ValueError("Camera rotation must be orthonormal")
        valid = np.ones(len(depth), dtype=bool) if self.valid is None else np.asarray(self.valid, dtype=bool)
        valid = valid & np.isfinite(depth) & (depth >= 0)
        for name, value in (
            ("pixels", pixels),
            ("depth", depth),
            ("features", features),
            ("position", position),
            ("rotation", rotation),
            ("intrinsics", intrinsics),
            ("valid", valid),
        ):
            object.__setattr__(self, name, value)

    def __len__(self) -> int:
        return len(self.depth)


@dataclass(frozen=True)
class PointBatch:
    coords: np.ndarray
    features: np.ndarray

    def __post_init__(self) -> None:
        coords = np.asarray(self.coords, dtype=np.float64).reshape(-1, 3)
        features = np.asarray(self.features, dtype=np.float64).reshape(len(coords), -1)
        if not np.all(np.isfinite(coords)):
            raise ValueError("Point coordinates must be finite")
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "features", features)

    def __len__(self) -> int:
        return len(self.coords)

    @classmethod
    def concatenate(cls, batches: Sequence["PointBatch"], feature_dim: int) -> "PointBatch":
        if not batches:
            return cls(np.zeros((0, 3)), np.zeros((0, feature_dim)))
        return cls(
            np.concatenate([b.coords for b in batches]),
            np.concatenate([b.features for b in batches]),
        )


def _homogeneous(matrix: np.ndarray) -> np.ndarray:
    out = np.eye(4)
    out[:3, :3] = matrix
    return out


def project_pixels(frame: CameraFrame) -> PointBatch:
    """``[x, y, z, 1] = c + R K [p1, p2, d, 1]`` for every valid pixel."""
    if abs(np.linalg.det(frame.intrinsics)) < 1e-12:
        raise ValueError("Camera intrinsics are singular")
    transform = _homogeneous(frame.rotation) @ _homogeneous(frame.intrinsics)
    offset = np.append(frame.position, 0.0)
    pixels = frame.pixels[frame.valid]
    homogeneous = np.column_stack([pixels, frame.depth[frame.valid], np.ones(len(pixels))])
    world = homogeneous @ transform.T + offset
    return PointBatch(world[:, :3], frame.features[frame.valid])


def unproject_points(frame: CameraFrame, coords: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Invert :func:`project_pixels`: pixel coordinates and depths of world points."""
    camera = np.linalg.solve(frame.intrinsics, frame.rotation.T @ (np.asarray(coords) - frame.position).T).T
    return camera[:, :2], camera[:, 2]


# Binning and the recursive map


@dataclass(frozen=True)
class PoolResult:
    sums: np.ndarray
    counts: np.ndarray
    dropped: int = 0


def bin_and_pool(
    points: PointBatch,
    tau: float,
    extents: Tuple[int, int],
    feature_dim: Optional[int] = None,
    z_band: Optional[Tuple[float, float]] = None,
) -> PoolResult:
    """Per-cell feature sums and point counts with half-open bins ``tau*i <= x < tau*(i+1)``."""
    if tau <= 0:
        raise ValueError("Cell size tau must be positive")
    rows, cols = extents
    dim = points.features.shape[1] if feature_dim is None else feature_dim
    sums = np.zeros((dim, rows, cols), dtype=np.float64)
    counts = np.zeros((rows, cols), dtype=np.int64)
    if len(points) == 0:
        return PoolResult(sums, counts, 0)
    if points.features.shape[1] != dim:
        raise ShapeError(f"Expected {dim}-dimensional point features, got {points.features.shape[1]}")

    keep = np.ones(len(points), dtype=bool)
    if z_band is not None:
        low, high = z_band
        keep &= (points.coords[:, 2] >= low) & (points.coords[:, 2] < high)
    i = np.floor(points.coords[:, 0] / tau).astype(np.int64)
    j = np.floor(points.coords[:, 1] / tau).astype(np.int64)
    inside = keep & (i >= 0) & (i < rows) & (j >= 0) & (j < cols)
    dropped = int(np.count_nonzero(keep & ~inside))

    np.add.at(counts, (i[inside], j[inside]), 1)
    for channel in range(dim):
        np.add.at(sums[channel], (i[inside], j[inside]), points.features[inside, channel])
    return PoolResult(sums, counts, dropped)


@dataclass(frozen=True)
class LatticeMap:
    """Running embedding sums ``e`` (``m x H x W``) and point counts ``n`` (``H x W``)."""

    e: np.ndarray
    n: np.ndarray
    tau: float = 1.0

    @classmethod
    def empty(cls, feature_dim: int, extents: Tuple[int, int], tau: float = 1.0) -> "LatticeMap":
        return cls(
            np.zeros((feature_dim,) + tuple(extents), dtype=np.float64),
            np.zeros(tuple(extents), dtype=np.int64),
            tau,
        )

    @property
    def mask(self) -> np.ndarray:
        return self.n > 0

    def pooled(self) -> np.ndarray:
        """Mean embedding per cell, zero where no point has landed."""
        safe = np.where(self.n > 0, self.n, 1)
        return np.where(self.n > 0, self.e / safe, 0.0)

    @property
    def nbytes(self) -> int:
        return self.e.nbytes + self.n.nbytes


def update_map(lattice: LatticeMap, sums: np.ndarray, counts: np.ndarray) -> LatticeMap:
    """``e_t = e_{t-1} + e'_t`` and ``n_t = n_{t-1} + n'_t``."""
    if sums.shape != lattice.e.shape or counts.shape != lattice.n.shape:
        raise ShapeError(
            f"Frame contribution {sums.shape}/{counts.shape} does not match map {lattice.e.shape}/{lattice.n.shape}"
        )
    return LatticeMap(lattice.e + sums, lattice.n + counts, lattice.tau)


class LatticeMemory:
    """Folds frames into a :class:`LatticeMap`, optionally over a sliding window.

    Without a window only the running sums are kept. With a window of ``N``
    frames the last ``N`` contributions are retained so the oldest can be
    subtracted again.
    """

    def __init__(
        self,
        extents: Tuple[int, int],
        feature_dim: int = len(FEATURE_CLASSES),
        tau: float = 1.0,
        window: Optional[int] = None,
        z_band: Optional[Tuple[float, float]] = None,
    ) -> None:
        if window is not None and window < 1:
            raise ValueError("Frame window must be positive")
        self.extents = tuple(extents)
        self.feature_dim = feature_dim
        self.tau = tau
        self.window = window
        self.z_band = z_band
        self.map = LatticeMap.empty(feature_dim, self.extents, tau)
        self.dropped = 0
        self._recent: Deque[PoolResult] = deque()

    def add_frames(self, frames: Sequence[CameraFrame]) -> LatticeMap:
        points = PointBatch.concatenate([project_pixels(f) for f in frames], self.feature_dim)
        contribution = bin_and_pool(points, self.tau, self.extents, self.feature_dim, self.z_band)
        self.dropped += contribution.dropped
        self.map = update_map(self.map, contribution.sums, contribution.counts)
        if self.window is not None:
            self._recent.append(contribution)
            if len(self._recent) > self.window:
                oldest = self._recent.popleft()
                self.map = update_map(self.map, -oldest.sums, -oldest.counts)
        return self.map


def save_map_snapshot(path: str, lattice: LatticeMap) -> None:
    """Write ``lpn.e`` / ``lpn.n`` as a checkpoint plus a JSON sidecar with ``tau`` and extents."""
    checkpoint.save(path, {"lpn.e": lattice.e.astype(np.float32), "lpn.n": lattice.n.astype(np.float32)})
    with open(os.fspath(path) + ".json", "w", encoding="utf-8") as handle:
        json.dump({"tau": lattice.tau, "extents": list(lattice.n.shape)}, handle, sort_keys=True)


def load_map_snapshot(path: str) -> LatticeMap:
    tensors = checkpoint.load(path)
    with open(os.fspath(path) + ".json", "r", encoding="utf-8") as handle:
        meta = json.load(handle)
    counts = np.rint(tensors["lpn.n"]).astype(np.int64)
    if list(counts.shape) != list(meta["extents"]):
        raise ShapeError("Map snapshot extents disagree with its sidecar")
    return LatticeMap(tensors["lpn.e"].astype(np.float64), counts, float(meta["tau"]))


# Synthetic scanner


def camera_pose(state: AgentState, heading: int, tau: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    """Camera centre and rotation for an agent at ``state`` looking along ``heading``."""
    hr, hc = HEADINGS[heading]
    norm = float(np.hypot(hr, hc))
    forward = np.array([hr, hc, 0.0]) / norm
    right = np.array([hc, -hr, 0.0]) / norm
    down = np.array([0.0, 0.0, -1.0])
    rotation = np.column_stack([right, down, forward])
    position = np.array([(state.row + 0.5) * tau, (state.col + 0.5) * tau, CAMERA_HEIGHT * tau])
    return position, rotation


def _march(maze: Maze, origin: np.ndarray, direction: np.ndarray, max_range: float):
    """Cells crossed by a ray in cell units, up to and including the first wall."""
    crossings = [0.0, max_range]
    for axis in range(2):
        if abs(direction[axis]) < 1e-12:
            continue
        start = origin[axis]
        end = origin[axis] + direction[axis] * max_range
        lo, hi = sorted((start, end))
        for boundary in np.arange(np.ceil(lo), np.floor(hi) + 1):
            t = (boundary - start) / direction[axis]
            if 0.0 < t < max_range:
                crossings.append(float(t))
    crossings = np.unique(crossings)
    segments: List[Tuple[Cell, float, float]] = []
    for t0, t1 in zip(crossings[:-1], crossings[1:]):
        if t1 - t0 <= 1e-9:
            continue
        mid = origin[:2] + 0.5 * (t0 + t1) * direction[:2]
        cell = (int(np.floor(mid[0])), int(np.floor(mid[1])))
        if not maze.in_bounds(cell):
            break
        if segments and segments[-1][0] == cell:
            segments[-1] = (cell, segments[-1][1], t1)
            continue
        segments.append((cell, t0, t1))
        if not maze.is_free(cell):
            break
    return segments


def synthetic_scan(
    maze: Maze,
    pose: AgentState,
    rng: np.random.Generator,
    heading: Optional[int] = None,
    rays: int = 9,
    fov_degrees: float = 90.0,
    max_range: float = 3.0,
    noise: float = 0.05,
    tau: float = 1.0,
) -> CameraFrame:
    """A 2D-slice range scan within a field of view centred on the heading.

    Each ray emits one point at the middle of every cell segment it crosses,
    ending with the first wall cell. Features are the one-hot semantic class of
    the cell (wall, free, target) plus Gaussian noise.
    """
    heading = (pose.theta or 0) if heading is None else heading
    position, rotation = camera_pose(pose, heading, tau)
    origin = position / tau
    forward = rotation[:, 2]
    base = np.arctan2(forward[1], forward[0])
    half = np.deg2rad(fov_degrees) / 2.0
    angles = base + np.linspace(-half, half, rays) if rays > 1 else np.array([base])

    world: List[np.ndarray] = []
    classes: List[int] = []
    for angle in angles:
        direction = np.array([np.cos(angle), np.sin(angle), 0.0])
        for cell, t0, t1 in _march(maze, origin, direction, max_range):
            world.append((origin + 0.5 * (t0 + t1) * direction) * tau)
            if not maze.is_free(cell):
                classes.append(WALL_CLASS)
            elif cell == maze.target:
                classes.append(TARGET_CLASS)
            else:
                classes.append(FREE_CLASS)

    count = len(world)
    features = np.zeros((count, len(FEATURE_CLASSES)))
    if count:
        features[np.arange(count), classes] = 1.0
    features += rng.normal(0.0, noise, size=features.shape)
    intrinsics = np.diag([PIXEL_PITCH, PIXEL_PITCH, 1.0])
    coords = np.asarray(world).reshape(-1, 3)
    camera = np.linalg.solve(intrinsics, rotation.T @ (coords - position).T).T
    return CameraFrame(
        pixels=camera[:, :2],
        depth=camera[:, 2],
        features=features,
        position=position,
        rotation=rotation,
        intrinsics=intrinsics,
    )


# Map encoder


@dataclass(frozen=True)
class MapEncoder:
    """Refines the pooled map; unobserved cells stay zero and the mask is appended."""

    feature_dim: int = len(FEATURE_CLASSES)
    hidden: int = 32
    out_channels: int = 3
    use_bias: bool = True
    prefix: str = "lpn.encoder"

    @property
    def net(self) -> TwoLayerCNN:
        return TwoLayerCNN(self.prefix, self.feature_dim, self.hidden, self.out_channels, use_bias=self.use_bias)

    @property
    def channels(self) -> int:
        return self.out_channels + 1

    def init_params(self, store: ParameterStore) -> None:
        self.net.init_params(store)

    def __call__(self, pooled: np.ndarray, mask: np.ndarray, params: Mapping[str, Tensor]) -> Tensor:
        mask_t = as_tensor(np.asarray(mask, dtype=np.float32).reshape((1,) + mask.shape[-2:]))
        features = self.net(as_tensor(np.asarray(pooled, dtype=np.float32)), params)
        return concat([mul(features, mask_t), mask_t], axis=0)


def map_encode(lattice: LatticeMap, encoder: MapEncoder, params: Mapping[str, Tensor]) -> Tensor:
    return encoder(lattice.pooled(), lattice.mask, params)
