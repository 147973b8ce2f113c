"""
Lattice point pooling tests

This test suite covers:
- Pixel projection and its inverse
- Half-open binning, recursive sums and permutation invariance
- The synthetic scanner and the map encoder
"""

import os
import tempfile
import unittest

import numpy as np

from calvin.backbones import LatticeBackbone, build_backbone
from calvin.errors import ShapeError
from calvin.lpn import (
    FEATURE_CLASSES,
    FREE_CLASS,
    TARGET_CLASS,
    WALL_CLASS,
    CameraFrame,
    LatticeMap,
    LatticeMemory,
    MapEncoder,
    PointBatch,
    bin_and_pool,
    camera_pose,
    load_map_snapshot,
    map_encode,
    project_pixels,
    save_map_snapshot,
    synthetic_scan,
    unproject_points,
    update_map,
)
from calvin.maze import AgentState, generate_task_maze
from calvin.nn import ParameterStore


def random_frame(seed, count=40):
    rng = np.random.default_rng(seed)
    position, rotation = camera_pose(AgentState(3, 3), int(rng.integers(8)))
    return CameraFrame(
        pixels=rng.uniform(-2, 2, size=(count, 2)),
        depth=rng.uniform(0.1, 3.0, size=count),
        features=rng.normal(size=(count, 3)),
        position=position,
        rotation=rotation,
        intrinsics=np.diag([0.5, 0.5, 1.0]),
    )


class ProjectionTests(unittest.TestCase):
    """World coordinates from camera pixels"""

    def test_unproject_inverts_project(self):
        frame = random_frame(0)
        points = project_pixels(frame)
        pixels, depth = unproject_points(frame, points.coords)
        np.testing.assert_allclose(pixels, frame.pixels, atol=1e-9)
        np.testing.assert_allclose(depth, frame.depth, atol=1e-9)

    def test_invalid_depths_are_dropped(self):
        frame = random_frame(1, count=5)
        depth = frame.depth.copy()
        depth[[0, 3]] = [-1.0, np.inf]
        masked = CameraFrame(frame.pixels, depth, frame.features, frame.position, frame.rotation, frame.intrinsics)
        self.assertEqual(len(project_pixels(masked)), 3)

    def test_rotation_must_be_orthonormal(self):
        frame = random_frame(2, count=2)
        with self.assertRaises(ValueError):
            CameraFrame(frame.pixels, frame.depth, frame.features, frame.position, 2 * frame.rotation, frame.intrinsics)

    def test_camera_pose_axes(self):
        for heading in range(8):
            _, rotation = camera_pose(AgentState(1, 1), heading)
            np.testing.assert_allclose(rotation.T @ rotation, np.eye(3), atol=1e-12)


class PoolingTests(unittest.TestCase):
    """Per-cell sums and counts"""

    def test_half_open_bins(self):
        points = PointBatch(np.array([[0.0, 0.0, 0], [0.999, 0.5, 0], [1.0, 1.0, 0], [-0.01, 0.5, 0]]), np.ones((4, 1)))
        pooled = bin_and_pool(points, 1.0, (2, 2))
        self.assertEqual(pooled.counts[0, 0], 2)
        self.assertEqual(pooled.counts[1, 1], 1)
        self.assertEqual(pooled.dropped, 1)

    def test_recursive_map_equals_batch_pooling(self):
        frames = [random_frame(seed) for seed in range(4)]
        memory = LatticeMemory((7, 7), feature_dim=3)
        for frame in frames:
            memory.add_frames([frame])
        batch = bin_and_pool(PointBatch.concatenate([project_pixels(f) for f in frames], 3), 1.0, (7, 7))
        np.testing.assert_allclose(memory.map.e, batch.sums, atol=1e-12)
        np.testing.assert_array_equal(memory.map.n, batch.counts)

    def test_map_after_each_frame_ignores_later_frames(self):
        frames = [random_frame(seed) for seed in range(8)]
        for window in (None, 3):
            memory = LatticeMemory((7, 7), feature_dim=3, window=window)
            history = []
            for frame in frames:
                memory.add_frames([frame])
                history.append((memory.map.e.copy(), memory.map.n.copy()))
            for t in range(len(frames)):
                prefix = LatticeMemory((7, 7), feature_dim=3, window=window)
                for frame in frames[: t + 1]:
                    prefix.add_frames([frame])
                with self.subTest(window=window, t=t):
                    np.testing.assert_array_equal(prefix.map.e, history[t][0])
                    np.testing.assert_array_equal(prefix.map.n, history[t][1])

    def test_pooling_ignores_point_order(self):
        points = project_pixels(random_frame(5))
        order = np.random.default_rng(0).permutation(len(points))
        shuffled = PointBatch(points.coords[order], points.features[order])
        a, b = bin_and_pool(points, 1.0, (7, 7)), bin_and_pool(shuffled, 1.0, (7, 7))
        np.testing.assert_allclose(a.sums, b.sums, atol=1e-12)
        np.testing.assert_array_equal(a.counts, b.counts)

    def test_window_forgets_old_frames(self):
        frames = [random_frame(seed) for seed in range(3)]
        windowed = LatticeMemory((7, 7), feature_dim=3, window=2)
        for frame in frames:
            windowed.add_frames([frame])
        recent = LatticeMemory((7, 7), feature_dim=3)
        for frame in frames[1:]:
            recent.add_frames([frame])
        np.testing.assert_allclose(windowed.map.e, recent.map.e, atol=1e-9)
        np.testing.assert_array_equal(windowed.map.n, recent.map.n)

    def test_pooled_is_zero_where_unobserved(self):
        lattice = update_map(LatticeMap.empty(2, (2, 2)), np.ones((2, 2, 2)) * 4, np.array([[2, 0], [0, 1]]))
        np.testing.assert_allclose(lattice.pooled()[:, 0, 0], [2.0, 2.0])
        np.testing.assert_allclose(lattice.pooled()[:, 0, 1], [0.0, 0.0])
        np.testing.assert_array_equal(lattice.mask, [[True, False], [False, True]])

    def test_shape_mismatch_rejected(self):
        with self.assertRaises(ShapeError):
            update_map(LatticeMap.empty(2, (2, 2)), np.zeros((3, 2, 2)), np.zeros((2, 2), dtype=np.int64))
        with self.assertRaises(ValueError):
            bin_and_pool(PointBatch(np.zeros((1, 3)), np.zeros((1, 1))), 0.0, (2, 2))

    def test_map_snapshot_round_trip(self):
        memory = LatticeMemory((7, 7), feature_dim=3)
        memory.add_frames([random_frame(9)])
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "map.ckpt")
            save_map_snapshot(path, memory.map)
            loaded = load_map_snapshot(path)
        np.testing.assert_array_equal(loaded.n, memory.map.n)
        np.testing.assert_allclose(loaded.e, memory.map.e, rtol=1e-6)


class SyntheticScanTests(unittest.TestCase):
    """Noise-free scans reproduce the maze's semantic classes"""

    def test_scan_classes_match_occupancy(self):
        maze = generate_task_maze(3, 4)
        memory = LatticeMemory(maze.shape, feature_dim=len(FEATURE_CLASSES))
        rng = np.random.default_rng(0)
        for cell in maze.free_cells():
            for heading in (0, 2, 4, 6):
                memory.add_frames([synthetic_scan(maze, AgentState(*cell), rng, heading=heading, noise=0.0)])
        pooled = memory.map.pooled()
        for row, col in zip(*np.nonzero(memory.map.mask)):
            is_wall = pooled[:, row, col].argmax() == WALL_CLASS
            self.assertEqual(is_wall, bool(maze.grid[row, col]))

    def test_scan_hits_land_in_their_cells(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            maze = generate_task_maze(3, int(rng.integers(1000)))
            free = maze.free_cells()
            cell = free[int(rng.integers(len(free)))]
            heading = int(rng.integers(8))
            frame = synthetic_scan(maze, AgentState(*cell), rng, heading=heading, noise=0.0)
            points = project_pixels(frame)
            pooled = bin_and_pool(points, 1.0, maze.shape)
            with self.subTest(maze=maze.seed, cell=cell, heading=heading):
                self.assertEqual(pooled.dropped, 0)
                self.assertEqual(int(pooled.counts.sum()), len(points))
                self.assertGreater(pooled.counts[cell], 0)
                for row, col in zip(*np.nonzero(pooled.counts)):
                    label = pooled.sums[:, row, col].argmax()
                    if maze.grid[row, col]:
                        self.assertEqual(label, WALL_CLASS)
                    elif (row, col) == maze.target:
                        self.assertEqual(label, TARGET_CLASS)
                    else:
                        self.assertEqual(label, FREE_CLASS)

    def test_scan_stays_in_range(self):
        maze = generate_task_maze(3, 1)
        frame = synthetic_scan(maze, AgentState(*maze.start), np.random.default_rng(0), heading=2, max_range=3.0)
        self.assertGreater(len(frame), 0)
        self.assertTrue(np.all(frame.depth <= 3.0 + 1e-9))


class EncoderTests(unittest.TestCase):
    """Masked map encoder"""

    def test_unobserved_cells_are_zero_and_mask_is_appended(self):
        encoder = MapEncoder(hidden=4, out_channels=3)
        store = ParameterStore(seed=0)
        encoder.init_params(store)
        memory = LatticeMemory((7, 7), feature_dim=3)
        memory.add_frames([random_frame(3)])
        out = map_encode(memory.map, encoder, store.leaves()).data
        mask = memory.map.mask
        self.assertEqual(out.shape, (4, 7, 7))
        np.testing.assert_array_equal(out[-1], mask.astype(np.float32))
        np.testing.assert_array_equal(out[:3, ~mask], 0.0)

    def test_backbone_snapshot_layout(self):
        backbone = LatticeBackbone(hidden=4)
        maze = generate_task_maze(3, 2)
        episode = backbone.start(maze)
        episode.observe(AgentState(*maze.start))
        first = episode.snapshot()
        episode.observe(AgentState(*maze.target))
        second = episode.snapshot()
        self.assertEqual(first.shape, (len(FEATURE_CLASSES) + 1,) + maze.shape)
        self.assertTrue(np.all(second[-1] >= first[-1]))
        self.assertEqual(backbone.channels, 4)

    def test_full_observability_surveys_the_whole_maze(self):
        backbone = build_backbone("lpn", partial=False, hidden=4)
        self.assertFalse(backbone.partial)
        maze = generate_task_maze(3, 5)
        episode = backbone.start(maze)
        before = episode.snapshot()
        mask = before[-1].astype(bool)
        for cell in maze.free_cells():
            self.assertTrue(mask[cell])
        episode.observe(AgentState(*maze.start))
        np.testing.assert_array_equal(episode.snapshot(), before)
        self.assertTrue(build_backbone("lpn", hidden=4).partial)
