#!/usr/bin/env python3
"""
Unit tests for the camera model, depth geometry, voxelization and the inference grid
"""

import unittest
import sys
from pathlib import Path

import numpy as np

# Add the project root to Python path
project_root = Path(__file__).parent.parent.parent
sys.path.insert(0, str(project_root))

from geometry import (OrthoCamera, ScalarImage, VectorImage, PointCloud, GridSpec,
                      depth_to_points, orthographic_project, pixel_to_world,
                      normals_from_depth, bilinear_sample, voxelize, inference_grid)


def axis_camera(w=2, h=2, pixel_size=1.0, near=0.0, far=10.0, center=(0, 0, 0)):
    return OrthoCamera(center, (1, 0, 0), (0, 1, 0), (0, 0, 1), pixel_size, w, h, near, far)


class TestOrthoCamera(unittest.TestCase):
    """Camera validation"""

    def test_rejects_non_orthonormal_basis(self):
        with self.assertRaises(ValueError):
            OrthoCamera((0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 0, 1), 1.0, 4, 4, 0.0, 1.0)

    def test_rejects_bad_pixel_size_and_range(self):
        with self.assertRaises(ValueError):
            axis_camera(pixel_size=0.0)
        with self.assertRaises(ValueError):
            axis_camera(near=2.0, far=1.0)


class TestBackProjection(unittest.TestCase):
    """depth_to_points and orthographic_project"""

    def test_constant_plane(self):
        cloud = depth_to_points(ScalarImage(np.ones((2, 2))), axis_camera())
        self.assertEqual(len(cloud), 4)
        np.testing.assert_allclose(cloud.points[:, 2], 1.0)

    def test_single_valid_pixel(self):
        depth = np.full((2, 2), np.nan)
        depth[0, 0] = 1.0
        cloud = depth_to_points(ScalarImage(depth), axis_camera())
        self.assertEqual(len(cloud), 1)
        np.testing.assert_allclose(cloud.points[0], [-1.0, 1.0, 1.0])

    def test_out_of_range_depth_skipped(self):
        depth = np.array([[1.0, 20.0], [-1.0, 2.0]])
        cloud = depth_to_points(ScalarImage(depth), axis_camera())
        self.assertEqual(len(cloud), 2)

    def test_dimension_mismatch(self):
        with self.assertRaises(ValueError):
            depth_to_points(ScalarImage(np.ones((3, 2))), axis_camera())

    def test_project_back_project_identity(self):
        rng = np.random.default_rng(0)
        theta = 0.4
        cam = OrthoCamera((0.2, -0.1, -2.0), (np.cos(theta), 0, -np.sin(theta)), (0, 1, 0),
                          (np.sin(theta), 0, np.cos(theta)), 0.01, 8, 6, 0.5, 4.0)
        depth = rng.uniform(1.0, 3.0, size=(6, 8))
        depth[2, 3] = np.nan
        cloud = depth_to_points(ScalarImage(depth), cam)
        u, v, z = orthographic_project(cloud.points, cam)
        rows, cols = np.nonzero(np.isfinite(depth))
        np.testing.assert_allclose(u, cols, atol=1e-6)
        np.testing.assert_allclose(v, rows, atol=1e-6)
        np.testing.assert_allclose(z, depth[rows, cols], atol=1e-6)

    def test_center_projects_to_image_center(self):
        cam = axis_camera(w=8, h=6, center=(1, 2, 3))
        u, v, z = orthographic_project(np.array([1.0, 2.0, 3.0]), cam)
        self.assertAlmostEqual(float(u), 4.0)
        self.assertAlmostEqual(float(v), 3.0)
        self.assertAlmostEqual(float(z), 0.0)
        _, _, z = orthographic_project(cam.center + cam.forward, cam)
        self.assertAlmostEqual(float(z), 1.0)

    def test_random_point_inverse_pair(self):
        rng = np.random.default_rng(1)
        cam = axis_camera(w=16, h=16, pixel_size=0.05)
        for p in rng.normal(size=(20, 3)):
            u, v, z = orthographic_project(p, cam)
            np.testing.assert_allclose(pixel_to_world(u, v, z, cam), p, atol=1e-6)


class TestNormals(unittest.TestCase):
    """normals_from_depth"""

    def test_constant_plane_faces_camera(self):
        normals = normals_from_depth(ScalarImage(np.full((5, 5), 2.0)), axis_camera(5, 5))
        np.testing.assert_allclose(normals.data.reshape(-1, 3), np.tile([0.0, 0.0, -1.0], (25, 1)),
                                   atol=1e-12)

    def test_depth_ramp(self):
        ps = 0.1
        cam = axis_camera(6, 5, pixel_size=ps)
        u = np.tile(np.arange(6, dtype=float), (5, 1))
        normals = normals_from_depth(ScalarImage(u * ps), cam)
        expected = np.array([1.0, 0.0, -1.0]) / np.sqrt(2.0)
        np.testing.assert_allclose(normals.data[2, 3], expected, atol=1e-9)
        np.testing.assert_allclose(normals.data[0, 0], expected, atol=1e-9)

    def test_nan_propagates_to_neighbours(self):
        depth = np.full((5, 5), 2.0)
        depth[2, 2] = np.nan
        normals = normals_from_depth(ScalarImage(depth), axis_camera(5, 5)).data
        for row, col in [(2, 2), (2, 1), (2, 3), (1, 2), (3, 2)]:
            self.assertTrue(np.all(np.isnan(normals[row, col])))
        self.assertTrue(np.all(np.isfinite(normals[0, 0])))

    def test_unit_length_and_camera_facing(self):
        rng = np.random.default_rng(2)
        v, u = np.mgrid[0:12, 0:12]
        depth = 2.0 + 0.3 * np.sin(u / 3.0) + 0.2 * np.cos(v / 4.0) + 0.01 * rng.random((12, 12))
        cam = axis_camera(12, 12, pixel_size=0.1)
        normals = normals_from_depth(ScalarImage(depth), cam).data.reshape(-1, 3)
        defined = np.isfinite(normals).all(axis=1)
        self.assertTrue(defined.all())
        np.testing.assert_allclose(np.linalg.norm(normals, axis=1), 1.0, atol=1e-6)
        self.assertTrue(np.all(normals @ cam.forward <= 0.0))


class TestBilinearSample(unittest.TestCase):
    """bilinear_sample"""

    def setUp(self):
        self.rng = np.random.default_rng(3)
        self.image = VectorImage(self.rng.normal(size=(5, 7, 3)))

    def test_exact_grid_point(self):
        np.testing.assert_allclose(bilinear_sample(self.image, 4.0, 2.0), self.image.data[2, 4])

    def test_midpoint(self):
        image = VectorImage(np.array([[[0.0], [1.0]]]))
        self.assertAlmostEqual(float(bilinear_sample(image, 0.5, 0.0)[0]), 0.5)

    def test_clamped_to_border(self):
        np.testing.assert_allclose(bilinear_sample(self.image, -3.0, 10.0), self.image.data[4, 0])

    def test_matches_brute_force(self):
        us = self.rng.uniform(0, 6, size=50)
        vs = self.rng.uniform(0, 4, size=50)
        out = bilinear_sample(self.image, us, vs)
        data = self.image.data
        for i, (u, v) in enumerate(zip(us, vs)):
            u0, v0 = int(np.floor(u)), int(np.floor(v))
            a, b = u - u0, v - v0
            expected = ((1 - a) * (1 - b) * data[v0, u0] + a * (1 - b) * data[v0, u0 + 1]
                        + (1 - a) * b * data[v0 + 1, u0] + a * b * data[v0 + 1, u0 + 1])
            np.testing.assert_allclose(out[i], expected, atol=1e-7)


class TestVoxelize(unittest.TestCase):
    """voxelize"""

    def test_same_cell_merged(self):
        sites = voxelize(PointCloud([[0.1, 0.1, 0.1], [0.2, 0.3, 0.4]]), 1.0, np.zeros(3))
        self.assertEqual(sites.tolist(), [[0, 0, 0]])

    def test_two_cells(self):
        sites = voxelize(PointCloud([[1.1, 0.1, 0.1], [0.1, 0.1, 0.1]]), 1.0, np.zeros(3))
        self.assertEqual(sites.tolist(), [[0, 0, 0], [1, 0, 0]])

    def test_empty_cloud(self):
        self.assertEqual(voxelize(PointCloud(np.zeros((0, 3))), 0.5, np.zeros(3)).shape, (0, 3))

    def test_membership_and_permutation_invariance(self):
        rng = np.random.default_rng(4)
        points = rng.uniform(-1, 1, size=(500, 3))
        origin = np.array([-1.0, -1.0, -1.0])
        sites = voxelize(PointCloud(points), 0.25, origin)
        self.assertLessEqual(len(sites), len(points))
        present = {tuple(s) for s in sites.tolist()}
        for p in points:
            self.assertIn(tuple(np.floor((p - origin) / 0.25).astype(int).tolist()), present)
        shuffled = voxelize(PointCloud(points[rng.permutation(500)]), 0.25, origin)
        np.testing.assert_array_equal(sites, shuffled)


class TestInferenceGrid(unittest.TestCase):
    """inference_grid"""

    @staticmethod
    def box_corners(extent):
        corners = np.array([[i, j, k] for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=float)
        return PointCloud(corners * np.asarray(extent, dtype=float))

    def test_unit_cube(self):
        grid = inference_grid(self.box_corners((1, 1, 1)), 256, 0.0, 0.0, seed=0)
        self.assertEqual(grid.dims, (256, 256, 256))

    def test_elongated_box(self):
        grid = inference_grid(self.box_corners((2, 1, 0.5)), 256, 0.0, 0.0, seed=0)
        self.assertEqual(grid.dims, (512, 256, 128))
        self.assertEqual(grid.count, 256 ** 3)
        self.assertAlmostEqual(grid.spacing, 1.0 / 256)

    def test_random_clouds_cell_count_and_isotropy(self):
        rng = np.random.default_rng(5)
        M = 64
        for _ in range(100):
            scale = rng.uniform(0.5, 2.0, size=3)
            cloud = PointCloud(rng.random((40, 3)) * scale + rng.normal(size=3))
            grid = inference_grid(cloud, M, 0.0, 0.05, seed=0)
            self.assertGreaterEqual(grid.count, 0.9 * M ** 3)
            self.assertLessEqual(grid.count, 1.1 * M ** 3)
            extent = cloud.points.max(axis=0) - cloud.points.min(axis=0) + 0.1
            cells = extent / grid.spacing
            self.assertTrue(np.all(np.abs(cells - np.array(grid.dims)) <= 1.0))

    def test_grid_covers_jittered_cloud(self):
        cloud = self.box_corners((1, 1, 1))
        grid = inference_grid(cloud, 32, 0.05, 0.05, seed=3)
        upper = grid.origin + np.array(grid.dims) * grid.spacing
        self.assertTrue(np.all(grid.origin < 0.0))
        self.assertTrue(np.all(upper > 1.0))

    def test_degenerate_box(self):
        with self.assertRaises(ValueError):
            inference_grid(PointCloud([[0.0, 0.0, 0.0], [1.0, 1.0, 0.0]]), 16, 0.0, 0.0, seed=0)

    def test_invalid_arguments(self):
        with self.assertRaises(ValueError):
            inference_grid(PointCloud(np.zeros((0, 3))), 16, 0.0, 0.1, seed=0)
        with self.assertRaises(ValueError):
            inference_grid(self.box_corners((1, 1, 1)), 1, 0.0, 0.0, seed=0)

    def test_cell_centers_order(self):
        grid = GridSpec(np.zeros(3), 0.5, (2, 3, 4))
        centers = grid.cell_centers()
        self.assertEqual(centers.shape, (24, 3))
        np.testing.assert_allclose(centers[0], [0.25, 0.25, 0.25])
        np.testing.assert_allclose(centers[1], [0.25, 0.25, 0.75])
        np.testing.assert_allclose(centers[-1], [0.75, 1.25, 1.75])


if __name__ == '__main__':
    unittest.main()
