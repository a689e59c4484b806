#!/usr/bin/env python3
"""
Unit tests for Chamfer, P2S and normal reprojection metrics
"""

import sys
import unittest
from pathlib import Path

import numpy as np

# Add the project root to Python path
project_root = Path(__file__).parent.parent.parent
sys.path.insert(0, str(project_root))

from geometry import OrthoCamera
from metrics import EvalConfig, chamfer, evaluate_meshes, normal_reprojection, p2s
from scene_generation.primitives import icosphere
from sdf_oracle import TriMesh


def front_camera(resolution=64, extent=2.0):
    return OrthoCamera(np.array([0.0, 0.0, -2.0]), np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]),
                       np.array([0.0, 0.0, 1.0]), extent / resolution, resolution, resolution, 0.5, 3.5)


def plane_mesh(normal, size=1.0, n=1, center=(0.0, 0.0, 0.0)):
    """Square of side ``size`` split into 2 n^2 triangles facing along ``normal``."""
    normal = np.asarray(normal, dtype=np.float64)
    normal = normal / np.linalg.norm(normal)
    t2 = np.array([0.0, 1.0, 0.0])
    t1 = np.cross(t2, normal)
    t1 /= np.linalg.norm(t1)
    steps = np.linspace(-size / 2, size / 2, n + 1)
    vertices = np.array([np.asarray(center) + a * t1 + b * t2 for a in steps for b in steps])
    triangles = []
    for i in range(n):
        for j in range(n):
            k = i * (n + 1) + j
            triangles += [[k, k + n + 1, k + n + 2], [k, k + n + 2, k + 1]]
    mesh = TriMesh(vertices, np.array(triangles, dtype=np.int64))
    if mesh.face_normals()[0] @ normal < 0:
        mesh = mesh.flipped()
    return mesh


class TestChamfer(unittest.TestCase):
    """Chamfer distance"""

    @classmethod
    def setUpClass(cls):
        cls.unit = icosphere(4, 1.0)
        cls.larger = icosphere(4, 1.1)

    def test_identical_meshes(self):
        self.assertLessEqual(chamfer(self.unit, self.unit, 2000, 0), 1e-9)

    def test_offset_spheres(self):
        self.assertAlmostEqual(chamfer(self.unit, self.larger, 2000, 0), 0.1, delta=5e-3)

    def test_symmetric(self):
        self.assertEqual(chamfer(self.unit, self.larger, 1000, 3), chamfer(self.larger, self.unit, 1000, 3))

    def test_reproducible(self):
        self.assertEqual(chamfer(self.unit, self.larger, 1000, 5), chamfer(self.unit, self.larger, 1000, 5))

    def test_scales_linearly(self):
        scaled_a = TriMesh(self.unit.vertices * 3.0, self.unit.triangles)
        scaled_b = TriMesh(self.larger.vertices * 3.0, self.larger.triangles)
        self.assertAlmostEqual(chamfer(scaled_a, scaled_b, 1000, 1), 3.0 * chamfer(self.unit, self.larger, 1000, 1),
                               places=9)

    def test_empty_mesh(self):
        empty = TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
        with self.assertRaises(ValueError):
            chamfer(empty, self.unit, 100, 0)


class TestP2S(unittest.TestCase):
    """Point-to-surface distance"""

    @classmethod
    def setUpClass(cls):
        cls.gt = icosphere(4, 1.0)
        cls.inner = icosphere(4, 0.8)

    def test_identical_meshes(self):
        self.assertLessEqual(p2s(self.gt, self.gt, 2000, 0), 1e-9)

    def test_nested_spheres(self):
        self.assertAlmostEqual(p2s(self.inner, self.gt, 2000, 0), 0.2, delta=5e-3)

    def test_bounded_by_twice_chamfer(self):
        self.assertLessEqual(p2s(self.inner, self.gt, 1000, 2), 2.0 * chamfer(self.inner, self.gt, 1000, 2))

    def test_non_negative(self):
        self.assertGreaterEqual(p2s(self.gt, self.inner, 500, 4), 0.0)

    def test_empty_mesh(self):
        empty = TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
        with self.assertRaises(ValueError):
            p2s(self.gt, empty, 100, 0)


class TestNormalReprojection(unittest.TestCase):
    """Normal-map difference from the input view"""

    def setUp(self):
        self.cam = front_camera()
        s = np.sqrt(0.5)
        self.left = plane_mesh([-s, 0.0, -s])
        self.right = plane_mesh([s, 0.0, -s])

    def test_identical_meshes(self):
        self.assertEqual(normal_reprojection(self.left, self.left, self.cam), 0.0)

    def test_perpendicular_planes(self):
        self.assertAlmostEqual(normal_reprojection(self.left, self.right, self.cam), np.sqrt(2.0) / 2.0, places=9)

    def test_invariant_to_refinement(self):
        coarse = normal_reprojection(self.left, self.right, self.cam)
        fine = normal_reprojection(plane_mesh([-np.sqrt(0.5), 0.0, -np.sqrt(0.5)], n=8), self.right, self.cam)
        self.assertLessEqual(abs(coarse - fine), 1e-3)

    def test_no_joint_coverage(self):
        far_left = plane_mesh([0.0, 0.0, -1.0], size=0.4, center=(-0.7, 0.0, 0.0))
        far_right = plane_mesh([0.0, 0.0, -1.0], size=0.4, center=(0.7, 0.0, 0.0))
        self.assertEqual(normal_reprojection(far_left, far_right, self.cam), 1.0)

    def test_resolution_override(self):
        value = normal_reprojection(self.left, self.right, self.cam, resolution=32)
        self.assertAlmostEqual(value, np.sqrt(2.0) / 2.0, places=9)


class TestEvaluateMeshes(unittest.TestCase):

    def test_record_in_centimetres(self):
        gt = icosphere(3, 0.5)
        recon = icosphere(3, 0.45)
        cfg = EvalConfig(n_samples=500, normal_resolution=32, seed=1)
        record = evaluate_meshes("scene_a", recon, gt, front_camera(), 100.0, cfg)
        self.assertEqual(record["scene"], "scene_a")
        self.assertAlmostEqual(record["cd_cm"], 100.0 * chamfer(recon, gt, 500, 1), places=9)
        self.assertAlmostEqual(record["p2s_cm"], 100.0 * p2s(recon, gt, 500, 1), places=9)
        self.assertGreaterEqual(record["normal"], 0.0)

    def test_self_evaluation_is_zero(self):
        gt = icosphere(2, 0.5)
        record = evaluate_meshes("self", gt, gt, front_camera(), 100.0, EvalConfig(n_samples=300, normal_resolution=32))
        self.assertLessEqual(record["cd_cm"], 1e-7)
        self.assertLessEqual(record["p2s_cm"], 1e-7)
        self.assertEqual(record["normal"], 0.0)


if __name__ == '__main__':
    unittest.main()
