#!/usr/bin/env python3
"""
Unit tests for the procedural body, the rasterizer and scene directories
"""

import os
import sys
import tempfile
import unittest
from pathlib import Path

import numpy as np

# Add the project root to Python path
project_root = Path(__file__).parent.parent.parent
sys.path.insert(0, str(project_root))

from definitions import DEPTH_FILE, MASK_FILE, MESH_FILE, RGB_FILE, SCENE_FILE
from exceptions import DataError
from file_management import read_tnsr, write_tnsr
from geometry import OrthoCamera, ScalarImage, depth_to_points
from sampling import MaskLabel
from scene_generation.body import BodyShape, Part, body_sdf, build_body_mesh
from scene_generation.primitives import (box_mesh, box_sdf, capsule_mesh, capsule_sdf, icosphere, smooth_union,
                                         sphere_sdf)
from scene_generation.render import orbit_camera, rasterize, render_scene
from scene_generation.scene_io import SceneConfig, SceneDescriptor, load_scene, write_scene
from sdf_oracle import SdfOracle, TriMesh, winding_number


def front_camera(resolution=64, extent=2.0, near=0.5, far=3.5):
    return OrthoCamera(np.array([0.0, 0.0, -2.0]), np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]),
                       np.array([0.0, 0.0, 1.0]), extent / resolution, resolution, resolution, near, far)


def merged(*meshes):
    vertices, triangles, offset = [], [], 0
    for mesh in meshes:
        vertices.append(mesh.vertices)
        triangles.append(mesh.triangles + offset)
        offset += len(mesh.vertices)
    return TriMesh(np.vstack(vertices), np.vstack(triangles))


class TestPrimitives(unittest.TestCase):
    """Analytic distances and reference meshes"""

    def test_sphere_sdf(self):
        values = sphere_sdf(np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]), (0.0, 0.0, 0.0), 1.0)
        np.testing.assert_allclose(values, [-1.0, 1.0])

    def test_capsule_sdf(self):
        values = capsule_sdf(np.array([[0.0, 0.5, 0.0], [0.0, 3.0, 0.0], [1.0, 0.0, 0.0]]),
                             (0.0, 0.0, 0.0), (0.0, 1.0, 0.0), 0.25)
        np.testing.assert_allclose(values, [-0.25, 1.75, 0.75])

    def test_box_sdf(self):
        values = box_sdf(np.array([[0.0, 0.0, 0.0], [2.0, 0.0, 0.0]]), (0.0, 0.0, 0.0), (1.0, 1.0, 1.0))
        np.testing.assert_allclose(values, [-1.0, 1.0])

    def test_smooth_union(self):
        d1, d2 = np.array([0.3, -0.1]), np.array([0.35, 0.5])
        np.testing.assert_array_equal(smooth_union(d1, d2, 0.0), np.minimum(d1, d2))
        self.assertTrue(np.all(smooth_union(d1, d2, 0.1) <= np.minimum(d1, d2)))

    def test_icosphere(self):
        mesh = icosphere(2, 0.5)
        self.assertEqual(len(mesh.triangles), 20 * 4 ** 2)
        self.assertTrue(mesh.is_watertight())
        np.testing.assert_allclose(np.linalg.norm(mesh.vertices, axis=1), 0.5)
        self.assertGreater(mesh.signed_volume(), 0.0)

    def test_box_mesh(self):
        mesh = box_mesh((1.0, 2.0, 3.0))
        self.assertTrue(mesh.is_watertight())
        self.assertAlmostEqual(mesh.signed_volume(), 6.0, places=12)

    def test_capsule_mesh(self):
        mesh = capsule_mesh(0.2, 0.3)
        self.assertTrue(mesh.is_watertight())
        self.assertAlmostEqual(float(mesh.vertices[:, 1].max()), 0.5, places=9)
        self.assertAlmostEqual(float(mesh.vertices[:, 1].min()), -0.5, places=9)
        self.assertLess(float(np.abs(mesh.vertices[:, [0, 2]]).max()), 0.2 + 1e-9)
        volume = np.pi * 0.2 ** 2 * 0.6 + 4.0 / 3.0 * np.pi * 0.2 ** 3
        self.assertAlmostEqual(mesh.signed_volume() / volume, 1.0, delta=0.02)


class TestBody(unittest.TestCase):
    """Procedural articulated body"""

    @classmethod
    def setUpClass(cls):
        cls.shape = BodyShape()
        cls.mesh = build_body_mesh(cls.shape, 48)

    def test_invalid_shape(self):
        with self.assertRaises(ValueError):
            BodyShape(kind="robot")
        with self.assertRaises(ValueError):
            BodyShape(head_radius=0.0)
        with self.assertRaises(ValueError):
            BodyShape(arm_spread_deg=200.0)

    def test_part_labels(self):
        head = np.array([0.0, -0.2 + 0.45 + 0.6 * 0.16 + 0.12, 0.0])
        distance, parts = body_sdf(np.array([head, [0.0, 0.0, 0.0]]), self.shape)
        self.assertTrue(np.all(distance < 0))
        self.assertEqual(list(parts), [Part.HEAD, Part.TORSO])

    def test_mesh_is_closed(self):
        self.assertTrue(self.mesh.is_watertight())
        self.assertGreater(self.mesh.signed_volume(), 0.0)

    def test_inside_torso(self):
        self.assertAlmostEqual(float(winding_number(self.mesh, np.array([0.0, 0.0, 0.0]))), 1.0, places=6)
        self.assertAlmostEqual(float(winding_number(self.mesh, np.array([0.0, 0.0, 0.9]))), 0.0, places=6)

    def test_capsule_kind(self):
        mesh = build_body_mesh(BodyShape(kind="capsule"), 32)
        r, h = 0.25, 0.35
        expected = np.pi * r * r * 2 * h + 4.0 / 3.0 * np.pi * r ** 3
        self.assertAlmostEqual(mesh.signed_volume(), expected, delta=0.05 * expected)

    def test_low_resolution(self):
        with self.assertRaises(ValueError):
            build_body_mesh(self.shape, 4)


class TestOrbitCamera(unittest.TestCase):

    def test_front_view(self):
        cam = orbit_camera(0.0, 64)
        np.testing.assert_allclose(cam.forward, [0.0, 0.0, 1.0])
        np.testing.assert_allclose(cam.right, [1.0, 0.0, 0.0])
        np.testing.assert_allclose(cam.center, [0.0, 0.0, -2.0])
        self.assertAlmostEqual(cam.pixel_size, 2.2 / 64)

    def test_side_view(self):
        cam = orbit_camera(90.0, 32)
        np.testing.assert_allclose(cam.forward, [1.0, 0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(cam.right, [0.0, 0.0, -1.0], atol=1e-12)
        np.testing.assert_allclose(cam.center, [-2.0, 0.0, 0.0], atol=1e-12)


class TestRasterize(unittest.TestCase):
    """Front-face z-buffer rasterization"""

    def setUp(self):
        self.cam = front_camera()
        self.near_box = box_mesh((0.5, 0.5, 0.5))
        self.far_box = box_mesh((0.5, 0.5, 0.5), center=(0.0, 0.0, 0.5))

    def test_box_front_face(self):
        raster = rasterize(self.near_box, self.cam)
        self.assertAlmostEqual(raster.depth[32, 32], 1.75, places=12)
        np.testing.assert_allclose(raster.normals[32, 32], [0.0, 0.0, -1.0], atol=1e-12)
        # 0.5 wide at 1/32 per pixel, edges included
        self.assertEqual(int(raster.covered.sum()), 17 * 17)
        self.assertTrue(np.all(np.isnan(raster.depth[~raster.covered])))
        self.assertTrue(np.all(raster.triangle[~raster.covered] == -1))

    def test_nearer_surface_wins(self):
        raster = rasterize(merged(self.far_box, self.near_box), self.cam)
        self.assertAlmostEqual(raster.depth[32, 32], 1.75, places=12)
        self.assertGreaterEqual(raster.triangle[32, 32], 12)

    def test_ties_keep_lower_id(self):
        raster = rasterize(merged(self.near_box, self.near_box), self.cam)
        self.assertTrue(np.all(raster.triangle[raster.covered] < 12))

    def test_back_faces_culled(self):
        raster = rasterize(self.near_box.flipped(), self.cam)
        self.assertAlmostEqual(raster.depth[32, 32], 2.25, places=12)

    def test_outside_depth_range(self):
        raster = rasterize(self.near_box, front_camera(far=1.5))
        self.assertFalse(np.any(raster.covered))

    def test_empty_mesh(self):
        raster = rasterize(TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64)), self.cam)
        self.assertFalse(np.any(raster.covered))

    def test_backprojected_depth_on_surface(self):
        mesh = icosphere(3, 0.6)
        raster = rasterize(mesh, self.cam)
        points = depth_to_points(ScalarImage(raster.depth), self.cam).points
        self.assertGreater(len(points), 0)
        distance = SdfOracle(mesh).unsigned_distance(points)
        self.assertLessEqual(distance.max(), 1e-6)


class TestRenderScene(unittest.TestCase):
    """Rendered images and the semantic mask"""

    @classmethod
    def setUpClass(cls):
        cls.shape = BodyShape()
        cls.mesh = build_body_mesh(cls.shape, 48)
        cls.cam = orbit_camera(0.0, 48)
        cls.view = render_scene(cls.mesh, cls.shape, cls.cam)

    def test_mask_has_face_and_hand(self):
        labels = self.view.mask.labels
        self.assertGreater(np.sum(labels == MaskLabel.FACE), 0)
        self.assertGreater(np.sum(labels == MaskLabel.HAND), 0)
        self.assertGreater(np.sum(labels == MaskLabel.BODY), 0)

    def test_background_matches_depth(self):
        background = self.view.mask.labels == MaskLabel.BACKGROUND
        np.testing.assert_array_equal(background, np.isnan(self.view.depth.data))
        self.assertTrue(np.all(self.view.rgb.data[background] == 0.0))

    def test_rgb_range(self):
        rgb = self.view.rgb.data
        self.assertEqual(rgb.dtype, np.float32)
        self.assertTrue(np.all((rgb >= 0.0) & (rgb <= 1.0)))

    def test_normals_unit_where_covered(self):
        covered = ~np.isnan(self.view.depth.data)
        np.testing.assert_allclose(np.linalg.norm(self.view.normals.data[covered], axis=1), 1.0, atol=1e-9)

    def test_depth_points_on_body(self):
        points = depth_to_points(self.view.depth, self.cam).points
        distance = SdfOracle(self.mesh).unsigned_distance(points)
        self.assertGreaterEqual(np.mean(distance <= 0.5 * self.cam.pixel_size), 0.99)


class TestSceneDirectories(unittest.TestCase):
    """write_scene / load_scene"""

    CONFIG = SceneConfig(render_resolution=32, views=2, mesh_resolution=32, scale_to_cm=120.0,
                         body_kind="capsule")
    SMALL = SceneConfig(render_resolution=16, mesh_resolution=32, body_kind="capsule")

    def test_layout_and_round_trip(self):
        with tempfile.TemporaryDirectory() as tmp:
            out = os.path.join(tmp, "subject")
            directories = write_scene(out, self.CONFIG)
            self.assertEqual(directories, [os.path.join(out, "view_000"), os.path.join(out, "view_001")])
            self.assertTrue(os.path.isfile(os.path.join(out, MESH_FILE)))
            for directory in directories:
                for name in (SCENE_FILE, RGB_FILE, DEPTH_FILE, MASK_FILE):
                    self.assertTrue(os.path.isfile(os.path.join(directory, name)))

            view = load_scene(directories[1])
            self.assertEqual(view.name, "subject_view_001")
            self.assertEqual(view.descriptor.scale_to_cm, 120.0)
            expected = orbit_camera(2.0, 32)
            np.testing.assert_allclose(view.camera.forward, expected.forward, atol=1e-12)
            self.assertEqual(view.camera.pixel_size, expected.pixel_size)
            self.assertEqual(os.path.normpath(view.mesh_path), os.path.normpath(os.path.join(out, MESH_FILE)))
            self.assertTrue(view.mesh().is_watertight())
            self.assertEqual(read_tnsr(os.path.join(directories[1], MASK_FILE)).dtype, np.uint8)

    def test_descriptor_round_trip(self):
        descriptor = SceneDescriptor("a_view_000", orbit_camera(30.0, 16), 90.0)
        with tempfile.TemporaryDirectory() as tmp:
            directory = os.path.join(tmp, "view_000")
            os.makedirs(directory)
            descriptor.write(directory)
            for name in ("../mesh.obj", "rgb.tnsr", "depth.tnsr", "normals.tnsr", "mask.tnsr"):
                open(os.path.join(directory, name), "w").close()
            loaded = SceneDescriptor.from_file(directory)
        self.assertEqual(loaded.name, "a_view_000")
        self.assertEqual(loaded.scale_to_cm, 90.0)
        np.testing.assert_array_equal(loaded.camera.center, descriptor.camera.center)
        np.testing.assert_array_equal(loaded.camera.right, descriptor.camera.right)

    def test_missing_key(self):
        with tempfile.TemporaryDirectory() as tmp:
            header = SceneDescriptor("a", front_camera(8)).to_header()
            del header["pixel_size"]
            with open(os.path.join(tmp, SCENE_FILE), "w") as f:
                f.write("".join(f"{k} = {v}\n" for k, v in header.items()))
            with self.assertRaises(DataError):
                SceneDescriptor.from_file(tmp)

    def test_missing_image(self):
        with tempfile.TemporaryDirectory() as tmp:
            directories = write_scene(os.path.join(tmp, "s"), self.SMALL)
            os.remove(os.path.join(directories[0], RGB_FILE))
            with self.assertRaises(DataError):
                load_scene(directories[0])

    def test_image_size_mismatch(self):
        with tempfile.TemporaryDirectory() as tmp:
            directories = write_scene(os.path.join(tmp, "s"), self.SMALL)
            write_tnsr(os.path.join(directories[0], DEPTH_FILE), np.zeros((8, 8), dtype=np.float32))
            with self.assertRaises(DataError):
                load_scene(directories[0])

    def test_config_validation(self):
        with self.assertRaises(ValueError):
            SceneConfig(views=0)
        with self.assertRaises(ValueError):
            SceneConfig(render_resolution=1)

    def test_shape_jitter_is_seeded(self):
        a = SceneConfig(shape_jitter=0.1, seed=3).shape()
        b = SceneConfig(shape_jitter=0.1, seed=3).shape()
        c = SceneConfig(shape_jitter=0.1, seed=4).shape()
        self.assertEqual(a, b)
        self.assertNotEqual(a, c)
        self.assertEqual(SceneConfig().shape(), BodyShape())


if __name__ == '__main__':
    unittest.main()
