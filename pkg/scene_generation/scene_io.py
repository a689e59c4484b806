"""
Scene directories: configuration of the procedural generator, the
``scene.env`` descriptor and the images stored next to it.

Layout written by ``write_scene``::

    <out>/mesh.obj
    <out>/view_000/scene.env
    <out>/view_000/rgb.tnsr depth.tnsr normals.tnsr mask.tnsr
    <out>/view_001/...
"""

import os
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from definitions import (DEPTH_FILE, MASK_FILE, MESH_FILE, NORMALS_FILE, RGB_FILE, SCENE_FILE,
                         format_config_value, read_config_file)
from exceptions import DataError
from file_management import checkdir, format_header, read_tnsr, require_file, write_tnsr
from geometry import OrthoCamera, ScalarImage, VectorImage
from log import logging
from sampling import SemanticMask
from scene_generation.body import BodyShape, build_body_mesh
from scene_generation.render import orbit_camera, render_scene
from sdf_oracle import TriMesh

logger = logging.getLogger(__name__)

SHAPE_JITTER_FIELDS = ("torso_radius", "torso_length", "head_radius", "limb_radius", "arm_length",
                       "leg_length", "hand_radius")


@dataclass
class SceneConfig:
    render_resolution: int = 512
    views: int = 1
    angle_step_deg: float = 2.0
    start_angle_deg: float = 0.0
    camera_extent: float = 2.2
    scale_to_cm: float = 100.0
    mesh_resolution: int = 96
    body_kind: str = "body"
    arm_spread_deg: float = 55.0
    # relative std of the seeded per-scene variation of radii and lengths
    shape_jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.render_resolution < 2:
            raise ValueError(f"render_resolution must be >= 2, got {self.render_resolution}")
        if self.views < 1:
            raise ValueError(f"views must be >= 1, got {self.views}")
        if not self.scale_to_cm > 0 or not self.camera_extent > 0:
            raise ValueError("scale_to_cm and camera_extent must be > 0")
        if not 0.0 <= self.shape_jitter < 0.5:
            raise ValueError(f"shape_jitter must be within [0, 0.5), got {self.shape_jitter}")

    def shape(self) -> BodyShape:
        shape = BodyShape(kind=self.body_kind, arm_spread_deg=self.arm_spread_deg)
        if self.shape_jitter > 0:
            rng = np.random.default_rng(self.seed)
            factors = 1.0 + self.shape_jitter * rng.standard_normal(len(SHAPE_JITTER_FIELDS))
            values = {name: getattr(shape, name) * float(np.clip(f, 0.5, 1.5))
                      for name, f in zip(SHAPE_JITTER_FIELDS, factors)}
            shape = BodyShape(kind=self.body_kind, arm_spread_deg=self.arm_spread_deg, **values)
        return shape


def _triple(value: str, key: str) -> np.ndarray:
    parts = value.split(",")
    if len(parts) != 3:
        raise DataError(f"{key} needs three comma-separated values, got {value!r}")
    return np.array([float(p) for p in parts])


@dataclass
class SceneDescriptor:
    """Contents of ``scene.env``; file paths are relative to the scene directory."""
    name: str
    camera: OrthoCamera
    scale_to_cm: float = 100.0
    mesh: str = os.path.join("..", MESH_FILE)
    rgb: str = RGB_FILE
    depth: str = DEPTH_FILE
    normals: str = NORMALS_FILE
    mask: str = MASK_FILE
    directory: Optional[str] = field(default=None, compare=False)

    @property
    def resolution(self) -> int:
        return self.camera.image_w

    def path(self, relative: str) -> str:
        return os.path.normpath(os.path.join(self.directory or ".", relative))

    def to_header(self) -> dict:
        cam = self.camera
        return {
            "name": self.name,
            "mesh": self.mesh, "rgb": self.rgb, "depth": self.depth, "normals": self.normals, "mask": self.mask,
            "scale_to_cm": format_config_value(float(self.scale_to_cm)),
            "render_resolution": f"{cam.image_w},{cam.image_h}",
            "camera_center": format_config_value(tuple(cam.center.tolist())),
            "camera_right": format_config_value(tuple(cam.right.tolist())),
            "camera_up": format_config_value(tuple(cam.up.tolist())),
            "camera_forward": format_config_value(tuple(cam.forward.tolist())),
            "pixel_size": format_config_value(cam.pixel_size),
            "near": format_config_value(cam.near),
            "far": format_config_value(cam.far),
        }

    def write(self, directory: str):
        with open(os.path.join(directory, SCENE_FILE), "w") as f:
            f.write(format_header(self.to_header()))

    @classmethod
    def from_file(cls, directory: str) -> "SceneDescriptor":
        values = read_config_file(os.path.join(directory, SCENE_FILE))
        try:
            width, height = (int(x) for x in values["render_resolution"].split(","))
            camera = OrthoCamera(_triple(values["camera_center"], "camera_center"),
                                 _triple(values["camera_right"], "camera_right"),
                                 _triple(values["camera_up"], "camera_up"),
                                 _triple(values["camera_forward"], "camera_forward"),
                                 float(values["pixel_size"]), width, height,
                                 float(values["near"]), float(values["far"]))
            descriptor = cls(values["name"], camera, float(values["scale_to_cm"]), values["mesh"],
                             values["rgb"], values["depth"], values["normals"], values["mask"],
                             directory=directory)
        except KeyError as e:
            raise DataError(f"{os.path.join(directory, SCENE_FILE)}: missing key {e}")
        except ValueError as e:
            raise DataError(f"{os.path.join(directory, SCENE_FILE)}: {e}")
        for relative in (descriptor.mesh, descriptor.rgb, descriptor.depth, descriptor.normals, descriptor.mask):
            require_file(descriptor.path(relative))
        return descriptor


@dataclass
class SceneView:
    """One loaded view: descriptor plus its images."""
    descriptor: SceneDescriptor
    rgb: VectorImage
    depth: ScalarImage
    normals: VectorImage
    mask: SemanticMask

    @property
    def name(self) -> str:
        return self.descriptor.name

    @property
    def camera(self) -> OrthoCamera:
        return self.descriptor.camera

    @property
    def mesh_path(self) -> str:
        return self.descriptor.path(self.descriptor.mesh)

    def mesh(self) -> TriMesh:
        return TriMesh.load(self.mesh_path)


def load_scene(directory: str) -> SceneView:
    descriptor = SceneDescriptor.from_file(directory)
    cam = descriptor.camera
    rgb = VectorImage(read_tnsr(descriptor.path(descriptor.rgb)))
    depth = ScalarImage(read_tnsr(descriptor.path(descriptor.depth)))
    normals = VectorImage(read_tnsr(descriptor.path(descriptor.normals)))
    mask = SemanticMask(read_tnsr(descriptor.path(descriptor.mask)))
    for label, image in (("rgb", rgb), ("depth", depth), ("normals", normals), ("mask", mask)):
        if (image.width, image.height) != (cam.image_w, cam.image_h):
            raise DataError(f"{directory}: {label} is {image.width}x{image.height}, "
                            f"camera expects {cam.image_w}x{cam.image_h}")
    return SceneView(descriptor, rgb, depth, normals, mask)


def write_scene(out_dir: str, cfg: SceneConfig) -> List[str]:
    """Build the body mesh once and render ``cfg.views`` orbit views; returns the view directories."""
    checkdir(out_dir)
    shape = cfg.shape()
    mesh = build_body_mesh(shape, cfg.mesh_resolution)
    if mesh.is_empty or not mesh.is_watertight():
        raise DataError("Body mesh is not a closed surface; check the shape parameters")
    mesh.save(os.path.join(out_dir, MESH_FILE))

    prefix = os.path.basename(os.path.abspath(out_dir))
    directories = []
    for view in range(cfg.views):
        angle = cfg.start_angle_deg + view * cfg.angle_step_deg
        cam = orbit_camera(angle, cfg.render_resolution, extent=cfg.camera_extent)
        rendered = render_scene(mesh, shape, cam)
        directory = os.path.join(out_dir, f"view_{view:03d}")
        checkdir(directory)
        write_tnsr(os.path.join(directory, RGB_FILE), rendered.rgb.data.astype(np.float32))
        write_tnsr(os.path.join(directory, DEPTH_FILE), rendered.depth.data.astype(np.float32))
        write_tnsr(os.path.join(directory, NORMALS_FILE), rendered.normals.data.astype(np.float32))
        write_tnsr(os.path.join(directory, MASK_FILE), rendered.mask.labels)
        SceneDescriptor(f"{prefix}_view_{view:03d}", cam, cfg.scale_to_cm).write(directory)
        logger.info(f"Rendered view {view} at {angle:g} deg into {directory}")
        directories.append(directory)
    return directories
