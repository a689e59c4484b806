"""
Orthographic software rasterizer and scene rendering.
"""

import math
from dataclasses import dataclass

import numpy as np

from geometry import OrthoCamera, ScalarImage, VectorImage, orthographic_project, pixel_to_world
from log import logging
from sampling import MaskLabel, SemanticMask
from scene_generation.body import BodyShape, Part, body_sdf
from sdf_oracle import TriMesh

logger = logging.getLogger(__name__)

BARYCENTRIC_EPS = 1e-9

PART_ALBEDO = {
    Part.TORSO: (0.80, 0.50, 0.40),
    Part.LIMB: (0.70, 0.45, 0.35),
    Part.HEAD: (0.90, 0.72, 0.60),
    Part.HAND: (0.95, 0.76, 0.64),
}
PART_MASK = {Part.TORSO: MaskLabel.BODY, Part.LIMB: MaskLabel.BODY, Part.HEAD: MaskLabel.FACE,
             Part.HAND: MaskLabel.HAND}
AMBIENT = 0.2


@dataclass
class Raster:
    depth: np.ndarray
    normals: np.ndarray
    triangle: np.ndarray

    @property
    def covered(self) -> np.ndarray:
        return self.triangle >= 0


@dataclass
class RenderedView:
    rgb: VectorImage
    depth: ScalarImage
    normals: VectorImage
    mask: SemanticMask


def orbit_camera(angle_deg: float, resolution: int, extent: float = 2.2, distance: float = 2.0,
                 near: float = 0.5, far: float = 3.5) -> OrthoCamera:
    """Camera on a horizontal circle around the origin, looking at it; angle 0 looks along +z."""
    theta = math.radians(angle_deg)
    forward = np.array([math.sin(theta), 0.0, math.cos(theta)])
    up = np.array([0.0, 1.0, 0.0])
    right = np.cross(up, forward)
    return OrthoCamera(-distance * forward, right, up, forward, extent / resolution,
                       resolution, resolution, near, far)


def rasterize(mesh: TriMesh, cam: OrthoCamera) -> Raster:
    """Z-buffered front faces sampled at integer pixel coordinates; ties keep the lower triangle id."""
    h, w = cam.image_h, cam.image_w
    depth = np.full((h, w), np.inf)
    triangle = np.full((h, w), -1, dtype=np.int64)
    if not mesh.is_empty:
        u, v, z = orthographic_project(mesh.vertices, cam)
        front = np.flatnonzero(mesh.face_normals() @ cam.forward < 0)
        for t in front:
            corners = mesh.triangles[t]
            pu, pv, pz = u[corners], v[corners], z[corners]
            area = (pu[1] - pu[0]) * (pv[2] - pv[0]) - (pu[2] - pu[0]) * (pv[1] - pv[0])
            if abs(area) < 1e-12:
                continue
            c0, c1 = max(math.ceil(pu.min()), 0), min(math.floor(pu.max()), w - 1)
            r0, r1 = max(math.ceil(pv.min()), 0), min(math.floor(pv.max()), h - 1)
            if c0 > c1 or r0 > r1:
                continue
            cols, rows = np.meshgrid(np.arange(c0, c1 + 1), np.arange(r0, r1 + 1))
            du, dv = cols - pu[0], rows - pv[0]
            l1 = (du * (pv[2] - pv[0]) - dv * (pu[2] - pu[0])) / area
            l2 = (dv * (pu[1] - pu[0]) - du * (pv[1] - pv[0])) / area
            l0 = 1.0 - l1 - l2
            zz = l0 * pz[0] + l1 * pz[1] + l2 * pz[2]
            hit = ((l0 >= -BARYCENTRIC_EPS) & (l1 >= -BARYCENTRIC_EPS) & (l2 >= -BARYCENTRIC_EPS)
                   & (zz >= cam.near) & (zz <= cam.far) & (zz < depth[rows, cols]))
            depth[rows[hit], cols[hit]] = zz[hit]
            triangle[rows[hit], cols[hit]] = t
    covered = triangle >= 0
    depth[~covered] = np.nan
    normals = np.full((h, w, 3), np.nan)
    if np.any(covered):
        normals[covered] = mesh.face_normals()[triangle[covered]]
    logger.debug(f"Rasterized {int(covered.sum())} of {h * w} pixels")
    return Raster(depth, normals, triangle)


def render_scene(mesh: TriMesh, shape: BodyShape, cam: OrthoCamera) -> RenderedView:
    """RGB with flat head-light shading, depth, face normals and the part-derived semantic mask."""
    raster = rasterize(mesh, cam)
    covered = raster.covered
    rows, cols = np.nonzero(covered)
    _, parts = body_sdf(pixel_to_world(cols, rows, raster.depth[covered], cam), shape)

    labels = np.full(covered.shape, MaskLabel.BACKGROUND, dtype=np.uint8)
    labels[covered] = np.array([PART_MASK[Part(p)] for p in range(len(Part))], dtype=np.uint8)[parts]
    albedo = np.array([PART_ALBEDO[Part(p)] for p in range(len(Part))])[parts]
    shade = np.clip(-(raster.normals[covered] @ cam.forward), 0.0, 1.0)
    rgb = np.zeros(covered.shape + (3,), dtype=np.float32)
    rgb[covered] = albedo * (AMBIENT + (1.0 - AMBIENT) * shade)[:, None]
    if not np.any(labels == MaskLabel.FACE):
        logger.warning("Rendered view has no face pixels")
    return RenderedView(VectorImage(rgb), ScalarImage(raster.depth), VectorImage(raster.normals),
                        SemanticMask(labels))
