"""
Procedural articulated "body": capsule torso and limbs, a head sphere and
hand spheres joined by a smooth union, in the normalized [-1, 1]^3 frame
(y up, facing -z).
"""

import math
from dataclasses import dataclass, fields
from enum import IntEnum
from typing import Callable, List, Tuple

import numpy as np

from geometry import GridSpec
from log import logging
from reconstruct import ScalarField, marching_cubes
from scene_generation.primitives import capsule_sdf, smooth_union, sphere_sdf
from sdf_oracle import TriMesh

logger = logging.getLogger(__name__)


class Part(IntEnum):
    TORSO = 0
    LIMB = 1
    HEAD = 2
    HAND = 3


@dataclass
class BodyShape:
    kind: str = "body"
    torso_radius: float = 0.16
    torso_length: float = 0.45
    head_radius: float = 0.12
    limb_radius: float = 0.055
    arm_length: float = 0.5
    leg_length: float = 0.62
    hand_radius: float = 0.07
    arm_spread_deg: float = 55.0
    leg_spread_deg: float = 10.0
    capsule_radius: float = 0.25
    capsule_half_length: float = 0.35
    blend: float = 0.03

    def __post_init__(self):
        if self.kind not in ("body", "capsule"):
            raise ValueError(f"Unknown body kind: {self.kind}")
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "kind":
                continue
            if not math.isfinite(value):
                raise ValueError(f"{f.name} must be finite")
            if f.name.endswith("_deg"):
                if not 0.0 <= value <= 180.0:
                    raise ValueError(f"{f.name} must be within [0, 180], got {value}")
            elif f.name == "blend":
                if value < 0:
                    raise ValueError("blend must be >= 0")
            elif not value > 0:
                raise ValueError(f"{f.name} must be > 0, got {value}")

    def components(self) -> List[Tuple[Part, Callable[[np.ndarray], np.ndarray]]]:
        if self.kind == "capsule":
            a, b = (0.0, -self.capsule_half_length, 0.0), (0.0, self.capsule_half_length, 0.0)
            return [(Part.TORSO, lambda p: capsule_sdf(p, a, b, self.capsule_radius))]

        hip_y = -0.2
        shoulder_y = hip_y + self.torso_length
        head = np.array([0.0, shoulder_y + 0.6 * self.torso_radius + self.head_radius, 0.0])
        parts = [
            (Part.TORSO, lambda p: capsule_sdf(p, (0.0, hip_y, 0.0), (0.0, shoulder_y, 0.0), self.torso_radius)),
            (Part.HEAD, lambda p: sphere_sdf(p, head, self.head_radius)),
        ]
        arm = math.radians(self.arm_spread_deg)
        leg = math.radians(self.leg_spread_deg)
        for side in (-1.0, 1.0):
            shoulder = np.array([side * 0.8 * self.torso_radius, shoulder_y - 0.02, 0.0])
            arm_dir = np.array([side * math.sin(arm), -math.cos(arm), 0.0])
            wrist = shoulder + self.arm_length * arm_dir
            hand = wrist + 0.6 * self.hand_radius * arm_dir
            hip = np.array([side * 0.5 * self.torso_radius, hip_y, 0.0])
            foot = hip + self.leg_length * np.array([side * math.sin(leg), -math.cos(leg), 0.0])
            parts += [
                (Part.LIMB, lambda p, s=shoulder, w=wrist: capsule_sdf(p, s, w, self.limb_radius)),
                (Part.HAND, lambda p, c=hand: sphere_sdf(p, c, self.hand_radius)),
                (Part.LIMB, lambda p, h=hip, f=foot: capsule_sdf(p, h, f, 1.3 * self.limb_radius)),
            ]
        return parts


def body_sdf(points, shape: BodyShape) -> Tuple[np.ndarray, np.ndarray]:
    """Blended signed distance and the part whose primitive is nearest."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    components = shape.components()
    distances = np.stack([sdf(points) for _, sdf in components])
    blended = distances[0]
    for d in distances[1:]:
        blended = smooth_union(blended, d, shape.blend)
    labels = np.array([part for part, _ in components], dtype=np.uint8)
    return blended, labels[np.argmin(distances, axis=0)]


def build_body_mesh(shape: BodyShape, resolution: int = 96) -> TriMesh:
    """Watertight mesh of the body's zero level set sampled on a grid over [-1, 1]^3."""
    if resolution < 8:
        raise ValueError(f"Body mesh resolution must be >= 8, got {resolution}")
    spec = GridSpec(np.full(3, -1.0), 2.0 / resolution, (resolution,) * 3)
    values, _ = body_sdf(spec.cell_centers(), shape)
    mesh = marching_cubes(ScalarField(spec, values.reshape(spec.dims)))
    logger.info(f"Body mesh ({shape.kind}): {len(mesh.vertices)} vertices, {len(mesh.triangles)} triangles")
    return mesh
