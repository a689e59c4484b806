"""
Analytic signed distances (negative inside) and closed reference meshes.
"""

import numpy as np
import trimesh
import trimesh.creation

from sdf_oracle import TriMesh


def sphere_sdf(points, center, radius):
    return np.linalg.norm(np.asarray(points, dtype=np.float64) - np.asarray(center, dtype=np.float64),
                          axis=-1) - radius


def capsule_sdf(points, a, b, radius):
    """Distance to the segment ab minus the radius."""
    a = np.asarray(a, dtype=np.float64)
    ba = np.asarray(b, dtype=np.float64) - a
    pa = np.asarray(points, dtype=np.float64) - a
    h = np.clip(pa @ ba / (ba @ ba), 0.0, 1.0)
    return np.linalg.norm(pa - h[..., None] * ba, axis=-1) - radius


def box_sdf(points, center, half_extents):
    q = np.abs(np.asarray(points, dtype=np.float64) - np.asarray(center, dtype=np.float64)) \
        - np.asarray(half_extents, dtype=np.float64)
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(q.max(axis=-1), 0.0)
    return outside + inside


def smooth_union(d1, d2, k):
    """Polynomial smooth minimum; k = 0 is the plain union."""
    if k <= 0:
        return np.minimum(d1, d2)
    h = np.clip(0.5 + 0.5 * (d2 - d1) / k, 0.0, 1.0)
    return d2 * (1.0 - h) + d1 * h - k * h * (1.0 - h)


def icosphere(subdivisions: int = 3, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Subdivided icosahedron with 20 * 4**subdivisions outward-facing triangles."""
    if subdivisions < 0 or radius <= 0:
        raise ValueError("icosphere needs subdivisions >= 0 and radius > 0")
    sphere = trimesh.creation.icosphere(subdivisions=subdivisions, radius=radius)
    return TriMesh(np.asarray(sphere.vertices) + np.asarray(center, dtype=np.float64), sphere.faces)


def box_mesh(extents=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Closed 12-triangle box."""
    box = trimesh.creation.box(extents=np.asarray(extents, dtype=np.float64))
    return TriMesh(np.asarray(box.vertices) + np.asarray(center, dtype=np.float64), box.faces)


def capsule_mesh(radius: float, half_length: float, count: int = 32) -> TriMesh:
    """Capsule along y whose axis segment runs from -half_length to half_length."""
    if radius <= 0 or half_length < 0 or count < 3:
        raise ValueError("capsule needs radius > 0, half_length >= 0 and count >= 3")
    capsule = trimesh.creation.capsule(height=2.0 * half_length, radius=radius, count=[count, count])
    # cyclic axis permutation: z becomes y, winding unchanged
    return TriMesh(np.asarray(capsule.vertices)[:, [1, 2, 0]], capsule.faces)
