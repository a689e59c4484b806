"""
Ground-truth signed distances against watertight triangle meshes.

Distances are exact point/triangle distances; the sign comes from the
generalized winding number (negative inside, positive outside, points on
the surface count as outside).
"""

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy.spatial import cKDTree
import trimesh
import trimesh.sample

from exceptions import DataError
from file_management import read_obj, write_obj
from log import logging

logger = logging.getLogger(__name__)

SURFACE_EPS = 1e-9
# elements of the (points x triangles) work arrays per chunk
CHUNK_ELEMENTS = 2_000_000
# query points per k-d tree ball query
INDEX_BLOCK = 512
# fractional sample shares are compared at this precision
STRATUM_DECIMALS = 9


@dataclass
class TriMesh:
    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.triangles.size and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise ValueError("Triangle index out of range")

    @classmethod
    def load(cls, path: str) -> "TriMesh":
        vertices, triangles = read_obj(path)
        mesh = cls(vertices, triangles)
        mesh.validate()
        logger.debug(f"Loaded {path}: {len(mesh.vertices)} vertices, {len(mesh.triangles)} triangles")
        return mesh

    def save(self, path: str):
        write_obj(path, self.vertices, self.triangles)

    def validate(self):
        if not np.all(np.isfinite(self.vertices)):
            raise DataError("Mesh has non-finite vertices")
        degenerate = np.flatnonzero(self.areas() <= 0.0)
        if degenerate.size:
            raise DataError(f"Mesh has {degenerate.size} zero-area triangles (first: {degenerate[0]})")

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def corners(self) -> np.ndarray:
        """(T, 3, 3) triangle corner positions."""
        return self.vertices[self.triangles]

    def face_normals(self, unit: bool = True) -> np.ndarray:
        c = self.corners()
        n = np.cross(c[:, 1] - c[:, 0], c[:, 2] - c[:, 0])
        if unit:
            length = np.linalg.norm(n, axis=1, keepdims=True)
            n = np.divide(n, length, out=np.zeros_like(n), where=length > 0)
        return n

    def to_trimesh(self) -> trimesh.Trimesh:
        return trimesh.Trimesh(vertices=self.vertices, faces=self.triangles, process=False)

    def areas(self) -> np.ndarray:
        if self.is_empty:
            return np.zeros(0, dtype=np.float64)
        return np.asarray(self.to_trimesh().area_faces, dtype=np.float64)

    def signed_volume(self) -> float:
        c = self.corners()
        return float(np.einsum("ij,ij->i", c[:, 0], np.cross(c[:, 1], c[:, 2])).sum() / 6.0)

    def edge_use_counts(self) -> np.ndarray:
        """How many triangles share each undirected edge."""
        if self.is_empty:
            return np.zeros(0, dtype=np.int64)
        return np.bincount(self.to_trimesh().edges_unique_inverse)

    def is_watertight(self) -> bool:
        return not self.is_empty and bool(self.to_trimesh().is_watertight)

    def without_degenerate(self) -> "TriMesh":
        keep = self.areas() > 0.0
        return TriMesh(self.vertices, self.triangles[keep])

    def flipped(self) -> "TriMesh":
        return TriMesh(self.vertices, self.triangles[:, ::-1])

    def bounds(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


def sample_surface(mesh: TriMesh, n: int, rng: np.random.Generator,
                   stratified: bool = False) -> Tuple[np.ndarray, np.ndarray]:
    """Area-weighted surface samples and the triangle each came from.

    Stratified sampling gives every triangle floor(n * area share) samples and
    hands the remainder to the largest fractional parts, lower index first on
    ties, so the picks do not change when the mesh is uniformly scaled.
    """
    if mesh.is_empty:
        raise ValueError("Cannot sample an empty mesh")
    if not stratified:
        points, triangles = trimesh.sample.sample_surface(mesh.to_trimesh(), n, seed=rng)
        return np.asarray(points, dtype=np.float64), np.asarray(triangles, dtype=np.int64)
    areas = mesh.areas()
    exact = np.round(n * (areas / areas.sum()), STRATUM_DECIMALS)
    counts = np.floor(exact).astype(np.int64)
    remainder = n - counts.sum()
    if remainder > 0:
        counts[np.lexsort((np.arange(len(counts)), counts - exact))[:remainder]] += 1
    triangles = np.repeat(np.arange(len(counts)), counts)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    c = mesh.corners()[triangles]
    points = ((1.0 - r1)[:, None] * c[:, 0] + (r1 * (1.0 - r2))[:, None] * c[:, 1]
              + (r1 * r2)[:, None] * c[:, 2])
    return points, triangles


def closest_points_on_triangles(p, a, b, c) -> np.ndarray:
    """Closest point on each closed triangle (a, b, c) to p; all inputs broadcast to (..., 3)."""
    p, a, b, c = np.broadcast_arrays(*(np.asarray(x, dtype=np.float64) for x in (p, a, b, c)))

    def dot(x, y):
        return np.einsum("...i,...i->...", x, y)

    ab, ac, ap, bp, cp = b - a, c - a, p - a, p - b, p - c
    d1, d2 = dot(ab, ap), dot(ac, ap)
    d3, d4 = dot(ab, bp), dot(ac, bp)
    d5, d6 = dot(ab, cp), dot(ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        result = a + ab * (vb / denom)[..., None] + ac * (vc / denom)[..., None]
        # Voronoi regions, lowest priority first so the earlier tests win
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        in_bc = (va <= 0) & (d4 - d3 >= 0) & (d5 - d6 >= 0)
        result = np.where(in_bc[..., None], b + (c - b) * t_bc[..., None], result)
        t_ac = d2 / (d2 - d6)
        in_ac = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        result = np.where(in_ac[..., None], a + ac * t_ac[..., None], result)
        result = np.where(((d6 >= 0) & (d5 <= d6))[..., None], c, result)
        t_ab = d1 / (d1 - d3)
        in_ab = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        result = np.where(in_ab[..., None], a + ab * t_ab[..., None], result)
        result = np.where(((d3 >= 0) & (d4 <= d3))[..., None], b, result)
        result = np.where(((d1 <= 0) & (d2 <= 0))[..., None], a, result)
    return result


def point_triangle_distance(p, tri) -> Tuple[float, np.ndarray]:
    """Exact distance from p to the closed triangle ``tri`` (3 x 3) and the closest point."""
    tri = np.asarray(tri, dtype=np.float64).reshape(3, 3)
    if np.linalg.norm(np.cross(tri[1] - tri[0], tri[2] - tri[0])) <= 0.0:
        raise ValueError("Degenerate triangle")
    closest = closest_points_on_triangles(p, tri[0], tri[1], tri[2])
    return float(np.linalg.norm(np.asarray(p, dtype=np.float64) - closest)), closest


def _solid_angles(points: np.ndarray, corners: np.ndarray) -> np.ndarray:
    """Signed solid angle of every triangle seen from every point, (N, T)."""
    a = corners[None, :, 0] - points[:, None]
    b = corners[None, :, 1] - points[:, None]
    c = corners[None, :, 2] - points[:, None]
    la, lb, lc = (np.linalg.norm(x, axis=2) for x in (a, b, c))
    numerator = np.einsum("ntk,ntk->nt", a, np.cross(b, c))
    denominator = (la * lb * lc + np.einsum("ntk,ntk->nt", a, b) * lc
                   + np.einsum("ntk,ntk->nt", b, c) * la + np.einsum("ntk,ntk->nt", c, a) * lb)
    return 2.0 * np.arctan2(numerator, denominator)


class SdfOracle:
    """Signed-distance queries against one immutable mesh.

    With ``use_index`` the triangle centroids go into a k-d tree: the nearest
    centroid's triangle bounds the distance from above and only triangles whose
    centroid lies within that bound plus the largest circumradius are tested.
    """

    def __init__(self, mesh: TriMesh, use_index: bool = True):
        if mesh.is_empty:
            raise ValueError("SdfOracle needs a mesh with at least one triangle")
        self.mesh = mesh
        self.corners = mesh.corners()
        self.use_index = use_index
        self.centroids = self.corners.mean(axis=1)
        radii = np.linalg.norm(self.corners - self.centroids[:, None], axis=2).max(axis=1)
        self.max_radius = float(radii.max())
        self.tree = cKDTree(self.centroids) if use_index else None

    def _chunk(self) -> int:
        return max(1, CHUNK_ELEMENTS // len(self.corners))

    def _closest_brute(self, points: np.ndarray):
        chunk = self._chunk()
        distance = np.empty(len(points))
        closest = np.empty((len(points), 3))
        triangle = np.empty(len(points), dtype=np.int64)
        c = self.corners
        for start in range(0, len(points), chunk):
            block = points[start:start + chunk]
            q = closest_points_on_triangles(block[:, None], c[None, :, 0], c[None, :, 1], c[None, :, 2])
            d = np.linalg.norm(q - block[:, None], axis=2)
            best = np.argmin(d, axis=1)
            rows = np.arange(len(block))
            distance[start:start + chunk] = d[rows, best]
            closest[start:start + chunk] = q[rows, best]
            triangle[start:start + chunk] = best
        return distance, closest, triangle

    def _closest_indexed(self, points: np.ndarray):
        c = self.corners
        _, nearest = self.tree.query(points)
        upper = np.linalg.norm(points - closest_points_on_triangles(
            points, c[nearest, 0], c[nearest, 1], c[nearest, 2]), axis=1)
        distance = np.empty(len(points))
        closest = np.empty((len(points), 3))
        triangle = np.empty(len(points), dtype=np.int64)
        radius = upper + self.max_radius + 1e-12
        for start in range(0, len(points), INDEX_BLOCK):
            stop = min(start + INDEX_BLOCK, len(points))
            pairs = self.tree.query_ball_point(points[start:stop], radius[start:stop])
            counts = np.array([len(x) for x in pairs])
            candidates = np.concatenate([np.asarray(x, dtype=np.int64) for x in pairs])
            owner = np.repeat(np.arange(start, stop), counts)
            q = closest_points_on_triangles(points[owner], c[candidates, 0], c[candidates, 1], c[candidates, 2])
            d = np.linalg.norm(q - points[owner], axis=1)
            order = np.lexsort((candidates, d, owner))
            first = order[np.concatenate([[0], np.cumsum(counts)[:-1]])]
            distance[start:stop] = d[first]
            closest[start:stop] = q[first]
            triangle[start:stop] = candidates[first]
        return distance, closest, triangle

    def closest(self, points) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Unsigned distance, closest surface point and its triangle for each point."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(points) == 0:
            return np.zeros(0), np.zeros((0, 3)), np.zeros(0, dtype=np.int64)
        if self.use_index:
            return self._closest_indexed(points)
        return self._closest_brute(points)

    def unsigned_distance(self, points) -> np.ndarray:
        return self.closest(points)[0]

    def winding_number(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        chunk = self._chunk()
        total = np.empty(len(points))
        for start in range(0, len(points), chunk):
            block = points[start:start + chunk]
            total[start:start + chunk] = _solid_angles(block, self.corners).sum(axis=1)
        return total / (4.0 * np.pi)

    def signed_distance(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        distance = self.unsigned_distance(points)
        inside = np.zeros(len(points), dtype=bool)
        off_surface = distance > SURFACE_EPS
        if np.any(off_surface):
            inside[off_surface] = self.winding_number(points[off_surface]) > 0.5
        logger.debug(f"Labelled {len(points)} points, {int(inside.sum())} inside")
        return np.where(inside, -distance, distance)


def winding_number(mesh: TriMesh, p) -> np.ndarray:
    """Generalized winding number; ~1 inside and ~0 outside an outward-oriented closed mesh."""
    result = SdfOracle(mesh, use_index=False).winding_number(p)
    return result[0] if np.ndim(p) == 1 else result


def signed_distance(mesh: TriMesh, p) -> np.ndarray:
    result = SdfOracle(mesh).signed_distance(p)
    return result[0] if np.ndim(p) == 1 else result
