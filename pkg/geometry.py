"""
Camera model and image/voxel geometry.

Pixel (u, v) is column u, row v; it samples the image at the continuous
coordinate (u, v). A world point p maps to

    u = dot(p - center, right) / pixel_size + w / 2
    v = h / 2 - dot(p - center, up) / pixel_size
    z = dot(p - center, forward)

and depth_to_points is the exact inverse for valid pixels.
"""

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from log import logging

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class OrthoCamera:
    """Orthographic camera; right/up/forward form a right-handed orthonormal basis."""
    center: np.ndarray
    right: np.ndarray
    up: np.ndarray
    forward: np.ndarray
    pixel_size: float
    image_w: int
    image_h: int
    near: float
    far: float

    def __post_init__(self):
        for name in ("center", "right", "up", "forward"):
            value = np.asarray(getattr(self, name), dtype=np.float64).reshape(3)
            if not np.all(np.isfinite(value)):
                raise ValueError(f"Camera {name} must be finite")
            object.__setattr__(self, name, value)
        basis = np.stack([self.right, self.up, self.forward])
        if not np.allclose(basis @ basis.T, np.eye(3), atol=1e-9):
            raise ValueError("Camera right/up/forward must be orthonormal")
        if not self.pixel_size > 0:
            raise ValueError(f"pixel_size must be > 0, got {self.pixel_size}")
        if int(self.image_w) < 1 or int(self.image_h) < 1:
            raise ValueError("Camera image dimensions must be >= 1")
        if not self.near < self.far:
            raise ValueError(f"near ({self.near}) must be < far ({self.far})")
        object.__setattr__(self, "image_w", int(self.image_w))
        object.__setattr__(self, "image_h", int(self.image_h))
        object.__setattr__(self, "pixel_size", float(self.pixel_size))
        object.__setattr__(self, "near", float(self.near))
        object.__setattr__(self, "far", float(self.far))

    def translated(self, offset) -> "OrthoCamera":
        return OrthoCamera(self.center + np.asarray(offset, dtype=np.float64), self.right, self.up,
                           self.forward, self.pixel_size, self.image_w, self.image_h, self.near, self.far)

    def resized(self, width: int, height: int) -> "OrthoCamera":
        """Same view footprint sampled at another image size."""
        return OrthoCamera(self.center, self.right, self.up, self.forward, self.pixel_size * self.image_w / width,
                           width, height, self.near, self.far)

    def normalized_depth(self, z: np.ndarray) -> np.ndarray:
        """Camera depth mapped linearly from [near, far] to [-1, 1]."""
        return 2.0 * (np.asarray(z, dtype=np.float64) - self.near) / (self.far - self.near) - 1.0


@dataclass
class ScalarImage:
    """Dense (height, width) grid; NaN marks invalid pixels."""
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"ScalarImage expects a 2D array, got shape {self.data.shape}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


@dataclass
class VectorImage:
    """Dense (height, width, channels) grid, channel-interleaved."""
    data: np.ndarray

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3 or self.data.shape[2] < 1:
            raise ValueError(f"VectorImage expects (h, w, c) with c >= 1, got {self.data.shape}")

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


@dataclass
class PointCloud:
    points: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(self.points)):
            raise ValueError("PointCloud coordinates must be finite")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(self.normals) != len(self.points):
                raise ValueError("PointCloud normals must match points")

    def __len__(self):
        return len(self.points)


@dataclass
class GridSpec:
    """Cell-centred grid: cell (i, j, k) sits at origin + (index + 0.5) * spacing."""
    origin: np.ndarray
    spacing: float
    dims: Tuple[int, int, int] = field(default=(2, 2, 2))

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.spacing = float(self.spacing)
        self.dims = tuple(int(n) for n in self.dims)
        if not self.spacing > 0:
            raise ValueError(f"Grid spacing must be > 0, got {self.spacing}")
        if len(self.dims) != 3 or min(self.dims) < 2:
            raise ValueError(f"Grid dims must be three values >= 2, got {self.dims}")

    @property
    def count(self) -> int:
        return int(np.prod(self.dims))

    def cell_centers(self) -> np.ndarray:
        """All cell centres in C order (x index slowest)."""
        axes = [self.origin[a] + (np.arange(n) + 0.5) * self.spacing for a, n in enumerate(self.dims)]
        gx, gy, gz = np.meshgrid(*axes, indexing="ij")
        return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)


def pixel_to_world(u, v, depth, cam: OrthoCamera) -> np.ndarray:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    a = (u - cam.image_w / 2.0) * cam.pixel_size
    b = (cam.image_h / 2.0 - v) * cam.pixel_size
    return (cam.center + a[..., None] * cam.right + b[..., None] * cam.up
            + depth[..., None] * cam.forward)


def valid_depth_mask(depth: ScalarImage, cam: OrthoCamera) -> np.ndarray:
    d = depth.data
    with np.errstate(invalid="ignore"):
        return np.isfinite(d) & (d >= cam.near) & (d <= cam.far)


def _check_dims(image, cam: OrthoCamera):
    if image.width != cam.image_w or image.height != cam.image_h:
        raise ValueError(f"Image is {image.width}x{image.height} but camera expects "
                         f"{cam.image_w}x{cam.image_h}")


def backproject_image(depth: ScalarImage, cam: OrthoCamera) -> np.ndarray:
    """Per-pixel world positions (h, w, 3); NaN where the depth is invalid."""
    _check_dims(depth, cam)
    v, u = np.mgrid[0:depth.height, 0:depth.width]
    points = pixel_to_world(u, v, np.nan_to_num(depth.data), cam)
    points[~valid_depth_mask(depth, cam)] = np.nan
    return points


def depth_to_points(depth: ScalarImage, cam: OrthoCamera) -> PointCloud:
    _check_dims(depth, cam)
    valid = valid_depth_mask(depth, cam)
    v, u = np.nonzero(valid)
    points = pixel_to_world(u, v, depth.data[valid], cam)
    logger.debug(f"Back-projected {len(points)} of {valid.size} pixels")
    return PointCloud(points)


def orthographic_project(p, cam: OrthoCamera) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Continuous pixel coordinates and camera depth; out-of-frustum values are returned as-is."""
    rel = np.asarray(p, dtype=np.float64) - cam.center
    u = rel @ cam.right / cam.pixel_size + cam.image_w / 2.0
    v = cam.image_h / 2.0 - rel @ cam.up / cam.pixel_size
    z = rel @ cam.forward
    return u, v, z


def normals_from_depth(depth: ScalarImage, cam: OrthoCamera) -> VectorImage:
    """Camera-facing unit normals from neighbour cross products; NaN where undefined."""
    points = backproject_image(depth, cam)
    h, w = depth.height, depth.width
    dx = np.full_like(points, np.nan)
    dy = np.full_like(points, np.nan)
    if w >= 2:
        dx[:, 1:-1] = points[:, 2:] - points[:, :-2]
        dx[:, 0] = points[:, 1] - points[:, 0]
        dx[:, -1] = points[:, -1] - points[:, -2]
    if h >= 2:
        # rows grow downward, so the upward tangent is the negated row difference
        dy[1:-1] = points[:-2] - points[2:]
        dy[0] = points[0] - points[1]
        dy[-1] = points[-2] - points[-1]
    normals = np.cross(dx, dy)
    with np.errstate(invalid="ignore", divide="ignore"):
        length = np.linalg.norm(normals, axis=2, keepdims=True)
        normals = normals / length
        facing_away = (normals @ cam.forward) > 0
    normals[facing_away] *= -1.0
    undefined = ~np.isfinite(normals).all(axis=2) | ~np.isfinite(points).all(axis=2)
    normals[undefined] = np.nan
    return VectorImage(normals)


def bilinear_weights(u, v, width: int, height: int) -> Tuple[np.ndarray, np.ndarray]:
    """Flat pixel indices (N, 4) and weights (N, 4) of the four blended neighbours.

    Coordinates are clamped to the valid border first.
    """
    u = np.clip(np.asarray(u, dtype=np.float64).reshape(-1), 0.0, width - 1)
    v = np.clip(np.asarray(v, dtype=np.float64).reshape(-1), 0.0, height - 1)
    u0 = np.minimum(np.floor(u), max(width - 2, 0))
    v0 = np.minimum(np.floor(v), max(height - 2, 0))
    du, dv = u - u0, v - v0
    u0 = u0.astype(np.int64)
    v0 = v0.astype(np.int64)
    u1 = np.minimum(u0 + 1, width - 1)
    v1 = np.minimum(v0 + 1, height - 1)
    index = np.stack([v0 * width + u0, v0 * width + u1, v1 * width + u0, v1 * width + u1], axis=1)
    weight = np.stack([(1 - du) * (1 - dv), du * (1 - dv), (1 - du) * dv, du * dv], axis=1)
    return index, weight


def bilinear_sample(img: VectorImage, u, v) -> np.ndarray:
    """Bilinear blend at (u, v); scalar coordinates give one feature vector, arrays give (N, C)."""
    scalar = np.ndim(u) == 0
    index, weight = bilinear_weights(u, v, img.width, img.height)
    flat = np.asarray(img.data, dtype=np.float64).reshape(-1, img.channels)
    out = np.einsum("nk,nkc->nc", weight, flat[index])
    return out[0] if scalar else out


def voxelize(pc: PointCloud, spacing: float, origin) -> np.ndarray:
    """Unique occupied cells floor((p - origin) / spacing), lexicographically sorted."""
    if not spacing > 0:
        raise ValueError(f"Voxel spacing must be > 0, got {spacing}")
    if len(pc) == 0:
        return np.zeros((0, 3), dtype=np.int64)
    cells = np.floor((pc.points - np.asarray(origin, dtype=np.float64)) / spacing).astype(np.int64)
    return np.unique(cells, axis=0)


def inference_grid(pc: PointCloud, M: int, jitter_sigma: float, pad: float, seed: int) -> GridSpec:
    """Isotropic grid over the jitter-augmented, padded bounding box with about M^3 cells."""
    if len(pc) == 0:
        raise ValueError("inference_grid needs a non-empty point cloud")
    if M < 2:
        raise ValueError(f"M must be >= 2, got {M}")
    cloud = pc.points
    if jitter_sigma > 0:
        rng = np.random.default_rng(seed)
        cloud = np.vstack([cloud, cloud + rng.normal(0.0, jitter_sigma, cloud.shape)])
    lo = cloud.min(axis=0) - pad
    hi = cloud.max(axis=0) + pad
    extent = hi - lo
    if np.any(extent <= 0):
        raise ValueError(f"Degenerate bounding box with extents {extent.tolist()}")
    m = np.cbrt(float(M) ** 3 / np.prod(extent))
    dims = np.maximum(2, np.rint(m * extent)).astype(np.int64)
    spacing = 1.0 / m
    origin = (lo + hi) / 2.0 - dims * spacing / 2.0
    logger.info(f"Inference grid dims {tuple(dims.tolist())} spacing {spacing:.6g} (M={M})")
    return GridSpec(origin, spacing, tuple(dims.tolist()))
