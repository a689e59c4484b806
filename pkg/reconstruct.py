"""
Inference: evaluate the learned signed distance on the grid derived from the
input point cloud and extract its zero level set with Marching Cubes.
"""

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from scipy import ndimage
from skimage import measure

from definitions import format_config_value, read_config_file
from exceptions import DataError, NumericError
from file_management import format_header, read_tnsr, write_tnsr
from geometry import GridSpec, OrthoCamera, ScalarImage, VectorImage, depth_to_points, inference_grid
from log import logging
from nets import ReconModel, encode_scene, predict_encoded
from sdf_oracle import TriMesh

logger = logging.getLogger(__name__)


@dataclass
class ReconstructConfig:
    m_resolution: int = 256
    chunk_points: int = 65536
    # 0 means two voxel spacings
    jitter_sigma_norm: float = 0.0
    pad_frac: float = 0.05
    iso: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.m_resolution < 2:
            raise ValueError(f"m_resolution must be >= 2, got {self.m_resolution}")
        if self.chunk_points < 1:
            raise ValueError("chunk_points must be >= 1")
        if self.jitter_sigma_norm < 0 or self.pad_frac < 0:
            raise ValueError("jitter_sigma_norm and pad_frac must be >= 0")


@dataclass
class ScalarField:
    """Signed distances at the cell centres of ``spec``, shaped like its dims."""
    spec: GridSpec
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != tuple(self.spec.dims):
            raise ValueError(f"Field shape {self.values.shape} does not match grid dims {self.spec.dims}")
        if not np.all(np.isfinite(self.values)):
            raise NumericError(f"Field has {int((~np.isfinite(self.values)).sum())} non-finite values")

    def save(self, path: str):
        """TNSR values plus a ``.env`` sidecar holding the grid."""
        write_tnsr(path, self.values.astype(np.float32))
        sidecar = os.path.splitext(path)[0] + ".env"
        with open(sidecar, "w") as f:
            f.write(format_header({"origin": format_config_value(tuple(self.spec.origin.tolist())),
                                   "spacing": repr(self.spec.spacing),
                                   "dims": format_config_value(tuple(self.spec.dims))}))

    @classmethod
    def load(cls, path: str) -> "ScalarField":
        grid = read_config_file(os.path.splitext(path)[0] + ".env")
        try:
            spec = GridSpec([float(x) for x in grid["origin"].split(",")], float(grid["spacing"]),
                            tuple(int(x) for x in grid["dims"].split(",")))
        except (KeyError, ValueError) as e:
            raise DataError(f"Bad grid sidecar for {path}: {e}")
        return cls(spec, read_tnsr(path))


def evaluate_field(model: ReconModel, rgb: VectorImage, normals: Optional[VectorImage], depth: ScalarImage,
                   cam: OrthoCamera, M: int, cfg: Optional[ReconstructConfig] = None) -> ScalarField:
    """Run the model at every centre of the inference grid, chunk by chunk."""
    cfg = cfg or ReconstructConfig(m_resolution=M)
    cloud = depth_to_points(depth, cam)
    if len(cloud) == 0:
        raise ValueError("Depth image has no valid pixels")
    jitter = cfg.jitter_sigma_norm or 2.0 * model.config.voxel_spacing_norm
    pad = cfg.pad_frac * float(np.ptp(cloud.points, axis=0).max())
    grid = inference_grid(cloud, M, jitter, pad, cfg.seed)
    values = np.empty(grid.count, dtype=np.float64)
    model.eval()
    with torch.no_grad():
        encoding = encode_scene(model, rgb, depth, cam, normals)
        for start in range(0, grid.count, cfg.chunk_points):
            flat = np.arange(start, min(start + cfg.chunk_points, grid.count))
            index = np.stack(np.unravel_index(flat, grid.dims), axis=1)
            centers = grid.origin + (index + 0.5) * grid.spacing
            values[flat] = predict_encoded(model, encoding, centers).double().numpy()
    logger.info(f"Evaluated field on {grid.count} points (M={M})")
    return ScalarField(grid, values.reshape(grid.dims))


def _gradient_at(field: ScalarField, points: np.ndarray) -> np.ndarray:
    gradient = np.gradient(field.values, field.spec.spacing)
    coords = ((points - field.spec.origin) / field.spec.spacing - 0.5).T
    return np.stack([ndimage.map_coordinates(g, coords, order=1, mode="nearest") for g in gradient], axis=1)


def marching_cubes(field: ScalarField, iso: float = 0.0) -> TriMesh:
    """Iso-surface with normals pointing toward larger field values.

    Samples equal to ``iso`` count as above it. No sign change gives an empty mesh.
    """
    values = field.values
    if not (np.any(values < iso) and np.any(values >= iso)):
        logger.warning("Field has no sign change; returning an empty mesh")
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    nudged = np.where(values == iso, np.nextafter(iso, np.inf), values)
    verts, faces, _, _ = measure.marching_cubes(nudged, level=iso, method="lewiner", allow_degenerate=False)
    vertices = field.spec.origin + (verts.astype(np.float64) + 0.5) * field.spec.spacing
    mesh = TriMesh(vertices, faces.astype(np.int64)).without_degenerate()
    if mesh.is_empty:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))

    # one orientation for the whole mesh, decided by a vote against the field gradient
    centroids = mesh.corners().mean(axis=1)
    agreement = np.einsum("ij,ij->i", mesh.face_normals(), _gradient_at(field, centroids))
    if np.sum(np.sign(agreement)) < 0:
        mesh = mesh.flipped()

    used = np.unique(mesh.triangles)
    remap = np.full(len(mesh.vertices), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    mesh = TriMesh(mesh.vertices[used], remap[mesh.triangles])
    logger.info(f"Marching cubes: {len(mesh.vertices)} vertices, {len(mesh.triangles)} triangles")
    return mesh


def reconstruct(model: ReconModel, rgb: VectorImage, normals: Optional[VectorImage], depth: ScalarImage,
                cam: OrthoCamera, M: int, cfg: Optional[ReconstructConfig] = None,
                out_path: Optional[str] = None, field_path: Optional[str] = None) -> TriMesh:
    cfg = cfg or ReconstructConfig(m_resolution=M)
    field = evaluate_field(model, rgb, normals, depth, cam, M, cfg)
    if field_path:
        field.save(field_path)
    mesh = marching_cubes(field, cfg.iso)
    if out_path:
        mesh.save(out_path)
    return mesh
