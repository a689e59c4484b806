"""
Labelled training points: baseline surface/uniform sampling, semantic
augmentation around face and hand regions, and depth-supervision points.
"""

import os
from dataclasses import dataclass
from enum import IntEnum
from typing import Optional

import numpy as np

from file_management import read_tnsr, write_tnsr
from geometry import OrthoCamera, PointCloud, ScalarImage, depth_to_points, orthographic_project
from log import logging
from sdf_oracle import SdfOracle, TriMesh, sample_surface

logger = logging.getLogger(__name__)


class Tag(IntEnum):
    BODY = 0
    FACE = 1
    HAND = 2
    DEPTH_SURFACE = 3


class MaskLabel(IntEnum):
    BACKGROUND = 0
    BODY = 1
    FACE = 2
    HAND = 3


@dataclass
class SamplingConfig:
    x_b_count: int = 48000
    sigma_lr_norm: float = 0.05
    sigma_hr_norm: float = 0.007
    uniform_frac: float = 0.0625
    bbox_pad_frac: float = 0.05
    n_k_steps: int = 2
    n_pc_count: int = 15000
    x_t_target: int = 0
    use_semantic_sampling: bool = True
    # perturbation centres of the augmentation: "surface" (closest surface point) or "point"
    semantic_anchor: str = "surface"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.uniform_frac <= 1.0:
            raise ValueError(f"uniform_frac must be in [0, 1], got {self.uniform_frac}")
        if self.sigma_lr_norm < 0 or self.sigma_hr_norm < 0:
            raise ValueError("Sampling sigmas must be >= 0")
        if min(self.x_b_count, self.n_k_steps, self.n_pc_count, self.x_t_target) < 0:
            raise ValueError("Sampling counts must be >= 0")
        if self.semantic_anchor not in ("surface", "point"):
            raise ValueError(f"semantic_anchor must be surface or point, got {self.semantic_anchor}")


def _as_float32(points: np.ndarray) -> np.ndarray:
    # labels are computed on the coordinates that get stored
    return np.asarray(points, dtype=np.float32).astype(np.float64)


@dataclass
class LabeledPointSet:
    points: np.ndarray
    sdf: np.ndarray
    tag: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.sdf = np.asarray(self.sdf, dtype=np.float64).reshape(-1)
        self.tag = np.asarray(self.tag, dtype=np.uint8).reshape(-1)
        if not len(self.points) == len(self.sdf) == len(self.tag):
            raise ValueError("LabeledPointSet fields must have equal lengths")
        if np.any(self.sdf[self.tag == Tag.DEPTH_SURFACE] != 0.0):
            raise ValueError("depth_surface points must carry sdf = 0")

    def __len__(self):
        return len(self.points)

    @classmethod
    def empty(cls) -> "LabeledPointSet":
        return cls(np.zeros((0, 3)), np.zeros(0), np.zeros(0, dtype=np.uint8))

    @classmethod
    def concat(cls, *sets: "LabeledPointSet") -> "LabeledPointSet":
        return cls(np.vstack([s.points for s in sets]), np.concatenate([s.sdf for s in sets]),
                   np.concatenate([s.tag for s in sets]))

    def subset(self, index) -> "LabeledPointSet":
        return LabeledPointSet(self.points[index], self.sdf[index], self.tag[index])

    def save(self, directory: str, stem: str):
        write_tnsr(os.path.join(directory, f"{stem}_points.tnsr"), self.points.astype(np.float32))
        write_tnsr(os.path.join(directory, f"{stem}_sdf.tnsr"), self.sdf.astype(np.float32))
        write_tnsr(os.path.join(directory, f"{stem}_tag.tnsr"), self.tag)

    @classmethod
    def load(cls, directory: str, stem: str) -> "LabeledPointSet":
        return cls(read_tnsr(os.path.join(directory, f"{stem}_points.tnsr")),
                   read_tnsr(os.path.join(directory, f"{stem}_sdf.tnsr")),
                   read_tnsr(os.path.join(directory, f"{stem}_tag.tnsr")))


@dataclass
class SemanticMask:
    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.uint8)
        if self.labels.ndim != 2:
            raise ValueError(f"SemanticMask expects a 2D label array, got {self.labels.shape}")
        if self.labels.size and self.labels.max() > max(MaskLabel):
            raise ValueError(f"Unknown mask label {self.labels.max()}")

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def lookup(self, u, v) -> np.ndarray:
        """Label of the pixel nearest to each continuous (u, v); background outside the image."""
        col = np.rint(np.asarray(u, dtype=np.float64))
        row = np.rint(np.asarray(v, dtype=np.float64))
        inside = (col >= 0) & (col < self.width) & (row >= 0) & (row < self.height)
        labels = np.full(col.shape, MaskLabel.BACKGROUND, dtype=np.uint8)
        labels[inside] = self.labels[row[inside].astype(np.int64), col[inside].astype(np.int64)]
        return labels


def padded_bounds(mesh: TriMesh, pad_frac: float):
    lo, hi = mesh.bounds()
    pad = pad_frac * float((hi - lo).max())
    return lo - pad, hi + pad


def sample_baseline(mesh: TriMesh, X_b: int, sigma_lr: float, uniform_frac: float, seed,
                    pad_frac: float = 0.05, oracle: Optional[SdfOracle] = None) -> LabeledPointSet:
    """Gaussian-perturbed surface samples mixed with uniform box samples, all oracle-labelled."""
    if not 0.0 <= uniform_frac <= 1.0:
        raise ValueError(f"uniform_frac must be in [0, 1], got {uniform_frac}")
    if X_b == 0:
        return LabeledPointSet.empty()
    rng = np.random.default_rng(seed)
    n_uniform = int(round(uniform_frac * X_b))
    n_surface = X_b - n_uniform
    surface, _ = sample_surface(mesh, n_surface, rng)
    if sigma_lr > 0:
        surface = surface + rng.normal(0.0, sigma_lr, surface.shape)
    lo, hi = padded_bounds(mesh, pad_frac)
    uniform = rng.uniform(lo, hi, size=(n_uniform, 3))
    points = _as_float32(np.vstack([surface, uniform]))
    oracle = oracle or SdfOracle(mesh)
    sdf = oracle.signed_distance(points)
    logger.info(f"Baseline sampling: {n_surface} near-surface + {n_uniform} uniform points")
    return LabeledPointSet(points, sdf, np.full(len(points), Tag.BODY, dtype=np.uint8))


def semantic_augment(base: LabeledPointSet, mask: SemanticMask, cam: OrthoCamera, mesh: TriMesh,
                     sigma_hr: float, N_K: int, seed, X_b: Optional[int] = None,
                     oracle: Optional[SdfOracle] = None, anchor: str = "surface") -> LabeledPointSet:
    """Append recursively perturbed copies of the base points that land on face/hand pixels.

    Each of the N_K rounds doubles the working set with a perturbed copy of
    itself; at most X_b // 2 appended points are kept (the first ones). With
    ``anchor = "surface"`` the selected points are first moved to their
    closest surface point.
    """
    if mask.width != cam.image_w or mask.height != cam.image_h:
        raise ValueError(f"Mask is {mask.width}x{mask.height} but camera expects "
                         f"{cam.image_w}x{cam.image_h}")
    if anchor not in ("surface", "point"):
        raise ValueError(f"Unknown augmentation anchor: {anchor}")
    u, v, _ = orthographic_project(base.points, cam)
    region = mask.lookup(u, v)
    selected = (region == MaskLabel.FACE) | (region == MaskLabel.HAND)
    if not np.any(selected) or N_K == 0:
        logger.info("Semantic augmentation: no face/hand base points, nothing appended")
        return base

    rng = np.random.default_rng(seed)
    oracle = oracle or SdfOracle(mesh)
    current = base.points[selected]
    if anchor == "surface":
        current = oracle.closest(current)[1]
    current_tag = np.where(region[selected] == MaskLabel.FACE, Tag.FACE, Tag.HAND).astype(np.uint8)
    appended, appended_tag = [], []
    for _ in range(N_K):
        perturbed = current + rng.normal(0.0, sigma_hr, current.shape)
        appended.append(perturbed)
        appended_tag.append(current_tag)
        current = np.vstack([current, perturbed])
        current_tag = np.concatenate([current_tag, current_tag])

    cap = (len(base) if X_b is None else X_b) // 2
    points = _as_float32(np.vstack(appended)[:cap])
    tags = np.concatenate(appended_tag)[:cap]
    extra = LabeledPointSet(points, oracle.signed_distance(points), tags)
    logger.info(f"Semantic augmentation: {int(selected.sum())} face/hand base points, "
                f"{len(extra)} appended (cap {cap})")
    return LabeledPointSet.concat(base, extra)


def select_depth_points(pc: PointCloud, N_pc: int, seed) -> LabeledPointSet:
    """Uniform subsample of the input point cloud, labelled as on-surface."""
    if len(pc) == 0:
        raise ValueError("select_depth_points needs a non-empty point cloud")
    if len(pc) <= N_pc:
        index = np.arange(len(pc))
    else:
        rng = np.random.default_rng(seed)
        index = np.sort(rng.choice(len(pc), size=N_pc, replace=False))
    points = _as_float32(pc.points[index])
    return LabeledPointSet(points, np.zeros(len(points)),
                           np.full(len(points), Tag.DEPTH_SURFACE, dtype=np.uint8))


def downsample(points: LabeledPointSet, target: int, seed) -> LabeledPointSet:
    """Seeded subsample without replacement that keeps the original order."""
    if target <= 0 or len(points) <= target:
        return points
    rng = np.random.default_rng(seed)
    return points.subset(np.sort(rng.choice(len(points), size=target, replace=False)))


def build_training_points(mesh: TriMesh, mask: SemanticMask, cam: OrthoCamera,
                          cfg: SamplingConfig, oracle: Optional[SdfOracle] = None) -> LabeledPointSet:
    """Body point set of one scene: baseline, optional semantic augmentation, optional downsample."""
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    oracle = oracle or SdfOracle(mesh)
    points = sample_baseline(mesh, cfg.x_b_count, cfg.sigma_lr_norm, cfg.uniform_frac, seeds[0],
                             pad_frac=cfg.bbox_pad_frac, oracle=oracle)
    if cfg.use_semantic_sampling:
        points = semantic_augment(points, mask, cam, mesh, cfg.sigma_hr_norm, cfg.n_k_steps, seeds[1],
                                  X_b=cfg.x_b_count, oracle=oracle, anchor=cfg.semantic_anchor)
    return downsample(points, cfg.x_t_target, seeds[2])


def build_depth_points(depth: ScalarImage, cam: OrthoCamera, cfg: SamplingConfig) -> LabeledPointSet:
    """Depth-supervision subsample of the back-projected input depth."""
    seed = np.random.SeedSequence(cfg.seed).spawn(4)[3]
    return select_depth_points(depth_to_points(depth, cam), cfg.n_pc_count, seed)
