"""
Mesh-to-mesh evaluation: Chamfer distance, point-to-surface distance and
normal reprojection error from the input view.
"""

from dataclasses import dataclass
from typing import Dict, Optional

import numpy as np

from geometry import OrthoCamera
from log import logging
from scene_generation.render import rasterize
from sdf_oracle import SdfOracle, TriMesh, sample_surface

logger = logging.getLogger(__name__)


@dataclass
class EvalConfig:
    n_samples: int = 10000
    normal_resolution: int = 512
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1 or self.normal_resolution < 1:
            raise ValueError("n_samples and normal_resolution must be >= 1")


def _check(*meshes: TriMesh):
    for mesh in meshes:
        if mesh.is_empty:
            raise ValueError("Metrics need non-empty meshes")


def _one_sided(source: TriMesh, target: TriMesh, n_samples: int, seed) -> float:
    points, _ = sample_surface(source, n_samples, np.random.default_rng(seed), stratified=True)
    return float(SdfOracle(target).unsigned_distance(points).mean())


def p2s(recon: TriMesh, gt: TriMesh, n_samples: int = 10000, seed=0) -> float:
    """Mean distance from area-weighted samples of ``recon`` to the surface of ``gt``."""
    _check(recon, gt)
    return _one_sided(recon, gt, n_samples, seed)


def chamfer(a: TriMesh, b: TriMesh, n_samples: int = 10000, seed=0) -> float:
    """Average of the two one-sided point-to-surface means; each mesh is sampled with its own seeded stream."""
    _check(a, b)
    return 0.5 * (_one_sided(a, b, n_samples, seed) + _one_sided(b, a, n_samples, seed))


def normal_reprojection(recon: TriMesh, gt: TriMesh, cam: OrthoCamera, resolution: Optional[int] = None) -> float:
    """Mean of |n_recon - n_gt| / 2 over pixels both normal maps cover; 1.0 when none are."""
    if resolution is not None and resolution != cam.image_w:
        cam = cam.resized(resolution, int(round(cam.image_h * resolution / cam.image_w)))
    recon_map = rasterize(recon, cam)
    gt_map = rasterize(gt, cam)
    both = recon_map.covered & gt_map.covered
    if not np.any(both):
        logger.warning("Normal maps share no covered pixel")
        return 1.0
    difference = np.linalg.norm(recon_map.normals[both] - gt_map.normals[both], axis=1)
    return float(difference.mean() / 2.0)


def evaluate_meshes(name: str, recon: TriMesh, gt: TriMesh, cam: OrthoCamera, scale_to_cm: float,
                    cfg: Optional[EvalConfig] = None) -> Dict:
    """One metric record: distances converted to cm with the scene scale."""
    cfg = cfg or EvalConfig()
    _check(recon, gt)
    record = {
        "scene": name,
        "cd_cm": chamfer(recon, gt, cfg.n_samples, cfg.seed) * scale_to_cm,
        "p2s_cm": p2s(recon, gt, cfg.n_samples, cfg.seed) * scale_to_cm,
        "normal": normal_reprojection(recon, gt, cam, cfg.normal_resolution),
    }
    logger.info(f"Metrics {name}: CD {record['cd_cm']:.4f} cm, P2S {record['p2s_cm']:.4f} cm, "
                f"normal {record['normal']:.4f}")
    return record
