"""
Huber losses, the end-to-end training step and the training loop.
"""

import os
import time
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import torch

from definitions import FINAL_CHECKPOINT, TRAIN_LOG_FILE
from exceptions import TrainingError
from file_management import append_records, checkdir
from geometry import OrthoCamera, ScalarImage, VectorImage
from log import logging
from nets import ReconModel, encode_scene, predict_encoded
from sampling import LabeledPointSet

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    huber_delta: float = 1.25
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    iterations: int = 500
    batch_points: int = 0
    depth_loss_weight: float = 1.0
    checkpoint_every: int = 100
    log_every: int = 10
    seed: int = 0

    def __post_init__(self):
        if not self.huber_delta > 0:
            raise ValueError(f"huber_delta must be > 0, got {self.huber_delta}")
        # zero is accepted: a frozen run that only evaluates the losses
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if self.iterations < 0 or self.batch_points < 0 or self.checkpoint_every < 0 or self.log_every < 1:
            raise ValueError("iterations, batch_points and checkpoint_every must be >= 0, log_every >= 1")
        if self.depth_loss_weight < 0:
            raise ValueError("depth_loss_weight must be >= 0")


@dataclass
class SceneSample:
    """One training view: RGB-D input, camera and its labelled point sets."""
    name: str
    rgb: VectorImage
    depth: ScalarImage
    cam: OrthoCamera
    body: LabeledPointSet
    depth_points: LabeledPointSet
    normals: Optional[VectorImage] = None
    mesh_path: Optional[str] = None


@dataclass
class StepLosses:
    l_sdf: float
    l_depth: float
    l_total: float


def huber(residual, delta: float) -> torch.Tensor:
    """0.5 r^2 below delta, delta * (|r| - delta / 2) above; continuous with its slope at |r| = delta."""
    if not delta > 0:
        raise ValueError(f"Huber delta must be > 0, got {delta}")
    r = residual if torch.is_tensor(residual) else torch.as_tensor(residual, dtype=torch.float64)
    magnitude = r.abs()
    return torch.where(magnitude < delta, 0.5 * r * r, delta * (magnitude - 0.5 * delta))


def loss_sdf(pred: torch.Tensor, gt: torch.Tensor, delta: float) -> torch.Tensor:
    if pred.shape != gt.shape:
        raise ValueError(f"Prediction {tuple(pred.shape)} and label {tuple(gt.shape)} shapes differ")
    if pred.numel() == 0:
        raise ValueError("loss_sdf needs a non-empty batch")
    return huber(pred - gt, delta).mean()


def loss_depth(pred_zeta: torch.Tensor, delta: float) -> torch.Tensor:
    """Mean Huber of the predictions at on-surface points; zero for an empty batch."""
    if pred_zeta.numel() == 0:
        return pred_zeta.new_zeros(())
    return huber(pred_zeta, delta).mean()


def make_optimizer(model: ReconModel, cfg: TrainConfig) -> torch.optim.Optimizer:
    return torch.optim.Adam(model.parameters(), lr=cfg.learning_rate,
                            betas=(cfg.adam_beta1, cfg.adam_beta2), eps=cfg.adam_eps)


def _batch(points: LabeledPointSet, size: int, rng: Optional[np.random.Generator]) -> LabeledPointSet:
    if size <= 0 or len(points) <= size:
        return points
    rng = rng or np.random.default_rng(0)
    return points.subset(np.sort(rng.choice(len(points), size=size, replace=False)))


def compute_losses(model: ReconModel, scene: SceneSample, cfg: TrainConfig,
                   rng: Optional[np.random.Generator] = None):
    """Forward pass of one scene; returns (l_sdf, l_depth, total) tensors."""
    encoding = encode_scene(model, scene.rgb, scene.depth, scene.cam, scene.normals)
    body = _batch(scene.body, cfg.batch_points, rng)
    pred = predict_encoded(model, encoding, body.points)
    l_sdf = loss_sdf(pred, torch.from_numpy(body.sdf).to(pred.dtype), cfg.huber_delta)
    if cfg.depth_loss_weight > 0 and len(scene.depth_points):
        l_depth = loss_depth(predict_encoded(model, encoding, scene.depth_points.points), cfg.huber_delta)
    else:
        l_depth = pred.new_zeros(())
    return l_sdf, l_depth, l_sdf + cfg.depth_loss_weight * l_depth


def train_step(model: ReconModel, scene: SceneSample, cfg: TrainConfig,
               optimizer: Optional[torch.optim.Optimizer] = None, step: int = 0,
               rng: Optional[np.random.Generator] = None):
    """One Adam step on the summed losses of one scene."""
    optimizer = optimizer or make_optimizer(model, cfg)
    optimizer.zero_grad(set_to_none=True)
    l_sdf, l_depth, total = compute_losses(model, scene, cfg, rng)
    if not torch.isfinite(total):
        raise TrainingError("Non-finite training loss", {
            "step": step, "scene": scene.name, "l_sdf": float(l_sdf), "l_depth": float(l_depth),
            "param_norm": f"{model.parameter_norm():.6g}"})
    total.backward()
    optimizer.step()
    return StepLosses(float(l_sdf), float(l_depth), float(total)), model


class Trainer:
    """Cycles over the scenes for ``iterations`` steps, logging and checkpointing."""

    def __init__(self, model: ReconModel, cfg: TrainConfig, out_dir: Optional[str] = None):
        self.logger = logging.getLogger(__name__)
        self.model = model
        self.cfg = cfg
        self.out_dir = out_dir
        self.optimizer = make_optimizer(model, cfg)
        self.rng = np.random.default_rng(cfg.seed)
        self.history: List[dict] = []
        if out_dir:
            checkdir(out_dir)

    def _flush(self, records: List[dict]):
        if self.out_dir and records:
            append_records(os.path.join(self.out_dir, TRAIN_LOG_FILE), records)

    def fit(self, scenes: Sequence[SceneSample]) -> ReconModel:
        if not scenes:
            raise ValueError("Training needs at least one scene")
        if self.out_dir and os.path.exists(os.path.join(self.out_dir, TRAIN_LOG_FILE)):
            os.remove(os.path.join(self.out_dir, TRAIN_LOG_FILE))
        self.model.train()
        start = time.perf_counter()
        pending = []
        for step in range(1, self.cfg.iterations + 1):
            scene = scenes[(step - 1) % len(scenes)]
            losses, _ = train_step(self.model, scene, self.cfg, self.optimizer, step, self.rng)
            record = {"step": step, "scene": scene.name, "l_sdf": losses.l_sdf, "l_depth": losses.l_depth,
                      "l_total": losses.l_total, "wall_s": round(time.perf_counter() - start, 3)}
            self.history.append(record)
            pending.append(record)
            if step % self.cfg.log_every == 0 or step == self.cfg.iterations:
                self.logger.info(f"step {step}: l_sdf={losses.l_sdf:.6g} l_depth={losses.l_depth:.6g}")
                self._flush(pending)
                pending = []
            if self.out_dir and self.cfg.checkpoint_every and step % self.cfg.checkpoint_every == 0:
                self.model.save(os.path.join(self.out_dir, f"ckpt_{step:06d}.tnsr"), {"step": str(step)})
        self._flush(pending)
        if self.out_dir:
            self.model.save(os.path.join(self.out_dir, FINAL_CHECKPOINT), {"step": str(self.cfg.iterations)})
        self.model.eval()
        return self.model
