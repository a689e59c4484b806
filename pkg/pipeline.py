"""
Pipeline orchestration behind the command line: configuration sections and
the genscene / sample / train / reconstruct / evaluate stages.
"""

import os
from dataclasses import dataclass, field, fields, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from definitions import BODY_STEM, DEPTH_CLOUD_FILE, DEPTH_STEM, METRICS_FILE, parse_config_value, read_config_file
from exceptions import ConfigError, DataError
from file_management import append_records, checkdir, write_ply
from log import logging
from metrics import EvalConfig, evaluate_meshes
from nets import ModelConfig, ReconModel
from reconstruct import ReconstructConfig, reconstruct
from sampling import LabeledPointSet, SamplingConfig, build_depth_points, build_training_points
from scene_generation.scene_io import SceneConfig, SceneView, load_scene, write_scene
from sdf_oracle import SdfOracle, TriMesh
from training import SceneSample, TrainConfig, Trainer

SECTIONS = ("scene", "sampling", "model", "train", "reconstruct", "eval")


@dataclass
class PipelineConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    reconstruct: ReconstructConfig = field(default_factory=ReconstructConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    @classmethod
    def from_values(cls, values: Dict[str, str], seed: Optional[int] = None) -> "PipelineConfig":
        """Dispatch flat ``key = value`` pairs to the sections declaring the key; ``seed`` goes to all."""
        defaults = cls()
        updates = {name: {} for name in SECTIONS}
        for key, raw in values.items():
            owners = [name for name in SECTIONS
                      if key in {f.name for f in fields(getattr(defaults, name))}]
            if not owners:
                raise ConfigError(f"Unknown config key: {key}")
            for name in owners:
                current = getattr(getattr(defaults, name), key)
                try:
                    updates[name][key] = parse_config_value(raw, current)
                except ValueError:
                    raise ConfigError(f"Bad value for {key}: {raw!r}")
        if seed is not None:
            for name in SECTIONS:
                updates[name]["seed"] = int(seed)
        sections = {}
        for name in SECTIONS:
            try:
                sections[name] = replace(getattr(defaults, name), **updates[name])
            except ValueError as e:
                raise ConfigError(f"Invalid {name} configuration: {e}")
        return cls(**sections)

    @classmethod
    def from_file(cls, path: Optional[str] = None, seed: Optional[int] = None) -> "PipelineConfig":
        return cls.from_values(read_config_file(path) if path else {}, seed)


class Pipeline:
    """The five stages; each is a pure function of its inputs, the configuration and the seed."""

    def __init__(self, config: Optional[PipelineConfig] = None):
        self.logger = logging.getLogger(__name__)
        self.config = config or PipelineConfig()

    def genscene(self, out_dir: str, views: Optional[int] = None) -> List[str]:
        cfg = self.config.scene if views is None else replace(self.config.scene, views=views)
        directories = write_scene(out_dir, cfg)
        self.logger.info(f"Generated {len(directories)} view(s) in {out_dir}")
        return directories

    def sample(self, scene_dirs: Sequence[str], out_dir: str) -> List[str]:
        """Body and depth point sets of each scene, written to ``out_dir/<scene name>``.

        The depth points are also written as an ASCII PLY cloud for viewers.
        """
        written = []
        for index, scene_dir in enumerate(scene_dirs):
            scene = load_scene(scene_dir)
            seed = int(np.random.SeedSequence([self.config.sampling.seed, index]).generate_state(1)[0])
            cfg = replace(self.config.sampling, seed=seed)
            mesh = scene.mesh()
            body = build_training_points(mesh, scene.mask, scene.camera, cfg, SdfOracle(mesh))
            depth = build_depth_points(scene.depth, scene.camera, cfg)
            target = os.path.join(out_dir, scene.name)
            checkdir(target)
            body.save(target, BODY_STEM)
            depth.save(target, DEPTH_STEM)
            write_ply(os.path.join(target, DEPTH_CLOUD_FILE), depth.points)
            self.logger.info(f"Sampled {scene.name}: {len(body)} body points, {len(depth)} depth points")
            written.append(target)
        return written

    def _training_scene(self, scene: SceneView, samples_dir: str) -> SceneSample:
        directory = os.path.join(samples_dir, scene.name)
        if not os.path.isdir(directory):
            raise DataError(f"No samples for scene {scene.name} in {samples_dir}")
        return SceneSample(scene.name, scene.rgb, scene.depth, scene.camera,
                           LabeledPointSet.load(directory, BODY_STEM), LabeledPointSet.load(directory, DEPTH_STEM),
                           mesh_path=scene.mesh_path)

    def train(self, scene_dirs: Sequence[str], samples_dir: str, out_dir: str) -> ReconModel:
        scenes = [self._training_scene(load_scene(d), samples_dir) for d in scene_dirs]
        model = ReconModel(self.config.model)
        self.logger.info(f"Training on {len(scenes)} scene(s) for {self.config.train.iterations} steps")
        return Trainer(model, self.config.train, out_dir).fit(scenes)

    def reconstruct(self, checkpoint: str, scene_dir: str, out_path: str,
                    m_resolution: Optional[int] = None, field_path: Optional[str] = None) -> TriMesh:
        cfg = self.config.reconstruct
        if m_resolution is not None:
            cfg = replace(cfg, m_resolution=m_resolution)
        model = ReconModel.load(checkpoint)
        scene = load_scene(scene_dir)
        out_dir = os.path.dirname(os.path.abspath(out_path))
        checkdir(out_dir)
        mesh = reconstruct(model, scene.rgb, None, scene.depth, scene.camera, cfg.m_resolution, cfg,
                           out_path=out_path, field_path=field_path)
        self.logger.info(f"Reconstructed {scene.name}: {len(mesh.triangles)} triangles -> {out_path}")
        return mesh

    def evaluate(self, scene_dirs: Sequence[str], recon_paths: Sequence[str], out_path: str) -> pd.DataFrame:
        """One metric record per (scene, reconstruction) pair, written as JSON lines."""
        if len(scene_dirs) != len(recon_paths):
            raise ValueError(f"{len(scene_dirs)} scenes but {len(recon_paths)} reconstructions")
        records = []
        for scene_dir, recon_path in zip(scene_dirs, recon_paths):
            scene = load_scene(scene_dir)
            recon = TriMesh.load(recon_path)
            records.append(evaluate_meshes(scene.name, recon, scene.mesh(), scene.camera,
                                           scene.descriptor.scale_to_cm, self.config.eval))
        if os.path.isdir(out_path):
            out_path = os.path.join(out_path, METRICS_FILE)
        checkdir(os.path.dirname(os.path.abspath(out_path)))
        if os.path.exists(out_path):
            os.remove(out_path)
        append_records(out_path, records)
        report = pd.DataFrame.from_records(records)
        self.logger.info("Evaluation summary:\n" + report.to_string(index=False))
        return report
