"""
Learnable parts of the reconstruction model: the two 2D feature extractors
(low-resolution LR-FE feeding the voxels, high-resolution HR-FE feeding the
MLP), the VFE and the SDF MLP, plus checkpoint storage.

Gradients come from torch autograd; the sparse convolutions supply their own
backward (see sparsegrid).
"""

from dataclasses import dataclass, fields, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from definitions import format_config_value, parse_config_value
from exceptions import DataError
from file_management import read_archive, write_archive
from geometry import (OrthoCamera, ScalarImage, VectorImage, depth_to_points, normals_from_depth,
                      orthographic_project, voxelize)
from log import logging
from sparsegrid import (SparseVoxelTensor, Vfe, build_sparse, feature_map_tensor, pixel_aligned_features,
                        trilinear_query)

logger = logging.getLogger(__name__)

LEAKY_SLOPE = 0.01
VOXEL_EMBEDDINGS = ("lr", "hr", "random", "occupancy")


@dataclass
class ModelConfig:
    lr_width: int = 32
    hr_width: int = 32
    fe_width: int = 32
    fe_stacks: int = 2
    vfe_widths: Tuple[int, ...] = (16, 32, 64, 128)
    mlp_hidden: Tuple[int, ...] = (512, 256, 128)
    voxel_spacing_norm: float = 0.015625
    voxel_origin: Tuple[float, ...] = (-1.0, -1.0, -1.0)
    voxel_embedding: str = "lr"
    use_normals: bool = True
    pixel_features: str = "hr"
    use_image_features: bool = True
    use_vfe: bool = True
    seed: int = 0

    def __post_init__(self):
        self.vfe_widths = tuple(int(w) for w in self.vfe_widths)
        self.mlp_hidden = tuple(int(w) for w in self.mlp_hidden)
        self.voxel_origin = tuple(float(x) for x in self.voxel_origin)
        if min(self.lr_width, self.hr_width, self.fe_width, self.fe_stacks) < 1:
            raise ValueError("Feature extractor widths and stack count must be >= 1")
        if len(self.vfe_widths) != 4:
            raise ValueError(f"vfe_widths needs four values, got {self.vfe_widths}")
        if len(self.voxel_origin) != 3:
            raise ValueError(f"voxel_origin needs three values, got {self.voxel_origin}")
        if not self.voxel_spacing_norm > 0:
            raise ValueError("voxel_spacing_norm must be > 0")
        if self.voxel_embedding not in VOXEL_EMBEDDINGS:
            raise ValueError(f"voxel_embedding must be one of {VOXEL_EMBEDDINGS}, got {self.voxel_embedding}")
        if self.pixel_features not in ("hr", "lr"):
            raise ValueError(f"pixel_features must be hr or lr, got {self.pixel_features}")
        if not (self.use_image_features or self.use_vfe):
            raise ValueError("The MLP needs pixel-aligned features, the VFE or both")
        if not self.use_image_features and self.use_vfe and self.voxel_embedding in ("lr", "hr"):
            raise ValueError(f"voxel_embedding {self.voxel_embedding} needs image features; "
                             f"use random or occupancy")

    @property
    def feature_maps(self) -> Tuple[str, ...]:
        """Image feature maps (lr, hr) some consumer reads."""
        used = set()
        if self.use_image_features:
            used.add(self.pixel_features)
        if self.use_vfe and self.voxel_embedding in ("lr", "hr"):
            used.add(self.voxel_embedding)
        return tuple(name for name in ("lr", "hr") if name in used)

    @property
    def pixel_width(self) -> int:
        if not self.use_image_features:
            return 0
        return self.hr_width if self.pixel_features == "hr" else self.lr_width

    @property
    def voxel_in_width(self) -> int:
        return {"lr": self.lr_width, "hr": self.hr_width, "random": self.lr_width, "occupancy": 1}[self.voxel_embedding]

    @classmethod
    def full_scale(cls, **overrides) -> "ModelConfig":
        """Widths of the full-size model: 256-channel feature maps, four stacks."""
        values = dict(lr_width=256, hr_width=256, fe_width=256, fe_stacks=4)
        values.update(overrides)
        return cls(**values)

    def to_header(self) -> dict:
        return {f"model.{f.name}": format_config_value(getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_header(cls, header: dict) -> "ModelConfig":
        default = cls()
        values = {}
        for f in fields(cls):
            key = f"model.{f.name}"
            if key in header:
                try:
                    values[f.name] = parse_config_value(header[key], getattr(default, f.name))
                except ValueError as e:
                    raise DataError(f"Bad checkpoint header value {key}: {e}")
        return replace(default, **values)


class EncoderDecoderBlock(nn.Module):
    """One hourglass-style stack: downsample, process, upsample, add back to the input."""

    def __init__(self, width: int):
        super().__init__()
        self.down = nn.Conv2d(width, width, 3, stride=2, padding=1)
        self.mid = nn.Conv2d(width, width, 3, padding=1)
        self.up = nn.Conv2d(width, width, 3, padding=1)

    def forward(self, x):
        y = F.relu(self.down(x))
        y = F.relu(self.mid(y))
        y = F.interpolate(y, size=x.shape[-2:], mode="nearest")
        return x + F.relu(self.up(y))


class FeatureExtractor(nn.Module):
    def __init__(self, in_channels: int, width: int, out_channels: int, stacks: int, stride: int):
        super().__init__()
        self.stride = stride
        self.stem = nn.Conv2d(in_channels, width, 3, stride=stride, padding=1)
        self.blocks = nn.ModuleList(EncoderDecoderBlock(width) for _ in range(stacks))
        self.head = nn.Conv2d(width, out_channels, 1)

    def forward(self, x):
        x = F.relu(self.stem(x))
        for block in self.blocks:
            x = block(x)
        return self.head(x)


class SdfMlp(nn.Module):
    def __init__(self, in_width: int, hidden: Sequence[int] = (512, 256, 128)):
        super().__init__()
        widths = [in_width, *hidden, 1]
        self.layers = nn.ModuleList(nn.Linear(a, b) for a, b in zip(widths[:-1], widths[1:]))

    @property
    def widths(self) -> List[int]:
        return [self.layers[0].in_features] + [layer.out_features for layer in self.layers]

    def forward(self, x):
        for layer in self.layers[:-1]:
            x = F.leaky_relu(layer(x), LEAKY_SLOPE)
        return self.layers[-1](x)


class ReconModel(nn.Module):
    """LR-FE, HR-FE, VFE and MLP with the configuration that shapes them.

    Parts switched off by the ablation settings are None.
    """

    def __init__(self, config: Optional[ModelConfig] = None):
        super().__init__()
        self.config = config or ModelConfig()
        cfg = self.config
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            self.lr_fe = (FeatureExtractor(6, cfg.fe_width, cfg.lr_width, cfg.fe_stacks, stride=2)
                          if "lr" in cfg.feature_maps else None)
            self.hr_fe = (FeatureExtractor(6, cfg.fe_width, cfg.hr_width, cfg.fe_stacks, stride=1)
                          if "hr" in cfg.feature_maps else None)
            self.vfe = Vfe(cfg.voxel_in_width, cfg.vfe_widths) if cfg.use_vfe else None
            self.mlp = SdfMlp(self.pixel_width + self.code_width + 1, cfg.mlp_hidden)

    @property
    def pixel_width(self) -> int:
        return self.config.pixel_width

    @property
    def code_width(self) -> int:
        return self.vfe.code_width if self.vfe is not None else 0

    @property
    def dtype(self):
        return self.mlp.layers[0].weight.dtype

    def parameter_norm(self) -> float:
        with torch.no_grad():
            return float(torch.sqrt(sum((p.double() ** 2).sum() for p in self.parameters())))

    def save(self, path: str, extra_header: Optional[dict] = None):
        header = self.config.to_header()
        header["dtype"] = "float64" if self.dtype == torch.float64 else "float32"
        header.update(extra_header or {})
        tensors = {name: value.detach().cpu().numpy() for name, value in self.state_dict().items()}
        write_archive(path, header, tensors)
        logger.info(f"Saved checkpoint {path} ({len(tensors)} tensors)")

    @classmethod
    def load(cls, path: str) -> "ReconModel":
        header, tensors = read_archive(path)
        model = cls(ModelConfig.from_header(header))
        if header.get("dtype") == "float64":
            model = model.double()
        expected = model.state_dict()
        missing = sorted(set(expected) - set(tensors))
        unexpected = sorted(set(tensors) - set(expected))
        if missing or unexpected:
            raise DataError(f"Checkpoint {path} does not match the model: missing {missing[:3]}, "
                            f"unexpected {unexpected[:3]}")
        state = {}
        for name, value in tensors.items():
            if tuple(value.shape) != tuple(expected[name].shape):
                raise DataError(f"Checkpoint tensor {name} has shape {value.shape}, "
                                f"expected {tuple(expected[name].shape)}")
            state[name] = torch.from_numpy(value).to(expected[name].dtype)
        model.load_state_dict(state)
        return model


@dataclass
class SceneEncoding:
    """Everything predict_sdf needs for one RGB-D view; absent parts are None or empty."""
    pixel_map: Optional[torch.Tensor]
    codes: List[SparseVoxelTensor]
    cam: OrthoCamera


def _image_tensor(image, dtype) -> torch.Tensor:
    if isinstance(image, VectorImage):
        return feature_map_tensor(VectorImage(np.nan_to_num(np.asarray(image.data, dtype=np.float64))), dtype)
    return torch.nan_to_num(torch.as_tensor(image)).to(dtype)


def extract_features(rgb, normals, model: ReconModel) -> Tuple[Optional[torch.Tensor], Optional[torch.Tensor]]:
    """LR (stride 2) and HR (stride 1) feature maps, each (C, H, W); a map nothing reads is None."""
    rgb = _image_tensor(rgb, model.dtype)
    normals = _image_tensor(normals, model.dtype)
    if rgb.shape != normals.shape or rgb.shape[0] != 3:
        raise ValueError(f"rgb {tuple(rgb.shape)} and normals {tuple(normals.shape)} must both be 3 x H x W")
    if not model.config.use_normals:
        normals = torch.zeros_like(normals)
    x = torch.cat([rgb, normals], dim=0)[None]
    lr = model.lr_fe(x)[0] if model.lr_fe is not None else None
    hr = model.hr_fe(x)[0] if model.hr_fe is not None else None
    return lr, hr


def input_normals(depth: ScalarImage, cam: OrthoCamera) -> VectorImage:
    """Network-input normals: camera-facing depth normals with undefined pixels zeroed."""
    return VectorImage(np.nan_to_num(normals_from_depth(depth, cam).data, nan=0.0))


def encode_scene(model: ReconModel, rgb: VectorImage, depth: ScalarImage, cam: OrthoCamera,
                 normals: Optional[VectorImage] = None) -> SceneEncoding:
    """Feature maps and multi-scale voxel codes of one view."""
    normals = normals if normals is not None else input_normals(depth, cam)
    maps = dict(zip(("lr", "hr"), extract_features(rgb, normals, model)))
    cfg = model.config
    pixel_map = maps[cfg.pixel_features] if cfg.use_image_features else None
    codes = []
    if model.vfe is not None:
        sites = voxelize(depth_to_points(depth, cam), cfg.voxel_spacing_norm, cfg.voxel_origin)
        source = maps.get(cfg.voxel_embedding)
        if source is None:
            # random and occupancy embeddings only read the width and dtype
            source = torch.zeros((cfg.voxel_in_width, 1, 1), dtype=model.dtype)
        voxels = build_sparse(sites, source, cam, cfg.voxel_spacing_norm, cfg.voxel_origin,
                              embedding=cfg.voxel_embedding, seed=cfg.seed)
        codes = model.vfe(voxels)
        logger.debug(f"Encoded view: {len(sites)} voxel sites, {cfg.voxel_embedding} embedding")
    return SceneEncoding(pixel_map, codes, cam)


def predict_sdf(points, pixel_map: Optional[torch.Tensor], codes: Sequence[SparseVoxelTensor],
                cam: OrthoCamera, mlp: SdfMlp) -> torch.Tensor:
    """MLP on [pixel-aligned feature, voxel codes, normalised depth] per point; absent parts are skipped."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    dtype = mlp.layers[0].weight.dtype
    parts = []
    if pixel_map is not None:
        parts.append(pixel_aligned_features(pixel_map, cam, points).to(dtype))
    if len(codes):
        parts.append(trilinear_query(codes, points).to(dtype))
    _, _, z = orthographic_project(points, cam)
    parts.append(torch.from_numpy(cam.normalized_depth(z)).to(dtype)[:, None])
    return mlp(torch.cat(parts, dim=1))[:, 0]


def predict_encoded(model: ReconModel, encoding: SceneEncoding, points) -> torch.Tensor:
    return predict_sdf(points, encoding.pixel_map, encoding.codes, encoding.cam, model.mlp)
