"""
Sparse voxel tensors, submanifold/strided/inverse sparse 3D convolutions and
the volume feature extractor (VFE) U-Net built from them.

Sites are integer cell coordinates kept in canonical lexicographic order.
Lookups go through 63-bit linearised keys searched with ``np.searchsorted``.
A convolution is a rulebook of (input row, output row) pairs per kernel
offset, executed as gather -> matmul -> scatter-add.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import torch
from torch import nn

from exceptions import StateError
from geometry import OrthoCamera, VectorImage, bilinear_weights, orthographic_project
from log import logging

logger = logging.getLogger(__name__)

SITE_BITS = 21
SITE_BIAS = 1 << (SITE_BITS - 1)
SITE_BASE = 1 << SITE_BITS

# kernel offset k = (dx + 1) * 9 + (dy + 1) * 3 + (dz + 1)
KERNEL_OFFSETS = np.array([(dx, dy, dz) for dx in (-1, 0, 1) for dy in (-1, 0, 1) for dz in (-1, 0, 1)],
                          dtype=np.int64)
CENTER_TAP = 13

MODES = ("submanifold", "strided2", "inverse2")


def site_keys(sites: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Linearised keys and a mask of sites inside the representable range."""
    shifted = np.asarray(sites, dtype=np.int64).reshape(-1, 3) + SITE_BIAS
    valid = np.all((shifted >= 0) & (shifted < SITE_BASE), axis=1)
    shifted = np.where(valid[:, None], shifted, 0)
    keys = (shifted[:, 0] * SITE_BASE + shifted[:, 1]) * SITE_BASE + shifted[:, 2]
    return keys, valid


def canonical_sites(sites) -> np.ndarray:
    """Unique sites in lexicographic order."""
    sites = np.asarray(sites, dtype=np.int64).reshape(-1, 3)
    if len(sites) == 0:
        return sites
    return np.unique(sites, axis=0)


class SiteIndex:
    """Row lookup for a canonical site list."""

    def __init__(self, sites: np.ndarray):
        self.keys, valid = site_keys(sites)
        if not np.all(valid):
            raise ValueError("Site coordinates out of the indexable range")
        if len(self.keys) > 1 and not np.all(np.diff(self.keys) > 0):
            raise ValueError("Sites must be unique and lexicographically sorted")

    def __len__(self):
        return len(self.keys)

    def lookup(self, query: np.ndarray) -> np.ndarray:
        """Row of each query site, -1 where absent."""
        keys, valid = site_keys(query)
        if len(self.keys) == 0:
            return np.full(len(keys), -1, dtype=np.int64)
        row = np.searchsorted(self.keys, keys)
        row = np.minimum(row, len(self.keys) - 1)
        found = valid & (self.keys[row] == keys)
        return np.where(found, row, -1)


@dataclass(eq=False)
class SparseVoxelTensor:
    """Feature rows on occupied sites; site c at this stride covers the cube
    origin + [c, c + 1) * stride * spacing."""
    sites: np.ndarray
    features: torch.Tensor
    stride: int = 1
    origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    spacing: float = 1.0
    _index: Optional[SiteIndex] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.sites = np.asarray(self.sites, dtype=np.int64).reshape(-1, 3)
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        if self.features.ndim != 2 or self.features.shape[0] != len(self.sites):
            raise ValueError(f"Features {tuple(self.features.shape)} do not match {len(self.sites)} sites")
        if self.stride < 1 or self.stride & (self.stride - 1):
            raise ValueError(f"Stride must be a power of two, got {self.stride}")

    def __len__(self):
        return len(self.sites)

    @property
    def channel_count(self) -> int:
        return self.features.shape[1]

    @property
    def index(self) -> SiteIndex:
        if self._index is None:
            self._index = SiteIndex(self.sites)
        return self._index

    @property
    def cell_size(self) -> float:
        return self.stride * self.spacing

    def site_centers(self) -> np.ndarray:
        return self.origin + (self.sites + 0.5) * self.cell_size

    def with_features(self, features: torch.Tensor) -> "SparseVoxelTensor":
        out = SparseVoxelTensor(self.sites, features, self.stride, self.origin, self.spacing)
        out._index = self._index
        return out

    @classmethod
    def from_unsorted(cls, sites, features: torch.Tensor, **kwargs) -> "SparseVoxelTensor":
        sites = np.asarray(sites, dtype=np.int64).reshape(-1, 3)
        keys, _ = site_keys(sites)
        order = np.argsort(keys, kind="stable")
        if len(keys) > 1 and np.any(np.diff(keys[order]) == 0):
            raise ValueError("Duplicate sites")
        return cls(sites[order], features[torch.as_tensor(order, dtype=torch.long)], **kwargs)


@dataclass
class ConvRulebook:
    """Per kernel offset, the (input row, output row) pairs of one convolution."""
    in_rows: List[np.ndarray]
    out_rows: List[np.ndarray]
    n_in: int
    n_out: int
    out_sites: np.ndarray

    def __post_init__(self):
        for k, (i, o) in enumerate(zip(self.in_rows, self.out_rows)):
            if len(i) != len(o):
                raise ValueError(f"Rulebook offset {k} has unpaired rows")
            if len(i) and (i.min() < 0 or i.max() >= self.n_in or o.min() < 0 or o.max() >= self.n_out):
                raise ValueError(f"Rulebook offset {k} has rows out of range")

    def transposed(self, out_sites: np.ndarray) -> "ConvRulebook":
        return ConvRulebook(self.out_rows, self.in_rows, self.n_out, self.n_in, out_sites)

    def pair_count(self) -> int:
        return sum(len(i) for i in self.in_rows)

    def torch_rows(self) -> Tuple[List[torch.Tensor], List[torch.Tensor]]:
        return ([torch.from_numpy(i) for i in self.in_rows], [torch.from_numpy(o) for o in self.out_rows])


def _rulebook(in_index: SiteIndex, n_in: int, out_sites: np.ndarray, scale: int) -> ConvRulebook:
    in_rows, out_rows = [], []
    out_all = np.arange(len(out_sites), dtype=np.int64)
    for offset in KERNEL_OFFSETS:
        src = in_index.lookup(scale * out_sites + offset)
        hit = src >= 0
        in_rows.append(src[hit].astype(np.int64))
        out_rows.append(out_all[hit])
    return ConvRulebook(in_rows, out_rows, n_in, len(out_sites), out_sites)


def submanifold_rulebook(sites: np.ndarray, index: Optional[SiteIndex] = None) -> ConvRulebook:
    """Output site o reads input site o + offset; the active set is preserved."""
    return _rulebook(index or SiteIndex(sites), len(sites), sites, 1)


def strided_rulebook(fine_sites: np.ndarray, index: Optional[SiteIndex] = None) -> ConvRulebook:
    """Coarse output o = floor(site / 2) reads fine sites 2 * o + offset."""
    coarse = canonical_sites(np.floor_divide(fine_sites, 2))
    return _rulebook(index or SiteIndex(fine_sites), len(fine_sites), coarse, 2)


class SparseConvFunction(torch.autograd.Function):
    """Gather -> matmul -> scatter-add over a rulebook, with its exact adjoint as backward."""

    @staticmethod
    def forward(ctx, features, weight, in_rows, out_rows, n_out):
        out = features.new_zeros((n_out, weight.shape[2]))
        for k in range(len(in_rows)):
            if len(in_rows[k]):
                out.index_add_(0, out_rows[k], features.index_select(0, in_rows[k]) @ weight[k])
        ctx.save_for_backward(features, weight)
        ctx.in_rows, ctx.out_rows = in_rows, out_rows
        return out

    @staticmethod
    def backward(ctx, grad_out):
        features, weight = ctx.saved_tensors
        grad_features = grad_weight = None
        if ctx.needs_input_grad[0]:
            grad_features = torch.zeros_like(features)
        if ctx.needs_input_grad[1]:
            grad_weight = torch.zeros_like(weight)
        for k in range(len(ctx.in_rows)):
            if not len(ctx.in_rows[k]):
                continue
            g = grad_out.index_select(0, ctx.out_rows[k])
            if grad_features is not None:
                grad_features.index_add_(0, ctx.in_rows[k], g @ weight[k].transpose(0, 1))
            if grad_weight is not None:
                grad_weight[k] = features.index_select(0, ctx.in_rows[k]).transpose(0, 1) @ g
        return grad_features, grad_weight, None, None, None


def apply_rulebook(features: torch.Tensor, weight: torch.Tensor, rulebook: ConvRulebook) -> torch.Tensor:
    in_rows, out_rows = rulebook.torch_rows()
    return SparseConvFunction.apply(features, weight, in_rows, out_rows, rulebook.n_out)


def sparse_conv(x: SparseVoxelTensor, weights: torch.Tensor, mode: str, bias: Optional[torch.Tensor] = None,
                target: Optional[SparseVoxelTensor] = None,
                rulebook: Optional[ConvRulebook] = None) -> SparseVoxelTensor:
    """3x3x3 sparse convolution.

    ``inverse2`` scatters back onto ``target``, the finer tensor that the
    matching ``strided2`` layer consumed.
    """
    if mode not in MODES:
        raise ValueError(f"Unknown sparse convolution mode: {mode}")
    if weights.ndim != 3 or weights.shape[0] != 27 or weights.shape[1] != x.channel_count:
        raise ValueError(f"Weight shape {tuple(weights.shape)} does not match 27 x {x.channel_count} x C_out")
    if bias is not None and bias.shape != (weights.shape[2],):
        raise ValueError(f"Bias shape {tuple(bias.shape)} does not match {weights.shape[2]} outputs")

    if mode == "submanifold":
        rulebook = rulebook or submanifold_rulebook(x.sites, x.index)
        stride = x.stride
    elif mode == "strided2":
        rulebook = rulebook or strided_rulebook(x.sites, x.index)
        stride = x.stride * 2
    else:
        if target is None:
            raise StateError("inverse2 convolution needs the finer site set of its strided layer")
        if target.stride * 2 != x.stride:
            raise ValueError(f"inverse2 target stride {target.stride} does not pair with input stride {x.stride}")
        if rulebook is None:
            rulebook = strided_rulebook(target.sites, target.index).transposed(target.sites)
        if rulebook.n_in != len(x) or not np.array_equal(
                canonical_sites(np.floor_divide(target.sites, 2)), x.sites):
            raise StateError("inverse2 input sites do not come from the target site set")
        stride = target.stride

    features = apply_rulebook(x.features, weights, rulebook)
    if bias is not None:
        features = features + bias
    out = SparseVoxelTensor(rulebook.out_sites, features, stride, x.origin, x.spacing)
    if mode == "submanifold":
        out._index = x._index
    elif mode == "inverse2":
        out._index = target._index
    return out


def pixel_aligned_features(feature_map: torch.Tensor, cam: OrthoCamera, points: np.ndarray) -> torch.Tensor:
    """Bilinear features (N, C) of a (C, H, W) map at the projections of ``points``.

    Pixel coordinates are scaled from the camera resolution to the map resolution.
    """
    channels, height, width = feature_map.shape
    u, v, _ = orthographic_project(np.asarray(points, dtype=np.float64).reshape(-1, 3), cam)
    u = u * (width / cam.image_w)
    v = v * (height / cam.image_h)
    index, weight = bilinear_weights(u, v, width, height)
    flat = feature_map.reshape(channels, -1).transpose(0, 1)
    gathered = flat[torch.from_numpy(index.reshape(-1))].reshape(len(u), 4, channels)
    return (gathered * torch.from_numpy(weight).to(flat.dtype)[:, :, None]).sum(dim=1)


def feature_map_tensor(image: VectorImage, dtype=torch.float32) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(np.asarray(image.data).transpose(2, 0, 1))).to(dtype)


def build_sparse(sites, feature_map, cam: OrthoCamera, spacing: float, origin,
                 embedding: str = "lr", seed: int = 0) -> SparseVoxelTensor:
    """Voxel tensor whose site features are feature-map values at the projected cell centres.

    ``embedding = "random"`` replaces them with seeded N(0, 1) draws and
    ``"occupancy"`` with ones; both only take the width and dtype of the map.
    """
    if isinstance(feature_map, VectorImage):
        feature_map = feature_map_tensor(feature_map)
    sites = canonical_sites(sites)
    origin = np.asarray(origin, dtype=np.float64)
    channels = feature_map.shape[0]
    if len(sites) == 0:
        return SparseVoxelTensor(sites, feature_map.new_zeros((0, channels)), 1, origin, spacing)
    centers = origin + (sites + 0.5) * spacing
    if embedding in ("lr", "hr"):
        features = pixel_aligned_features(feature_map, cam, centers)
    elif embedding == "random":
        rng = np.random.default_rng(seed)
        features = torch.from_numpy(rng.standard_normal((len(sites), channels))).to(feature_map.dtype)
    elif embedding == "occupancy":
        features = feature_map.new_ones((len(sites), channels))
    else:
        raise ValueError(f"Unknown voxel embedding: {embedding}")
    return SparseVoxelTensor(sites, features, 1, origin, spacing)


# (mode, width level, layer whose output is concatenated after this one)
VFE_TABLE = (
    ("submanifold", 0, None), ("submanifold", 0, None), ("submanifold", 0, None),
    ("strided2", 1, None), ("submanifold", 1, None), ("submanifold", 1, None),
    ("strided2", 2, None), ("submanifold", 2, None), ("submanifold", 2, None), ("submanifold", 2, None),
    ("strided2", 3, None), ("submanifold", 3, None), ("submanifold", 3, None), ("submanifold", 3, None),
    ("submanifold", 3, None),
    ("inverse2", 2, 10), ("submanifold", 2, None), ("submanifold", 2, None), ("submanifold", 2, None),
    ("submanifold", 2, None),
    ("inverse2", 1, 6), ("submanifold", 1, None), ("submanifold", 1, None), ("submanifold", 1, None),
    ("inverse2", 0, 3), ("submanifold", 0, None), ("submanifold", 0, None), ("submanifold", 0, None),
)
# code volumes at strides 1, 2, 4
CODE_LAYERS = (28, 24, 20)


def vfe_layer_shapes(in_width: int, widths: Sequence[int]) -> List[Tuple[int, int]]:
    shapes, c_in = [], in_width
    for mode, level, skip in VFE_TABLE:
        c_out = widths[level]
        shapes.append((c_in, c_out))
        c_in = 2 * c_out if skip else c_out
    return shapes


class Vfe(nn.Module):
    """Sparse encoder-decoder over voxels, one weight (27, C_in, C_out) and bias per table row."""

    def __init__(self, in_width: int, widths: Sequence[int] = (16, 32, 64, 128),
                 generator: Optional[torch.Generator] = None, dtype=torch.float32):
        super().__init__()
        if len(widths) != 4 or min(widths) < 1:
            raise ValueError(f"VFE needs four positive widths, got {widths}")
        self.in_width = in_width
        self.widths = tuple(int(w) for w in widths)
        self.weights = nn.ParameterList()
        self.biases = nn.ParameterList()
        for c_in, c_out in vfe_layer_shapes(in_width, self.widths):
            std = (2.0 / (27 * c_in)) ** 0.5
            self.weights.append(nn.Parameter(torch.randn(27, c_in, c_out, generator=generator, dtype=dtype) * std))
            self.biases.append(nn.Parameter(torch.zeros(c_out, dtype=dtype)))

    @property
    def code_width(self) -> int:
        return sum(self.widths[level] for level in (0, 1, 2))

    def forward(self, x: SparseVoxelTensor) -> List[SparseVoxelTensor]:
        return vfe_forward(x, self)


def vfe_forward(x: SparseVoxelTensor, params: Vfe) -> List[SparseVoxelTensor]:
    """Run the 28 layers; returns the decoder outputs at strides 1, 2 and 4."""
    if x.channel_count != params.in_width:
        raise ValueError(f"VFE expects {params.in_width} input channels, got {x.channel_count}")
    if x.stride != 1:
        raise ValueError("VFE input must be at stride 1")
    submanifold: Dict[int, ConvRulebook] = {}
    strided: Dict[int, ConvRulebook] = {}
    outputs: Dict[int, SparseVoxelTensor] = {}
    current = x
    for number, (mode, level, skip) in enumerate(VFE_TABLE, 1):
        weight, bias = params.weights[number - 1], params.biases[number - 1]
        if mode == "submanifold":
            if current.stride not in submanifold:
                submanifold[current.stride] = submanifold_rulebook(current.sites, current.index)
                logger.debug(f"Submanifold rulebook at stride {current.stride}: "
                             f"{submanifold[current.stride].pair_count()} pairs")
            current = sparse_conv(current, weight, mode, bias, rulebook=submanifold[current.stride])
        elif mode == "strided2":
            if current.stride not in strided:
                strided[current.stride] = strided_rulebook(current.sites, current.index)
                logger.debug(f"Strided rulebook at stride {current.stride}: {strided[current.stride].pair_count()} pairs")
            current = sparse_conv(current, weight, mode, bias, rulebook=strided[current.stride])
        else:
            target = outputs[skip]
            rulebook = strided[target.stride].transposed(target.sites)
            current = sparse_conv(current, weight, mode, bias, target=target, rulebook=rulebook)
        current = current.with_features(torch.relu(current.features))
        outputs[number] = current
        if skip:
            current = current.with_features(torch.cat([current.features, outputs[skip].features], dim=1))
        logger.debug(f"VFE layer {number} ({mode}): {len(current)} sites x {current.channel_count}")
    return [outputs[n] for n in CODE_LAYERS]


def trilinear_query(codes: Sequence[SparseVoxelTensor], points) -> torch.Tensor:
    """Per scale, trilinear blend of the 8 surrounding site codes (absent sites are zero), concatenated."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    corner_offsets = np.array([(i, j, k) for i in (0, 1) for j in (0, 1) for k in (0, 1)], dtype=np.int64)
    blocks = []
    for volume in codes:
        t = (points - volume.origin) / volume.cell_size - 0.5
        base = np.floor(t).astype(np.int64)
        frac = t - base
        corners = base[:, None, :] + corner_offsets[None]
        weight = np.prod(np.where(corner_offsets[None] == 1, frac[:, None, :], 1.0 - frac[:, None, :]), axis=2)
        rows = volume.index.lookup(corners.reshape(-1, 3))
        rows = np.where(rows < 0, len(volume), rows)
        padded = torch.cat([volume.features, volume.features.new_zeros((1, volume.channel_count))], dim=0)
        gathered = padded[torch.from_numpy(rows)].reshape(len(points), 8, volume.channel_count)
        blocks.append((gathered * torch.from_numpy(weight).to(padded.dtype)[:, :, None]).sum(dim=1))
    return torch.cat(blocks, dim=1)
