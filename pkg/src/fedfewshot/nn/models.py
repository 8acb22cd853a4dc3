"""Embedding networks mapping an MFCC image (1 x coeffs x frames) to a vector."""

import numpy as np

from ..autodiff import Tensor, functional as F
from ..errors import ConfigError, InputTooSmall, ShapeMismatch
from ..autodiff.functional import pool_output_size
from .layers import BatchNorm2d, ChannelAttention, Conv2d, Linear, SpatialAttention, fitting_kernel
from .module import Module

ARCHITECTURES = ("proto_conv_small", "resnet18_attention")


def _conv_out(size, kernel, stride, padding):
    return (size + 2 * padding - kernel) // stride + 1


class EmbeddingModel(Module):
    architecture = None

    def __init__(self, input_shape, embed_dim):
        super().__init__()
        if len(input_shape) != 3 or input_shape[0] != 1:
            raise ConfigError(f"input_shape must be (1, coeffs, frames), got {input_shape}")
        self.input_shape = tuple(int(v) for v in input_shape)
        self.embed_dim = int(embed_dim)

    def _as_input(self, batch):
        if isinstance(batch, Tensor):
            x = batch
        else:
            arr = np.asarray(batch)
            if arr.ndim == 3:
                arr = arr[:, None]
            x = Tensor(arr, dtype=self.head.weight.dtype)
        if x.ndim == 3:
            x = F.reshape(x, (x.shape[0], 1) + x.shape[1:])
        if x.ndim != 4 or tuple(x.shape[1:]) != self.input_shape:
            raise ShapeMismatch(f"{self.architecture} expects (B, {self.input_shape}), got {x.shape}")
        return x

    def forward(self, batch):
        return self.head(F.global_avg_pool(self.features(self._as_input(batch))))

    def features(self, x):
        raise NotImplementedError


class ConvBlock(Module):
    """conv3x3 -> BN -> ReLU -> channel gate -> spatial gate -> 2x2 max pool."""

    def __init__(self, in_ch, out_ch, rng, reduction, spatial_kernel, attention):
        super().__init__()
        self.attention = attention
        self.conv = Conv2d(in_ch, out_ch, 3, rng, padding=1)
        self.bn = BatchNorm2d(out_ch)
        if attention:
            self.channel_gate = ChannelAttention(out_ch, reduction, rng)
            self.spatial_gate = SpatialAttention(rng, spatial_kernel)

    def forward(self, x):
        out = F.relu(self.bn(self.conv(x)))
        if self.attention:
            out = self.spatial_gate(self.channel_gate(out))
        return F.max_pool2d(out, 2, ceil_mode=True)


class ProtoConvSmall(EmbeddingModel):
    """Four conv blocks with channel/spatial gates, global pooling, linear head.

    Pooling uses ceil mode so a 40 x 14 input survives four halvings; the
    spatial-gate kernel shrinks where the map gets narrower than 7 x 7.
    """

    architecture = "proto_conv_small"

    def __init__(self, input_shape, embed_dim=64, channels=64, n_blocks=4, reduction=2,
                 spatial_kernel=7, attention=True, seed=0):
        super().__init__(input_shape, embed_dim)
        rng = np.random.default_rng(seed)
        self.attention = attention
        self.n_blocks = n_blocks
        h, w = self.input_shape[1:]
        in_ch = 1
        self.spatial_kernels = []
        for i in range(n_blocks):
            k = fitting_kernel(spatial_kernel, h, w)
            self.spatial_kernels.append(k)
            setattr(self, f"block{i}", ConvBlock(in_ch, channels, rng, reduction, k, attention))
            h, w = pool_output_size(h, 2, 2, ceil_mode=True), pool_output_size(w, 2, 2, ceil_mode=True)
            if h <= 0 or w <= 0:
                raise InputTooSmall(
                    f"input {self.input_shape[1:]} pools to zero extent at block {i}"
                )
            in_ch = channels
        self.head = Linear(channels, embed_dim, rng)

    def features(self, x):
        for i in range(self.n_blocks):
            x = getattr(self, f"block{i}")(x)
        return x


class BasicBlock(Module):
    """ResNet basic block; the gates rescale the residual branch before the skip add."""

    def __init__(self, in_ch, out_ch, stride, rng, reduction, spatial_kernel, attention):
        super().__init__()
        self.attention = attention
        self.conv1 = Conv2d(in_ch, out_ch, 3, rng, stride=stride, padding=1)
        self.bn1 = BatchNorm2d(out_ch)
        self.conv2 = Conv2d(out_ch, out_ch, 3, rng, padding=1)
        self.bn2 = BatchNorm2d(out_ch)
        if attention:
            self.channel_gate = ChannelAttention(out_ch, reduction, rng)
            self.spatial_gate = SpatialAttention(rng, spatial_kernel)
        self.has_projection = stride != 1 or in_ch != out_ch
        if self.has_projection:
            self.proj = Conv2d(in_ch, out_ch, 1, rng, stride=stride)
            self.proj_bn = BatchNorm2d(out_ch)

    def forward(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        out = self.bn2(self.conv2(out))
        if self.attention:
            out = self.spatial_gate(self.channel_gate(out))
        skip = self.proj_bn(self.proj(x)) if self.has_projection else x
        return F.relu(out + skip)


class ResNet18Attention(EmbeddingModel):
    """ResNet-18 (7x7 stem, 4 stages x 2 basic blocks) with gated residual branches."""

    architecture = "resnet18_attention"

    def __init__(self, input_shape, embed_dim=64, width=64, reduction=16, spatial_kernel=7,
                 attention=True, seed=0):
        super().__init__(input_shape, embed_dim)
        rng = np.random.default_rng(seed)
        self.attention = attention
        h, w = self.input_shape[1:]
        self.stem = Conv2d(1, width, 7, rng, stride=2, padding=3)
        self.stem_bn = BatchNorm2d(width)
        h, w = _conv_out(h, 7, 2, 3), _conv_out(w, 7, 2, 3)
        h, w = pool_output_size(h, 3, 2, 1), pool_output_size(w, 3, 2, 1)
        if h <= 0 or w <= 0:
            raise InputTooSmall(f"input {self.input_shape[1:]} too small for the ResNet stem")
        self.spatial_kernels = []
        in_ch = width
        self.block_names = []
        for stage, mult in enumerate((1, 2, 4, 8)):
            out_ch = width * mult
            for j in range(2):
                stride = 2 if (stage > 0 and j == 0) else 1
                h, w = _conv_out(h, 3, stride, 1), _conv_out(w, 3, stride, 1)
                k = fitting_kernel(spatial_kernel, h, w)
                self.spatial_kernels.append(k)
                name = f"layer{stage + 1}_{j}"
                setattr(self, name, BasicBlock(in_ch, out_ch, stride, rng, reduction, k, attention))
                self.block_names.append(name)
                in_ch = out_ch
        self.head = Linear(in_ch, embed_dim, rng)

    def features(self, x):
        x = F.relu(self.stem_bn(self.stem(x)))
        x = F.max_pool2d(x, 3, stride=2, padding=1)
        for name in self.block_names:
            x = getattr(self, name)(x)
        return x


def build_model(architecture, input_shape, embed_dim=64, seed=0, **kwargs):
    if architecture == "proto_conv_small":
        return ProtoConvSmall(input_shape, embed_dim=embed_dim, seed=seed, **kwargs)
    if architecture == "resnet18_attention":
        return ResNet18Attention(input_shape, embed_dim=embed_dim, seed=seed, **kwargs)
    raise ConfigError(f"unknown architecture {architecture!r}; choose from {ARCHITECTURES}")
