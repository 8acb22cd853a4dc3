import numpy as np

from ..autodiff import functional as F
from ..errors import BadRatio, KernelTooLarge, ShapeMismatch
from .module import Module, he_normal, ones_param, zeros_param


class Conv2d(Module):
    def __init__(self, in_channels, out_channels, kernel_size, rng, stride=1, padding=0, bias=False):
        super().__init__()
        k = kernel_size
        self.stride = stride
        self.padding = padding
        self.weight = he_normal(rng, (out_channels, in_channels, k, k), in_channels * k * k)
        self.bias = zeros_param((out_channels,)) if bias else None

    def forward(self, x):
        return F.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Linear(Module):
    def __init__(self, in_features, out_features, rng, bias=True):
        super().__init__()
        self.weight = he_normal(rng, (out_features, in_features), in_features)
        self.bias = zeros_param((out_features,)) if bias else None

    def forward(self, x):
        return F.linear(x, self.weight, self.bias)


class BatchNorm2d(Module):
    def __init__(self, channels, momentum=0.1, eps=1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.weight = ones_param((channels,))
        self.bias = zeros_param((channels,))
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def forward(self, x):
        return F.batch_norm2d(
            x,
            self.weight,
            self.bias,
            self.running_mean,
            self.running_var,
            training=self.training,
            momentum=self.momentum,
            eps=self.eps,
        )


class ChannelAttention(Module):
    """Channel gate: a shared bottleneck MLP scores avg- and max-pooled descriptors."""

    def __init__(self, channels, reduction, rng):
        super().__init__()
        if reduction < 1 or channels % reduction:
            raise BadRatio(f"channels={channels} not divisible by reduction ratio {reduction}")
        self.channels = channels
        self.reduction = reduction
        self.fc1 = Linear(channels, channels // reduction, rng, bias=False)
        self.fc2 = Linear(channels // reduction, channels, rng, bias=False)

    def _mlp(self, v):
        return self.fc2(F.relu(self.fc1(v)))

    def mask(self, x):
        if x.ndim != 4 or x.shape[1] != self.channels:
            raise ShapeMismatch(f"channel attention for {self.channels} channels got {x.shape}")
        logits = self._mlp(F.global_avg_pool(x)) + self._mlp(F.global_max_pool(x))
        return F.reshape(F.sigmoid(logits), (x.shape[0], self.channels, 1, 1))

    def forward(self, x):
        return x * self.mask(x)


class SpatialAttention(Module):
    """Spatial gate: a k x k conv over stacked channel-mean and channel-max maps."""

    def __init__(self, rng, kernel_size=7):
        super().__init__()
        if kernel_size % 2 == 0:
            raise KernelTooLarge(f"spatial attention kernel must be odd, got {kernel_size}")
        self.kernel_size = kernel_size
        self.conv = Conv2d(2, 1, kernel_size, rng, padding=kernel_size // 2)

    def pooled_maps(self, x):
        """(B, 2, H, W): channel mean stacked on channel max."""
        return F.concat([F.mean(x, axis=1, keepdims=True), F.amax(x, axis=1, keepdims=True)], axis=1)

    def mask(self, x):
        if x.ndim != 4:
            raise ShapeMismatch(f"spatial attention expects a 4-D map, got {x.shape}")
        limit = 2 * min(x.shape[2], x.shape[3]) + 1
        if self.kernel_size > limit:
            raise KernelTooLarge(
                f"kernel {self.kernel_size} too large for {x.shape[2]}x{x.shape[3]} map (max {limit})"
            )
        return F.sigmoid(self.conv(self.pooled_maps(x)))

    def forward(self, x):
        return x * self.mask(x)


def fitting_kernel(requested, height, width):
    """Largest odd kernel <= ``requested`` that the spatial gate accepts on an HxW map."""
    k = min(requested, 2 * min(height, width) + 1)
    return k if k % 2 else k - 1
