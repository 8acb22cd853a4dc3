from .layers import BatchNorm2d, ChannelAttention, Conv2d, Linear, SpatialAttention
from .models import (
    ARCHITECTURES,
    BasicBlock,
    ConvBlock,
    EmbeddingModel,
    ProtoConvSmall,
    ResNet18Attention,
    build_model,
)
from .module import Module

__all__ = [
    "ARCHITECTURES",
    "BasicBlock",
    "BatchNorm2d",
    "ChannelAttention",
    "Conv2d",
    "ConvBlock",
    "EmbeddingModel",
    "Linear",
    "Module",
    "ProtoConvSmall",
    "ResNet18Attention",
    "SpatialAttention",
    "build_model",
]
