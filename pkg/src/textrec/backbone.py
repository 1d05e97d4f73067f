"""Feature extraction: residual backbone, text attention mask, map-to-sequence.

The backbone is a residual network whose overall spatial stride is pinned to 8
in both axes: a 3x3 stride-1 stem (no maxpool) followed by four residual
stages with strides (1, 2, 2, 2). The attention module turns the feature
volume into a single-channel sigmoid mask (3-high by 1-wide convolution), and
map-to-sequence flattens each width column into one feature vector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import (
    BatchNormState,
    Tensor,
    add,
    batch_norm,
    conv2d,
    parameter,
    relu,
    reshape,
    scale_channels,
    sigmoid,
    transpose,
)

STAGE_STRIDES = (1, 2, 2, 2)  # with the stride-1 stem this realizes /8 overall


@dataclass(frozen=True)
class BackboneConfig:
    """Sizing knobs for the feature extractor.

    The defaults are the desk-scale ("toy") sizes; ``paper_scale()`` selects
    the 34-layer layout whose final feature depth is 512.
    """

    input_channels: int = 1
    stage_blocks: tuple[int, int, int, int] = (1, 1, 1, 1)
    stage_channels: tuple[int, int, int, int] = (16, 32, 64, 128)

    def __post_init__(self):
        if len(self.stage_blocks) != 4 or len(self.stage_channels) != 4:
            raise ValueError("stage_blocks and stage_channels must each have 4 entries")
        if any(b < 1 for b in self.stage_blocks) or any(c < 1 for c in self.stage_channels):
            raise ValueError("stage sizes must be positive")
        if self.input_channels < 1:
            raise ValueError("input_channels must be positive")

    @property
    def out_channels(self) -> int:
        return self.stage_channels[3]

    @classmethod
    def paper_scale(cls, input_channels: int = 1) -> "BackboneConfig":
        return cls(
            input_channels=input_channels,
            stage_blocks=(3, 4, 6, 3),
            stage_channels=(64, 128, 256, 512),
        )


def _he_conv(rng: np.random.Generator, out_ch: int, in_ch: int, kh: int, kw: int) -> Tensor:
    std = np.sqrt(2.0 / (in_ch * kh * kw))
    return parameter(rng.normal(0.0, std, size=(out_ch, in_ch, kh, kw)))


class Conv2d:
    """Bias-free convolution layer (normalization supplies the shift)."""

    def __init__(self, rng, in_ch: int, out_ch: int, kernel: tuple[int, int], stride=(1, 1)):
        self.weight = _he_conv(rng, out_ch, in_ch, *kernel)
        self.stride = stride

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, stride=self.stride, padding="same")

    def parameters(self) -> dict[str, Tensor]:
        return {"w": self.weight}


class BatchNorm2d:
    def __init__(self, channels: int):
        self.gamma = parameter(np.ones(channels))
        self.beta = parameter(np.zeros(channels))
        self.state = BatchNormState(channels)

    def forward(self, x: Tensor, training: bool) -> Tensor:
        return batch_norm(x, self.gamma, self.beta, self.state, training)

    def parameters(self) -> dict[str, Tensor]:
        return {"gamma": self.gamma, "beta": self.beta}


class BasicBlock:
    """conv-norm-relu, conv-norm, shortcut add, relu.

    The shortcut is the identity unless channels or stride change, in which
    case a 1x1 projection (with its own normalization) is used.
    """

    def __init__(self, rng, in_ch: int, out_ch: int, stride: int):
        self.conv1 = Conv2d(rng, in_ch, out_ch, (3, 3), stride=(stride, stride))
        self.bn1 = BatchNorm2d(out_ch)
        self.conv2 = Conv2d(rng, out_ch, out_ch, (3, 3))
        self.bn2 = BatchNorm2d(out_ch)
        if in_ch != out_ch or stride != 1:
            self.proj = Conv2d(rng, in_ch, out_ch, (1, 1), stride=(stride, stride))
            self.proj_bn = BatchNorm2d(out_ch)
        else:
            self.proj = None
            self.proj_bn = None

    def forward(self, x: Tensor, training: bool) -> Tensor:
        y = relu(self.bn1.forward(self.conv1.forward(x), training))
        y = self.bn2.forward(self.conv2.forward(y), training)
        if self.proj is not None:
            shortcut = self.proj_bn.forward(self.proj.forward(x), training)
        else:
            shortcut = x
        return relu(add(y, shortcut))

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for name, layer in (("conv1", self.conv1), ("bn1", self.bn1), ("conv2", self.conv2), ("bn2", self.bn2)):
            for k, v in layer.parameters().items():
                out[f"{name}.{k}"] = v
        if self.proj is not None:
            for k, v in self.proj.parameters().items():
                out[f"proj.{k}"] = v
            for k, v in self.proj_bn.parameters().items():
                out[f"proj_bn.{k}"] = v
        return out

    def norm_states(self) -> dict[str, BatchNormState]:
        out = {"bn1": self.bn1.state, "bn2": self.bn2.state}
        if self.proj_bn is not None:
            out["proj_bn"] = self.proj_bn.state
        return out


class Backbone:
    """Residual feature extractor producing a 1/8-resolution volume."""

    def __init__(self, config: BackboneConfig, rng: np.random.Generator):
        self.config = config
        self.stem_conv = Conv2d(rng, config.input_channels, config.stage_channels[0], (3, 3))
        self.stem_bn = BatchNorm2d(config.stage_channels[0])
        self.stages: list[list[BasicBlock]] = []
        in_ch = config.stage_channels[0]
        for stage, (blocks, out_ch, stride) in enumerate(
            zip(config.stage_blocks, config.stage_channels, STAGE_STRIDES)
        ):
            stage_blocks = []
            for b in range(blocks):
                stage_blocks.append(BasicBlock(rng, in_ch, out_ch, stride if b == 0 else 1))
                in_ch = out_ch
            self.stages.append(stage_blocks)

    def forward(self, image: Tensor, training: bool) -> Tensor:
        """Image (N, C, H, W) with H, W multiples of 8 and H >= 32 -> (N, D, H/8, W/8)."""
        if image.ndim != 4:
            raise ShapeError(f"backbone expects (N, C, H, W), got {image.shape}")
        n, c, h, w = image.shape
        if c != self.config.input_channels:
            raise ShapeError(f"backbone configured for {self.config.input_channels} channels, got {c}")
        if h % 8 != 0 or w % 8 != 0:
            raise ShapeError(f"input spatial dims must be multiples of 8, got {h}x{w}")
        if h < 32:
            raise ShapeError(f"input height must be at least 32, got {h}")
        x = relu(self.stem_bn.forward(self.stem_conv.forward(image), training))
        for stage_blocks in self.stages:
            for block in stage_blocks:
                x = block.forward(x, training)
        return x

    def parameters(self) -> dict[str, Tensor]:
        out = {"stem.conv.w": self.stem_conv.weight}
        for k, v in self.stem_bn.parameters().items():
            out[f"stem.bn.{k}"] = v
        for s, stage_blocks in enumerate(self.stages):
            for b, block in enumerate(stage_blocks):
                for k, v in block.parameters().items():
                    out[f"stage{s}.block{b}.{k}"] = v
        return out

    def norm_states(self) -> dict[str, BatchNormState]:
        out = {"stem.bn": self.stem_bn.state}
        for s, stage_blocks in enumerate(self.stages):
            for b, block in enumerate(stage_blocks):
                for k, v in block.norm_states().items():
                    out[f"stage{s}.block{b}.{k}"] = v
        return out


class AttentionModule:
    """Single-channel sigmoid mask from a 3-high, 1-wide same convolution.

    The kernel spans 3 in height and 1 in width, so the mask at a width
    position depends only on that column of the feature volume.
    """

    def __init__(self, channels: int, rng: np.random.Generator):
        self.conv_w = _he_conv(rng, 1, channels, 3, 1)
        self.conv_b = parameter(np.zeros(1))

    def forward(self, features: Tensor) -> Tensor:
        return sigmoid(conv2d(features, self.conv_w, self.conv_b, stride=(1, 1), padding="same"))

    def parameters(self) -> dict[str, Tensor]:
        return {"conv.w": self.conv_w, "conv.b": self.conv_b}


def apply_attention(features: Tensor, mask: Tensor) -> Tensor:
    """Weight every channel of the feature volume by the shared mask."""
    return scale_channels(features, mask)


def map_to_sequence(features: Tensor) -> Tensor:
    """Convert (N, D, H, W) features to a (W, N, H*D) sequence of column vectors.

    Column w of the volume maps bijectively to sequence vector w; components
    are ordered height-major, then channel.
    """
    if features.ndim != 4:
        raise ShapeError(f"map_to_sequence expects (N, D, H, W), got {features.shape}")
    n, d, h, w = features.shape
    cols = transpose(features, (3, 0, 2, 1))  # (W, N, H, D)
    return reshape(cols, (w, n, h * d))


def sequence_to_columns(seq: np.ndarray, height: int, depth: int) -> np.ndarray:
    """Inverse of the map-to-sequence flattening for one sample.

    Takes (W, H*D) vectors back to (D, H, W); useful for round-trip checks.
    """
    w = seq.shape[0]
    return seq.reshape(w, height, depth).transpose(2, 1, 0)
