# tpgsr/models/sr.py

from typing import Optional

import numpy as np

from ..engine import functional as F
from ..engine.nn import BatchNorm2d, Conv2d, Module, ModuleList
from ..engine.tensor import Tensor
from ..exceptions import ShapeError

TP_CHANNELS = 32


class TPGuidedSRBlock(Module):
    """Residual conv block whose input is first fused with resized text-prior features."""

    def __init__(self, channels: int, rng: np.random.Generator, tp_channels: int = TP_CHANNELS):
        super().__init__()
        self.channels = channels
        self.tp_channels = tp_channels
        self.conv1 = Conv2d(channels, channels, 3, rng)
        self.bn1 = BatchNorm2d(channels)
        self.conv2 = Conv2d(channels, channels, 3, rng)
        self.bn2 = BatchNorm2d(channels)
        self.projection = Conv2d(channels + tp_channels, channels, 1, rng, padding=0)

    def base(self, x: Tensor) -> Tensor:
        return x + self.bn2(self.conv2(self.bn1(self.conv1(x)).relu()))

    def forward(self, img_feat: Tensor, tp_feat: Optional[Tensor] = None) -> Tensor:
        if tp_feat is None:
            return self.base(img_feat)
        return fuse_forward(self, img_feat, tp_feat)


def fuse_forward(block: TPGuidedSRBlock, img_feat: Tensor, tp_feat: Tensor) -> Tensor:
    """Resize ``tp_feat`` to the image features, concat, 1x1-project, add, then run the block."""
    if img_feat.ndim != 4 or img_feat.shape[1] != block.channels:
        raise ShapeError(f"SR block expects {block.channels} feature channels", [img_feat.shape])
    if tp_feat.ndim != 4 or tp_feat.shape[1] != block.tp_channels or tp_feat.shape[0] != img_feat.shape[0]:
        raise ShapeError(f"SR block expects {block.tp_channels} TP channels", [img_feat.shape, tp_feat.shape])
    height, width = img_feat.shape[2:]
    if tp_feat.shape[2:] != (height, width):
        tp_feat = F.bicubic_resize(tp_feat, height, width)
    fused = img_feat + block.projection(F.concat_channels([img_feat, tp_feat]))
    return block.base(fused)


class SRModule(Module):
    """Head conv, TP-guided residual blocks, long skip, x2 sub-pixel upsampler, tail conv."""

    def __init__(
        self,
        rng: np.random.Generator,
        channels: int = 64,
        blocks: int = 5,
        tp_channels: int = TP_CHANNELS,
        scale: int = 2,
    ):
        super().__init__()
        self.scale = scale
        self.head = Conv2d(1, channels, 3, rng)
        self.blocks = ModuleList([TPGuidedSRBlock(channels, rng, tp_channels) for _ in range(blocks)])
        self.body = Conv2d(channels, channels, 3, rng)
        self.body_bn = BatchNorm2d(channels)
        self.upsample = Conv2d(channels, channels * scale * scale, 3, rng)
        self.tail = Conv2d(channels, 1, 3, rng)

    def forward(self, lr: Tensor, tp_feat: Optional[Tensor] = None) -> Tensor:
        head = self.head(lr).relu()
        x = head
        for block in self.blocks:
            x = block(x, tp_feat)
        x = self.body_bn(self.body(x)) + head
        x = F.pixel_shuffle(self.upsample(x), self.scale)
        return self.tail(x)


def zero_projection(sr: SRModule, freeze: bool = True):
    """Zero every fusion projection; frozen, the module behaves exactly as the TP-free baseline."""
    for block in sr.blocks:
        block.projection.weight.data[...] = 0
        block.projection.bias.data[...] = 0
        if freeze:
            block.projection.weight.requires_grad = False
            block.projection.bias.requires_grad = False
