# tpgsr/models/tp_transformer.py

from typing import Sequence, Tuple

import numpy as np

from ..data.alphabet import ALPHABET
from ..engine.nn import BatchNorm2d, ConvTranspose2d, Module, ModuleList
from ..engine.tensor import Tensor
from ..exceptions import ShapeError

DEFAULT_CHANNELS: Tuple[int, ...] = (64, 64, 64, 32)
DEFAULT_STRIDES: Tuple[Tuple[int, int], ...] = ((2, 2), (2, 2), (2, 2), (2, 1))


class TPTransformer(Module):
    """Deconv+BN+ReLU stack lifting a ``[B, L, |A|]`` prior to a ``[B, 32, 16, 8L]`` feature map.

    The prior enters with classes as channels, height 1 and width L.
    """

    def __init__(
        self,
        rng: np.random.Generator,
        frames: int = 16,
        num_classes: int = len(ALPHABET),
        channels: Sequence[int] = DEFAULT_CHANNELS,
        strides: Sequence[Tuple[int, int]] = DEFAULT_STRIDES,
    ):
        super().__init__()
        if len(channels) != len(strides):
            raise ShapeError("one stride per deconvolution block is required", [tuple(channels), tuple(strides)])
        self.frames = frames
        self.num_classes = num_classes
        self.out_channels = channels[-1]
        widths = [num_classes, *channels]
        self.deconvs = ModuleList(
            [ConvTranspose2d(widths[i], widths[i + 1], rng, stride=strides[i]) for i in range(len(channels))]
        )
        self.norms = ModuleList([BatchNorm2d(c) for c in channels])

    def forward(self, probs: Tensor) -> Tensor:
        if probs.ndim != 3 or probs.shape[1:] != (self.frames, self.num_classes):
            raise ShapeError(
                f"TP transformer expects [B,{self.frames},{self.num_classes}] priors", [probs.shape]
            )
        b = probs.shape[0]
        x = probs.permute(0, 2, 1).reshape(b, self.num_classes, 1, self.frames)
        for deconv, norm in zip(self.deconvs, self.norms):
            x = norm(deconv(x)).relu()
        return x


def tp_transform(transformer: TPTransformer, probs: Tensor) -> Tensor:
    return transformer(probs)
