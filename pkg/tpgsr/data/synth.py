# tpgsr/data/synth.py

from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
from scipy import ndimage

from ..exceptions import ValidationError
from .alphabet import ALPHABET, SYMBOLS, frame_labels, frame_positions
from .font import CELL_HEIGHT, CELL_WIDTH, glyph_mask

HR_SIZE: Tuple[int, int] = (32, 128)
LR_SIZE: Tuple[int, int] = (16, 64)
FRAMES = 16
MAX_LABEL_LENGTH = 8
MAX_SHIFT = 8
CONTRAST_RANGE = (0.4, 1.0)
HR_NOISE_SIGMA = 0.02
LR_NOISE_SIGMA = 0.01
DIFFICULTIES: Tuple[str, ...] = ("easy", "medium", "hard")
BLUR_SIGMA_RANGES: Dict[str, Tuple[float, float]] = {
    "easy": (0.5, 1.0),
    "medium": (1.0, 1.5),
    "hard": (1.5, 2.5),
}


@dataclass
class SamplePair:
    lr: np.ndarray
    hr: np.ndarray
    label: str
    frame_labels: np.ndarray
    difficulty: str


def glyph_left_edges(length: int, start: int, frames: int = FRAMES, width: int = HR_SIZE[1]) -> List[int]:
    """Left pixel column of each glyph cell, laid out left to right.

    Glyph centres sit ``start`` px into the frame that carries their label, so frame labels
    and glyph centres agree for every start in ``0..MAX_SHIFT``. Only the last cell of an
    8-character label can cross the right border; it is pulled back inside the image.
    """
    if not 0 <= start <= MAX_SHIFT:
        raise ValidationError(f"start must lie in 0..{MAX_SHIFT}, got {start}", field="start")
    frame_width = width // frames
    return [
        min(frame_width * pos + start - CELL_WIDTH // 2, width - CELL_WIDTH) for pos in frame_positions(length, frames)
    ]


def _check_label(label: str):
    if not label:
        raise ValidationError("label must not be empty", field="label")
    if len(label) > MAX_LABEL_LENGTH:
        raise ValidationError(f"label longer than {MAX_LABEL_LENGTH} characters", field="label")
    ALPHABET.encode(label)


def render_hr(label: str, rng: np.random.Generator, noise_sigma: float = HR_NOISE_SIGMA) -> np.ndarray:
    """Render ``label`` as a 32x128 image in [0, 1] from the embedded bitmap font."""
    _check_label(label)
    height, width = HR_SIZE
    start = int(rng.integers(0, MAX_SHIFT + 1))
    contrast = rng.uniform(*CONTRAST_RANGE)
    background = rng.uniform(contrast, 1.0)
    foreground = background - contrast

    image = np.full(HR_SIZE, background, dtype=np.float64)
    top = (height - CELL_HEIGHT) // 2
    for char, left in zip(label, glyph_left_edges(len(label), start)):
        cell = image[top : top + CELL_HEIGHT, left : left + CELL_WIDTH]
        cell[glyph_mask(char)] = foreground
    if noise_sigma > 0:
        image += rng.normal(0.0, noise_sigma, size=image.shape)
    return np.clip(image, 0.0, 1.0)


def blur_radius(sigma: float) -> int:
    return max(1, int(np.ceil(3.0 * sigma)))


def gaussian_blur(image: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian filter truncated at ``ceil(3 sigma)`` px, edge-clamped borders."""
    return ndimage.gaussian_filter(
        np.asarray(image, dtype=np.float64), sigma, mode="nearest", radius=blur_radius(sigma)
    )


def box_downsample(image: np.ndarray, factor: int = 2) -> np.ndarray:
    h, w = image.shape
    return image.reshape(h // factor, factor, w // factor, factor).mean(axis=(1, 3))


def degrade(
    hr: np.ndarray, difficulty: str, rng: np.random.Generator, noise_sigma: float = LR_NOISE_SIGMA
) -> np.ndarray:
    """Blur (severity by difficulty), 2x2 box downsample, add noise, clamp to [0, 1]."""
    if difficulty not in BLUR_SIGMA_RANGES:
        raise ValidationError(f"unknown difficulty {difficulty!r}", field="difficulty")
    sigma = rng.uniform(*BLUR_SIGMA_RANGES[difficulty])
    lr = box_downsample(gaussian_blur(hr, sigma))
    if noise_sigma > 0:
        lr = lr + rng.normal(0.0, noise_sigma, size=lr.shape)
    return np.clip(lr, 0.0, 1.0)


def random_label(rng: np.random.Generator) -> str:
    length = int(rng.integers(1, MAX_LABEL_LENGTH + 1))
    return "".join(SYMBOLS[i] for i in rng.integers(0, len(SYMBOLS), size=length))


def make_sample(rng: np.random.Generator, difficulty: str, label: str = "") -> SamplePair:
    label = label or random_label(rng)
    hr = render_hr(label, rng)
    lr = degrade(hr, difficulty, rng)
    return SamplePair(
        lr=lr.astype(np.float32),
        hr=hr.astype(np.float32),
        label=label,
        frame_labels=frame_labels(label, FRAMES),
        difficulty=difficulty,
    )
