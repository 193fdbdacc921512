# tpgsr/data/imageio.py

from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..exceptions import ValidationError

FORMATS = {".pgm": "PPM", ".png": "PNG"}


def _quantize(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def _format(path: Path) -> str:
    suffix = path.suffix.lower()
    if suffix not in FORMATS:
        raise ValidationError(f"unsupported image format {suffix!r}; use .pgm or .png", field="image")
    return FORMATS[suffix]


def write_image(path: Union[str, Path], image: np.ndarray) -> Path:
    """Write a 2-D image in [0, 1] as 8-bit grayscale; ``.pgm`` is binary P5."""
    path = Path(path)
    fmt = _format(path)
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValidationError(f"grayscale output needs a 2-D image, got shape {image.shape}", field="image")
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(_quantize(image)).save(path, format=fmt)
    return path


def read_image(path: Union[str, Path]) -> np.ndarray:
    """Load a PGM or PNG file as a grayscale float64 image in [0, 1]."""
    path = Path(path)
    _format(path)
    try:
        with Image.open(path) as img:
            gray = img.convert("L")
    except (UnidentifiedImageError, OSError, SyntaxError) as e:
        raise ValidationError(f"cannot read image {path}: {e}", field="image") from e
    return np.asarray(gray, dtype=np.float64) / 255.0


def write_pgm(path: Union[str, Path], image: np.ndarray) -> Path:
    return write_image(Path(path).with_suffix(".pgm"), image)


def write_png(path: Union[str, Path], image: np.ndarray) -> Path:
    return write_image(Path(path).with_suffix(".png"), image)
