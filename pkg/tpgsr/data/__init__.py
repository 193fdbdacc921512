# tpgsr/data/__init__.py

from .alphabet import ALPHABET, BLANK, Alphabet, decode_indices, frame_labels, frame_positions
from .dataset import (
    DatasetManifest,
    build_dataset,
    collate,
    load_dataset,
    read_manifest,
    split_path,
)
from .font import glyph_mask
from .imageio import read_image, write_image, write_pgm, write_png
from .synth import DIFFICULTIES, SamplePair, degrade, gaussian_blur, make_sample, render_hr

__all__ = [
    "ALPHABET",
    "Alphabet",
    "BLANK",
    "DIFFICULTIES",
    "DatasetManifest",
    "SamplePair",
    "build_dataset",
    "collate",
    "decode_indices",
    "degrade",
    "frame_labels",
    "frame_positions",
    "gaussian_blur",
    "glyph_mask",
    "load_dataset",
    "make_sample",
    "read_image",
    "read_manifest",
    "render_hr",
    "split_path",
    "write_image",
    "write_pgm",
    "write_png",
]
