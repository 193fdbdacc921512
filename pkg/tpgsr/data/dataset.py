# tpgsr/data/dataset.py

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from ..exceptions import DatasetError, ValidationError
from ..logging import TPGSRLogger
from ..utils import SPLIT_IDS, derive_rng, resolve_threads
from .alphabet import ALPHABET
from .synth import (
    BLUR_SIGMA_RANGES,
    DIFFICULTIES,
    FRAMES,
    HR_SIZE,
    LR_SIZE,
    MAX_LABEL_LENGTH,
    SamplePair,
    make_sample,
)

logger = TPGSRLogger.get_logger()

MAGIC = b"TPGD"
FORMAT_VERSION = 1
LR_PIXELS = LR_SIZE[0] * LR_SIZE[1]
HR_PIXELS = HR_SIZE[0] * HR_SIZE[1]


class DatasetManifest(BaseModel):
    version: int = FORMAT_VERSION
    split: str
    sample_count: int
    difficulty_counts: Dict[str, int]
    seed: int
    frames: int = FRAMES
    blur_sigma_ranges: Dict[str, Tuple[float, float]] = Field(
        default_factory=lambda: dict(BLUR_SIGMA_RANGES)
    )
    offsets: List[int]

    @field_validator("offsets")
    @classmethod
    def offsets_increase(cls, offsets: List[int]) -> List[int]:
        if any(b <= a for a, b in zip(offsets, offsets[1:])):
            raise ValueError("record offsets must be strictly increasing")
        return offsets

    @model_validator(mode="after")
    def counts_add_up(self) -> "DatasetManifest":
        if sum(self.difficulty_counts.values()) != self.sample_count:
            raise ValueError("difficulty counts do not sum to the sample count")
        if len(self.offsets) != self.sample_count:
            raise ValueError("one offset per record is required")
        return self


def split_path(root: Union[str, Path], split: str) -> Path:
    return Path(root) / f"{split}.bin"


def encode_record(sample: SamplePair) -> bytes:
    label = sample.label.encode("ascii")
    return b"".join(
        [
            struct.pack("<B", len(label)),
            label,
            np.asarray(sample.frame_labels, dtype=np.uint8).tobytes(),
            np.ascontiguousarray(sample.lr, dtype="<f4").tobytes(),
            np.ascontiguousarray(sample.hr, dtype="<f4").tobytes(),
            struct.pack("<B", DIFFICULTIES.index(sample.difficulty)),
        ]
    )


def generate_split(split: str, count: int, seed: int, threads: int = 0) -> List[SamplePair]:
    """Samples for one split; sample ``i`` has difficulty ``i mod 3`` and its own RNG stream."""

    def build(index: int) -> SamplePair:
        rng = derive_rng(seed, SPLIT_IDS[split], index)
        return make_sample(rng, DIFFICULTIES[index % len(DIFFICULTIES)])

    workers = resolve_threads(threads)
    if workers == 1:
        return [build(i) for i in range(count)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(build, range(count)))


def write_dataset(path: Union[str, Path], split: str, samples: Sequence[SamplePair], seed: int) -> DatasetManifest:
    records = [encode_record(s) for s in samples]
    offsets = np.concatenate([[0], np.cumsum([len(r) for r in records])[:-1]]).astype(int).tolist()
    counts = {d: sum(1 for s in samples if s.difficulty == d) for d in DIFFICULTIES}
    manifest = DatasetManifest(
        split=split, sample_count=len(samples), difficulty_counts=counts, seed=seed, offsets=offsets
    )
    header = json.dumps(manifest.model_dump(), sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(
        b"".join([MAGIC, struct.pack("<II", FORMAT_VERSION, len(header)), header, *records])
    )
    return manifest


def build_dataset(
    root: Union[str, Path], n_train: int, n_test: int, seed: int, threads: int = 0
) -> Dict[str, DatasetManifest]:
    """Generate ``train.bin`` and ``test.bin`` under ``root``; a pure function of the arguments."""
    if n_train < 1 or n_test < 1:
        raise ValidationError(
            f"need at least one sample per split, got train={n_train} test={n_test}",
            field="n_train" if n_train < 1 else "n_test",
        )
    manifests = {}
    for split, count in (("train", n_train), ("test", n_test)):
        samples = generate_split(split, count, seed, threads)
        manifests[split] = write_dataset(split_path(root, split), split, samples, seed)
        logger.info(f"Wrote {count} {split} samples to {split_path(root, split)}")
    return manifests


class _Cursor:
    def __init__(self, raw: bytes, path: Path):
        self.raw = raw
        self.path = path
        self.pos = 0

    def take(self, size: int, what: str) -> bytes:
        if self.pos + size > len(self.raw):
            raise DatasetError(f"{self.path}: truncated while reading {what}", offset=self.pos)
        chunk = self.raw[self.pos : self.pos + size]
        self.pos += size
        return chunk


def _read_header(cursor: _Cursor) -> DatasetManifest:
    if cursor.take(4, "magic") != MAGIC:
        raise DatasetError(f"{cursor.path}: not a dataset file", offset=0)
    version, header_len = struct.unpack("<II", cursor.take(8, "header"))
    if version != FORMAT_VERSION:
        raise DatasetError(f"{cursor.path}: unsupported version {version}", offset=4)
    start = cursor.pos
    try:
        return DatasetManifest(**json.loads(cursor.take(header_len, "manifest").decode("utf-8")))
    except (ValueError, TypeError) as e:
        raise DatasetError(f"{cursor.path}: invalid manifest ({e})", offset=start) from e


def read_manifest(path: Union[str, Path]) -> DatasetManifest:
    path = Path(path)
    return _read_header(_Cursor(path.read_bytes(), path))


def load_dataset(path: Union[str, Path]) -> List[SamplePair]:
    """Decode every record of a split file.

    Raises:
        DatasetError: with the byte offset of the first corrupt or truncated field.
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"{path} does not exist", offset=0)
    cursor = _Cursor(path.read_bytes(), path)
    manifest = _read_header(cursor)
    base = cursor.pos
    samples = []
    for index, offset in enumerate(manifest.offsets):
        if cursor.pos - base != offset:
            raise DatasetError(f"{path}: record {index} is not at its manifest offset", offset=cursor.pos)
        record_start = cursor.pos
        (label_len,) = struct.unpack("<B", cursor.take(1, "label length"))
        if not 1 <= label_len <= MAX_LABEL_LENGTH:
            raise DatasetError(f"{path}: invalid label length {label_len}", offset=record_start)
        label = cursor.take(label_len, "label").decode("ascii", errors="replace")
        if ALPHABET.normalize(label) != label:
            raise DatasetError(f"{path}: label {label!r} outside the alphabet", offset=record_start + 1)
        frames = np.frombuffer(cursor.take(manifest.frames, "frame labels"), dtype=np.uint8).copy()
        lr = np.frombuffer(cursor.take(4 * LR_PIXELS, "lr pixels"), dtype="<f4").reshape(LR_SIZE)
        hr = np.frombuffer(cursor.take(4 * HR_PIXELS, "hr pixels"), dtype="<f4").reshape(HR_SIZE)
        difficulty_pos = cursor.pos
        (difficulty,) = struct.unpack("<B", cursor.take(1, "difficulty"))
        if difficulty >= len(DIFFICULTIES):
            raise DatasetError(f"{path}: invalid difficulty code {difficulty}", offset=difficulty_pos)
        samples.append(
            SamplePair(
                lr=lr.astype(np.float32),
                hr=hr.astype(np.float32),
                label=label,
                frame_labels=frames,
                difficulty=DIFFICULTIES[difficulty],
            )
        )
    if cursor.pos != len(cursor.raw):
        raise DatasetError(f"{path}: trailing bytes after the last record", offset=cursor.pos)
    return samples


def collate(samples: Sequence[SamplePair]) -> Tuple[np.ndarray, np.ndarray, np.ndarray, List[str]]:
    """Stack samples into ``lr [B,1,16,64]``, ``hr [B,1,32,128]``, ``frame_labels [B,L]``, labels."""
    lr = np.stack([s.lr for s in samples])[:, None]
    hr = np.stack([s.hr for s in samples])[:, None]
    frames = np.stack([s.frame_labels for s in samples]).astype(np.int64)
    return lr, hr, frames, [s.label for s in samples]
