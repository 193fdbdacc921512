# tpgsr/engine/checkpoint.py

import json
import struct
from pathlib import Path
from typing import Any, Dict, Tuple, Union

import numpy as np

from ..exceptions import CheckpointError

MAGIC = b"TPGS"
FORMAT_VERSION = 1


def save_checkpoint(
    path: Union[str, Path], arrays: Dict[str, np.ndarray], metadata: Dict[str, Any]
) -> Path:
    """Write named arrays as little-endian f32 records followed by a JSON metadata block.

    Layout: magic, version u32, record count u32, records
    [name-length u32, UTF-8 name, rank u32, dims u64 x rank, f32 data], metadata length u32,
    metadata JSON.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(arrays))]
    for name, array in arrays.items():
        encoded = name.encode("utf-8")
        array = np.asarray(array)
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}Q", *array.shape))
        chunks.append(np.ascontiguousarray(array, dtype="<f4").tobytes())
    meta = json.dumps(metadata, sort_keys=True).encode("utf-8")
    chunks.append(struct.pack("<I", len(meta)))
    chunks.append(meta)
    path.write_bytes(b"".join(chunks))
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError("file not found", path=str(path))
    blob = path.read_bytes()
    reader = _Reader(blob, str(path))
    if reader.take(4) != MAGIC:
        raise CheckpointError("bad magic bytes", path=str(path))
    version, count = reader.unpack("<II")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported format version {version}", path=str(path))
    arrays: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<I")
        name = reader.text(name_len)
        (rank,) = reader.unpack("<I")
        dims = reader.unpack(f"<{rank}Q") if rank else ()
        size = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(reader.take(4 * size), dtype="<f4").astype(np.float32)
        arrays[name] = data.reshape(dims)
    (meta_len,) = reader.unpack("<I")
    try:
        metadata = json.loads(reader.take(meta_len).decode("utf-8"))
    except json.JSONDecodeError as e:
        raise CheckpointError(f"metadata is not valid JSON: {e}", path=str(path)) from e
    return arrays, metadata


class _Reader:
    def __init__(self, blob: bytes, source: str):
        self.blob = blob
        self.offset = 0
        self.source = source

    def take(self, count: int) -> bytes:
        end = self.offset + count
        if end > len(self.blob):
            raise CheckpointError(f"truncated at byte offset {self.offset}", path=self.source)
        chunk = self.blob[self.offset : end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str) -> Tuple[Any, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def text(self, count: int) -> str:
        start = self.offset
        try:
            return self.take(count).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointError(f"undecodable name at byte offset {start}", path=self.source) from e
