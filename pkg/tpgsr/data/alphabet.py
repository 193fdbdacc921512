# tpgsr/data/alphabet.py

from typing import Iterable, List, Sequence

import numpy as np

from ..exceptions import ValidationError

BLANK = 0
SYMBOLS = "0123456789abcdefghijklmnopqrstuvwxyz"


class Alphabet:
    """37 categories: index 0 is the blank label, then digits and lowercase letters."""

    def __init__(self, symbols: str = SYMBOLS):
        self.symbols = symbols
        self._index = {ch: i + 1 for i, ch in enumerate(symbols)}

    def __len__(self) -> int:
        return len(self.symbols) + 1

    def lookup(self, char: str) -> int:
        """Class index of ``char``; uppercase folds to lowercase, anything else is blank."""
        return self._index.get(char.lower(), BLANK)

    def symbol(self, index: int) -> str:
        return "" if index == BLANK else self.symbols[index - 1]

    def encode(self, label: str) -> List[int]:
        indices = [self.lookup(ch) for ch in label]
        if BLANK in indices:
            bad = label[indices.index(BLANK)]
            raise ValidationError(f"character {bad!r} is outside the alphabet", field="label")
        return indices

    def normalize(self, label: str) -> str:
        return "".join(self.symbol(self.lookup(ch)) for ch in label)

    def collapse(self, frame_indices: Iterable[int]) -> str:
        """Greedy CTC collapse: merge consecutive repeats, then drop blanks."""
        out: List[str] = []
        previous = None
        for index in frame_indices:
            index = int(index)
            if index != previous and index != BLANK:
                out.append(self.symbol(index))
            previous = index
        return "".join(out)


ALPHABET = Alphabet()


def frame_positions(length: int, frames: int) -> List[int]:
    """Frame index of each character when ``length`` characters spread over ``frames`` frames.

    Character i (1-based) sits at the center of the i-th of ``length`` equal segments,
    ``floor((i - 0.5) * frames / length)``; with ``length <= frames / 2`` consecutive
    characters are always separated by at least one blank frame.
    """
    return [int(np.floor((i - 0.5) * frames / length)) for i in range(1, length + 1)]


def frame_labels(label: str, frames: int, alphabet: Alphabet = ALPHABET) -> np.ndarray:
    indices = alphabet.encode(label)
    if not indices or 2 * len(indices) > frames:
        raise ValidationError(f"label length {len(indices)} does not fit {frames} frames", field="label")
    out = np.zeros(frames, dtype=np.uint8)
    for pos, index in zip(frame_positions(len(indices), frames), indices):
        out[pos] = index
    return out


def decode_indices(frame_indices: Sequence[int], alphabet: Alphabet = ALPHABET) -> str:
    return alphabet.collapse(frame_indices)
