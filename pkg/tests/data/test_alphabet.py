import numpy as np
import pytest

from tpgsr.data.alphabet import ALPHABET, BLANK, decode_indices, frame_labels, frame_positions
from tpgsr.exceptions import ValidationError


def idx(ch):
    return ALPHABET.lookup(ch)


def test_alphabet_layout():
    assert len(ALPHABET) == 37
    assert idx("0") == 1
    assert idx("a") == 11
    assert idx("A") == idx("a")
    assert ALPHABET.symbol(BLANK) == ""


@pytest.mark.parametrize(
    "frames, expected",
    [
        (["a", "a", None, "b"], "ab"),
        ([None, None, None], ""),
        ([None, "c", "c", None, "c"], "cc"),
        (["z"], "z"),
    ],
)
def test_greedy_collapse(frames, expected):
    indices = [BLANK if f is None else idx(f) for f in frames]
    assert decode_indices(indices) == expected


def test_encode_rejects_unknown_characters():
    with pytest.raises(ValidationError) as excinfo:
        ALPHABET.encode("ab!")
    assert "'!'" in str(excinfo.value)


def test_normalize_folds_case():
    assert ALPHABET.normalize("HeLLo7") == "hello7"


def test_two_character_label_placement():
    labels = frame_labels("ab", 16)
    assert labels[4] == idx("a")
    assert labels[12] == idx("b")
    assert np.count_nonzero(labels) == 2


def test_characters_are_separated_by_blanks():
    for length in range(1, 9):
        positions = frame_positions(length, 16)
        assert positions == sorted(positions)
        assert all(b - a >= 2 for a, b in zip(positions, positions[1:]))
        labels = frame_labels("7" * length, 16)
        assert decode_indices(labels) == "7" * length


def test_label_too_long_for_frames():
    with pytest.raises(ValidationError):
        frame_labels("abcdefghi", 16)
