import numpy as np
import pytest
from reactivex.subject import Subject

from tpgsr.data.alphabet import ALPHABET, BLANK
from tpgsr.engine import functional as F
from tpgsr.engine.optim import Adam
from tpgsr.engine.tensor import Tensor, precision
from tpgsr.exceptions import ShapeError, ValidationError
from tpgsr.models.recognizer import (
    RecognizerModel,
    TextPrior,
    decode,
    generate_tp,
    load_recognizer,
    predict,
    pretrain,
    recognition_accuracy,
    save_recognizer,
    set_trainable,
)

from ..conftest import TINY_REC_CHANNELS


def one_hot_prior(frames):
    probs = np.zeros((1, len(frames), len(ALPHABET)))
    for i, ch in enumerate(frames):
        probs[0, i, BLANK if ch is None else ALPHABET.lookup(ch)] = 1.0
    return TextPrior(probs=Tensor(probs), source="from_hr")


def test_prior_shape_and_rows(tiny_recognizer, rng):
    tp = generate_tp(tiny_recognizer, rng.uniform(size=(3, 1, 32, 128)))
    assert tp.probs.shape == (3, 16, 37)
    assert tp.frames == 16
    np.testing.assert_allclose(tp.numpy().sum(axis=-1), 1.0, atol=1e-6)


def test_low_resolution_input_is_resized(tiny_recognizer, rng):
    tp = generate_tp(tiny_recognizer, rng.uniform(size=(2, 1, 16, 64)), source="from_lr")
    assert tp.probs.shape == (2, 16, 37)
    assert tp.source == "from_lr"


def test_eval_mode_is_deterministic(tiny_recognizer, rng):
    image = rng.uniform(size=(2, 1, 32, 128))
    a = generate_tp(tiny_recognizer, image).numpy()
    b = generate_tp(tiny_recognizer, image).numpy()
    np.testing.assert_array_equal(a, b)


def test_fresh_model_is_near_uniform():
    for seed in range(10):
        model = RecognizerModel(np.random.default_rng(seed)).eval()
        tp = generate_tp(model, np.zeros((1, 1, 32, 128)))
        assert tp.numpy().max() < 0.5


def test_wrong_input_size(tiny_recognizer):
    with pytest.raises(ShapeError):
        tiny_recognizer(Tensor(np.zeros((1, 1, 16, 64))))


def test_decode_examples():
    assert decode(one_hot_prior(["a", "a", None, "b"])) == ["ab"]
    assert decode(one_hot_prior([None, None, None, None])) == [""]
    assert decode(one_hot_prior([None, "c", "c", None, "c"])) == ["cc"]


def test_recognition_accuracy_ignores_case():
    assert recognition_accuracy(["ab", "cd"], ["AB", "ce"]) == 0.5
    assert recognition_accuracy([], []) == 0.0


def test_zero_epochs_leave_model_unchanged(tiny_recognizer, tiny_splits):
    before = {k: v.copy() for k, v in tiny_recognizer.state_dict().items()}
    pretrain(tiny_recognizer, tiny_splits[0], epochs=0)
    for name, value in tiny_recognizer.state_dict().items():
        np.testing.assert_array_equal(value, before[name], err_msg=name)


def test_pretrain_rejects_empty_dataset(tiny_recognizer):
    with pytest.raises(ValidationError):
        pretrain(tiny_recognizer, [], epochs=1)


def test_pretrain_updates_and_reports(tiny_recognizer, tiny_splits):
    train, test = tiny_splits
    events = Subject()
    seen = []
    events.subscribe(seen.append)
    before = tiny_recognizer.classifier.weight.data.copy()
    model = pretrain(tiny_recognizer, train, epochs=2, lr=1e-2, batch_size=3, val_samples=test, events=events)
    assert not model.training
    assert not np.array_equal(model.classifier.weight.data, before)
    assert [e.epoch for e in seen] == [1, 2]
    assert all(e.phase == "pretrain" and "frame_acc" in e.metrics for e in seen)


def test_frozen_recognizer_does_not_move(tiny_recognizer, rng):
    set_trainable(tiny_recognizer, False)
    before = {k: v.copy() for k, v in tiny_recognizer.state_dict().items()}
    image = Tensor(rng.uniform(size=(2, 1, 32, 128)), requires_grad=True, dtype="f32")
    optimizer = Adam(tiny_recognizer.named_parameters(), lr=1e-2)
    for _ in range(5):
        loss = F.l1_loss(generate_tp(tiny_recognizer, image).probs, Tensor(np.full((2, 16, 37), 1 / 37), dtype="f32"))
        loss.backward()
        optimizer.step()
    for name, value in tiny_recognizer.state_dict().items():
        np.testing.assert_array_equal(value, before[name], err_msg=name)


def test_tuned_recognizer_moves(tiny_recognizer, rng):
    set_trainable(tiny_recognizer, True)
    before = tiny_recognizer.classifier.weight.data.copy()
    target = np.zeros((2, 16, 37))
    target[..., 5] = 1.0
    optimizer = Adam(tiny_recognizer.named_parameters(), lr=1e-2)
    loss = F.l1_loss(generate_tp(tiny_recognizer, rng.uniform(size=(2, 1, 32, 128))).probs, Tensor(target, dtype="f32"))
    loss.backward()
    optimizer.step()
    assert not np.array_equal(tiny_recognizer.classifier.weight.data, before)


def test_save_and_load(tmp_path, tiny_recognizer, rng):
    path = save_recognizer(tmp_path / "rec.ckpt", tiny_recognizer, {"seed": 1})
    restored = load_recognizer(path)
    assert restored.channels == TINY_REC_CHANNELS
    assert not restored.training
    images = rng.uniform(size=(2, 1, 32, 128))
    assert predict(restored, images) == predict(tiny_recognizer, images)
    np.testing.assert_array_equal(
        generate_tp(restored, images).numpy(), generate_tp(tiny_recognizer, images).numpy()
    )


def test_double_precision_model(rng):
    with precision("f64"):
        model = RecognizerModel(rng, channels=TINY_REC_CHANNELS).eval()
        tp = generate_tp(model, np.zeros((1, 1, 32, 128), dtype=np.float32))
    assert tp.probs.dtype == np.float64
