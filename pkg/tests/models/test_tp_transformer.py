import numpy as np
import pytest

from tpgsr.engine.tensor import Tensor
from tpgsr.exceptions import ShapeError
from tpgsr.models.tp_transformer import TPTransformer, tp_transform


def priors(rng, batch, frames=16):
    logits = rng.normal(size=(batch, frames, 37))
    probs = np.exp(logits)
    return probs / probs.sum(axis=-1, keepdims=True)


def test_output_shape(rng):
    transformer = TPTransformer(rng, channels=(8, 8, 8, 32))
    out = tp_transform(transformer, Tensor(priors(rng, 2), dtype="f32"))
    assert out.shape == (2, 32, 16, 128)
    assert (out.numpy() >= 0).all()


def test_eval_mode_is_batch_independent(f64, rng):
    transformer = TPTransformer(rng, channels=(8, 8, 8, 32)).eval()
    batch = priors(rng, 3)
    together = transformer(Tensor(batch)).numpy()
    alone = transformer(Tensor(batch[1:2])).numpy()
    np.testing.assert_allclose(together[1:2], alone, atol=1e-6)


def test_frame_count_mismatch(rng):
    transformer = TPTransformer(rng, channels=(8, 8, 8, 32))
    with pytest.raises(ShapeError):
        transformer(Tensor(priors(rng, 1, frames=12), dtype="f32"))


def test_strides_must_match_blocks(rng):
    with pytest.raises(ShapeError):
        TPTransformer(rng, channels=(8, 32), strides=((2, 2),))
