import numpy as np
import pytest

from tpgsr.config import LossConfig
from tpgsr.engine.tensor import Tensor
from tpgsr.exceptions import ConfigurationError, ShapeError
from tpgsr.losses import kl_tp, multistage_loss, stage_loss, stage_loss_terms


def priors(rng, *shape):
    logits = rng.normal(size=shape)
    e = np.exp(logits - logits.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def loop_stage_loss(sr, hr, t_low, t_high, alpha, beta, eps):
    """Scalar-loop evaluation of image L1 + alpha * TP L1 + beta * KL."""
    image = 0.0
    for value_sr, value_hr in zip(sr.ravel(), hr.ravel()):
        image += abs(value_sr - value_hr)
    image /= sr.size
    tp_l1 = 0.0
    kl = 0.0
    for b in range(t_low.shape[0]):
        for i in range(t_low.shape[1]):
            for j in range(t_low.shape[2]):
                low, high = t_low[b, i, j], t_high[b, i, j]
                tp_l1 += abs(low - high)
                kl += high * np.log((high + eps) / (low + eps))
    return image + alpha * tp_l1 / t_low.size + beta * kl / t_low.shape[0]


def test_kl_of_identical_priors_is_zero(f64, rng):
    t = Tensor(priors(rng, 2, 16, 37))
    assert kl_tp(t, t).item() == 0.0


def test_kl_two_class_value(f64):
    t_high = Tensor(np.array([[[1.0, 0.0]]]))
    t_low = Tensor(np.array([[[0.5, 0.5]]]))
    assert kl_tp(t_low, t_high, 1e-6).item() == pytest.approx(0.693146, abs=1e-6)


def test_kl_is_non_negative_on_random_priors():
    rng = np.random.default_rng(2024)
    for _ in range(100):
        frames = int(rng.integers(1, 17))
        low = priors(rng, 2, frames, 37) ** rng.uniform(0.2, 3.0)
        low /= low.sum(axis=-1, keepdims=True)
        high = priors(rng, 2, frames, 37)
        assert kl_tp(Tensor(low, dtype="f32"), Tensor(high, dtype="f32")).item() >= -1e-4


def test_kl_shape_mismatch(rng):
    with pytest.raises(ShapeError):
        kl_tp(Tensor(priors(rng, 1, 16, 37)), Tensor(priors(rng, 1, 8, 37)))


def test_stage_loss_vanishes_on_perfect_output(f64, rng):
    hr = Tensor(rng.uniform(size=(2, 1, 4, 8)))
    t = Tensor(priors(rng, 2, 4, 37))
    assert stage_loss(hr, hr, t, t, LossConfig()).item() == 0.0


def test_zero_weights_leave_image_term(f64, rng):
    sr = Tensor(rng.uniform(size=(2, 1, 4, 8)))
    hr = Tensor(rng.uniform(size=(2, 1, 4, 8)))
    t_low, t_high = Tensor(priors(rng, 2, 4, 37)), Tensor(priors(rng, 2, 4, 37))
    terms = stage_loss_terms(sr, hr, t_low, t_high, LossConfig(alpha=0.0, beta=0.0))
    assert terms["total"].item() == terms["image"].item()
    assert terms["kl"].item() > 0


def test_disabled_terms_are_reported_but_not_summed(f64, rng):
    sr = Tensor(rng.uniform(size=(1, 1, 4, 8)))
    hr = Tensor(rng.uniform(size=(1, 1, 4, 8)))
    t_low, t_high = Tensor(priors(rng, 1, 4, 37)), Tensor(priors(rng, 1, 4, 37))
    terms = stage_loss_terms(sr, hr, t_low, t_high, LossConfig(use_kl_tp=False))
    assert terms["total"].item() == pytest.approx(terms["image"].item() + terms["tp_l1"].item(), abs=1e-12)


def test_stage_loss_matches_scalar_loop(f64, rng):
    sr, hr = rng.uniform(size=(2, 1, 3, 5)), rng.uniform(size=(2, 1, 3, 5))
    t_low, t_high = priors(rng, 2, 4, 6), priors(rng, 2, 4, 6)
    cfg = LossConfig(alpha=0.7, beta=1.3, epsilon=1e-6)
    got = stage_loss(Tensor(sr), Tensor(hr), Tensor(t_low), Tensor(t_high), cfg).item()
    assert got == pytest.approx(loop_stage_loss(sr, hr, t_low, t_high, 0.7, 1.3, 1e-6), abs=1e-9)


def test_high_prior_is_a_constant_target(f64, rng):
    sr = Tensor(rng.uniform(size=(1, 1, 4, 8)), requires_grad=True)
    hr = Tensor(rng.uniform(size=(1, 1, 4, 8)))
    t_low = Tensor(priors(rng, 1, 4, 37), requires_grad=True)
    t_high = Tensor(priors(rng, 1, 4, 37), requires_grad=True)
    stage_loss(sr, hr, t_low, t_high, LossConfig()).backward()
    assert np.abs(t_low.grad).sum() > 0
    np.testing.assert_array_equal(t_high.grad, 0.0)


def test_stage_loss_without_priors(f64, rng):
    sr = Tensor(rng.uniform(size=(1, 1, 4, 8)))
    hr = Tensor(rng.uniform(size=(1, 1, 4, 8)))
    terms = stage_loss_terms(sr, hr, None, None, LossConfig())
    assert set(terms) == {"image", "total"}


@pytest.mark.parametrize(
    "values, lambdas, expected",
    [
        ([2.5, 2.5, 2.5], [0.25, 0.25, 0.5], 2.5),
        ([4.0, 4.0, 2.0], [0.25, 0.25, 0.5], 3.0),
        ([1.7], [1.0], 1.7),
    ],
)
def test_multistage_loss(f64, values, lambdas, expected):
    losses = [Tensor(np.array(v)) for v in values]
    assert multistage_loss(losses, lambdas).item() == pytest.approx(expected)


def test_multistage_loss_rejects_bad_weights(f64):
    losses = [Tensor(np.array(1.0)) for _ in range(3)]
    with pytest.raises(ConfigurationError):
        multistage_loss(losses, [0.5, 0.5, 0.5])
    with pytest.raises(ConfigurationError):
        multistage_loss(losses, [0.5, 0.5])
