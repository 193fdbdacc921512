# tpgsr/gradcheck.py

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .config import LossConfig, StagePlan
from .engine import functional as F
from .engine.tensor import Tensor, no_grad, precision
from .logging import TPGSRLogger
from .losses import multistage_loss, stage_loss
from .models.recognizer import RecognizerModel, generate_tp
from .models.sr import TPGuidedSRBlock, fuse_forward
from .models.tp_transformer import TPTransformer
from .models.tpgsr import TPGSRModel

logger = TPGSRLogger.get_logger()

STEP = 1e-5
# Steps for composite graphs and the full pipeline.
COMPOSITE_STEP = 1e-6
PIPELINE_STEP = 1e-7
PRIMITIVE_TOLERANCE = 1e-4
PIPELINE_TOLERANCE = 1e-3

Case = Tuple[Callable[[], Tensor], List[Tensor]]


@dataclass
class GradcheckResult:
    name: str
    max_error: float
    tolerance: float
    trials: int

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_error) and self.max_error < self.tolerance)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max |a - n| divided by the largest magnitude present (at least 1e-12)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def numeric_gradient(
    loss_value: Callable[[], float], array: np.ndarray, indices: np.ndarray, h: float = STEP
) -> np.ndarray:
    """Central differences of ``loss_value`` at the flat ``indices`` of ``array`` (perturbed in place)."""
    flat = array.reshape(-1)
    out = np.empty(len(indices))
    for n, index in enumerate(indices):
        original = flat[index]
        flat[index] = original + h
        plus = loss_value()
        flat[index] = original - h
        minus = loss_value()
        flat[index] = original
        out[n] = (plus - minus) / (2 * h)
    return out


def check_gradients(
    build_loss: Callable[[], Tensor],
    tensors: Sequence[Tensor],
    h: float = STEP,
    max_entries: Optional[int] = None,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """Relative error between backward() and central differences, taken jointly over ``tensors``.

    With ``max_entries`` only that many randomly chosen entries per tensor are probed.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    for tensor in tensors:
        tensor.zero_grad()
    build_loss().backward()
    analytic = [tensor.grad.copy() for tensor in tensors]

    def loss_value() -> float:
        with no_grad():
            return build_loss().item()

    probed, numeric = [], []
    for tensor, grad in zip(tensors, analytic):
        size = tensor.data.size
        if max_entries is not None and size > max_entries:
            indices = rng.choice(size, size=max_entries, replace=False)
        else:
            indices = np.arange(size)
        probed.append(grad.reshape(-1)[indices])
        numeric.append(numeric_gradient(loss_value, tensor.data, indices, h))
    return relative_error(np.concatenate(probed), np.concatenate(numeric))


def _leaf(rng: np.random.Generator, *shape: int, scale: float = 1.0) -> Tensor:
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)


def _projected(out: Tensor, rng: np.random.Generator) -> Callable[[Tensor], Tensor]:
    weights = Tensor(rng.normal(size=out.shape))
    return lambda y: F.sum(F.mul(y, weights))


def _case(fn: Callable[[], Tensor], tensors: List[Tensor], rng: np.random.Generator) -> Case:
    with no_grad():
        project = _projected(fn(), rng)
    return (lambda: project(fn())), tensors


def case_conv2d(rng: np.random.Generator) -> Case:
    b, cin, cout = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
    k = int(rng.choice([1, 3]))
    stride, padding = int(rng.integers(1, 3)), int(rng.integers(0, 2))
    x = _leaf(rng, b, cin, int(rng.integers(3, 7)), int(rng.integers(3, 7)))
    w = _leaf(rng, cout, cin, k, k)
    bias = _leaf(rng, cout)
    return _case(lambda: F.conv2d(x, w, bias, stride=stride, padding=padding), [x, w, bias], rng)


def case_deconv2d(rng: np.random.Generator) -> Case:
    stride = [(1, 1), (2, 2), (2, 1)][int(rng.integers(0, 3))]
    cout = int(rng.integers(1, 4))
    x = _leaf(rng, 1, 2, 3, 3)
    w = _leaf(rng, 2, cout, 3, 3)
    bias = _leaf(rng, cout)
    return _case(lambda: F.deconv2d(x, w, bias, stride=stride, padding=1), [x, w, bias], rng)


def case_batchnorm2d(rng: np.random.Generator) -> Case:
    c = int(rng.integers(1, 4))
    x = _leaf(rng, 2, c, 3, 3)
    gamma, beta = _leaf(rng, c), _leaf(rng, c)
    mean, var = np.zeros(c), np.ones(c)
    return _case(lambda: F.batchnorm2d(x, gamma, beta, mean, var, training=True), [x, gamma, beta], rng)


def case_relu(rng: np.random.Generator) -> Case:
    data = rng.normal(size=(2, 3, 4))
    data[np.abs(data) < 1e-2] += 0.05
    x = Tensor(data, requires_grad=True)
    return _case(lambda: F.relu(x), [x], rng)


def case_softmax(rng: np.random.Generator) -> Case:
    x = _leaf(rng, 2, 3, int(rng.integers(2, 8)))
    return _case(lambda: F.softmax_lastdim(x), [x], rng)


def case_concat(rng: np.random.Generator) -> Case:
    a, b = _leaf(rng, 1, 2, 3, 4), _leaf(rng, 1, 3, 3, 4)
    return _case(lambda: F.concat_channels([a, b]), [a, b], rng)


def case_add(rng: np.random.Generator) -> Case:
    a, b = _leaf(rng, 2, 3), _leaf(rng, 2, 3)
    return _case(lambda: F.add(a, b), [a, b], rng)


def case_mul_scalar(rng: np.random.Generator) -> Case:
    a = _leaf(rng, 3, 4)
    scalar = float(rng.normal())
    return _case(lambda: F.mul_scalar(a, scalar), [a], rng)


def case_l1_loss(rng: np.random.Generator) -> Case:
    a, b = _leaf(rng, 2, 5), _leaf(rng, 2, 5)
    return (lambda: F.l1_loss(a, b)), [a, b]


def case_bicubic(rng: np.random.Generator) -> Case:
    x = _leaf(rng, 1, 2, int(rng.integers(2, 6)), int(rng.integers(2, 6)))
    out_h, out_w = int(rng.integers(1, 9)), int(rng.integers(1, 9))
    return _case(lambda: F.bicubic_resize(x, out_h, out_w), [x], rng)


def case_max_pool(rng: np.random.Generator) -> Case:
    x = _leaf(rng, 1, 2, 4, 6)
    return _case(lambda: F.max_pool2d(x, (2, 2)), [x], rng)


def case_pixel_shuffle(rng: np.random.Generator) -> Case:
    x = _leaf(rng, 1, 8, 2, 3)
    return _case(lambda: F.pixel_shuffle(x, 2), [x], rng)


def case_linear(rng: np.random.Generator) -> Case:
    x, w, b = _leaf(rng, 2, 3, 4), _leaf(rng, 5, 4), _leaf(rng, 5)
    return _case(lambda: F.linear(x, w, b), [x, w, b], rng)


def case_kl(rng: np.random.Generator) -> Case:
    a, b = _leaf(rng, 2, 3, 5), _leaf(rng, 2, 3, 5)
    return (lambda: F.kl_divergence(F.softmax_lastdim(a), F.softmax_lastdim(b), 1e-6)), [a, b]


def case_cross_entropy(rng: np.random.Generator) -> Case:
    logits = _leaf(rng, 2, 4, 6)
    targets = rng.integers(0, 6, size=(2, 4))
    return (lambda: F.cross_entropy(logits, targets)), [logits]


def case_tp_transformer(rng: np.random.Generator) -> Case:
    transformer = TPTransformer(rng, frames=4, channels=(8, 8, 8, 32))
    probs = Tensor(rng.dirichlet(np.ones(37), size=(1, 4)), requires_grad=True)
    params = [transformer.deconvs[0].weight, transformer.norms[-1].weight]
    return _case(lambda: transformer(probs), [probs, *params], rng)


def case_fuse(rng: np.random.Generator) -> Case:
    block = TPGuidedSRBlock(8, rng)
    img = _leaf(rng, 1, 8, 4, 4)
    tp = _leaf(rng, 1, 32, 3, 5)
    return _case(lambda: fuse_forward(block, img, tp), [tp, img, block.projection.weight], rng)


def case_stage_loss(rng: np.random.Generator) -> Case:
    sr, hr = _leaf(rng, 2, 1, 4, 6), Tensor(rng.uniform(size=(2, 1, 4, 6)))
    logits = _leaf(rng, 2, 4, 37)
    t_high = Tensor(rng.dirichlet(np.ones(37), size=(2, 4)))
    cfg = LossConfig()
    return (lambda: stage_loss(sr, hr, F.softmax_lastdim(logits), t_high, cfg)), [sr, logits]


PRIMITIVE_CASES: Dict[str, Callable[[np.random.Generator], Case]] = {
    "conv2d": case_conv2d,
    "deconv2d": case_deconv2d,
    "batchnorm2d": case_batchnorm2d,
    "relu": case_relu,
    "softmax_lastdim": case_softmax,
    "concat_channels": case_concat,
    "add": case_add,
    "mul_scalar": case_mul_scalar,
    "l1_loss": case_l1_loss,
    "bicubic_resize": case_bicubic,
    "max_pool2d": case_max_pool,
    "pixel_shuffle": case_pixel_shuffle,
    "linear": case_linear,
    "kl_divergence": case_kl,
    "cross_entropy": case_cross_entropy,
}

COMPOSITE_CASES: Dict[str, Callable[[np.random.Generator], Case]] = {
    "tp_transform": case_tp_transformer,
    "fuse_forward": case_fuse,
    "stage_loss": case_stage_loss,
}


def mini_pipeline(rng: np.random.Generator, stop_grad: bool = False) -> Tuple[TPGSRModel, Case]:
    """Two-stage model on 8x16 LR images, 8 feature channels and 4 frames, with its loss."""
    plan = StagePlan(stages=2, lambdas=[0.5, 0.5], stop_grad_between_stages=stop_grad)
    model = TPGSRModel(
        plan,
        rng,
        hr_size=(16, 32),
        sr_channels=8,
        sr_blocks=1,
        rec_channels=(4, 4, 8, 8),
        tpt_channels=(8, 8, 8, 32),
    ).train()
    target = RecognizerModel(rng, (16, 32), (4, 4, 8, 8)).eval()
    lr = Tensor(rng.uniform(size=(2, 1, 8, 16)))
    hr = Tensor(rng.uniform(size=(2, 1, 16, 32)))
    with no_grad():
        t_high = generate_tp(target, hr, source="from_hr")
    cfg = LossConfig()

    def build_loss() -> Tensor:
        outputs = model(lr)
        losses = [stage_loss(out.sr, hr, out.tp, t_high, cfg) for out in outputs]
        return multistage_loss(losses, plan.lambdas)

    return model, (build_loss, model.parameters())


def run_suite(
    seed: int = 0, trials: int = 20, composite_trials: int = 3, pipeline_entries: int = 3
) -> List[GradcheckResult]:
    """Finite-difference checks of every differentiable primitive and the miniature pipeline, in f64."""
    results: List[GradcheckResult] = []
    with precision("f64"):
        rng = np.random.default_rng(seed)
        for name, make_case in PRIMITIVE_CASES.items():
            worst = max(check_gradients(*make_case(rng)) for _ in range(trials))
            results.append(GradcheckResult(name, worst, PRIMITIVE_TOLERANCE, trials))
        for name, make_case in COMPOSITE_CASES.items():
            worst = max(
                check_gradients(*make_case(rng), h=COMPOSITE_STEP, max_entries=24, rng=rng)
                for _ in range(composite_trials)
            )
            results.append(GradcheckResult(name, worst, PRIMITIVE_TOLERANCE, composite_trials))
        _, (build_loss, params) = mini_pipeline(rng)
        error = check_gradients(build_loss, params, h=PIPELINE_STEP, max_entries=pipeline_entries, rng=rng)
        results.append(GradcheckResult("pipeline", error, PIPELINE_TOLERANCE, 1))
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.error(f"gradcheck failed for: {', '.join(failed)}")
    else:
        logger.info(f"gradcheck passed for {len(results)} checks")
    return results
