# tpgsr/losses.py

from typing import Dict, Optional, Sequence, Union

from .config import LAMBDA_TOLERANCE, LossConfig
from .engine import functional as F
from .engine.tensor import Tensor
from .exceptions import ConfigurationError
from .models.recognizer import TextPrior

PriorLike = Union[TextPrior, Tensor]


def _probs(tp: PriorLike) -> Tensor:
    return tp.probs if isinstance(tp, TextPrior) else tp


def kl_tp(t_low: PriorLike, t_high: PriorLike, epsilon: float = 1e-6) -> Tensor:
    """sum over frames and classes of ``t_H * ln((t_H + eps) / (t_L + eps))``, averaged over the batch."""
    return F.kl_divergence(_probs(t_low), _probs(t_high), epsilon)


def stage_loss_terms(
    sr_img: Tensor,
    hr_img: Tensor,
    t_low: Optional[PriorLike],
    t_high: Optional[PriorLike],
    cfg: LossConfig,
) -> Dict[str, Tensor]:
    """Image L1, TP L1 and TP KL terms of one stage, plus their weighted ``total``.

    ``t_high`` is treated as a constant target. Disabled or zero-weight terms are reported
    but left out of ``total``.
    """
    terms = {"image": F.l1_loss(sr_img, hr_img)}
    total = terms["image"]
    if t_low is None or t_high is None:
        terms["total"] = total
        return terms
    low, high = _probs(t_low), _probs(t_high).detach()
    terms["tp_l1"] = F.l1_loss(low, high)
    terms["kl"] = kl_tp(low, high, cfg.epsilon)
    if cfg.use_l1_tp and cfg.alpha > 0:
        total = total + terms["tp_l1"] * cfg.alpha
    if cfg.use_kl_tp and cfg.beta > 0:
        total = total + terms["kl"] * cfg.beta
    terms["total"] = total
    return terms


def stage_loss(
    sr_img: Tensor,
    hr_img: Tensor,
    t_low: Optional[PriorLike],
    t_high: Optional[PriorLike],
    cfg: LossConfig,
) -> Tensor:
    return stage_loss_terms(sr_img, hr_img, t_low, t_high, cfg)["total"]


def multistage_loss(stage_losses: Sequence[Tensor], lambdas: Sequence[float]) -> Tensor:
    if len(stage_losses) != len(lambdas) or not stage_losses:
        raise ConfigurationError(
            f"{len(lambdas)} stage weights for {len(stage_losses)} stage losses", component="multistage_loss"
        )
    if abs(sum(lambdas) - 1.0) > LAMBDA_TOLERANCE:
        raise ConfigurationError(f"stage weights sum to {sum(lambdas)}, not 1", component="multistage_loss")
    total = stage_losses[0] * lambdas[0]
    for loss, weight in zip(stage_losses[1:], lambdas[1:]):
        total = total + loss * weight
    return total
