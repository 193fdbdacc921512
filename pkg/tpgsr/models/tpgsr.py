# tpgsr/models/tpgsr.py

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..config import StagePlan
from ..data.synth import HR_SIZE
from ..engine import functional as F
from ..engine.checkpoint import load_checkpoint, save_checkpoint
from ..engine.nn import Module, ModuleList
from ..engine.tensor import Tensor
from ..exceptions import CheckpointError, ConfigurationError, ShapeError, ValidationError
from ..logging import TPGSRLogger
from .recognizer import DEFAULT_CHANNELS as REC_CHANNELS
from .recognizer import RecognizerModel, TextPrior, generate_tp, set_trainable
from .sr import SRModule, zero_projection
from .tp_transformer import DEFAULT_CHANNELS as TPT_CHANNELS
from .tp_transformer import TPTransformer

logger = TPGSRLogger.get_logger()

_NAME = re.compile(r"^tpg\.(shared|stage\d+)\.(sr|rec|tpt)\.(.+)$")


@dataclass
class StageOutput:
    sr: Tensor
    tp: Optional[TextPrior]


def stage_forward(
    sr: SRModule,
    rec: Optional[RecognizerModel],
    tpt: Optional[TPTransformer],
    lr_img: Tensor,
    prev_sr_img: Optional[Tensor] = None,
    stage: int = 1,
    stop_grad: bool = True,
) -> StageOutput:
    """One refinement pass: derive the text prior, then super-resolve the original LR image.

    Stage 1 reads the prior from the bicubically upscaled LR image; later stages read it from
    the previous stage's SR output (gradient cut when ``stop_grad``). Without a recognizer
    the SR module runs unguided and no prior is returned.
    """
    if (stage == 1) != (prev_sr_img is None):
        raise ValidationError(
            f"stage {stage} {'must not' if stage == 1 else 'must'} receive a previous SR image",
            field="prev_sr_img",
        )
    if rec is None or tpt is None:
        return StageOutput(sr=sr(lr_img), tp=None)
    if prev_sr_img is None:
        tp_input = F.bicubic_resize(lr_img, *rec.image_size)
        source = "from_lr"
    else:
        tp_input = prev_sr_img.detach() if stop_grad else prev_sr_img
        source = f"from_sr_stage({stage - 1})"
    tp = generate_tp(rec, tp_input, source=source)
    return StageOutput(sr=sr(lr_img, tpt(tp.probs)), tp=tp)


class TPGSRModel(Module):
    """Multi-stage TPGSR: per-stage TP branch (recognizer + TP transformer) guiding an SR module.

    Parameter paths are ``tpg.shared.sr.*`` (or ``tpg.stage{k}.sr.*``),
    ``tpg.stage{k}.rec.*`` and ``tpg.stage{k}.tpt.*`` (or ``tpg.shared.*`` when shared).
    """

    def __init__(
        self,
        plan: StagePlan,
        rng: np.random.Generator,
        recognizer: Optional[RecognizerModel] = None,
        hr_size: Tuple[int, int] = HR_SIZE,
        sr_channels: int = 64,
        sr_blocks: int = 5,
        rec_channels: Sequence[int] = REC_CHANNELS,
        tpt_channels: Sequence[int] = TPT_CHANNELS,
        use_tp: bool = True,
    ):
        super().__init__()
        self.plan = plan
        self.hr_size = tuple(hr_size)
        self.lr_size = (hr_size[0] // 2, hr_size[1] // 2)
        self.use_tp = use_tp
        n = plan.stages
        self.srs = ModuleList(
            [
                SRModule(rng, sr_channels, sr_blocks, tp_channels=tpt_channels[-1])
                for _ in range(1 if plan.share_sr else n)
            ]
        )
        tp_copies = 1 if plan.share_tpg else n
        if recognizer is not None:
            if recognizer.image_size != self.hr_size:
                raise ShapeError("recognizer input size must equal the HR size", [recognizer.image_size, self.hr_size])
            recs = [recognizer.clone() for _ in range(tp_copies)]
        else:
            recs = [RecognizerModel(rng, self.hr_size, rec_channels) for _ in range(tp_copies)]
        self.recs = ModuleList(recs)
        frames = self.hr_size[1] // 8
        self.tpts = ModuleList(
            [TPTransformer(rng, frames=frames, channels=tpt_channels) for _ in range(tp_copies)]
        )
        if not use_tp:
            for sr in self.srs:
                zero_projection(sr, freeze=True)

    def _prefix(self, component: str, index: int, shared: bool) -> str:
        return f"tpg.shared.{component}" if shared else f"tpg.stage{index + 1}.{component}"

    def named_children(self) -> Iterator[Tuple[str, Module]]:
        for component, modules, shared in (
            ("sr", self.srs, self.plan.share_sr),
            ("rec", self.recs, self.plan.share_tpg),
            ("tpt", self.tpts, self.plan.share_tpg),
        ):
            for index, module in enumerate(modules):
                yield self._prefix(component, index, shared), module

    def train(self, mode: bool = True) -> "TPGSRModel":
        super().train(mode)
        # TP generators keep their pretrained BN statistics.
        for rec in self.recs:
            rec.eval()
        return self

    def sr_for(self, stage: int) -> SRModule:
        return self.srs[0 if self.plan.share_sr else stage - 1]

    def rec_for(self, stage: int) -> RecognizerModel:
        return self.recs[0 if self.plan.share_tpg else stage - 1]

    def tpt_for(self, stage: int) -> TPTransformer:
        return self.tpts[0 if self.plan.share_tpg else stage - 1]

    def set_tpg_trainable(self, tuned: bool):
        for rec in self.recs:
            set_trainable(rec, tuned)

    def stage_forward(self, stage: int, lr_img: Tensor, prev_sr_img: Optional[Tensor] = None) -> StageOutput:
        if not 1 <= stage <= self.plan.stages:
            raise ValidationError(f"stage {stage} outside 1..{self.plan.stages}", field="stage")
        if lr_img.ndim != 4 or tuple(lr_img.shape[1:]) != (1, *self.lr_size):
            raise ShapeError(f"expected LR images [B,1,{self.lr_size[0]},{self.lr_size[1]}]", [lr_img.shape])
        return stage_forward(
            self.sr_for(stage),
            self.rec_for(stage) if self.use_tp else None,
            self.tpt_for(stage) if self.use_tp else None,
            lr_img,
            prev_sr_img,
            stage=stage,
            stop_grad=self.plan.stop_grad_between_stages,
        )

    def forward(self, lr_img: Tensor) -> List[StageOutput]:
        outputs: List[StageOutput] = []
        for stage in range(1, self.plan.stages + 1):
            prev = outputs[-1].sr if outputs else None
            outputs.append(self.stage_forward(stage, lr_img, prev))
        return outputs


def multistage_forward(plan: StagePlan, model: TPGSRModel, lr_img: Tensor) -> List[StageOutput]:
    """Run every stage in order; the last output is the final SR image."""
    if len(plan.lambdas) != plan.stages:
        raise ConfigurationError("one weight per stage is required", component="StagePlan")
    if plan.stages != model.plan.stages:
        raise ConfigurationError(
            f"plan has {plan.stages} stages but the model was built for {model.plan.stages}",
            component="StagePlan",
        )
    return model(lr_img)


def single_stage_source(name: str) -> List[str]:
    """Candidate single-stage checkpoint paths for a multi-stage parameter path."""
    match = _NAME.match(name)
    if match is None:
        raise CheckpointError("not a TPGSR parameter path", path=name)
    _, component, rest = match.groups()
    return [f"tpg.shared.{component}.{rest}", f"tpg.stage1.{component}.{rest}"]


def init_multistage_from_single(
    single: Union[str, Path, Dict[str, np.ndarray]],
    plan: StagePlan,
    rng: np.random.Generator,
    **model_kwargs: Any,
) -> TPGSRModel:
    """Build a ``plan``-sized model whose every stage starts from one single-stage checkpoint.

    Raises:
        CheckpointError: naming the first parameter path the checkpoint lacks.
    """
    state = load_checkpoint(single)[0] if isinstance(single, (str, Path)) else single
    model = TPGSRModel(plan, rng, **model_kwargs)
    mapped: Dict[str, np.ndarray] = {}
    for name in model.state_dict():
        candidates = single_stage_source(name)
        source = next((c for c in candidates if c in state), None)
        if source is None:
            raise CheckpointError("missing parameter in single-stage checkpoint", path=candidates[-1])
        mapped[name] = state[source]
    model.load_state_dict(mapped)
    if not model.use_tp:
        for sr in model.srs:
            zero_projection(sr, freeze=True)
    logger.info(f"Initialized a {plan.stages}-stage model from a single-stage checkpoint")
    return model


def save_model(path: Union[str, Path], model: Module, metadata: Dict[str, Any]) -> Path:
    return save_checkpoint(path, model.state_dict(), metadata)


def load_model(path: Union[str, Path], model: Module) -> Dict[str, Any]:
    """Load parameters and BN statistics in place; returns the checkpoint metadata."""
    arrays, metadata = load_checkpoint(path)
    model.load_state_dict(arrays)
    return metadata
