# tpgsr/config.py

from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Sequence, Union

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic import ValidationError as PydanticValidationError

from .exceptions import ConfigurationError
from .logging import TPGSRLogger
from .utils import sha256_text

logger = TPGSRLogger.get_logger()

MAX_STAGES = 5
LAMBDA_TOLERANCE = 1e-9


def default_lambdas(stages: int) -> List[float]:
    """Stage weights summing to one: the last stage gets half, earlier stages share the rest."""
    if stages == 1:
        return [1.0]
    return [1.0 / (2 * (stages - 1))] * (stages - 1) + [0.5]


class StagePlan(BaseModel):
    stages: int = 3
    lambdas: List[float] = Field(default_factory=lambda: default_lambdas(3))
    share_sr: bool = True
    share_tpg: bool = False
    stop_grad_between_stages: bool = True

    @model_validator(mode="after")
    def check_weights(self) -> "StagePlan":
        if not 1 <= self.stages <= MAX_STAGES:
            raise ConfigurationError(
                f"stage count must be in [1, {MAX_STAGES}], got {self.stages}", component="StagePlan"
            )
        if len(self.lambdas) != self.stages:
            raise ConfigurationError(
                f"{len(self.lambdas)} stage weights given for {self.stages} stages", component="StagePlan"
            )
        if abs(sum(self.lambdas) - 1.0) > LAMBDA_TOLERANCE:
            raise ConfigurationError(f"stage weights sum to {sum(self.lambdas)}, not 1", component="StagePlan")
        return self


class LossConfig(BaseModel):
    alpha: float = 1.0
    beta: float = 1.0
    epsilon: float = 1e-6
    use_l1_tp: bool = True
    use_kl_tp: bool = True

    @model_validator(mode="after")
    def check_ranges(self) -> "LossConfig":
        if self.alpha < 0 or self.beta < 0:
            raise ConfigurationError("alpha and beta must be non-negative", component="LossConfig")
        if self.epsilon <= 0:
            raise ConfigurationError("epsilon must be positive", component="LossConfig")
        return self


class RunConfig(BaseModel):
    """Every knob of a run. Unknown keys are rejected."""

    model_config = ConfigDict(extra="forbid")

    seed: int = 0
    dataset: str = "data"
    stages: int = 3
    lambdas: Optional[List[float]] = None
    share_sr: bool = True
    share_tpg: bool = False
    stop_grad: bool = True
    alpha: float = 1.0
    beta: float = 1.0
    epsilon: float = 1e-6
    use_l1_tp: bool = True
    use_kl_tp: bool = True
    tuned_tpg: bool = True
    use_tp: bool = True
    batch_size: int = Field(default=48, ge=1)
    epochs: int = Field(default=30, ge=0)
    finetune_epochs: Optional[int] = Field(default=None, ge=0)
    lr: float = Field(default=1e-3, gt=0)
    lr_decay_epoch: int = Field(default=20, ge=0)
    precision: Literal["f32", "f64"] = "f32"
    sr_channels: int = Field(default=64, ge=1)
    sr_blocks: int = Field(default=5, ge=1)
    rec_epochs: int = Field(default=20, ge=0)
    rec_val_fraction: float = Field(default=0.1, ge=0, lt=1)
    rec_checkpoint: str = "runs/recognizer.ckpt"
    init_checkpoint: Optional[str] = None
    checkpoint_dir: str = "runs"
    run_name: str = "tpgsr"
    grid_samples: int = Field(default=16, ge=0)
    threads: int = Field(default=0, ge=0)

    @field_validator("lambdas", mode="before")
    @classmethod
    def split_list(cls, value: Any) -> Any:
        if isinstance(value, str):
            if value.strip().lower() in ("", "none"):
                return None
            return [float(v) for v in value.split(",") if v.strip()]
        return value

    @field_validator("finetune_epochs", "init_checkpoint", mode="before")
    @classmethod
    def none_marker(cls, value: Any) -> Any:
        if isinstance(value, str) and value.strip().lower() in ("", "none"):
            return None
        return value

    @model_validator(mode="after")
    def check_plan(self) -> "RunConfig":
        _ = (self.plan, self.loss)
        return self

    @property
    def plan(self) -> StagePlan:
        return StagePlan(
            stages=self.stages,
            lambdas=self.lambdas if self.lambdas is not None else default_lambdas(self.stages),
            share_sr=self.share_sr,
            share_tpg=self.share_tpg,
            stop_grad_between_stages=self.stop_grad,
        )

    @property
    def loss(self) -> LossConfig:
        return LossConfig(
            alpha=self.alpha,
            beta=self.beta,
            epsilon=self.epsilon,
            use_l1_tp=self.use_l1_tp,
            use_kl_tp=self.use_kl_tp,
        )

    @property
    def run_dir(self) -> Path:
        return Path(self.checkpoint_dir) / self.run_name

    def derive(self, **changes: Any) -> "RunConfig":
        return build_config({**self.model_dump(), **changes})


def parse_config_text(text: str) -> Dict[str, str]:
    """Parse flat ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    values: Dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {number}: expected key=value, got {raw!r}", component="config file")
        key, value = (part.strip() for part in line.split("=", 1))
        if key in values:
            raise ConfigurationError(f"line {number}: duplicate key {key!r}", component="config file")
        values[key] = value
    return values


def parse_overrides(overrides: Sequence[str]) -> Dict[str, str]:
    values = {}
    for item in overrides:
        if "=" not in item:
            raise ConfigurationError(f"override {item!r} must look like key=value", component="--set")
        key, value = item.split("=", 1)
        values[key.strip()] = value.strip()
    return values


def build_config(values: Mapping[str, Any]) -> RunConfig:
    try:
        return RunConfig(**values)
    except PydanticValidationError as e:
        problems = "; ".join(f"{'.'.join(str(p) for p in err['loc'])}: {err['msg']}" for err in e.errors())
        raise ConfigurationError(problems, component="RunConfig") from e


def load_config(
    path: Optional[Union[str, Path]] = None,
    overrides: Sequence[str] = (),
    **flags: Any,
) -> RunConfig:
    """File values, then ``--set`` overrides, then dedicated CLI flags (``None`` flags are ignored)."""
    values: Dict[str, Any] = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file {path} does not exist", component="config file")
        values.update(parse_config_text(path.read_text()))
    values.update(parse_overrides(overrides))
    values.update({k: v for k, v in flags.items() if v is not None})
    config = build_config(values)
    logger.debug(f"Resolved config: {config.model_dump()}")
    return config


def _format_value(value: Any) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ",".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def echo(config: RunConfig) -> str:
    """Canonical ``key=value`` text of the resolved config; parses back to an equal config."""
    return "".join(f"{key}={_format_value(value)}\n" for key, value in config.model_dump().items())


def config_hash(config: RunConfig) -> str:
    return sha256_text(echo(config))


def write_echo(config: RunConfig, run_dir: Union[str, Path]) -> Path:
    path = Path(run_dir) / "config.txt"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(echo(config))
    return path
