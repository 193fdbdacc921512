# tpgsr/__init__.py

from .config import LossConfig, RunConfig, StagePlan, load_config
from .evaluation import EvalReport, EvalRow, evaluate, evaluate_tp_generator
from .events import TrainingEvent
from .exceptions import (
    CheckpointError,
    ConfigurationError,
    DatasetError,
    GraphError,
    ShapeError,
    TPGSRException,
    TrainingError,
    ValidationError,
)
from .logging import TPGSRLogger
from .models import RecognizerModel, SRModule, TPGSRModel, TPTransformer
from .training import Trainer, TrainingResult, run_ablation, run_training

__version__ = "0.1.0"

__all__ = [
    "CheckpointError",
    "ConfigurationError",
    "DatasetError",
    "EvalReport",
    "EvalRow",
    "GraphError",
    "LossConfig",
    "RecognizerModel",
    "RunConfig",
    "SRModule",
    "ShapeError",
    "StagePlan",
    "TPGSRException",
    "TPGSRLogger",
    "TPGSRModel",
    "TPTransformer",
    "Trainer",
    "TrainingError",
    "TrainingEvent",
    "TrainingResult",
    "ValidationError",
    "evaluate",
    "evaluate_tp_generator",
    "load_config",
    "run_ablation",
    "run_training",
]
