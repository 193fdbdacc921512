# tpgsr/engine/__init__.py

from . import functional
from .checkpoint import load_checkpoint, save_checkpoint
from .nn import (
    BatchNorm2d,
    Conv2d,
    ConvTranspose2d,
    Linear,
    Module,
    ModuleList,
    Parameter,
)
from .optim import Adam, AdamState, adam_step
from .tensor import (
    Function,
    Tensor,
    as_tensor,
    get_default_dtype,
    is_grad_enabled,
    no_grad,
    precision,
    set_default_dtype,
)

__all__ = [
    "Adam",
    "AdamState",
    "BatchNorm2d",
    "Conv2d",
    "ConvTranspose2d",
    "Function",
    "Linear",
    "Module",
    "ModuleList",
    "Parameter",
    "Tensor",
    "adam_step",
    "as_tensor",
    "functional",
    "get_default_dtype",
    "is_grad_enabled",
    "load_checkpoint",
    "no_grad",
    "precision",
    "save_checkpoint",
    "set_default_dtype",
]
