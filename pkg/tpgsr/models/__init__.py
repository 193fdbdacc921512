# tpgsr/models/__init__.py

from .recognizer import (
    RecognizerModel,
    TextPrior,
    decode,
    decode_frames,
    generate_tp,
    load_recognizer,
    model_input,
    predict,
    pretrain,
    recognition_accuracy,
    save_recognizer,
    set_trainable,
)
from .sr import SRModule, TPGuidedSRBlock, fuse_forward, zero_projection
from .tp_transformer import TPTransformer, tp_transform
from .tpgsr import (
    StageOutput,
    TPGSRModel,
    init_multistage_from_single,
    load_model,
    multistage_forward,
    save_model,
    stage_forward,
)

__all__ = [
    "RecognizerModel",
    "SRModule",
    "StageOutput",
    "TPGSRModel",
    "TPGuidedSRBlock",
    "TPTransformer",
    "TextPrior",
    "decode",
    "decode_frames",
    "fuse_forward",
    "generate_tp",
    "init_multistage_from_single",
    "load_recognizer",
    "load_model",
    "model_input",
    "multistage_forward",
    "predict",
    "pretrain",
    "recognition_accuracy",
    "save_model",
    "save_recognizer",
    "set_trainable",
    "stage_forward",
    "tp_transform",
    "zero_projection",
]
