# tpgsr/models/recognizer.py

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from reactivex.subject import Subject

from ..data.alphabet import ALPHABET, Alphabet
from ..data.dataset import collate
from ..data.synth import HR_SIZE, SamplePair
from ..engine import functional as F
from ..engine.checkpoint import load_checkpoint, save_checkpoint
from ..engine.nn import BatchNorm2d, Conv2d, Linear, Module, ModuleList
from ..engine.optim import Adam
from ..engine.tensor import Tensor, no_grad
from ..events import TrainingEvent
from ..exceptions import ShapeError, TrainingError, ValidationError
from ..logging import TPGSRLogger
from ..utils import batched, derive_rng

logger = TPGSRLogger.get_logger()

DEFAULT_CHANNELS: Tuple[int, ...] = (32, 64, 128, 128)


class RecognizerModel(Module):
    """Conv frame classifier: four conv+BN+ReLU blocks, pooled to one row of ``W/8`` frames."""

    def __init__(
        self,
        rng: np.random.Generator,
        image_size: Tuple[int, int] = HR_SIZE,
        channels: Sequence[int] = DEFAULT_CHANNELS,
        num_classes: int = len(ALPHABET),
    ):
        super().__init__()
        height, width = image_size
        if height % 8 or width % 8 or len(channels) != 4:
            raise ShapeError("recognizer needs H and W divisible by 8 and four conv blocks", [image_size])
        self.image_size = (height, width)
        self.channels = tuple(channels)
        self.frames = width // 8
        self.num_classes = num_classes
        self.pools = [(2, 2), (2, 2), (2, 2), (height // 8, 1)]
        widths = [1, *channels]
        self.convs = ModuleList([Conv2d(widths[i], widths[i + 1], 3, rng) for i in range(4)])
        self.norms = ModuleList([BatchNorm2d(c) for c in channels])
        self.classifier = Linear(channels[-1], num_classes, rng)

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != 1 or tuple(x.shape[2:]) != self.image_size:
            raise ShapeError(f"recognizer expects [B,1,{self.image_size[0]},{self.image_size[1]}]", [x.shape])
        for conv, norm, pool in zip(self.convs, self.norms, self.pools):
            x = F.max_pool2d(norm(conv(x)).relu(), pool)
        b, c, _, frames = x.shape
        features = x.reshape(b, c, frames).permute(0, 2, 1)
        return self.classifier(features)



def model_input(model: Module, array: np.ndarray) -> Tensor:
    """Wrap a batch as a constant tensor in the dtype of the model parameters."""
    return Tensor(np.asarray(array), dtype=model.parameters()[0].dtype)


@dataclass
class TextPrior:
    """Per-frame categorical distributions ``[B, L, |A|]`` and where they were read from."""

    probs: Tensor
    source: str

    @property
    def frames(self) -> int:
        return self.probs.shape[1]

    def numpy(self) -> np.ndarray:
        return self.probs.data


def generate_tp(
    model: RecognizerModel, image: Union[Tensor, np.ndarray], source: str = "from_lr"
) -> TextPrior:
    """Run the recognizer on ``image`` (bicubically resized to its input size) and softmax per frame."""
    x = image if isinstance(image, Tensor) else model_input(model, image)
    if x.ndim != 4:
        raise ShapeError("generate_tp expects a [B,1,H,W] image batch", [x.shape])
    if tuple(x.shape[2:]) != model.image_size:
        x = F.bicubic_resize(x, *model.image_size)
    return TextPrior(probs=F.softmax_lastdim(model(x)), source=source)


def decode_frames(probs: np.ndarray, alphabet: Alphabet = ALPHABET) -> str:
    return alphabet.collapse(np.argmax(probs, axis=-1))


def decode(tp: TextPrior, alphabet: Alphabet = ALPHABET) -> List[str]:
    """Greedy CTC decode of every prior in the batch."""
    return [decode_frames(p, alphabet) for p in tp.numpy()]


def set_trainable(model: Module, tuned: bool):
    """Freeze (no grad buffers, no Adam updates) or unfreeze every parameter of ``model``."""
    model.set_requires_grad(tuned)


def predict(model: RecognizerModel, images: np.ndarray, batch_size: int = 64) -> List[str]:
    """Decoded strings for ``images [N,1,H,W]`` with the model in eval mode."""
    was_training = model.training
    model.eval()
    out: List[str] = []
    try:
        with no_grad():
            for start in range(0, len(images), batch_size):
                out.extend(decode(generate_tp(model, images[start : start + batch_size])))
    finally:
        model.train(was_training)
    return out


def recognition_accuracy(predictions: Sequence[str], labels: Sequence[str]) -> float:
    """Case-insensitive exact string match rate."""
    if not labels:
        return 0.0
    hits = sum(p == ALPHABET.normalize(t) for p, t in zip(predictions, labels))
    return hits / len(labels)


def frame_accuracy(model: RecognizerModel, samples: Sequence[SamplePair], batch_size: int = 64) -> float:
    was_training = model.training
    model.eval()
    correct = total = 0
    try:
        with no_grad():
            for chunk in batched(samples, batch_size):
                _, hr, frames, _ = collate(chunk)
                logits = model(model_input(model, hr))
                correct += int((np.argmax(logits.data, axis=-1) == frames).sum())
                total += frames.size
    finally:
        model.train(was_training)
    return correct / max(total, 1)


def pretrain(
    model: RecognizerModel,
    samples: Sequence[SamplePair],
    epochs: int,
    lr: float = 1e-3,
    batch_size: int = 48,
    seed: int = 0,
    val_samples: Optional[Sequence[SamplePair]] = None,
    events: Optional[Subject] = None,
) -> RecognizerModel:
    """Per-frame cross-entropy training on HR images.

    Returns the model restored to the epoch with the best validation frame accuracy,
    left in eval mode. ``epochs == 0`` leaves every parameter untouched.
    """
    if not samples:
        raise ValidationError("recognizer pretraining needs at least one sample", field="samples")
    if epochs <= 0:
        return model
    val_samples = val_samples if val_samples else samples
    optimizer = Adam(model.named_parameters(), lr=lr)
    best_acc = -1.0
    best_state: Dict[str, np.ndarray] = {}
    step = 0
    for epoch in range(1, epochs + 1):
        model.train()
        order = derive_rng(seed, epoch).permutation(len(samples))
        losses = []
        for chunk in batched([samples[i] for i in order], batch_size):
            _, hr, frames, _ = collate(chunk)
            loss = F.cross_entropy(model(model_input(model, hr)), frames)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError("non-finite recognizer loss", step=step)
            loss.backward()
            optimizer.step()
            losses.append(value)
            step += 1
        acc = frame_accuracy(model, val_samples, batch_size)
        metrics = {"loss": float(np.mean(losses)), "first_loss": losses[0], "frame_acc": acc}
        logger.info(f"pretrain epoch {epoch}/{epochs}: loss {metrics['loss']:.4f} frame acc {acc:.4f}")
        if events is not None:
            events.on_next(TrainingEvent(kind="epoch", phase="pretrain", epoch=epoch, step=step, metrics=metrics))
        if acc > best_acc:
            best_acc = acc
            best_state = {k: v.copy() for k, v in model.state_dict().items()}
    model.load_state_dict(best_state)
    logger.info(f"Recognizer pretraining kept the best validation frame accuracy {best_acc:.4f}")
    return model.eval()


def save_recognizer(path: Union[str, Path], model: RecognizerModel, metadata: Dict[str, object]) -> Path:
    meta = {**metadata, "image_size": list(model.image_size), "channels": list(model.channels)}
    return save_checkpoint(path, model.state_dict(), meta)


def load_recognizer(path: Union[str, Path]) -> RecognizerModel:
    """Rebuild a recognizer from its checkpoint, in eval mode."""
    arrays, metadata = load_checkpoint(path)
    image_size = tuple(metadata.get("image_size", HR_SIZE))
    channels = tuple(metadata.get("channels", DEFAULT_CHANNELS))
    model = RecognizerModel(np.random.default_rng(0), image_size, channels)
    model.load_state_dict(arrays)
    return model.eval()
