# tpgsr/visualizer.py

from pathlib import Path
from typing import List, Optional, Sequence, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .data.alphabet import ALPHABET  # noqa: E402
from .data.dataset import collate  # noqa: E402
from .data.imageio import write_pgm, write_png  # noqa: E402
from .data.synth import SamplePair  # noqa: E402
from .engine import functional as F  # noqa: E402
from .engine.tensor import Tensor, no_grad  # noqa: E402
from .models.recognizer import RecognizerModel, decode_frames, generate_tp, model_input  # noqa: E402
from .models.tpgsr import TPGSRModel  # noqa: E402


def upscale_nearest(images: np.ndarray, factor: int = 2) -> np.ndarray:
    return np.repeat(np.repeat(images, factor, axis=-2), factor, axis=-1)


def tile(columns: Sequence[np.ndarray], pad: int = 2, fill: float = 1.0) -> np.ndarray:
    """Lay out equally sized ``[N, H, W]`` stacks as an N-row grid, one column per stack."""
    n, h, w = columns[0].shape
    grid = np.full((n * h + (n + 1) * pad, len(columns) * w + (len(columns) + 1) * pad), fill)
    for c, stack in enumerate(columns):
        for r in range(n):
            top = pad + r * (h + pad)
            left = pad + c * (w + pad)
            grid[top : top + h, left : left + w] = np.clip(stack[r], 0.0, 1.0)
    return grid


class SampleGridVisualizer:
    """Comparison grids: LR (nearest) | bicubic | SR per stage | HR, one row per sample."""

    def __init__(self, model: Optional[TPGSRModel] = None, pad: int = 2):
        self.model = model
        self.pad = pad

    def generate_columns(self, samples: Sequence[SamplePair]) -> List[np.ndarray]:
        lr, hr, _, _ = collate(samples)
        height, width = hr.shape[2:]
        columns = [upscale_nearest(lr[:, 0], height // lr.shape[2])]
        with no_grad():
            columns.append(F.bicubic_resize(Tensor(lr), height, width).data[:, 0])
            if self.model is not None:
                was_training = self.model.training
                self.model.eval()
                try:
                    outputs = self.model(model_input(self.model, lr))
                finally:
                    self.model.train(was_training)
                columns.extend(out.sr.data[:, 0] for out in outputs)
        columns.append(hr[:, 0])
        return [np.asarray(c, dtype=np.float64) for c in columns]

    def generate_grid(self, samples: Sequence[SamplePair]) -> np.ndarray:
        return tile(self.generate_columns(samples), self.pad)

    def save_grid(self, path_stem: Union[str, Path], samples: Sequence[SamplePair]) -> List[Path]:
        grid = self.generate_grid(samples)
        path_stem = Path(path_stem)
        return [write_pgm(path_stem.with_suffix(".pgm"), grid), write_png(path_stem.with_suffix(".png"), grid)]


class TextPriorVisualizer:
    """Heat map of a text prior: frames left to right, categories in reverse alphabet order."""

    def __init__(self, recognizer: RecognizerModel):
        self.recognizer = recognizer.clone().eval()

    def prior(self, image: np.ndarray) -> np.ndarray:
        batch = np.asarray(image, dtype=np.float64)[None, None]
        with no_grad():
            return generate_tp(self.recognizer, batch).numpy()[0]

    def generate_figure(self, image: np.ndarray, label: str = "") -> plt.Figure:
        probs = self.prior(image)
        categories = ["-"] + list(ALPHABET.symbols)
        fig, (top, bottom) = plt.subplots(
            2, 1, figsize=(8, 9), gridspec_kw={"height_ratios": [1, 4]}
        )
        top.imshow(image, cmap="gray", vmin=0.0, vmax=1.0)
        top.set_axis_off()
        decoded = decode_frames(probs)
        top.set_title(f"label: {label or '?'}   decoded: {decoded or '(empty)'}")
        bottom.imshow(probs.T[::-1], cmap="gray", vmin=0.0, vmax=1.0, aspect="auto")
        bottom.set_xticks(range(probs.shape[0]))
        bottom.set_yticks(range(len(categories)))
        bottom.set_yticklabels(categories[::-1], fontsize=6)
        bottom.set_xlabel("frame")
        bottom.set_ylabel("category")
        fig.tight_layout()
        return fig

    def save_heatmap(self, path: Union[str, Path], image: np.ndarray, label: str = "") -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fig = self.generate_figure(image, label)
        fig.savefig(path, dpi=120)
        plt.close(fig)
        return path
