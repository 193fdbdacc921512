# tpgsr/evaluation.py

import csv
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, Field
from rich.console import Console
from rich.table import Table

from .data.dataset import collate
from .data.synth import DIFFICULTIES, SamplePair
from .engine import functional as F
from .engine.tensor import no_grad
from .exceptions import ValidationError
from .logging import TPGSRLogger
from .metrics import psnr_per_sample, ssim_per_sample
from .models.recognizer import RecognizerModel, model_input, predict, recognition_accuracy
from .models.tpgsr import TPGSRModel
from .utils import batched, resolve_threads

logger = TPGSRLogger.get_logger()

AVERAGE = "average"
CSV_COLUMNS = ["method", "split", "n", "acc", "psnr_db", "ssim"]


class EvalRow(BaseModel):
    method: str
    split: str
    n: int
    acc: float = Field(ge=0.0, le=1.0)
    psnr_db: float
    ssim: float = Field(ge=-1.0, le=1.0)


class EvalReport(BaseModel):
    rows: List[EvalRow] = Field(default_factory=list)

    def row(self, method: str, split: str = AVERAGE) -> EvalRow:
        for row in self.rows:
            if row.method == method and row.split == split:
                return row
        raise KeyError(f"no {method}/{split} row in the report")

    @property
    def methods(self) -> List[str]:
        return list(dict.fromkeys(row.method for row in self.rows))

    def write_csv(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
            writer.writeheader()
            for row in self.rows:
                formatted = {key: f"{getattr(row, key):.6f}" for key in ("acc", "psnr_db", "ssim")}
                writer.writerow({**row.model_dump(), **formatted})
        return path

    def to_table(self, title: str = "Evaluation") -> Table:
        table = Table(title=title)
        for column in ("Method", "Split", "N", "Acc (%)", "PSNR (dB)", "SSIM"):
            table.add_column(column, justify="left" if column in ("Method", "Split") else "right")
        for row in self.rows:
            table.add_row(
                row.method,
                row.split,
                str(row.n),
                f"{100 * row.acc:.2f}",
                f"{row.psnr_db:.3f}",
                f"{row.ssim:.4f}",
            )
        return table

    def print(self, console: Optional[Console] = None, title: str = "Evaluation"):
        (console or Console()).print(self.to_table(title))


def _score_shard(
    samples: Sequence[SamplePair],
    model: Optional[TPGSRModel],
    scorer: RecognizerModel,
    method: str,
    batch_size: int,
) -> Dict[str, Dict[str, list]]:
    """Per-sample correctness, PSNR and SSIM of every method on one shard."""
    scorer = scorer.clone().eval()
    model = model.clone().eval() if model is not None else None
    per_method: Dict[str, Dict[str, list]] = {}
    with no_grad():
        for chunk in batched(samples, batch_size):
            lr, hr, _, labels = collate(chunk)
            images = {"BICUBIC": F.bicubic_resize(model_input(scorer, lr), *hr.shape[2:]).data}
            if model is not None:
                images[method] = model(model_input(scorer, lr))[-1].sr.data
            images["HR"] = hr
            for name, image in images.items():
                image = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
                predictions = predict(scorer, image, batch_size)
                entry = per_method.setdefault(name, {"correct": [], "psnr": [], "ssim": []})
                entry["correct"].extend(float(recognition_accuracy([p], [t])) for p, t in zip(predictions, labels))
                entry["psnr"].extend(psnr_per_sample(image, hr).tolist())
                entry["ssim"].extend(ssim_per_sample(image, hr).tolist())
    return per_method


def _summarize(method: str, split: str, scores: Dict[str, list], index: np.ndarray) -> EvalRow:
    return EvalRow(
        method=method,
        split=split,
        n=int(index.size),
        acc=float(np.mean(np.asarray(scores["correct"])[index])),
        psnr_db=float(np.mean(np.asarray(scores["psnr"])[index])),
        ssim=float(np.clip(np.mean(np.asarray(scores["ssim"])[index]), -1.0, 1.0)),
    )


def evaluate(
    model: Optional[TPGSRModel],
    samples: Sequence[SamplePair],
    scorer: RecognizerModel,
    method: str = "TPGSR",
    batch_size: int = 48,
    threads: int = 0,
) -> EvalReport:
    """Score BICUBIC, the model's final SR output and HR with a frozen recognizer.

    Rows are per difficulty (absent difficulties omitted) plus the sample-weighted average.
    Shards run on cloned eval-mode models; results merge in sample order.
    """
    if not samples:
        raise ValidationError("evaluation needs at least one sample", field="samples")
    workers = min(resolve_threads(threads), len(samples))
    bounds = np.linspace(0, len(samples), workers + 1).astype(int)
    shards = [samples[a:b] for a, b in zip(bounds, bounds[1:])]
    if workers == 1:
        results = [_score_shard(shards[0], model, scorer, method, batch_size)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda s: _score_shard(s, model, scorer, method, batch_size), shards))

    merged: Dict[str, Dict[str, list]] = {}
    for result in results:
        for name, scores in result.items():
            entry = merged.setdefault(name, {"correct": [], "psnr": [], "ssim": []})
            for key, values in scores.items():
                entry[key].extend(values)

    difficulties = np.asarray([s.difficulty for s in samples])
    report = EvalReport()
    for name, scores in merged.items():
        for difficulty in DIFFICULTIES:
            index = np.flatnonzero(difficulties == difficulty)
            if index.size:
                report.rows.append(_summarize(name, difficulty, scores, index))
        report.rows.append(_summarize(name, AVERAGE, scores, np.arange(len(samples))))
    for name in merged:
        row = report.row(name)
        logger.info(f"{name}: acc {100 * row.acc:.2f}% psnr {row.psnr_db:.3f} dB ssim {row.ssim:.4f}")
    return report


def evaluate_tp_generator(model: TPGSRModel, samples: Sequence[SamplePair], batch_size: int = 48) -> EvalReport:
    """Accuracy of each stage's own TP generator on the upscaled LR image and on the final SR image.

    Emits ``TPG@LR`` and ``TPG@SR`` rows whose split names the stage (``shared`` when every
    stage uses one generator). PSNR and SSIM are those of the image the generator read.
    """
    if not model.use_tp:
        raise ValidationError("a prior-free model has no TP generator to score", field="model")
    if not samples:
        raise ValidationError("evaluation needs at least one sample", field="samples")
    model = model.clone().eval()
    stages = [1] if model.plan.share_tpg else list(range(1, model.plan.stages + 1))
    scores: Dict[str, Dict[str, list]] = {}
    with no_grad():
        for chunk in batched(samples, batch_size):
            lr, hr, _, labels = collate(chunk)
            x = model_input(model, lr)
            images = {
                "TPG@LR": F.bicubic_resize(x, *hr.shape[2:]).data,
                "TPG@SR": model(x)[-1].sr.data,
            }
            for name, image in images.items():
                image = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
                psnr = psnr_per_sample(image, hr).tolist()
                ssim = ssim_per_sample(image, hr).tolist()
                for stage in stages:
                    predictions = predict(model.rec_for(stage), image, batch_size)
                    entry = scores.setdefault(f"{name}/{stage}", {"correct": [], "psnr": [], "ssim": []})
                    entry["correct"].extend(float(recognition_accuracy([p], [t])) for p, t in zip(predictions, labels))
                    entry["psnr"].extend(psnr)
                    entry["ssim"].extend(ssim)

    report = EvalReport()
    everything = np.arange(len(samples))
    for stage in stages:
        split = "shared" if model.plan.share_tpg else f"stage{stage}"
        for name in ("TPG@LR", "TPG@SR"):
            report.rows.append(_summarize(name, split, scores[f"{name}/{stage}"], everything))
        logger.info(
            f"TP generator ({split}): acc {100 * report.row('TPG@LR', split).acc:.2f}% on LR, "
            f"{100 * report.row('TPG@SR', split).acc:.2f}% on SR"
        )
    return report
