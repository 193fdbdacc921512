# tpgsr/training.py

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from reactivex import operators as ops
from reactivex.subject import Subject
from rich.console import Console
from rich.table import Table

from .config import RunConfig, StagePlan, config_hash, write_echo
from .data.dataset import collate, load_dataset, split_path
from .data.synth import SamplePair
from .engine.checkpoint import load_checkpoint
from .engine.optim import Adam
from .engine.tensor import no_grad, precision
from .evaluation import EvalReport, evaluate, evaluate_tp_generator
from .events import TrainingEvent
from .exceptions import ConfigurationError, TrainingError
from .logging import TPGSRLogger
from .losses import multistage_loss, stage_loss_terms
from .models.recognizer import RecognizerModel, generate_tp, load_recognizer, model_input, set_trainable
from .models.tpgsr import TPGSRModel, init_multistage_from_single, load_model, save_model
from .utils import batched, derive_rng
from .visualizer import SampleGridVisualizer

logger = TPGSRLogger.get_logger()

MODEL_STREAM = 101
PHASE_STREAMS = {"single": 1, "multi": 2}
METRIC_FIELDS = ["phase", "epoch", "step", "lr", "image", "tp_l1", "kl", "total"]
ABLATION_AXES = ("tuning", "stages", "sharing", "tp_loss")
ABLATION_COLUMNS = ["axis", "arm", "acc", "psnr_db", "ssim", "tpg_lr_acc", "tpg_sr_acc"]


class MetricsCSVWriter:
    """Event-stream subscriber writing one CSV row per finished epoch."""

    def __init__(self, path: Union[str, Path], fields: Sequence[str] = tuple(METRIC_FIELDS)):
        self.path = Path(path)
        self.fields = list(fields)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("w", newline="") as f:
            csv.DictWriter(f, fieldnames=self.fields).writeheader()

    def __call__(self, event: TrainingEvent):
        with self.path.open("a", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=self.fields, extrasaction="ignore", restval="")
            row = {k: (f"{v:.8g}" if isinstance(v, float) else v) for k, v in event.csv_row().items()}
            writer.writerow(row)


def log_event(event: TrainingEvent):
    m = event.metrics
    if event.kind == "step":
        logger.debug(f"{event.phase} step {event.step}: loss {m.get('total', float('nan')):.5f}")
    elif event.kind == "epoch":
        logger.info(
            f"{event.phase} epoch {event.epoch}: L_S {m.get('image', 0.0):.5f} "
            f"TP-L1 {m.get('tp_l1', 0.0):.5f} KL {m.get('kl', 0.0):.5f} "
            f"total {m.get('total', 0.0):.5f} lr {m.get('lr', 0.0):.2e}"
        )
    else:
        logger.info(f"{event.phase} eval: " + " ".join(f"{k} {v:.4f}" for k, v in m.items()))


def lr_at_epoch(base_lr: float, epoch: int, decay_epoch: int) -> float:
    """Step schedule: the rate halves from ``decay_epoch`` on (1-based; 0 disables decay)."""
    return base_lr * 0.5 if 0 < decay_epoch <= epoch else base_lr


@dataclass
class TrainingResult:
    model: TPGSRModel
    report: EvalReport
    run_dir: Path
    checkpoints: Dict[str, Path] = field(default_factory=dict)


class Trainer:
    """Two-phase TPGSR training: single stage first, then a multi-stage fine-tune.

    ``events`` streams a ``TrainingEvent`` per step, per epoch and per evaluation.
    """

    def __init__(
        self,
        config: RunConfig,
        train_samples: Sequence[SamplePair],
        test_samples: Sequence[SamplePair],
        recognizer: RecognizerModel,
        run_dir: Optional[Union[str, Path]] = None,
    ):
        if not train_samples:
            raise ConfigurationError("training needs at least one sample", component="Trainer")
        self.config = config
        self.train_samples = list(train_samples)
        self.test_samples = list(test_samples)
        self.recognizer = recognizer
        self.target = recognizer.clone().eval()
        set_trainable(self.target, False)
        self.run_dir = Path(run_dir) if run_dir is not None else config.run_dir
        self.step = 0
        self.events = Subject()
        self.events.subscribe(log_event)
        self.csv_writer = MetricsCSVWriter(self.run_dir / "metrics.csv")
        self.events.pipe(ops.filter(lambda e: e.kind == "epoch")).subscribe(self.csv_writer)

    @property
    def method(self) -> str:
        return "TPGSR" if self.config.use_tp else "SR"

    def model_kwargs(self) -> Dict[str, object]:
        return {
            "hr_size": self.recognizer.image_size,
            "sr_channels": self.config.sr_channels,
            "sr_blocks": self.config.sr_blocks,
            "rec_channels": self.recognizer.channels,
            "use_tp": self.config.use_tp,
        }

    def metadata(self, phase: str) -> Dict[str, object]:
        return {
            "seed": self.config.seed,
            "step": self.step,
            "config_hash": config_hash(self.config),
            "phase": phase,
            "stages": self.config.stages if phase == "multi" else 1,
        }

    def configure_trainable(self, model: TPGSRModel) -> TPGSRModel:
        model.set_tpg_trainable(self.config.tuned_tpg and self.config.use_tp)
        if not self.config.use_tp:
            for tpt in model.tpts:
                set_trainable(tpt, False)
        return model

    def build_model(self, plan: StagePlan, rng: np.random.Generator) -> TPGSRModel:
        model = TPGSRModel(plan, rng, recognizer=self.recognizer, **self.model_kwargs())
        return self.configure_trainable(model)

    def train_step(
        self, model: TPGSRModel, plan: StagePlan, optimizer: Adam, chunk: Sequence[SamplePair]
    ) -> Dict[str, float]:
        lr_np, hr_np, _, _ = collate(chunk)
        lr_img = model_input(model, lr_np)
        hr_img = model_input(model, hr_np)
        with no_grad():
            t_high = generate_tp(self.target, hr_img, source="from_hr")
        outputs = model(lr_img)
        terms = [
            stage_loss_terms(out.sr, hr_img, out.tp, t_high if out.tp is not None else None, self.config.loss)
            for out in outputs
        ]
        loss = multistage_loss([t["total"] for t in terms], plan.lambdas)
        value = loss.item()
        if not np.isfinite(value):
            raise TrainingError(f"loss became {value}", step=self.step)
        loss.backward()
        optimizer.step()
        self.step += 1
        metrics = {"total": value}
        for name in ("image", "tp_l1", "kl"):
            metrics[name] = float(sum(w * t[name].item() for w, t in zip(plan.lambdas, terms) if name in t))
        return metrics

    def fit(self, model: TPGSRModel, plan: StagePlan, epochs: int, phase: str) -> TPGSRModel:
        optimizer = Adam(model.named_parameters(), lr=self.config.lr)
        for epoch in range(1, epochs + 1):
            optimizer.lr = lr_at_epoch(self.config.lr, epoch, self.config.lr_decay_epoch)
            model.train()
            order = derive_rng(self.config.seed, PHASE_STREAMS[phase], epoch).permutation(len(self.train_samples))
            totals: Dict[str, float] = {}
            batches = 0
            for chunk in batched([self.train_samples[i] for i in order], self.config.batch_size):
                metrics = self.train_step(model, plan, optimizer, chunk)
                self.events.on_next(
                    TrainingEvent(kind="step", phase=phase, epoch=epoch, step=self.step, metrics=metrics)
                )
                for key, value in metrics.items():
                    totals[key] = totals.get(key, 0.0) + value
                batches += 1
            summary = {key: value / batches for key, value in totals.items()}
            summary["lr"] = optimizer.lr
            self.events.on_next(TrainingEvent(kind="epoch", phase=phase, epoch=epoch, step=self.step, metrics=summary))
        return model.eval()

    def run(self) -> TrainingResult:
        config = self.config
        write_echo(config, self.run_dir)
        plan = config.plan
        rng = derive_rng(config.seed, MODEL_STREAM)
        checkpoints: Dict[str, Path] = {}
        single_plan = StagePlan(
            stages=1,
            lambdas=[1.0],
            share_sr=plan.share_sr,
            share_tpg=plan.share_tpg,
            stop_grad_between_stages=plan.stop_grad_between_stages,
        )

        if config.init_checkpoint:
            logger.info(f"Skipping single-stage training; starting from {config.init_checkpoint}")
            single_state = load_checkpoint(config.init_checkpoint)[0]
            model = init_multistage_from_single(single_state, plan, rng, **self.model_kwargs())
            model = self.configure_trainable(model)
        else:
            model = self.fit(self.build_model(single_plan, rng), single_plan, config.epochs, "single")
            checkpoints["single"] = save_model(self.run_dir / "single_stage.ckpt", model, self.metadata("single"))
            if plan.stages > 1:
                model = init_multistage_from_single(model.state_dict(), plan, rng, **self.model_kwargs())
                model = self.configure_trainable(model)

        if plan.stages > 1:
            epochs = config.finetune_epochs if config.finetune_epochs is not None else config.epochs
            model = self.fit(model, plan, epochs, "multi")
        checkpoints["final"] = save_model(self.run_dir / "tpgsr.ckpt", model, self.metadata("multi"))

        report = self.evaluate(model)
        if config.grid_samples and self.test_samples:
            SampleGridVisualizer(model).save_grid(self.run_dir / "grid", self.test_samples[: config.grid_samples])
        return TrainingResult(model=model, report=report, run_dir=self.run_dir, checkpoints=checkpoints)

    def evaluate(self, model: TPGSRModel) -> EvalReport:
        if not self.test_samples:
            return EvalReport()
        report = evaluate(
            model,
            self.test_samples,
            self.recognizer,
            method=self.method,
            batch_size=self.config.batch_size,
            threads=self.config.threads,
        )
        report.write_csv(self.run_dir / "eval.csv")
        row = report.row(self.method)
        self.events.on_next(
            TrainingEvent(
                kind="eval",
                phase="final",
                step=self.step,
                metrics={"acc": row.acc, "psnr_db": row.psnr_db, "ssim": row.ssim},
            )
        )
        return report


def load_trained_model(config: RunConfig, recognizer: RecognizerModel, path: Union[str, Path]) -> TPGSRModel:
    """Rebuild the model a run with ``config`` trained and load its final checkpoint, in eval mode."""
    model = TPGSRModel(
        config.plan,
        derive_rng(config.seed, MODEL_STREAM),
        hr_size=recognizer.image_size,
        sr_channels=config.sr_channels,
        sr_blocks=config.sr_blocks,
        rec_channels=recognizer.channels,
        use_tp=config.use_tp,
    )
    load_model(path, model)
    return model.eval()


def load_scorer(config: RunConfig, path: Optional[Union[str, Path]] = None) -> RecognizerModel:
    """The pretrained recognizer, cast to the run precision."""
    recognizer = load_recognizer(path or config.rec_checkpoint)
    recognizer.cast(np.dtype(np.float64 if config.precision == "f64" else np.float32))
    return recognizer


def load_splits(config: RunConfig) -> Tuple[List[SamplePair], List[SamplePair]]:
    return load_dataset(split_path(config.dataset, "train")), load_dataset(split_path(config.dataset, "test"))


def run_training(
    config: RunConfig,
    splits: Optional[Tuple[Sequence[SamplePair], Sequence[SamplePair]]] = None,
    recognizer: Optional[RecognizerModel] = None,
    run_dir: Optional[Union[str, Path]] = None,
) -> TrainingResult:
    """Train and evaluate one configuration in its own precision context."""
    with precision(config.precision):
        train, test = splits if splits is not None else load_splits(config)
        if recognizer is None:
            recognizer = load_scorer(config)
        else:
            recognizer = recognizer.clone()
            recognizer.cast(np.dtype(np.float64 if config.precision == "f64" else np.float32))
        return Trainer(config, train, test, recognizer, run_dir).run()


def _sharing(flag: bool) -> str:
    return "shared" if flag else "separate"


def ablation_arms(config: RunConfig, axis: str, values: Sequence[str] = ()) -> List[Tuple[str, RunConfig]]:
    """Derived configurations of one ablation axis, labelled; ``values`` selects a subset."""
    if axis == "tuning":
        arms = [
            ("no_tp", {"use_tp": False}),
            ("fixed", {"use_tp": True, "tuned_tpg": False}),
            ("tuned", {"use_tp": True, "tuned_tpg": True}),
        ]
    elif axis == "stages":
        counts = [int(v) for v in values] if values else [1, 2, 3]
        arms = [(f"N={n}", {"stages": n, "lambdas": None}) for n in counts]
        values = ()
    elif axis == "sharing":
        arms = [
            (f"sr={_sharing(sr)},tpg={_sharing(tpg)}", {"share_sr": sr, "share_tpg": tpg})
            for sr in (True, False)
            for tpg in (True, False)
        ]
    elif axis == "tp_loss":
        arms = [
            ("none", {"use_l1_tp": False, "use_kl_tp": False}),
            ("l1", {"use_l1_tp": True, "use_kl_tp": False}),
            ("kl", {"use_l1_tp": False, "use_kl_tp": True}),
            ("both", {"use_l1_tp": True, "use_kl_tp": True}),
        ]
    else:
        raise ConfigurationError(f"unknown ablation axis {axis!r}; choose from {ABLATION_AXES}", component="ablate")
    if values:
        wanted = set(values)
        arms = [arm for arm in arms if arm[0] in wanted]
        if not arms:
            raise ConfigurationError(f"no {axis} arm matches {sorted(wanted)}", component="ablate")
    base = config.run_dir / f"ablate-{axis}"
    return [
        (label, config.derive(checkpoint_dir=str(base), run_name=label.replace(",", "_"), **changes))
        for label, changes in arms
    ]


def tp_generator_scores(
    config: RunConfig, result: TrainingResult, samples: Sequence[SamplePair]
) -> Dict[str, float]:
    """Last-stage TP generator accuracy on LR and SR inputs; the full report goes to ``tpg.csv``."""
    with precision(config.precision):
        report = evaluate_tp_generator(result.model, samples, config.batch_size)
    report.write_csv(result.run_dir / "tpg.csv")
    split = report.rows[-1].split
    return {"tpg_lr_acc": report.row("TPG@LR", split).acc, "tpg_sr_acc": report.row("TPG@SR", split).acc}


def run_ablation(
    config: RunConfig,
    axis: str,
    values: Sequence[str] = (),
    console: Optional[Console] = None,
) -> List[Dict[str, object]]:
    """Train and evaluate every arm of ``axis``; writes ``ablation.csv`` and prints a table."""
    arms = ablation_arms(config, axis, values)
    with precision(config.precision):
        splits = load_splits(config)
        recognizer = load_scorer(config)
    rows: List[Dict[str, object]] = []
    for label, arm_config in arms:
        logger.info(f"Ablation {axis}: running arm {label}")
        result = run_training(arm_config, splits=splits, recognizer=recognizer)
        method = "TPGSR" if arm_config.use_tp else "SR"
        row = result.report.row(method)
        entry = {"axis": axis, "arm": label, "acc": row.acc, "psnr_db": row.psnr_db, "ssim": row.ssim}
        if arm_config.use_tp and arm_config.tuned_tpg and splits[1]:
            entry.update(tp_generator_scores(arm_config, result, splits[1]))
        rows.append(entry)

    out = config.run_dir / f"ablate-{axis}" / "ablation.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=ABLATION_COLUMNS, restval="")
        writer.writeheader()
        writer.writerows(rows)

    table = Table(title=f"Ablation: {axis}")
    for column in ("Arm", "Acc (%)", "PSNR (dB)", "SSIM", "TPG@LR (%)", "TPG@SR (%)"):
        table.add_column(column, justify="left" if column == "Arm" else "right")
    for row in rows:
        tpg = [f"{100 * row[key]:.2f}" if key in row else "-" for key in ("tpg_lr_acc", "tpg_sr_acc")]
        table.add_row(
            str(row["arm"]), f"{100 * row['acc']:.2f}", f"{row['psnr_db']:.3f}", f"{row['ssim']:.4f}", *tpg
        )
    (console or Console()).print(table)
    return rows
