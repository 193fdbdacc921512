# tpgsr/cli.py

import argparse
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, List, Optional, Sequence

import numpy as np
from dotenv import load_dotenv
from reactivex import operators as ops
from reactivex.subject import Subject
from rich.console import Console
from rich.table import Table

from .config import RunConfig, config_hash, load_config, write_echo
from .data.dataset import DatasetManifest, build_dataset, load_dataset, split_path
from .data.imageio import read_image, write_pgm, write_png
from .data.synth import DIFFICULTIES, HR_SIZE
from .engine import functional as F
from .engine.tensor import Tensor, no_grad, precision
from .evaluation import evaluate
from .exceptions import TPGSRException, ValidationError
from .gradcheck import run_suite
from .logging import TPGSRLogger
from .models.recognizer import (
    RecognizerModel,
    decode_frames,
    generate_tp,
    model_input,
    predict,
    pretrain,
    recognition_accuracy,
    save_recognizer,
)
from .training import (
    ABLATION_AXES,
    MetricsCSVWriter,
    load_scorer,
    load_splits,
    load_trained_model,
    run_ablation,
    run_training,
)
from .utils import derive_rng
from .visualizer import SampleGridVisualizer, TextPriorVisualizer

logger = TPGSRLogger.get_logger()

RECOGNIZER_STREAM = 201
PRETRAIN_FIELDS = ["phase", "epoch", "step", "loss", "first_loss", "frame_acc"]
PREVIEW_SAMPLES = 8


def positive_int(value: str) -> int:
    try:
        number = int(value)
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected an integer, got {value!r}") from e
    if number < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {number}")
    return number


@contextmanager
def run_log(run_dir: Path) -> Iterator[Path]:
    """Mirror the log into ``run_dir/run.log`` for the duration of a command."""
    run_dir.mkdir(parents=True, exist_ok=True)
    handler = logger.add_file_handler(str(run_dir / "run.log"))
    try:
        yield run_dir
    finally:
        logger.remove_file_handler(handler)


def _config_args(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--data", help="dataset directory holding train.bin and test.bin")


def _config(args: argparse.Namespace, **flags) -> RunConfig:
    return load_config(args.config, args.overrides, seed=args.seed, dataset=args.data, **flags)


def manifest_table(manifests: dict) -> Table:
    table = Table(title="Dataset")
    for column in ("Split", "Samples", *DIFFICULTIES, "Seed"):
        table.add_column(column, justify="left" if column == "Split" else "right")
    for split, manifest in manifests.items():
        manifest: DatasetManifest
        counts = [str(manifest.difficulty_counts.get(d, 0)) for d in DIFFICULTIES]
        table.add_row(split, str(manifest.sample_count), *counts, str(manifest.seed))
    return table


def cmd_gen_data(args: argparse.Namespace, console: Console) -> int:
    out = Path(args.out)
    with run_log(out):
        manifests = build_dataset(out, args.train, args.test, args.seed, args.threads)
        preview = load_dataset(split_path(out, "test"))[:PREVIEW_SAMPLES]
        paths = SampleGridVisualizer().save_grid(out / "samples", preview)
        console.print(manifest_table(manifests))
        logger.info(f"Preview grid written to {', '.join(str(p) for p in paths)}")
    return 0


def cmd_pretrain_rec(args: argparse.Namespace, console: Console) -> int:
    config = _config(args, rec_epochs=args.epochs, rec_val_fraction=args.val_fraction, batch_size=args.batch)
    out = Path(args.out or config.rec_checkpoint)
    with run_log(out.parent), precision(config.precision):
        train, test = load_splits(config)
        holdout = int(len(train) * config.rec_val_fraction)
        fit_samples = train[: len(train) - holdout] if holdout else train
        val_samples = train[len(train) - holdout :] if holdout else test
        model = RecognizerModel(derive_rng(config.seed, RECOGNIZER_STREAM), HR_SIZE)
        events = Subject()
        events.pipe(ops.filter(lambda e: e.kind == "epoch")).subscribe(
            MetricsCSVWriter(out.parent / "recognizer_metrics.csv", PRETRAIN_FIELDS)
        )
        pretrain(
            model,
            fit_samples,
            config.rec_epochs,
            lr=args.lr if args.lr is not None else config.lr,
            batch_size=config.batch_size,
            seed=config.seed,
            val_samples=val_samples,
            events=events,
        )
        save_recognizer(out, model, {"seed": config.seed, "config_hash": config_hash(config)})
        hr = np.stack([s.hr for s in test])[:, None]
        acc = recognition_accuracy(predict(model, hr, config.batch_size), [s.label for s in test])
        table = Table(title="Recognizer")
        table.add_column("Checkpoint")
        table.add_column("HR test acc (%)", justify="right")
        table.add_row(str(out), f"{100 * acc:.2f}")
        console.print(table)
    return 0


def cmd_train(args: argparse.Namespace, console: Console) -> int:
    flags = {"stages": args.stages, "use_tp": False if args.no_tp else None}
    overrides = list(args.overrides)
    if args.stages is not None and not any(o.split("=", 1)[0].strip() == "lambdas" for o in overrides):
        flags["lambdas"] = "none"
    config = _config(args, **flags)
    with run_log(config.run_dir):
        result = run_training(config)
        result.report.print(console, title=f"{config.run_name}: test set")
        for name, path in result.checkpoints.items():
            logger.info(f"{name} checkpoint: {path}")
    return 0


def cmd_eval(args: argparse.Namespace, console: Console) -> int:
    config = _config(args)
    checkpoint = Path(args.checkpoint) if args.checkpoint else config.run_dir / "tpgsr.ckpt"
    with run_log(config.run_dir), precision(config.precision):
        recognizer = load_scorer(config)
        model = load_trained_model(config, recognizer, checkpoint)
        samples = load_dataset(split_path(config.dataset, args.split))
        report = evaluate(
            model,
            samples,
            recognizer,
            method="TPGSR" if config.use_tp else "SR",
            batch_size=config.batch_size,
            threads=config.threads,
        )
        report.print(console, title=f"{checkpoint.name}: {args.split} set")
        out = Path(args.out) if args.out else config.run_dir / f"eval_{args.split}.csv"
        report.write_csv(out)
        logger.info(f"Scores written to {out}")
    return 0


def _lr_input(image: np.ndarray, lr_size: Sequence[int]) -> np.ndarray:
    if image.ndim != 2:
        raise ValidationError(f"expected a grayscale image, got shape {image.shape}", field="image")
    batch = image[None, None]
    if image.shape != tuple(lr_size):
        with no_grad():
            batch = F.bicubic_resize(Tensor(batch), *lr_size).data
    return np.clip(batch, 0.0, 1.0)


def cmd_infer(args: argparse.Namespace, console: Console) -> int:
    config = _config(args)
    checkpoint = Path(args.checkpoint) if args.checkpoint else config.run_dir / "tpgsr.ckpt"
    out = Path(args.out) if args.out else config.run_dir / "infer"
    with run_log(out), precision(config.precision):
        recognizer = load_scorer(config)
        model = load_trained_model(config, recognizer, checkpoint)
        lr = _lr_input(read_image(args.image), model.lr_size)
        table = Table(title=f"Inference: {Path(args.image).name}")
        for column in ("Stage", "Prior", "Confidence", "Recognized SR"):
            table.add_column(column)
        with no_grad():
            outputs = model(model_input(model, lr))
            for stage, output in enumerate(outputs, start=1):
                image = np.clip(np.asarray(output.sr.data[0, 0], dtype=np.float64), 0.0, 1.0)
                write_pgm(out / f"sr_stage{stage}.pgm", image)
                write_png(out / f"sr_stage{stage}.png", image)
                recognized = decode_frames(generate_tp(recognizer, image[None, None]).numpy()[0])
                if output.tp is not None:
                    probs = output.tp.numpy()[0]
                    prior = decode_frames(probs)
                    confidence = " ".join(f"{p:.2f}" for p in probs.max(axis=-1))
                else:
                    prior, confidence = "-", "-"
                table.add_row(str(stage), prior or "(empty)", confidence, recognized or "(empty)")
        console.print(table)
        logger.info(f"SR outputs written to {out}")
    return 0


def cmd_gradcheck(args: argparse.Namespace, console: Console) -> int:
    results = run_suite(seed=args.seed if args.seed is not None else 0, trials=args.trials)
    table = Table(title="Gradient check")
    for column in ("Check", "Trials", "Max rel. error", "Tolerance", "Result"):
        table.add_column(column, justify="left" if column in ("Check", "Result") else "right")
    for result in results:
        table.add_row(
            result.name,
            str(result.trials),
            f"{result.max_error:.3e}",
            f"{result.tolerance:.0e}",
            "[green]pass[/green]" if result.passed else "[red]FAIL[/red]",
        )
    console.print(table)
    return 0 if all(r.passed for r in results) else 1


def cmd_ablate(args: argparse.Namespace, console: Console) -> int:
    config = _config(args)
    values = [v.strip() for v in args.values.split(",") if v.strip()] if args.values else []
    with run_log(config.run_dir / f"ablate-{args.axis}"):
        write_echo(config, config.run_dir / f"ablate-{args.axis}")
        run_ablation(config, args.axis, values, console=console)
    return 0


def cmd_visualize_tp(args: argparse.Namespace, console: Console) -> int:
    config = _config(args)
    out = Path(args.out)
    with run_log(out.parent), precision(config.precision):
        recognizer = load_scorer(config, args.rec)
        if args.image:
            image, label = read_image(args.image), args.label
        else:
            samples = load_dataset(split_path(config.dataset, args.split))
            if not 0 <= args.index < len(samples):
                raise ValidationError(f"index {args.index} outside 0..{len(samples) - 1}", field="index")
            sample = samples[args.index]
            image = sample.lr if args.lr else sample.hr
            label = args.label or sample.label
        path = TextPriorVisualizer(recognizer).save_heatmap(out, image, label)
        logger.info(f"Text prior heat map written to {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tpgsr", description="Text-prior guided scene text super-resolution")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic train/test splits")
    p.add_argument("--train", type=positive_int, required=True)
    p.add_argument("--test", type=positive_int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="data")
    p.add_argument("--threads", type=int, default=0)
    p.set_defaults(handler=cmd_gen_data)

    p = sub.add_parser("pretrain-rec", help="pretrain the frame recognizer on HR images")
    _config_args(p)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch", type=positive_int)
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--out", help="checkpoint path (default: rec_checkpoint)")
    p.set_defaults(handler=cmd_pretrain_rec)

    p = sub.add_parser("train", help="single-stage training then multi-stage fine-tuning")
    _config_args(p)
    p.add_argument("--stages", type=positive_int)
    p.add_argument("--no-tp", action="store_true", help="train the prior-free SR baseline")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="score a trained checkpoint against BICUBIC and HR")
    _config_args(p)
    p.add_argument("--checkpoint")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--out", help="CSV path (default: <run dir>/eval_<split>.csv)")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("infer", help="super-resolve one image and report each stage")
    _config_args(p)
    p.add_argument("--checkpoint")
    p.add_argument("--image", required=True)
    p.add_argument("--out")
    p.set_defaults(handler=cmd_infer)

    p = sub.add_parser("gradcheck", help="finite-difference check of every differentiable op")
    p.add_argument("--trials", type=positive_int, default=20)
    p.add_argument("--seed", type=int)
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train and compare the arms of one ablation axis")
    _config_args(p)
    p.add_argument("--axis", choices=ABLATION_AXES, required=True)
    p.add_argument("--values", help="comma-separated arm labels (stage counts for --axis stages)")
    p.set_defaults(handler=cmd_ablate)

    p = sub.add_parser("visualize-tp", help="render a text prior as a heat map")
    _config_args(p)
    p.add_argument("--rec", help="recognizer checkpoint (default: rec_checkpoint)")
    p.add_argument("--image")
    p.add_argument("--split", choices=("train", "test"), default="test")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--lr", action="store_true", help="use the sample's LR image instead of HR")
    p.add_argument("--label", default="")
    p.add_argument("--out", default="tp_heatmap.png")
    p.set_defaults(handler=cmd_visualize_tp)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    if args.log_level:
        logger.set_level(args.log_level)
    console = Console()
    try:
        return args.handler(args, console)
    except TPGSRException as e:
        logger.error(str(e))
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
