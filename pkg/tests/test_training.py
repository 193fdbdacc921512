import csv
from dataclasses import replace

import numpy as np
import pytest
from reactivex.subject import Subject

from tpgsr.config import RunConfig
from tpgsr.engine.tensor import Tensor
from tpgsr.events import TrainingEvent
from tpgsr.exceptions import ConfigurationError, TrainingError
from tpgsr.training import (
    METRIC_FIELDS,
    MetricsCSVWriter,
    Trainer,
    ablation_arms,
    load_trained_model,
    lr_at_epoch,
    run_training,
    tp_generator_scores,
)


def tiny_config(tmp_path, **changes):
    values = {
        "seed": 0,
        "stages": 2,
        "epochs": 1,
        "batch_size": 3,
        "sr_channels": 4,
        "sr_blocks": 1,
        "grid_samples": 2,
        "lr_decay_epoch": 0,
        "checkpoint_dir": str(tmp_path),
        "run_name": "tiny",
    }
    values.update(changes)
    return RunConfig(**values)


def read_csv(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def test_lr_schedule():
    assert lr_at_epoch(1e-3, 19, 20) == 1e-3
    assert lr_at_epoch(1e-3, 20, 20) == 5e-4
    assert lr_at_epoch(1e-3, 40, 20) == 5e-4
    assert lr_at_epoch(1e-3, 40, 0) == 1e-3


def test_metrics_writer_follows_a_stream(tmp_path):
    writer = MetricsCSVWriter(tmp_path / "m.csv")
    events = Subject()
    events.subscribe(writer)
    events.on_next(TrainingEvent(kind="epoch", phase="single", epoch=1, step=4, metrics={"total": 0.5, "other": 1.0}))
    events.on_next(TrainingEvent(kind="epoch", phase="multi", epoch=1, step=8, metrics={"total": 0.25}))
    rows = read_csv(tmp_path / "m.csv")
    assert list(rows[0]) == METRIC_FIELDS
    assert [(r["phase"], r["step"], r["total"]) for r in rows] == [("single", "4", "0.5"), ("multi", "8", "0.25")]
    assert rows[1]["kl"] == ""


def test_tuning_arms(tmp_path):
    arms = ablation_arms(tiny_config(tmp_path), "tuning")
    assert [label for label, _ in arms] == ["no_tp", "fixed", "tuned"]
    no_tp, fixed, tuned = (config for _, config in arms)
    assert not no_tp.use_tp
    assert fixed.use_tp and not fixed.tuned_tpg
    assert tuned.tuned_tpg
    assert tuned.run_dir == tmp_path / "tiny" / "ablate-tuning" / "tuned"


def test_stage_arms_reset_weights(tmp_path):
    arms = ablation_arms(tiny_config(tmp_path, lambdas=[0.5, 0.5]), "stages", ["1", "3"])
    assert [label for label, _ in arms] == ["N=1", "N=3"]
    assert arms[0][1].plan.lambdas == [1.0]
    assert arms[1][1].plan.lambdas == [0.25, 0.25, 0.5]


def test_sharing_and_loss_arms(tmp_path):
    sharing = ablation_arms(tiny_config(tmp_path), "sharing")
    assert len(sharing) == 4
    assert all("," not in config.run_name for _, config in sharing)
    selected = ablation_arms(tiny_config(tmp_path), "tp_loss", ["l1", "both"])
    assert [(c.use_l1_tp, c.use_kl_tp) for _, c in selected] == [(True, False), (True, True)]


def test_ablation_axis_errors(tmp_path):
    with pytest.raises(ConfigurationError):
        ablation_arms(tiny_config(tmp_path), "depth")
    with pytest.raises(ConfigurationError):
        ablation_arms(tiny_config(tmp_path), "tuning", ["sometimes"])


def test_trainer_run(tmp_path, tiny_splits, tiny_recognizer):
    train, test = tiny_splits
    config = tiny_config(tmp_path)
    trainer = Trainer(config, train, test, tiny_recognizer)
    seen = []
    trainer.events.subscribe(seen.append)
    result = trainer.run()

    run_dir = tmp_path / "tiny"
    for name in ("config.txt", "metrics.csv", "single_stage.ckpt", "tpgsr.ckpt", "eval.csv", "grid.pgm", "grid.png"):
        assert (run_dir / name).exists(), name
    assert set(result.checkpoints) == {"single", "final"}

    steps = [e for e in seen if e.kind == "step"]
    epochs = [e for e in seen if e.kind == "epoch"]
    assert [e.phase for e in steps] == ["single", "single", "multi", "multi"]
    assert [e.step for e in steps] == [1, 2, 3, 4]
    assert [e.phase for e in epochs] == ["single", "multi"]
    assert seen[-1].kind == "eval"
    assert all(np.isfinite(e.metrics["total"]) for e in steps)
    assert [r["phase"] for r in read_csv(run_dir / "metrics.csv")] == ["single", "multi"]

    assert result.report.methods == ["BICUBIC", "TPGSR", "HR"]
    assert result.report.row("TPGSR").n == len(test)
    assert len(result.model.plan.lambdas) == 2
    assert not result.model.training


def test_trainer_keeps_scorer_fixed(tmp_path, tiny_splits, tiny_recognizer):
    before = {k: v.copy() for k, v in tiny_recognizer.state_dict().items()}
    Trainer(tiny_config(tmp_path, stages=1), *tiny_splits, tiny_recognizer).run()
    for name, value in tiny_recognizer.state_dict().items():
        np.testing.assert_array_equal(value, before[name], err_msg=name)


def test_training_is_reproducible(tmp_path, tiny_splits, tiny_recognizer):
    first = Trainer(tiny_config(tmp_path, run_name="a"), *tiny_splits, tiny_recognizer).run()
    second = Trainer(tiny_config(tmp_path, run_name="b"), *tiny_splits, tiny_recognizer).run()
    a, b = first.model.state_dict(), second.model.state_dict()
    assert a.keys() == b.keys()
    for name in a:
        np.testing.assert_array_equal(a[name], b[name], err_msg=name)


def test_init_checkpoint_skips_single_stage(tmp_path, tiny_splits, tiny_recognizer):
    single = Trainer(tiny_config(tmp_path, stages=1, run_name="single"), *tiny_splits, tiny_recognizer).run()
    config = tiny_config(tmp_path, run_name="resumed", init_checkpoint=str(single.checkpoints["single"]))
    trainer = Trainer(config, *tiny_splits, tiny_recognizer)
    phases = []
    trainer.events.subscribe(lambda e: phases.append(e.phase))
    result = trainer.run()
    assert "single" not in phases
    assert set(result.checkpoints) == {"final"}


def test_prior_free_run_freezes_prior_branch(tmp_path, tiny_splits, tiny_recognizer):
    trainer = Trainer(tiny_config(tmp_path, use_tp=False, stages=1), *tiny_splits, tiny_recognizer)
    result = trainer.run()
    assert trainer.method == "SR"
    assert result.report.methods == ["BICUBIC", "SR", "HR"]
    for name, param in result.model.named_parameters():
        if ".rec." in name or ".tpt." in name or ".projection." in name:
            assert not param.requires_grad, name
        if ".projection." in name:
            assert not param.data.any(), name


def test_run_training_in_double_precision(tmp_path, tiny_splits, tiny_recognizer):
    config = tiny_config(tmp_path, stages=1, precision="f64", grid_samples=0)
    result = run_training(config, splits=tiny_splits, recognizer=tiny_recognizer)
    assert result.model.parameters()[0].dtype == np.float64
    assert tiny_recognizer.parameters()[0].dtype == np.float32
    assert not (tmp_path / "tiny" / "grid.pgm").exists()


def test_load_trained_model_matches(tmp_path, tiny_splits, tiny_recognizer, rng):
    config = tiny_config(tmp_path)
    result = Trainer(config, *tiny_splits, tiny_recognizer).run()
    restored = load_trained_model(config, tiny_recognizer, result.checkpoints["final"])
    lr = np.stack([s.lr for s in tiny_splits[1]])[:, None].astype(np.float32)
    np.testing.assert_array_equal(result.model(Tensor(lr))[-1].sr.numpy(), restored(Tensor(lr))[-1].sr.numpy())


def test_non_finite_loss_names_the_step(tmp_path, tiny_splits, tiny_recognizer):
    train, test = tiny_splits
    poisoned = [replace(sample, hr=np.full_like(sample.hr, np.nan)) for sample in train]
    trainer = Trainer(tiny_config(tmp_path, stages=1), poisoned, test, tiny_recognizer)
    with pytest.raises(TrainingError) as excinfo:
        trainer.run()
    assert excinfo.value.step == 0
    assert "at step 0" in str(excinfo.value)
    assert trainer.step == 0
    assert not (tmp_path / "tiny" / "single_stage.ckpt").exists()


def test_tuned_generator_scores(tmp_path, tiny_splits, tiny_recognizer):
    config = tiny_config(tmp_path)
    result = Trainer(config, *tiny_splits, tiny_recognizer).run()
    scores = tp_generator_scores(config, result, tiny_splits[1])
    assert set(scores) == {"tpg_lr_acc", "tpg_sr_acc"}
    assert all(0.0 <= v <= 1.0 for v in scores.values())
    rows = read_csv(tmp_path / "tiny" / "tpg.csv")
    assert [(r["method"], r["split"]) for r in rows] == [
        ("TPG@LR", "stage1"),
        ("TPG@SR", "stage1"),
        ("TPG@LR", "stage2"),
        ("TPG@SR", "stage2"),
    ]
