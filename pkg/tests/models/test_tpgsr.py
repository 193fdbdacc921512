import numpy as np
import pytest

from tpgsr.config import StagePlan
from tpgsr.engine.tensor import Tensor
from tpgsr.exceptions import CheckpointError, ConfigurationError, ShapeError, ValidationError
from tpgsr.models.tpgsr import (
    TPGSRModel,
    init_multistage_from_single,
    load_model,
    multistage_forward,
    save_model,
    single_stage_source,
    stage_forward,
)

from ..conftest import TINY_REC_CHANNELS

SMALL = {"sr_channels": 4, "sr_blocks": 1, "rec_channels": TINY_REC_CHANNELS, "tpt_channels": (4, 4, 4, 4)}


def plan(stages, **kwargs):
    lambdas = [1.0 / stages] * stages
    return StagePlan(stages=stages, lambdas=lambdas, **kwargs)


def build(stages, seed=0, **kwargs):
    plan_kwargs = {k: kwargs.pop(k) for k in list(kwargs) if k in StagePlan.model_fields}
    return TPGSRModel(plan(stages, **plan_kwargs), np.random.default_rng(seed), **SMALL, **kwargs)


def lr_batch(rng, batch=2):
    return Tensor(rng.uniform(size=(batch, 1, 16, 64)), dtype="f32")


def test_single_stage_matches_stage_forward(rng):
    model = build(1).eval()
    lr = lr_batch(rng)
    outputs = model(lr)
    direct = stage_forward(model.srs[0], model.recs[0], model.tpts[0], lr, None, stage=1)
    assert len(outputs) == 1
    assert outputs[0].tp.source == "from_lr"
    np.testing.assert_array_equal(outputs[0].sr.numpy(), direct.sr.numpy())


def test_stage_outputs_and_sources(rng):
    outputs = build(3).eval()(lr_batch(rng))
    assert [o.sr.shape for o in outputs] == [(2, 1, 32, 128)] * 3
    assert [o.tp.source for o in outputs] == ["from_lr", "from_sr_stage(1)", "from_sr_stage(2)"]


@pytest.mark.parametrize("stop_grad", [True, False])
def test_gradient_between_stages(rng, stop_grad):
    model = build(2, share_sr=False, stop_grad_between_stages=stop_grad)
    outputs = model(lr_batch(rng))
    outputs[-1].sr.mean().backward()
    first = [p.grad for name, p in model.named_parameters() if name.startswith("tpg.stage1.sr.")]
    second = [p.grad for name, p in model.named_parameters() if name.startswith("tpg.stage2.sr.")]
    assert any(g.any() for g in second)
    assert any(g.any() for g in first) != stop_grad


def test_shared_sr_is_one_module():
    model = build(3)
    assert model.sr_for(1) is model.sr_for(3)
    assert model.rec_for(1) is not model.rec_for(2)
    names = [name for name, _ in model.named_parameters()]
    assert any(n.startswith("tpg.shared.sr.") for n in names)
    assert not any(n.startswith("tpg.stage2.sr.") for n in names)
    assert any(n.startswith("tpg.stage3.rec.") for n in names)
    assert any(n.startswith("tpg.stage3.tpt.") for n in names)


def test_shared_tpg_names():
    model = build(2, share_sr=False, share_tpg=True)
    names = {name.split(".")[1] + "." + name.split(".")[2] for name, _ in model.named_parameters()}
    assert names == {"stage1.sr", "stage2.sr", "shared.rec", "shared.tpt"}
    assert model.tpt_for(1) is model.tpt_for(2)


def test_previous_image_rules(rng):
    model = build(2)
    lr = lr_batch(rng)
    with pytest.raises(ValidationError):
        model.stage_forward(1, lr, Tensor(np.zeros((2, 1, 32, 128)), dtype="f32"))
    with pytest.raises(ValidationError):
        model.stage_forward(2, lr)
    with pytest.raises(ValidationError):
        model.stage_forward(3, lr, Tensor(np.zeros((2, 1, 32, 128)), dtype="f32"))


def test_input_shape_mismatch():
    model = build(1)
    with pytest.raises(ShapeError):
        model(Tensor(np.zeros((1, 1, 32, 128)), dtype="f32"))


def test_multistage_forward_checks_plan(rng):
    model = build(2).eval()
    with pytest.raises(ConfigurationError):
        multistage_forward(plan(3), model, lr_batch(rng))
    outputs = multistage_forward(model.plan, model, lr_batch(rng))
    assert len(outputs) == 2


def test_recognizers_stay_in_eval():
    model = build(2).train()
    assert model.training
    assert all(not rec.training for rec in model.recs)
    assert all(sr.training for sr in model.srs)


def test_prior_free_model(rng):
    model = build(2, use_tp=False).eval()
    outputs = model(lr_batch(rng))
    assert all(o.tp is None for o in outputs)
    frozen = [name for name, p in model.named_parameters() if not p.requires_grad]
    assert frozen and all(".projection." in name for name in frozen)


def test_single_stage_source_candidates():
    assert single_stage_source("tpg.stage3.rec.convs.0.weight") == [
        "tpg.shared.rec.convs.0.weight",
        "tpg.stage1.rec.convs.0.weight",
    ]
    with pytest.raises(CheckpointError):
        single_stage_source("head.weight")


def test_init_multistage_copies_single_stage(tmp_path):
    single = build(1, seed=5)
    path = save_model(tmp_path / "single.ckpt", single, {"stages": 1})
    model = init_multistage_from_single(path, plan(3), np.random.default_rng(9), **SMALL)
    state = model.state_dict()
    reference = single.state_dict()
    for name, value in state.items():
        component = name.split(".")[2]
        rest = name.split(".", 3)[3]
        source = f"tpg.shared.sr.{rest}" if component == "sr" else f"tpg.stage1.{component}.{rest}"
        np.testing.assert_array_equal(value, reference[source], err_msg=name)


def test_init_multistage_missing_parameter():
    state = dict(build(1).state_dict())
    del state["tpg.stage1.tpt.deconvs.0.weight"]
    with pytest.raises(CheckpointError) as e:
        init_multistage_from_single(state, plan(2), np.random.default_rng(0), **SMALL)
    assert e.value.path == "tpg.stage1.tpt.deconvs.0.weight"


def test_init_multistage_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        init_multistage_from_single(tmp_path / "absent.ckpt", plan(2), np.random.default_rng(0), **SMALL)


def test_save_and_load_reproduce_outputs(tmp_path, rng):
    model = build(2, seed=1).eval()
    path = save_model(tmp_path / "model.ckpt", model, {"note": "x"})
    restored = build(2, seed=2).eval()
    assert load_model(path, restored)["note"] == "x"
    lr = lr_batch(rng)
    for a, b in zip(model(lr), restored(lr)):
        np.testing.assert_array_equal(a.sr.numpy(), b.sr.numpy())
