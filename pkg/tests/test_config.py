import pytest

from tpgsr.config import (
    RunConfig,
    StagePlan,
    build_config,
    config_hash,
    default_lambdas,
    echo,
    load_config,
    parse_config_text,
    write_echo,
)
from tpgsr.exceptions import ConfigurationError


def test_defaults():
    config = RunConfig()
    assert config.batch_size == 48
    assert config.plan.lambdas == [0.25, 0.25, 0.5]
    assert config.loss.alpha == 1.0 and config.loss.beta == 1.0
    assert config.loss.epsilon == 1e-6
    assert str(config.run_dir).endswith("tpgsr")


@pytest.mark.parametrize("stages", [1, 2, 3, 4, 5])
def test_default_lambdas_sum_to_one(stages):
    weights = default_lambdas(stages)
    assert len(weights) == stages
    assert sum(weights) == pytest.approx(1.0)
    assert weights[-1] == (1.0 if stages == 1 else 0.5)


def test_plan_rejects_bad_weights():
    with pytest.raises(ConfigurationError) as excinfo:
        StagePlan(stages=3, lambdas=[0.5, 0.5, 0.5])
    assert "sum" in str(excinfo.value)
    with pytest.raises(ConfigurationError):
        StagePlan(stages=2, lambdas=[1.0])
    with pytest.raises(ConfigurationError):
        StagePlan(stages=6, lambdas=[1 / 6] * 6)


def test_parse_config_text():
    values = parse_config_text("# a comment\nseed = 4\n\nlambdas=0.5,0.5  # trailing\n")
    assert values == {"seed": "4", "lambdas": "0.5,0.5"}
    with pytest.raises(ConfigurationError):
        parse_config_text("seed=1\nseed=2\n")
    with pytest.raises(ConfigurationError):
        parse_config_text("just words\n")


def test_load_config_precedence(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("seed=1\nstages=2\nlambdas=0.3,0.7\nuse_tp=yes\n")
    config = load_config(path, ["seed=2", "share_tpg=true"], seed=3, stages=None)
    assert config.seed == 3
    assert config.stages == 2
    assert config.lambdas == [0.3, 0.7]
    assert config.share_tpg is True
    assert config.use_tp is True


def test_unknown_keys_are_errors():
    with pytest.raises(ConfigurationError) as excinfo:
        load_config(None, ["stagez=3"])
    assert "stagez" in str(excinfo.value)


def test_invalid_values_are_errors():
    with pytest.raises(ConfigurationError):
        load_config(None, ["batch_size=0"])
    with pytest.raises(ConfigurationError):
        load_config(None, ["stages=3", "lambdas=0.5,0.5,0.5"])
    with pytest.raises(ConfigurationError):
        load_config(None, ["alpha=-1"])


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigurationError):
        load_config(tmp_path / "absent.cfg")


def test_none_markers():
    config = load_config(None, ["finetune_epochs=none", "init_checkpoint=", "lambdas=none"])
    assert config.finetune_epochs is None
    assert config.init_checkpoint is None
    assert config.lambdas is None


def test_echo_parses_back(tmp_path):
    config = load_config(None, ["stages=2", "lambdas=0.4,0.6", "init_checkpoint=x.ckpt", "precision=f64"])
    path = write_echo(config, tmp_path)
    assert load_config(path) == config
    assert config_hash(load_config(path)) == config_hash(config)


def test_hash_tracks_changes():
    base = RunConfig()
    assert config_hash(base) != config_hash(base.derive(seed=1))
    assert "seed=0\n" in echo(base)


def test_derive_validates():
    with pytest.raises(ConfigurationError):
        RunConfig(lambdas=[0.25, 0.25, 0.5]).derive(stages=2)
    assert build_config({"stages": 2}).plan.lambdas == [0.5, 0.5]
