import pytest

from lamae.config import RunConfig, apply_overrides, config_hash, dump_config, load_config, parse_config, parse_pairs
from lamae.errors import ConfigError
from lamae.model import ModelConfig


def test_defaults_are_desk():
    cfg = RunConfig()
    assert cfg.preset == "desk" and cfg.model == ModelConfig.desk()


def test_parse_and_override():
    cfg = parse_config(
        """
        # comment line
        mode = finetune_frozen
        model.variant = video_lamae   # trailing comment
        model.encoder.num_layers = 3
        schedule.base_lr = 2e-3
        augment = yes
        resume = none
        """
    )
    assert cfg.frozen and cfg.model.variant == "video_lamae" and cfg.model.encoder.num_layers == 3
    assert cfg.schedule.base_lr == 2e-3 and cfg.augment is True


def test_preset_applies_before_model_keys_regardless_of_order():
    cfg = parse_config("model.alpha_e = 0.5\npreset = full\nmodel.variant = video_mae")
    assert cfg.model.grid.image_size == 224 and cfg.model.alpha_e == 0.5 and cfg.model.variant == "video_mae"


def test_variant_switch_restores_la_depth():
    mae = parse_config("model.variant = image_mae")
    assert mae.model.latent.num_layers == 0
    back = apply_overrides(mae, [("preset", "desk"), ("model.variant", "lamae")])
    assert back.model.latent.num_layers == 1


def test_round_trip_and_hash():
    cfg = parse_config("model.variant = video_lamae\nseed = 4\nschedule.total_epochs = 50\npixel_std = 0.25")
    text = dump_config(cfg)
    assert parse_config(text) == cfg
    assert config_hash(cfg) == config_hash(parse_config(text))
    assert config_hash(cfg) != config_hash(RunConfig())
    assert len(config_hash(cfg)) == 16


@pytest.mark.parametrize(
    "text,key",
    [
        ("bogus = 1", "bogus"),
        ("model.nope = 1", "model.nope"),
        ("batch_size = many", "batch_size"),
        ("schedule.base_lr = fast", "schedule.base_lr"),
        ("augment = maybe", "augment"),
        ("model = x", "model"),
    ],
)
def test_errors_name_the_key(text, key):
    with pytest.raises(ConfigError, match=key.replace(".", r"\.")):
        parse_config(text)


@pytest.mark.parametrize(
    "text",
    ["mode = train", "preset = huge", "batch_size = 0", "batch_size = 5\naccum_steps = 2", "pixel_std = 0",
     "model.variant = cnn", "model.alpha_e = 1.0", "no equals sign"],
)
def test_invalid_values(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_check_paths():
    with pytest.raises(ConfigError, match="manifest"):
        RunConfig(mode="pretrain").check_paths()
    with pytest.raises(ConfigError, match="checkpoint"):
        RunConfig(mode="finetune_full", manifest="m.jsonl").check_paths()
    RunConfig(mode="generate").check_paths()


def test_load_config_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("epochs = 7\n")
    assert load_config(p).epochs == 7
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.cfg")
    assert parse_pairs("a = b = c") == [("a", "b = c")]


def test_regression_task_implies_one_output():
    assert parse_config("model.task = regression").model.num_outputs == 1
    assert parse_config("model.task = regression\nmodel.num_outputs = 2").model.num_outputs == 2
    assert parse_config("model.task = multilabel").model.num_outputs == 40


def test_hash_ignores_output_locations():
    a = RunConfig(out="runs/a", init_checkpoint="x.ckpt")
    b = RunConfig(out="runs/b", init_checkpoint="y.ckpt")
    assert config_hash(a) == config_hash(b)
    assert config_hash(a) != config_hash(RunConfig(seed=1))
