from dataclasses import replace

import numpy as np
import pytest

from lamae import checkpoint as ck
from lamae.config import RunConfig
from lamae.data.synthetic import SyntheticConfig, code_predicates, generate_dataset
from lamae.errors import ConfigError, DataError, NumericError
from lamae.model import ModelConfig
from lamae.optim import ScheduleConfig
from lamae.train import (
    MetricsLog,
    evaluate,
    evaluate_params,
    finetune,
    head_names,
    load_into,
    prefetch,
    pretrain,
    read_trace,
    resolve_schedule,
)

SYN = SyntheticConfig(n_frames=4)
CODES = [p.name for p in code_predicates()]


@pytest.fixture(scope="module")
def studies():
    return generate_dataset(6, 0, SYN, val_fraction=1 / 3)


def base_cfg(tmp_path, **kw):
    cfg = RunConfig(
        model=ModelConfig.desk(dtype="float64"),
        schedule=ScheduleConfig(base_lr=1e-3, warmup_epochs=0.5),
        epochs=3,
        batch_size=2,
        out=str(tmp_path),
        prefetch=0,
    )
    return replace(cfg, **kw)


def test_pretrain_deterministic_and_logs(tmp_path, studies):
    a = pretrain(base_cfg(tmp_path / "a"), studies)
    b = pretrain(base_cfg(tmp_path / "b", prefetch=2), studies)
    assert a.losses == b.losses and a.step == 9
    for name in a.params:
        assert np.array_equal(a.params[name].data, b.params[name].data)
    log = MetricsLog.read(tmp_path / "a" / "pretrain_log.csv")
    assert [int(e) for e in log.column("epoch")] == [0, 1, 2]
    trace = read_trace(tmp_path / "a" / "pretrain_steps.csv")
    assert [float(r["loss"]) for r in trace] == a.losses
    c = pretrain(base_cfg(tmp_path / "c", seed=1), studies)
    assert c.losses != a.losses


def test_resume_equals_continuous(tmp_path, studies):
    full = pretrain(base_cfg(tmp_path / "full"), studies)
    first = pretrain(base_cfg(tmp_path / "part", max_steps=4), studies)
    assert first.step == 4
    rest = pretrain(base_cfg(tmp_path / "part2", resume=str(tmp_path / "part" / "pretrain_last.ckpt")), studies)
    assert first.losses + rest.losses == full.losses
    for name in full.params:
        assert np.array_equal(full.params[name].data, rest.params[name].data)


def test_resume_rejects_wrong_kind(tmp_path, studies):
    pretrain(base_cfg(tmp_path / "p", epochs=1), studies)
    cfg = base_cfg(tmp_path / "f", mode="finetune_full", epochs=1, init_checkpoint=str(tmp_path / "p" / "pretrain_last.ckpt"))
    finetune(cfg, studies, CODES)
    with pytest.raises(ConfigError):
        pretrain(base_cfg(tmp_path / "x", resume=str(tmp_path / "f" / "finetune_last.ckpt")), studies)


def test_checkpoint_every(tmp_path, studies):
    pretrain(base_cfg(tmp_path, checkpoint_every=1), studies)
    names = sorted(p.name for p in tmp_path.glob("pretrain_epoch*.ckpt"))
    assert names == ["pretrain_epoch0001.ckpt", "pretrain_epoch0002.ckpt", "pretrain_epoch0003.ckpt"]


@pytest.fixture(scope="module")
def pretrained(tmp_path_factory, studies):
    out = tmp_path_factory.mktemp("pre")
    pretrain(base_cfg(out, epochs=2), studies)
    return str(out / "pretrain_last.ckpt")


def test_frozen_changes_head_only(tmp_path, studies, pretrained):
    cfg = base_cfg(tmp_path, mode="finetune_frozen", init_checkpoint=pretrained, epochs=2)
    res = finetune(cfg, studies, CODES)
    start, _ = ck.load(pretrained)
    heads = set(head_names(res.params))
    assert heads and set(res.optimizer.params) == heads
    for name, p in res.params.items():
        if name in heads:
            continue
        assert np.array_equal(p.data, start[name]), name
    assert not any(n.startswith("decoder") for n in res.params)
    assert res.losses[0] != res.losses[-1]


def test_full_finetune_moves_backbone(tmp_path, studies, pretrained):
    res = finetune(base_cfg(tmp_path, mode="finetune_full", init_checkpoint=pretrained, epochs=1), studies, CODES)
    start, _ = ck.load(pretrained)
    assert not np.array_equal(res.params["encoder.norm.g"].data, start["encoder.norm.g"])


def test_checkpoint_then_evaluate_identical(tmp_path, studies, pretrained):
    cfg = base_cfg(tmp_path, mode="finetune_full", init_checkpoint=pretrained, epochs=2)
    res = finetune(cfg, studies, CODES)
    direct = evaluate_params(res.params, cfg, [s for s in studies if s.split == "val"], res.meta)
    loaded = evaluate(cfg, tmp_path / "finetune_last.ckpt", "val", studies)
    for key in ("macro_auroc", "macro_f1", "per_code", "n_studies"):
        assert direct[key] == loaded[key]
    assert (tmp_path / "finetune_best.ckpt").exists()
    assert res.meta["best_epoch"] >= 0


def test_regression_finetune(tmp_path, studies, pretrained):
    mc = ModelConfig.desk(dtype="float64", task="regression", num_outputs=1)
    cfg = base_cfg(tmp_path, mode="finetune_full", model=mc, init_checkpoint=pretrained, epochs=1)
    res = finetune(cfg, studies, CODES)
    rep = evaluate(cfg, tmp_path / "finetune_last.ckpt", "train", studies)
    assert rep["task"] == "regression" and rep["mae"] >= 0
    assert res.meta["target_std"] > 0
    bad = replace(cfg, model=replace(mc, num_outputs=2))
    with pytest.raises(ConfigError):
        finetune(bad, studies, CODES)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_aborts(tmp_path, studies):
    cfg = base_cfg(tmp_path, schedule=ScheduleConfig(base_lr=float("inf"), warmup_epochs=0.5))
    with pytest.raises(NumericError):
        pretrain(cfg, studies)


def test_label_count_mismatch(tmp_path, studies, pretrained):
    mc = ModelConfig.desk(dtype="float64", num_outputs=3)
    with pytest.raises(ConfigError, match="40 labels"):
        finetune(base_cfg(tmp_path, mode="finetune_full", model=mc, init_checkpoint=pretrained), studies, CODES)


def test_load_into_names_tensor(pretrained):
    from lamae.model import init_params

    params = init_params(ModelConfig.desk(dtype="float64", encoder=ModelConfig.desk().encoder), 0)
    arrays, _ = ck.load(pretrained)
    arrays = dict(arrays)
    arrays["encoder.norm.g"] = np.zeros(3)
    with pytest.raises(ConfigError, match="encoder.norm.g"):
        load_into(params, arrays)
    del arrays["encoder.norm.g"]
    with pytest.raises(ConfigError, match="missing tensor encoder.norm.g"):
        load_into(params, arrays)


def test_resolve_schedule():
    assert resolve_schedule(RunConfig(epochs=5, schedule=ScheduleConfig(warmup_epochs=1))).total_epochs == 5.0
    with pytest.raises(ConfigError):
        resolve_schedule(RunConfig(epochs=5, schedule=ScheduleConfig(warmup_epochs=1, total_epochs=3)))


def test_empty_data_and_frame_mismatch(tmp_path, studies):
    with pytest.raises(DataError):
        pretrain(base_cfg(tmp_path), [])
    small = generate_dataset(2, 0, SyntheticConfig(image_size=14, n_frames=2))
    with pytest.raises(DataError, match="28"):
        pretrain(base_cfg(tmp_path), small)


def test_metrics_log_monotone(tmp_path):
    log = MetricsLog(tmp_path / "log.csv")
    log.append(epoch=0, split="train", loss=1.0)
    log.append(epoch=1, split="train", loss=0.5)
    with pytest.raises(ValueError):
        log.append(epoch=0, split="train", loss=0.1)
    with pytest.raises(ValueError):
        log.append(epoch=2, bogus=1)
    assert MetricsLog.read(tmp_path / "log.csv").column("loss") == [1.0, 0.5]


def test_prefetch_preserves_order_and_errors():
    assert list(prefetch(range(10), 2)) == list(range(10))

    def boom():
        yield 1
        raise RuntimeError("x")

    with pytest.raises(RuntimeError):
        list(prefetch(boom(), 1))
