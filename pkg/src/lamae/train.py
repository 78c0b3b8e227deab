"""Pretraining, finetuning and evaluation loops.

Every random choice draws from a stream keyed by (seed, consumer, epoch,
study id), so a run is a pure function of its config and data, and a
resumed run only needs the global step counter to continue exactly.
"""

from __future__ import annotations

import csv
import json
import math
import queue
import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np

from . import checkpoint as ckpt
from . import rng as rngmod
from . import tensor as T
from .config import RunConfig, config_hash, dump_config, parse_config
from .data.manifest import load_manifest
from .data.sampling import gather_pixels, sample_views_frames
from .data.study import Study
from .errors import ConfigError, DataError, NumericError
from .metrics import mae_regression, multilabel_report
from .model import (
    BACKBONE_GROUPS,
    HEAD_GROUPS,
    ModelConfig,
    finetune_features,
    init_head,
    init_params,
    pool_and_head,
    pretrain_loss,
    sample_plans,
)
from .optim import AdamW, ScheduleConfig, lr_at
from .params import ModelParams
from .tensor import Tensor

LOG_FIELDS = ("epoch", "step", "split", "loss", "lr", "auroc", "f1", "mae", "wall")


# -- logging -------------------------------------------------------------------
class MetricsLog:
    """Append-only per-epoch records mirrored to CSV."""

    def __init__(self, path: str | Path | None = None, records: list[dict] | None = None):
        self.path = Path(path) if path else None
        self.records: list[dict] = list(records or [])

    def append(self, **record) -> None:
        unknown = set(record) - set(LOG_FIELDS)
        if unknown:
            raise ValueError(f"unknown log fields {sorted(unknown)}")
        if self.records and record["epoch"] < self.records[-1]["epoch"]:
            raise ValueError("epoch numbering must not decrease")
        row = {k: record.get(k, "") for k in LOG_FIELDS}
        self.records.append(row)
        if self.path is not None:
            new = not self.path.exists()
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", newline="") as fh:
                w = csv.DictWriter(fh, LOG_FIELDS)
                if new:
                    w.writeheader()
                w.writerow(row)

    def column(self, name: str, split: str | None = None) -> list[float]:
        return [float(r[name]) for r in self.records if (split is None or r["split"] == split) and r[name] != ""]

    @classmethod
    def read(cls, path: str | Path) -> "MetricsLog":
        with open(path, newline="") as fh:
            return cls(None, list(csv.DictReader(fh)))


def read_trace(path: str | Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# -- data ----------------------------------------------------------------------
def load_studies(cfg: RunConfig, split: str | None = None) -> tuple[list[Study], list[str]]:
    m = load_manifest(cfg.manifest)
    studies = m.studies(split)
    return studies, m.codes


def study_pixels(study: Study, cfg: RunConfig, epoch: int, training: bool) -> np.ndarray:
    mc = cfg.model
    if training:
        pick = rngmod.stream(cfg.seed, rngmod.VIEWS, epoch, study.study_id)
        aug = rngmod.stream(cfg.seed, rngmod.AUGMENT, epoch, study.study_id) if cfg.augment else None
    else:
        pick = rngmod.stream(cfg.seed, rngmod.EVAL, study.study_id)
        aug = None
    index = sample_views_frames(study, mc.views_per_study, mc.frames_per_view, mc.frame_window, pick)
    px = gather_pixels(study, index, aug, dtype=mc.np_dtype)
    if px.shape[-1] != mc.grid.image_size or px.shape[-2] != mc.grid.image_size:
        raise DataError(
            f"study {study.study_id}: frames are {px.shape[-2:]}, model expects {mc.grid.image_size} pixels square"
        )
    return ((px - cfg.pixel_mean) / cfg.pixel_std).astype(mc.np_dtype)


def batch_pixels(studies: list[Study], cfg: RunConfig, epoch: int, training: bool) -> np.ndarray:
    return np.stack([study_pixels(s, cfg, epoch, training) for s in studies])


def epoch_order(n: int, cfg: RunConfig, epoch: int) -> list[np.ndarray]:
    perm = rngmod.stream(cfg.seed, rngmod.DATA, "order", epoch).permutation(n)
    return [perm[i : i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]


def prefetch(items: Iterable, size: int) -> Iterator:
    """Run ``items`` on a worker thread through a bounded queue."""
    if size <= 0:
        yield from items
        return
    q: queue.Queue = queue.Queue(maxsize=size)
    done = object()
    stop = threading.Event()

    def work():
        try:
            for it in items:
                while not stop.is_set():
                    try:
                        q.put(it, timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if stop.is_set():
                    return
        except BaseException as exc:  # surfaced on the consumer side
            q.put(exc)
            return
        q.put(done)

    t = threading.Thread(target=work, daemon=True)
    t.start()
    try:
        while True:
            it = q.get()
            if it is done:
                break
            if isinstance(it, BaseException):
                raise it
            yield it
    finally:
        stop.set()
        t.join(timeout=5)


# -- checkpoints ---------------------------------------------------------------
def save_checkpoint(path, params: ModelParams, opt: AdamW | None, cfg: RunConfig, **meta) -> None:
    tensors = dict(params.arrays())
    if opt is not None:
        tensors.update(opt.state_arrays())
    meta = {"config": dump_config(cfg), **meta}
    ckpt.save(path, tensors, meta)


def split_checkpoint(tensors: dict[str, np.ndarray]) -> tuple[dict, dict]:
    params = {k: v for k, v in tensors.items() if not k.startswith("optim/")}
    optim = {k: v for k, v in tensors.items() if k.startswith("optim/")}
    return params, optim


def load_into(params: ModelParams, arrays: dict[str, np.ndarray], names: Iterable[str] | None = None) -> None:
    """Copy named arrays into ``params``; mismatches raise a ConfigError naming the tensor."""
    for name in names if names is not None else params:
        if name not in arrays:
            raise ConfigError(f"checkpoint is missing tensor {name}")
        if arrays[name].shape != params[name].shape:
            raise ConfigError(
                f"tensor {name}: checkpoint shape {arrays[name].shape} does not match model {params[name].shape}"
            )
        params[name].data = arrays[name].astype(params[name].dtype).copy()


def resolve_schedule(cfg: RunConfig) -> ScheduleConfig:
    s = cfg.schedule
    if s.total_epochs is None:
        s = replace(s, total_epochs=float(cfg.epochs))
    if s.total_epochs < cfg.epochs:
        raise ConfigError(f"schedule ends at epoch {s.total_epochs} but the run lasts {cfg.epochs} epochs")
    return s


def _make_opt(params: dict[str, Tensor], cfg: RunConfig) -> AdamW:
    return AdamW(params, beta1=cfg.beta1, beta2=cfg.beta2, weight_decay=cfg.weight_decay)


@dataclass
class TrainResult:
    params: ModelParams
    optimizer: AdamW
    log: MetricsLog
    losses: list[float] = field(default_factory=list)
    step: int = 0
    meta: dict = field(default_factory=dict)


def _run_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _append_trace(path: Path, rows: list[tuple]) -> None:
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(("step", "epoch", "loss", "lr"))
        for r in rows:
            w.writerow([r[0], r[1], repr(r[2]), repr(r[3])])


def _train_loop(
    cfg: RunConfig,
    studies: list[Study],
    params: ModelParams,
    opt: AdamW,
    start_step: int,
    step_loss: Callable[[list[Study], int, np.ndarray], Tensor],
    end_of_epoch: Callable[[int, float, float], None],
    kind: str,
    extra_meta: dict,
) -> tuple[list[float], int]:
    """Shared optimisation loop; returns the per-step losses and the final step."""
    if not studies:
        raise DataError("no training studies")
    out = _run_dir(cfg)
    sched = resolve_schedule(cfg)
    batches_per_epoch = math.ceil(len(studies) / cfg.batch_size)
    total = cfg.epochs * batches_per_epoch
    if cfg.max_steps:
        total = min(total, cfg.max_steps)
    losses: list[float] = []
    trace: list[tuple] = []
    step = start_step
    epoch_losses: list[float] = []
    last_path = out / f"{kind}_last.ckpt"

    def jobs():
        s = start_step
        while s < total:
            epoch, offset = divmod(s, batches_per_epoch)
            order = epoch_order(len(studies), cfg, epoch)
            for b in range(offset, len(order)):
                if s >= total:
                    return
                chosen = [studies[i] for i in order[b]]
                yield s, epoch, b, chosen, batch_pixels(chosen, cfg, epoch, training=True)
                s += 1

    t0 = time.perf_counter()
    for s, epoch, b, chosen, pixels in prefetch(jobs(), cfg.prefetch):
        lr = lr_at(epoch + b / batches_per_epoch, sched)
        opt.zero_grad()
        total_loss = 0.0
        micro = np.array_split(np.arange(len(chosen)), min(cfg.accum_steps, len(chosen)))
        for idx in micro:
            loss = step_loss([chosen[i] for i in idx], epoch, pixels[idx]) * (len(idx) / len(chosen))
            if not np.isfinite(loss.data).all():
                raise NumericError(f"non-finite {kind} loss at step {s} (last good checkpoint kept)")
            loss.backward()
            total_loss += loss.item()
        opt.step(lr)
        step = s + 1
        losses.append(total_loss)
        epoch_losses.append(total_loss)
        trace.append((s, epoch, total_loss, lr))
        epoch_done = b == batches_per_epoch - 1 or step == total
        if epoch_done:
            _append_trace(out / f"{kind}_steps.csv", trace)
            trace.clear()
            end_of_epoch(epoch, float(np.mean(epoch_losses)), lr)
            epoch_losses.clear()
            if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                save_checkpoint(out / f"{kind}_epoch{epoch + 1:04d}.ckpt", params, opt, cfg, kind=kind, step=step, **extra_meta)
    if trace:
        _append_trace(out / f"{kind}_steps.csv", trace)
    save_checkpoint(last_path, params, opt, cfg, kind=kind, step=step, **extra_meta)
    extra_meta["wall"] = time.perf_counter() - t0
    return losses, step


# -- pretraining ---------------------------------------------------------------
def pretrain(cfg: RunConfig, studies: list[Study] | None = None) -> TrainResult:
    """Masked-reconstruction pretraining; resumes from ``cfg.resume`` when set."""
    if studies is None:
        studies, _ = load_studies(cfg, "train")
    mc = cfg.model
    params = init_params(mc, cfg.seed)
    opt = _make_opt(dict(params), cfg)
    start = 0
    out = _run_dir(cfg)
    log = MetricsLog(out / "pretrain_log.csv")
    if cfg.resume:
        tensors, meta = ckpt.load(cfg.resume)
        if meta.get("kind") != "pretrain":
            raise ConfigError(f"{cfg.resume} is not a pretraining checkpoint")
        arrays, state = split_checkpoint(tensors)
        load_into(params, arrays)
        opt.load_state_arrays(state)
        start = int(meta["step"])
    t0 = time.perf_counter()

    def step_loss(batch: list[Study], epoch: int, pixels: np.ndarray) -> Tensor:
        plans = sample_plans(mc, [s.study_id for s in batch], cfg.seed, epoch)
        return pretrain_loss(pixels, plans, params, mc)

    def end_of_epoch(epoch: int, loss: float, lr: float) -> None:
        log.append(epoch=epoch, step=opt.step_count, split="train", loss=loss, lr=lr, wall=time.perf_counter() - t0)

    meta: dict = {}
    losses, step = _train_loop(cfg, studies, params, opt, start, step_loss, end_of_epoch, "pretrain", meta)
    return TrainResult(params, opt, log, losses, step, meta)


# -- finetuning ----------------------------------------------------------------
def backbone_names(params: ModelParams) -> list[str]:
    return sorted(n for n, _ in params.group(*BACKBONE_GROUPS))


def head_names(params: ModelParams) -> list[str]:
    return sorted(n for n, _ in params.group(*HEAD_GROUPS))


def finetune_params(mc: ModelConfig, seed: int, pretrained: dict[str, np.ndarray]) -> ModelParams:
    """Backbone from the pretrained arrays, fresh head; the decoder is dropped."""
    full = init_head(init_params(mc, seed), mc, seed)
    params = ModelParams({n: full[n] for n in backbone_names(full) + head_names(full)})
    load_into(params, pretrained, backbone_names(params))
    return params


def _targets(studies: list[Study], mc: ModelConfig, codes: list[str]) -> np.ndarray:
    if mc.task == "multilabel":
        for s in studies:
            if s.labels is None:
                raise DataError(f"study {s.study_id} has no labels")
            if len(s.labels) != mc.num_outputs:
                raise ConfigError(
                    f"study {s.study_id} has {len(s.labels)} labels but the head has {mc.num_outputs} outputs"
                )
        return np.stack([s.labels for s in studies]).astype(mc.np_dtype)
    for s in studies:
        if s.target is None:
            raise DataError(f"study {s.study_id} has no regression target")
    if mc.num_outputs != 1:
        raise ConfigError("regression needs num_outputs = 1")
    return np.array([[s.target] for s in studies], dtype=mc.np_dtype)


def _forward(pixels: np.ndarray, params: ModelParams, mc: ModelConfig, frozen: bool) -> Tensor:
    if frozen:
        with T.no_grad():
            fused = finetune_features(pixels, params, mc)
        fused.tokens = fused.tokens.detach()
        return pool_and_head(fused, params, mc)
    return pool_and_head(finetune_features(pixels, params, mc), params, mc)


def finetune(cfg: RunConfig, studies: list[Study] | None = None, codes: list[str] | None = None) -> TrainResult:
    """Full or frozen-backbone finetuning for the configured task."""
    if studies is None:
        all_studies, codes = load_studies(cfg)
    else:
        all_studies = studies
    codes = list(codes or [])
    train_set = [s for s in all_studies if s.split == "train"]
    val_set = [s for s in all_studies if s.split == "val"]
    mc = cfg.model
    if mc.task == "multilabel" and not codes:
        codes = [f"label{k}" for k in range(mc.num_outputs)]
    y_train = _targets(train_set, mc, codes)
    if mc.task == "regression":
        mean, std = float(y_train.mean()), float(y_train.std()) or 1.0
    else:
        mean, std = 0.0, 1.0
    meta = {"task": mc.task, "codes": codes, "target_mean": mean, "target_std": std}
    start = 0
    if cfg.resume:
        tensors, rmeta = ckpt.load(cfg.resume)
        if rmeta.get("kind") != "finetune":
            raise ConfigError(f"{cfg.resume} is not a finetuning checkpoint")
        arrays, state = split_checkpoint(tensors)
        params = finetune_params(mc, cfg.seed, arrays)
        load_into(params, arrays)
        start = int(rmeta["step"])
    else:
        tensors, pmeta = ckpt.load(cfg.init_checkpoint)
        arrays, _ = split_checkpoint(tensors)
        params = finetune_params(mc, cfg.seed, arrays)
        state = None
    trainable = head_names(params) if cfg.frozen else sorted(params)
    params.set_trainable(trainable)
    opt = _make_opt({n: params[n] for n in trainable}, cfg)
    if state is not None:
        opt.load_state_arrays(state)
    row_of = {s.study_id: i for i, s in enumerate(train_set)}
    out = _run_dir(cfg)
    log = MetricsLog(out / "finetune_log.csv")
    t0 = time.perf_counter()
    best = {"epoch": -1, "score": -math.inf}

    def step_loss(batch: list[Study], epoch: int, pixels: np.ndarray) -> Tensor:
        out_ = _forward(pixels, params, mc, cfg.frozen)
        y = y_train[[row_of[s.study_id] for s in batch]]
        if mc.task == "multilabel":
            return T.bce_with_logits(out_, y)
        return T.mse(out_, (y - mean) / std)

    def end_of_epoch(epoch: int, loss: float, lr: float) -> None:
        now = time.perf_counter() - t0
        log.append(epoch=epoch, step=opt.step_count, split="train", loss=loss, lr=lr, wall=now)
        if val_set:
            rep = evaluate_params(params, cfg, val_set, meta)
            score = rep["macro_auroc"] if mc.task == "multilabel" else -rep["mae"]
            log.append(
                epoch=epoch, step=opt.step_count, split="val", auroc=rep.get("macro_auroc", ""),
                f1=rep.get("macro_f1", ""), mae=rep.get("mae", ""), wall=now,
            )
            if score > best["score"]:
                best.update(epoch=epoch, score=score)
                save_checkpoint(out / "finetune_best.ckpt", params, None, cfg, kind="finetune", step=opt.step_count, **meta)

    losses, step = _train_loop(cfg, train_set, params, opt, start, step_loss, end_of_epoch, "finetune", meta)
    meta["best_epoch"] = best["epoch"]
    return TrainResult(params, opt, log, losses, step, meta)


# -- evaluation ----------------------------------------------------------------
def predict_studies(params: ModelParams, cfg: RunConfig, studies: list[Study], batch: int = 16) -> np.ndarray:
    """Deterministic outputs (logits or standardised regression values), one row per study."""
    rows = []
    with T.no_grad():
        for i in range(0, len(studies), batch):
            chunk = studies[i : i + batch]
            px = batch_pixels(chunk, cfg, 0, training=False)
            rows.append(pool_and_head(finetune_features(px, params, cfg.model), params, cfg.model).data)
    return np.concatenate(rows).astype(np.float64)


def evaluate_params(params: ModelParams, cfg: RunConfig, studies: list[Study], meta: dict) -> dict:
    if not studies:
        raise DataError("evaluation split is empty")
    mc = cfg.model
    out = predict_studies(params, cfg, studies)
    report: dict = {"n_studies": len(studies), "seed": cfg.seed, "config_hash": config_hash(cfg)}
    if mc.task == "multilabel":
        labels = np.stack([s.labels for s in studies])
        rep = multilabel_report(out, labels, meta["codes"], cfg.f1_threshold)
        report.update(
            task="multilabel",
            macro_auroc=rep.macro_auroc.value,
            macro_f1=rep.macro_f1.value,
            n_valid_codes=rep.macro_auroc.n_valid,
            excluded_codes=[meta["codes"][i] for i in rep.macro_auroc.excluded],
            per_code=[{k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in r.items()} for r in rep.rows()],
            top10_by_f1=rep.top_by_f1(10),
        )
    else:
        pred = out[:, 0] * meta["target_std"] + meta["target_mean"]
        target = np.array([s.target for s in studies])
        report.update(task="regression", mae=mae_regression(pred, target))
    return report


def evaluate(cfg: RunConfig, checkpoint_path: str | Path | None = None, split: str | None = None,
             studies: list[Study] | None = None) -> dict:
    """Deterministic pass over one split of a finetuned checkpoint."""
    path = checkpoint_path or cfg.init_checkpoint
    tensors, meta = ckpt.load(path)
    if meta.get("kind") != "finetune":
        raise ConfigError(f"{path} is not a finetuned checkpoint")
    saved = parse_config(meta["config"])
    cfg = replace(cfg, model=saved.model, pixel_mean=saved.pixel_mean, pixel_std=saved.pixel_std, seed=saved.seed)
    arrays, _ = split_checkpoint(tensors)
    params = finetune_params(cfg.model, cfg.seed, arrays)
    load_into(params, arrays)
    split = split or cfg.split
    if studies is None:
        studies, _ = load_studies(cfg, split)
    else:
        studies = [s for s in studies if s.split == split]
    report = evaluate_params(params, cfg, studies, meta)
    report["split"] = split
    report["checkpoint"] = str(path)
    return report


def write_report(report: dict, path: str | Path) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
