"""Command-line entry point: ``lamae pretrain|finetune|eval|generate|plot|aggregate``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric abort.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import RunConfig, apply_overrides, dump_config, load_config
from .errors import ConfigError, DataError, NumericError


def _config(args, mode: str | None = None) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    pairs = []
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        pairs.append((k.strip(), v.strip()))
    if args.seed is not None:
        pairs.append(("seed", str(args.seed)))
    if args.out is not None:
        pairs.append(("out", args.out))
    if mode is not None:
        pairs.append(("mode", mode))
    return apply_overrides(cfg, pairs)


def _save_config(cfg: RunConfig) -> None:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(dump_config(cfg), encoding="utf-8")


def cmd_pretrain(args) -> int:
    from .train import pretrain

    cfg = _config(args, "pretrain")
    cfg.check_paths()
    _save_config(cfg)
    res = pretrain(cfg)
    print(f"pretrained {res.step} steps; loss {res.losses[0]:.6g} -> {res.losses[-1]:.6g}" if res.losses else "nothing to do")
    return 0


def cmd_finetune(args) -> int:
    from .train import finetune

    cfg = _config(args)
    if args.frozen:
        cfg = replace(cfg, mode="finetune_frozen")
    elif not cfg.is_finetune:
        cfg = replace(cfg, mode="finetune_full")
    cfg.check_paths()
    _save_config(cfg)
    res = finetune(cfg)
    print(f"finetuned ({cfg.mode}) {res.step} steps; final loss {res.losses[-1]:.6g}" if res.losses else "nothing to do")
    return 0


def cmd_eval(args) -> int:
    from .train import evaluate, write_report

    cfg = _config(args, "eval")
    if args.checkpoint:
        cfg = replace(cfg, init_checkpoint=args.checkpoint)
    cfg.check_paths()
    split = args.split or cfg.split
    report = evaluate(cfg, cfg.init_checkpoint, split)
    path = Path(cfg.out) / f"report_{split}.json"
    write_report(report, path)
    keys = [k for k in ("macro_auroc", "macro_f1", "mae") if k in report]
    print(" ".join(f"{k}={report[k]:.4f}" for k in keys), f"-> {path}")
    return 0


def cmd_generate(args) -> int:
    from .data.manifest import write_dataset
    from .data.synthetic import generate_dataset, predicates_for

    cfg = _config(args, "generate")
    studies = generate_dataset(cfg.n_studies, cfg.seed, cfg.synthetic, cfg.val_fraction)
    preds = predicates_for(cfg.synthetic)
    path = write_dataset(
        studies, cfg.out, [p.name for p in preds], [p.describe() for p in preds], frame_format=cfg.frame_format
    )
    print(f"wrote {len(studies)} studies -> {path}")
    return 0


def cmd_plot(args) -> int:
    from . import plots
    from .report import load_report, top_codes_by_f1
    from .train import MetricsLog, resolve_schedule

    cfg = _config(args)
    out = Path(cfg.out)
    written = []
    for lp in args.log or []:
        written.extend(plots.loss_curve(MetricsLog.read(lp).records, out, Path(lp).stem))
    written.extend(plots.lr_curve(resolve_schedule(cfg), out))
    reports = [load_report(p) for p in args.report or []]
    if reports and "per_code" in reports[0]:
        top = top_codes_by_f1(reports, args.top)
        written.extend(plots.report_bars(reports[0], out, top))
    for p in written:
        print(p)
    return 0


def cmd_aggregate(args) -> int:
    from .report import load_report, table

    groups: dict[str, list[dict]] = {}
    for spec in args.group:
        if "=" not in spec:
            raise ConfigError(f"--group expects name=report1,report2,..., got {spec!r}")
        name, paths = spec.split("=", 1)
        groups[name] = [load_report(p) for p in paths.split(",") if p]
    text = table(groups, args.digits)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lamae", description="Latent-attention masked autoencoders for multi-view video.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        sp.add_argument("-v", "--verbose", action="store_true")

    sp = sub.add_parser("pretrain", help="masked-reconstruction pretraining")
    common(sp)
    sp.set_defaults(func=cmd_pretrain)

    sp = sub.add_parser("finetune", help="full or frozen-backbone finetuning")
    common(sp)
    sp.add_argument("--frozen", action="store_true", help="train the head only")
    sp.set_defaults(func=cmd_finetune)

    sp = sub.add_parser("eval", help="evaluate a finetuned checkpoint")
    common(sp)
    sp.add_argument("--checkpoint")
    sp.add_argument("--split")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("generate", help="write a synthetic dataset and manifest")
    common(sp)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("plot", help="SVG figures with CSV twins")
    common(sp)
    sp.add_argument("--log", action="append", help="metrics log CSV")
    sp.add_argument("--report", action="append", help="evaluation report JSON (one per seed)")
    sp.add_argument("--top", type=int, default=10)
    sp.set_defaults(func=cmd_plot)

    sp = sub.add_parser("aggregate", help="mean ± std table over seed reports")
    sp.add_argument("--group", action="append", required=True, metavar="NAME=R1,R2,...")
    sp.add_argument("--digits", type=int, default=2)
    sp.add_argument("--out")
    sp.add_argument("-v", "--verbose", action="store_true")
    sp.set_defaults(func=cmd_aggregate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
