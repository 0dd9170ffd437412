"""Command-line entry point.

Subcommands: synth-data, train, eval, ablate, sweep-frames,
sweep-prompts, grad-check, dump-embeddings.
Exit codes: 0 success, 1 verification failure, 2 config error, 3 IO error.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import data_files
from .config import (ABLATION_PATTERNS, SWEEP_FRAME_COUNTS,
                     SWEEP_TEMPLATES, RunConfig, config_to_dict, load_config,
                     make_datasets)
from .errors import ConfigError
from .fusion import AblationSwitches, Model
from .gradcheck import run_gradcheck
from .trainer import evaluate, train

EXIT_OK = 0
EXIT_VERIFICATION = 1
EXIT_CONFIG = 2
EXIT_IO = 3


def _common_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="path to a JSON run config")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", help="override the output directory")
    p.add_argument("--checkpoint", help="parameter checkpoint path")
    p.add_argument("--template", help="override the prompt template")
    p.add_argument("--epochs", type=int, help="override optim.epochs")


def _load(args) -> RunConfig:
    overrides = {"seed": args.seed, "out_dir": args.out,
                 "template": args.template, "optim.epochs": args.epochs}
    return load_config(args.config, overrides)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _checkpoint_path(args, cfg: RunConfig) -> Path:
    return Path(args.checkpoint) if args.checkpoint else _out_dir(cfg) / "model.ckpt"


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _train_and_eval(cfg: RunConfig) -> tuple[Model, list[dict], dict]:
    train_set, eval_set = make_datasets(cfg)
    model = Model(cfg.model_config(), seed=cfg.seed)
    log = train(train_set, model, cfg.optim, cfg.switches,
                cache_frozen_encoders=cfg.cache_frozen_encoders)
    metrics = evaluate(eval_set or train_set, model, cfg.switches)
    return model, log, metrics


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_synth_data(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg)
    train_set, eval_set = make_datasets(cfg)
    data_files.write_dataset(train_set, cfg.labels, out,
                             event_format=args.event_format, split="train")
    if eval_set:
        data_files.write_dataset(eval_set, cfg.labels, out,
                                 event_format=args.event_format, split="eval")
    print(f"wrote {len(train_set)} train / {len(eval_set)} eval samples to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg)
    model, log, metrics = _train_and_eval(cfg)
    with (out / "metrics.jsonl").open("w") as fh:
        for record in log:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    model.store.save(_checkpoint_path(args, cfg))
    _write_json(out / "config.json", config_to_dict(cfg))
    _write_json(out / "final_metrics.json",
                {k: metrics[k] for k in ("top1", "top5", "per_class_accuracy")})
    print(f"train_top1={log[-1]['train_top1']:.4f} eval_top1={metrics['top1']:.4f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg)
    ckpt = _checkpoint_path(args, cfg)
    if not ckpt.exists():
        print(f"checkpoint not found: {ckpt}", file=sys.stderr)
        return EXIT_IO
    train_set, eval_set = make_datasets(cfg)
    model = Model(cfg.model_config(), seed=cfg.seed)
    model.store.load(ckpt)
    metrics = evaluate(eval_set or train_set, model, cfg.switches)
    _write_json(out / "eval_metrics.json",
                {k: metrics[k] for k in
                 ("top1", "top5", "per_class_accuracy", "confusion")})
    _write_json(out / "top5_scores.json", metrics["per_sample"])
    print(f"top1={metrics['top1']:.4f} top5={metrics['top5']:.4f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg)
    rows = []
    for pattern in ABLATION_PATTERNS:
        accs = []
        for r in range(args.seeds):
            row_cfg = copy.deepcopy(cfg)
            row_cfg.switches = AblationSwitches(**pattern)
            row_cfg.seed = cfg.seed + r
            row_cfg.optim.seed = cfg.optim.seed + r
            _, _, metrics = _train_and_eval(row_cfg)
            accs.append(metrics["top1"])
        rows.append({
            "switches": pattern,
            "seeds": args.seeds,
            "top1": accs,
            "mean": float(np.mean(accs)),
            "sd": float(np.std(accs)),
        })
        tag = " ".join(f"{k}={'on' if v else 'off'}" for k, v in pattern.items())
        print(f"{tag}: top1 {rows[-1]['mean']:.4f} +/- {rows[-1]['sd']:.4f}")
    _write_json(out / "ablation.json", rows)
    return EXIT_OK


def cmd_sweep_frames(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg)
    rows = []
    for n in args.frame_counts:
        row_cfg = copy.deepcopy(cfg)
        row_cfg.data.frames = n
        _, log, metrics = _train_and_eval(row_cfg)
        tokens_per_frame = row_cfg.rgb_encoder.n_tokens
        rows.append({
            "frames": n,
            "tokens_per_frame": tokens_per_frame,
            "token_axis_len": n * tokens_per_frame,
            "train_top1": log[-1]["train_top1"],
            "eval_top1": metrics["top1"],
        })
        print(f"frames={n}: eval_top1={metrics['top1']:.4f} "
              f"token_axis_len={rows[-1]['token_axis_len']}")
    _write_json(out / "sweep_frames.json", rows)
    return EXIT_OK


def cmd_sweep_prompts(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg)
    rows = []
    for tpl in args.templates:
        row_cfg = copy.deepcopy(cfg)
        row_cfg.template = tpl
        _, log, metrics = _train_and_eval(row_cfg)
        rows.append({
            "template": tpl,
            "train_top1": log[-1]["train_top1"],
            "eval_top1": metrics["top1"],
        })
        print(f"template={tpl!r}: eval_top1={metrics['top1']:.4f}")
    _write_json(out / "sweep_prompts.json", rows)
    return EXIT_OK


def cmd_grad_check(args) -> int:
    cfg = _load(args) if args.config else None
    seed = args.seed if args.seed is not None else (cfg.seed if cfg else 0)
    report = run_gradcheck(seed=seed, inject_fault=args.inject_fault)
    for name, err in sorted(report["primitives"].items()):
        status = "PASS" if err < report["primitive_tolerance"] else "FAIL"
        print(f"{status} primitive {name}: max rel error {err:.3e}")
    e2e = report["end_to_end_error"]
    status = "PASS" if e2e < report["end_to_end_tolerance"] else "FAIL"
    print(f"{status} end_to_end ({len(report['checked_parameters'])} parameters): "
          f"max rel error {e2e:.3e}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write_json(out / "gradcheck.json", report)
    if not report["passed"]:
        print("offending groups: " + ", ".join(report["failures"]), file=sys.stderr)
        return EXIT_VERIFICATION
    return EXIT_OK


def cmd_dump_embeddings(args) -> int:
    cfg = _load(args)
    out = _out_dir(cfg)
    ckpt = _checkpoint_path(args, cfg)
    if not ckpt.exists():
        print(f"checkpoint not found: {ckpt}", file=sys.stderr)
        return EXIT_IO
    train_set, eval_set = make_datasets(cfg)
    dataset = train_set if args.split == "train" else (eval_set or train_set)
    model = Model(cfg.model_config(), seed=cfg.seed)
    model.store.load(ckpt)
    ft = model.text_tokens(cfg.switches)
    path = out / f"embeddings_{args.split}.csv"
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        dim = cfg.fusion.dim
        writer.writerow(["sample_id", "label"] + [f"f{i}" for i in range(dim)])
        for sample in dataset:
            fv, fe = model.encode_sample(sample)
            _, pooled = model.head(fv, fe, ft, cfg.switches)
            writer.writerow([sample.sample_id, sample.label]
                            + [repr(v) for v in pooled.data.reshape(-1)])
    print(f"wrote {len(dataset)} rows to {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="evfusion",
        description="Frame-event-text fusion classifier harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="generate the synthetic dataset on disk")
    _common_flags(p)
    p.add_argument("--event-format", choices=["csv", "binary"], default="csv")
    p.set_defaults(fn=cmd_synth_data)

    p = sub.add_parser("train", help="train a model and write metrics + checkpoint")
    _common_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint, write top-5 scores")
    _common_flags(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="run the six component-switch patterns")
    _common_flags(p)
    p.add_argument("--seeds", type=int, default=1,
                   help="repetitions per pattern")
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("sweep-frames", help="train/eval across frame counts")
    _common_flags(p)
    p.add_argument("--frame-counts", type=int, nargs="+",
                   default=SWEEP_FRAME_COUNTS)
    p.set_defaults(fn=cmd_sweep_frames)

    p = sub.add_parser("sweep-prompts", help="train/eval across prompt templates")
    _common_flags(p)
    p.add_argument("--templates", nargs="+", default=SWEEP_TEMPLATES)
    p.set_defaults(fn=cmd_sweep_prompts)

    p = sub.add_parser("grad-check", help="finite-difference verification gate")
    _common_flags(p)
    p.add_argument("--inject-fault", action="store_true",
                   help="corrupt one backward rule (negative control)")
    p.set_defaults(fn=cmd_grad_check)

    p = sub.add_parser("dump-embeddings", help="export pooled features as CSV")
    _common_flags(p)
    p.add_argument("--split", choices=["train", "eval"], default="train")
    p.set_defaults(fn=cmd_dump_embeddings)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
