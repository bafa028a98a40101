"""Command-line entry point.

Subcommands: train, eval, gradcheck, ablate-alpha, synth-data, param-count.
All experiment state comes from a JSON config plus dotted --override flags;
seed precedence is --seed flag > SPIKETIM_SEED env > config. Exit codes:
0 success, 1 check failure, 2 configuration error, 3 numeric abort.
"""

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .config import build_model_config, load_run_config
from .errors import ConfigurationError, FormatError, NanLossError
from .events import bin_to_frames, read_events, write_events
from .gradcheck import GROUPS, run_suite, suite_passed
from .model import (
    ModelConfig,
    SpikingTransformer,
    count_parameters,
    load_checkpoint,
    read_checkpoint_meta,
    save_checkpoint,
)
from .synth import SyntheticTaskSpec, generate_stream, synth_temporal_order
from .training import AdamW, evaluate, fit

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3


def _resolve_seed(args, cfg_seed=None):
    if getattr(args, "seed", None) is not None:
        return args.seed
    env = os.environ.get("SPIKETIM_SEED")
    if env is not None:
        return int(env)
    return cfg_seed


def _load_dataset(cfg):
    """Materialize (train, val) splits of (frames, labels) per the data section."""
    data = cfg["data"]
    mcfg = cfg["model"]
    if data["path"] is not None:
        root = Path(data["path"])
        files = sorted(root.glob("*.evs"))
        if not files:
            raise ConfigurationError(f"no .evs files under {root}")
        frames = []
        labels = []
        for f in files:
            stream = read_events(f)
            frames.append(
                bin_to_frames(
                    stream,
                    mcfg["num_steps"],
                    mcfg["height"],
                    mcfg["width"],
                    data["accumulate"],
                )
            )
            labels.append(-1 if stream.label is None else stream.label)
        frames = np.stack(frames)
        labels = np.asarray(labels, dtype=np.int64)
    else:
        spec = SyntheticTaskSpec(
            num_samples=data["synthetic"]["num_samples"],
            num_steps=mcfg["num_steps"],
            grid=data["synthetic"]["grid"],
            events_per_cell=data["synthetic"]["events_per_cell"],
            noise_rate=data["synthetic"]["noise_rate"],
            seed=cfg["training"]["seed"],
        )
        if data["synthetic"]["grid"] != mcfg["height"] or data["synthetic"]["grid"] != mcfg["width"]:
            raise ConfigurationError("synthetic grid must match model height/width")
        frames, labels = synth_temporal_order(spec, data["accumulate"])

    n = len(frames)
    n_val = max(1, int(round(n * data["val_fraction"])))
    order = np.random.default_rng(
        np.random.SeedSequence(cfg["training"]["seed"], spawn_key=(11,))
    ).permutation(n)
    val_idx, train_idx = order[:n_val], order[n_val:]
    return (frames[train_idx], labels[train_idx]), (frames[val_idx], labels[val_idx])


def _run_training(cfg, out_dir, resume=None):
    """Shared by cmd_train and cmd_ablate_alpha; returns the TrainReport."""
    out_dir.mkdir(parents=True, exist_ok=True)
    train_data, val_data = _load_dataset(cfg)
    t = cfg["training"]
    seed = t["seed"]
    model_cfg = build_model_config(cfg)
    model = SpikingTransformer(model_cfg, seed=seed)
    optimizer = AdamW(model.named_parameters(), weight_decay=t["weight_decay"])
    start_epoch = 0
    if resume is not None:
        start_epoch, seed = load_checkpoint(resume, model, optimizer)
        start_epoch += 1

    interval = t["save_interval"]

    def on_epoch(epoch, report):
        if interval and (epoch + 1) % interval == 0:
            save_checkpoint(out_dir / f"epoch{epoch:04d}.ckpt", model, optimizer, epoch, seed)
        report.write_metrics_csv(out_dir / "metrics.csv")
        report.write_confusion_json(out_dir / "confusion.json")

    report = fit(
        model,
        optimizer,
        train_data,
        val_data,
        epochs=t["epochs"],
        lr0=t["lr0"],
        seed=seed,
        batch_size=t["batch_size"],
        lr_min=t["lr_min"],
        clip=t["grad_clip"],
        start_epoch=start_epoch,
        on_epoch=on_epoch,
        target_acc=t["target_acc"],
    )
    last_epoch = report.epochs[-1]["epoch"] if report.epochs else start_epoch
    save_checkpoint(out_dir / "final.ckpt", model, optimizer, last_epoch, seed)
    return report


def cmd_train(args):
    cfg = load_run_config(args.config, args.override, _resolve_seed(args))
    out_dir = Path(args.output_dir or cfg["output_dir"])
    report = _run_training(cfg, out_dir, resume=args.resume)
    final = report.epochs[-1]
    print(f"done: {len(report.epochs)} epochs, final val_acc {final['val_acc']:.4f}")
    return EXIT_OK


def cmd_eval(args):
    meta, _, _ = read_checkpoint_meta(args.checkpoint)
    model = SpikingTransformer(ModelConfig.from_dict(meta["config"]))
    load_checkpoint(args.checkpoint, model)
    cfg = load_run_config(args.config, args.override, _resolve_seed(args))
    train_data, val_data = _load_dataset(cfg)
    frames, labels = train_data if args.split == "train" else val_data
    acc, confusion = evaluate(model, frames, labels, model.cfg.num_classes)
    result = {"accuracy": acc, "confusion": confusion.astype(int).tolist()}
    print(json.dumps(result))
    if args.output:
        Path(args.output).write_text(json.dumps(result))
    return EXIT_OK


def cmd_gradcheck(args):
    seed = _resolve_seed(args, 0)
    results = run_suite(seed=seed, corrupt=args.corrupt)
    for group in GROUPS:
        err, name, tol = results[group]
        status = "ok" if err <= tol else "FAIL"
        print(f"{group}: worst rel err {err:.3e} at {name} (tol {tol:g}) {status}")
    if not suite_passed(results):
        worst = max(results, key=lambda g: results[g][0] / results[g][2])
        print(f"gradcheck failed in group {worst} at {results[worst][1]}")
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_ablate_alpha(args):
    alphas = []
    for a in args.alphas:
        if a in alphas:
            print(f"warning: duplicate alpha {a} ignored", file=sys.stderr)
        else:
            alphas.append(a)
    if len(alphas) < 2 and not args.modes:
        raise ConfigurationError("ablate-alpha needs at least 2 distinct alphas")
    cfg = load_run_config(args.config, args.override, _resolve_seed(args))
    out_dir = Path(args.output_dir or cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for alpha in alphas:
        run_cfg = json.loads(json.dumps(cfg))
        run_cfg["training"]["alpha"] = alpha
        report = _run_training(run_cfg, out_dir / f"alpha_{alpha:g}")
        acc = report.epochs[-1]["val_acc"]
        rows.append((alpha, run_cfg["model"]["mode"], acc, count_parameters(build_model_config(run_cfg))))
    for mode in args.modes or []:
        run_cfg = json.loads(json.dumps(cfg))
        run_cfg["model"]["mode"] = mode
        report = _run_training(run_cfg, out_dir / f"mode_{mode}")
        acc = report.epochs[-1]["val_acc"]
        rows.append(
            (run_cfg["training"]["alpha"], mode, acc, count_parameters(build_model_config(run_cfg)))
        )

    with open(out_dir / "alpha_sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "mode", "final_val_acc", "param_count"])
        for alpha, mode, acc, count in rows:
            w.writerow([f"{alpha:g}", mode, f"{acc:.4f}", count])
    print(f"wrote {out_dir / 'alpha_sweep.csv'} ({len(rows)} rows)")
    return EXIT_OK


def cmd_synth_data(args):
    seed = _resolve_seed(args, args.task_seed)
    spec = SyntheticTaskSpec(
        num_samples=args.samples,
        num_steps=args.steps,
        grid=args.grid,
        events_per_cell=args.events_per_cell,
        noise_rate=args.noise_rate,
        seed=seed,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i in range(spec.num_samples):
        write_events(out_dir / f"sample_{i:05d}.evs", generate_stream(spec, i))
    print(f"wrote {spec.num_samples} EVS1 files to {out_dir}")
    return EXIT_OK


def cmd_param_count(args):
    cfg = load_run_config(args.config, args.override, _resolve_seed(args))
    print(count_parameters(build_model_config(cfg)))
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="spiketim", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--override", action="append", default=[], metavar="KEY.PATH=VALUE",
                        help="override a config value (repeatable)")
        sp.add_argument("--seed", type=int, default=None,
                        help="run seed (precedence: flag > SPIKETIM_SEED env > config)")
        sp.add_argument("--threads", type=int, default=1,
                        help="worker threads; the default of 1 preserves bit-determinism")

    sp = sub.add_parser("train", help="train a model per the JSON config")
    sp.add_argument("config", help="path to the JSON run config")
    sp.add_argument("--output-dir", default=None, help="override config output_dir")
    sp.add_argument("--resume", default=None, help="checkpoint to resume from")
    common(sp)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a checkpoint on the configured data")
    sp.add_argument("checkpoint")
    sp.add_argument("config")
    sp.add_argument("--split", choices=["train", "val"], default="val")
    sp.add_argument("--output", default=None, help="also write the JSON result here")
    common(sp)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("gradcheck", help="finite-difference check of all backward paths")
    sp.add_argument("--corrupt", choices=["conv2d"], default=None,
                    help="test hook: deliberately corrupt one backward path")
    common(sp)
    sp.set_defaults(fn=cmd_gradcheck)

    sp = sub.add_parser("ablate-alpha", help="train one model per alpha (and per mode)")
    sp.add_argument("config")
    sp.add_argument("--alphas", type=float, nargs="+", required=True)
    sp.add_argument("--modes", nargs="*", choices=["baseline", "tim", "local_tim"],
                    default=None, help="additionally sweep attention modes")
    sp.add_argument("--output-dir", default=None)
    common(sp)
    sp.set_defaults(fn=cmd_ablate_alpha)

    sp = sub.add_parser("synth-data", help="generate the synthetic temporal-order dataset")
    sp.add_argument("out_dir")
    sp.add_argument("--samples", type=int, default=1200)
    sp.add_argument("--steps", type=int, default=10)
    sp.add_argument("--grid", type=int, default=8)
    sp.add_argument("--events-per-cell", type=int, default=2)
    sp.add_argument("--noise-rate", type=float, default=2.0)
    sp.add_argument("--task-seed", type=int, default=0)
    common(sp)
    sp.set_defaults(fn=cmd_synth_data)

    sp = sub.add_parser("param-count", help="print the exact trainable parameter count")
    sp.add_argument("config")
    common(sp)
    sp.set_defaults(fn=cmd_param_count)

    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "threads", 1) < 1:
            raise ConfigurationError(f"--threads must be >= 1, got {args.threads}")
        return args.fn(args)
    except (ConfigurationError, FormatError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NanLossError as e:
        print(f"numeric abort: {e}; lr={e.lr}", file=sys.stderr)
        worst = sorted(e.grad_norms.items(), key=lambda kv: -kv[1])[:5]
        for name, norm in worst:
            print(f"  grad norm {name}: {norm:.3e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
