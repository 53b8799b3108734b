"""Command-line entry point for batch experiments.

Commands: train | eval | sketchbench | gradcheck | ablate. Configuration is a
flat JSON file (--config) with individual flags winning over file values.
Every output table is tab-separated with a header row, preceded by '#' comment
lines carrying the config hash and seed, and written atomically.

Exit codes: 0 success, 1 numeric/check failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import check as C
from . import data as D
from . import model as M
from . import train as TR
from .attention import effective_weights
from .errors import ConfigError, FormatError, InputError, ShapeError
from ._io import atomic_write_text
from .sketch import compact_bilinear, make_plan
from .tensor import Tensor


def _config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _merge_config(args, defaults: dict) -> dict:
    """defaults < config file < explicit flags."""
    cfg = dict(defaults)
    if args.config:
        with open(args.config) as f:
            loaded = json.load(f)
        unknown = set(loaded) - set(defaults)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for key in defaults:
        v = getattr(args, key.replace("-", "_"), None)
        if v is not None:
            cfg[key] = v
    return cfg


def _write_table(path, cfg_hash: str, seed, columns, rows) -> None:
    lines = [f"# config_hash={cfg_hash}", f"# seed={seed}", "\t".join(columns)]
    for row in rows:
        lines.append("\t".join(
            f"{v:.10g}" if isinstance(v, float) else str(v) for v in row
        ))
    atomic_write_text(path, "\n".join(lines) + "\n")


_TASK_KEYS = ("task", "frames", "height", "width", "train_per_class",
              "eval_per_class", "noise")
_MODEL_KEYS = ("conv1_channels", "out_channels", "sketch_dim", "reduce1",
               "reduce2", "variant")
_TRAIN_KEYS = ("lr0", "momentum", "weight_decay", "decay_factor",
               "decay_epochs", "epochs", "batch_size")

_EXPERIMENT_DEFAULTS = {
    "task": "direction4",
    "frames": 8,
    "height": 24,
    "width": 24,
    "train_per_class": 40,
    "eval_per_class": 25,
    "noise": 0.02,
    "conv1_channels": 8,
    "out_channels": 64,
    "sketch_dim": 256,
    "reduce1": 0,
    "reduce2": 0,
    "variant": "full",
    "lr0": 0.05,
    "momentum": 0.9,
    "weight_decay": 0.0001,
    "decay_factor": 0.1,
    "decay_epochs": [3],
    "epochs": 5,
    "batch_size": 16,
    "seed": 0,
}


def _build_experiment(cfg: dict):
    """Validate a resolved config and materialize datasets, dims, and TrainConfig."""
    train_task = D.SyntheticTask(
        kind=cfg["task"], frames=cfg["frames"], height=cfg["height"],
        width=cfg["width"], per_class=cfg["train_per_class"],
        noise=cfg["noise"], seed=cfg["seed"],
    )
    eval_task = D.SyntheticTask(
        kind=cfg["task"], frames=cfg["frames"], height=cfg["height"],
        width=cfg["width"], per_class=cfg["eval_per_class"],
        noise=cfg["noise"], seed=cfg["seed"] + 1,
    )
    dims = M.ModelDims(
        frames=cfg["frames"], height=cfg["height"], width=cfg["width"],
        conv1_channels=cfg["conv1_channels"], out_channels=cfg["out_channels"],
        sketch_dim=cfg["sketch_dim"], n_classes=train_task.n_classes,
        reduce1=cfg["reduce1"], reduce2=cfg["reduce2"],
    )
    tcfg = TR.TrainConfig(
        lr0=cfg["lr0"], momentum=cfg["momentum"], weight_decay=cfg["weight_decay"],
        decay_factor=cfg["decay_factor"], decay_epochs=tuple(cfg["decay_epochs"]),
        epochs=cfg["epochs"], batch_size=cfg["batch_size"], seed=cfg["seed"],
    )
    return train_task, eval_task, dims, tcfg


def _train_one(cfg, variant, train_set, eval_set, dims, tcfg):
    params = M.init_params(dims, cfg["seed"], variant)
    report = TR.fit(params, train_set, tcfg, eval_set=eval_set)
    return params, report


def cmd_train(args) -> int:
    cfg = _merge_config(args, _EXPERIMENT_DEFAULTS)
    h = _config_hash(cfg)
    train_task, eval_task, dims, tcfg = _build_experiment(cfg)
    train_set = D.generate(train_task)
    eval_set = D.generate(eval_task)
    params, report = _train_one(cfg, cfg["variant"], train_set, eval_set, dims, tcfg)
    os.makedirs(args.out, exist_ok=True)
    M.save_checkpoint(os.path.join(args.out, "checkpoint.ckpt"), params)
    header = f"# config_hash={h}\n# seed={cfg['seed']}\n"
    atomic_write_text(os.path.join(args.out, "train_report.tsv"),
                      header + report.to_tsv())
    final_train = report.epochs[-1].train_acc if report.epochs else float("nan")
    final_eval = (report.epochs[-1].eval_acc if report.epochs
                  else TR.evaluate(params, eval_set))
    _write_table(os.path.join(args.out, "metrics.tsv"), h, cfg["seed"],
                 ("variant", "train_acc", "eval_acc"),
                 [(cfg["variant"], float(final_train), float(final_eval))])
    print(f"trained {cfg['variant']}: eval_acc={final_eval:.4f} -> {args.out}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _merge_config(args, _EXPERIMENT_DEFAULTS)
    h = _config_hash(cfg)
    train_task, eval_task, dims, tcfg = _build_experiment(cfg)
    train_set = D.generate(train_task)
    eval_set = D.generate(eval_task)
    rows = []
    for variant in M.VARIANTS:
        params, report = _train_one(cfg, variant, train_set, eval_set, dims, tcfg)
        final_eval = (report.epochs[-1].eval_acc if report.epochs
                      else TR.evaluate(params, eval_set))
        final_train = report.epochs[-1].train_acc if report.epochs else float("nan")
        rows.append((variant, float(final_train), float(final_eval)))
        print(f"{variant}: train_acc={final_train:.4f} eval_acc={final_eval:.4f}")
    os.makedirs(args.out, exist_ok=True)
    _write_table(os.path.join(args.out, "ablation.tsv"), h, cfg["seed"],
                 ("variant", "train_acc", "eval_acc"), rows)
    return 0


_EVAL_DEFAULTS = {k: v for k, v in _EXPERIMENT_DEFAULTS.items()
                  if k in _TASK_KEYS or k == "seed"}


def cmd_eval(args) -> int:
    params = M.load_checkpoint(args.checkpoint)
    d = params.dims
    if args.manifest:
        dataset = D.load_dataset(args.manifest)
        cfg = {"manifest": args.manifest, "checkpoint": args.checkpoint}
        seed = params.seed
    else:
        # Accept a full training config so the same file drives both
        # commands, but keep only the keys evaluation actually uses.
        cfg = {k: v for k, v in _merge_config(args, _EXPERIMENT_DEFAULTS).items()
               if k in _EVAL_DEFAULTS}
        seed = cfg["seed"]
        task = D.SyntheticTask(kind=cfg["task"], frames=cfg["frames"],
                               height=cfg["height"], width=cfg["width"],
                               per_class=cfg["eval_per_class"], noise=cfg["noise"],
                               seed=seed)
        if task.n_classes != d.n_classes:
            raise ConfigError(
                f"checkpoint has {d.n_classes} classes but task {task.kind!r} "
                f"has {task.n_classes}"
            )
        dataset = D.generate(task)
    h = _config_hash(cfg if isinstance(cfg, dict) else {})
    for video, _ in dataset:
        if video.data.shape != (d.frames, d.in_channels, d.height, d.width):
            raise ConfigError(
                f"dataset sample shape {video.data.shape} conflicts with "
                f"checkpoint dims ({d.frames}, {d.in_channels}, {d.height}, {d.width})"
            )
    n_classes = d.n_classes
    per_class_n = np.zeros(n_classes, dtype=int)
    per_class_correct = np.zeros(n_classes, dtype=int)
    fusion_rows = []
    wa, wb = effective_weights(params.final_fusion)
    delta, epsilon = float(wa.data), float(wb.data)
    for i, (video, label) in enumerate(dataset):
        pred = int(np.argmax(M.forward(video, params).data))
        per_class_n[label] += 1
        per_class_correct[label] += int(pred == label)
        fusion_rows.append((i, label, pred, delta, epsilon))
    os.makedirs(args.out, exist_ok=True)
    acc_rows = [
        (c, int(per_class_n[c]), int(per_class_correct[c]),
         float(per_class_correct[c] / per_class_n[c]) if per_class_n[c] else float("nan"))
        for c in range(n_classes)
    ]
    total_acc = per_class_correct.sum() / max(1, per_class_n.sum())
    _write_table(os.path.join(args.out, "per_class_accuracy.tsv"), h, seed,
                 ("class", "n", "correct", "accuracy"), acc_rows)
    # delta/epsilon are the post-softmax fusion weights of the temporal and
    # spatial video vectors, repeated per evaluated video.
    _write_table(os.path.join(args.out, "fusion_weights.tsv"), h, seed,
                 ("video", "label", "pred", "delta", "epsilon"), fusion_rows)
    print(f"eval accuracy={total_acc:.4f} over {per_class_n.sum()} samples -> {args.out}")
    return 0


_SKETCHBENCH_DEFAULTS = {
    "input_dim": 64,
    "output_dims": [256, 1024, 4096],
    "trials": 100,
    "seed": 0,
}


def cmd_sketchbench(args) -> int:
    cfg = _merge_config(args, _SKETCHBENCH_DEFAULTS)
    h = _config_hash(cfg)
    c = cfg["input_dim"]
    rows = []
    for d in cfg["output_dims"]:
        errs = sketch_errors(c, d, cfg["trials"], cfg["seed"])
        rows.append((d, float(np.median(errs)),
                     float(np.quantile(errs, 0.25)), float(np.quantile(errs, 0.75))))
        print(f"d={d}: median_rel_err={rows[-1][1]:.4f}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_table(os.path.join(args.out, "sketchbench.tsv"), h, cfg["seed"],
                     ("d", "median_rel_err", "q25_rel_err", "q75_rel_err"), rows)
    return 0


def sketch_errors(c: int, d: int, trials: int, seed: int) -> np.ndarray:
    """Relative error of sketched vs exact pairwise bilinear inner products.

    Draws are nonnegative, matching post-relu activations; zero-mean draws
    put the exact inner product near zero and make relative error
    meaningless regardless of sketch width.
    """
    rng = np.random.default_rng(seed)
    plan = make_plan(c, d, seed)
    errs = np.empty(trials)
    for k in range(trials):
        x, y, u, v = (Tensor(rng.uniform(0.0, 1.0, c)) for _ in range(4))
        ci = compact_bilinear(x, y, plan)
        cj = compact_bilinear(u, v, plan)
        approx = float(np.dot(ci.data, cj.data))
        exact = float(np.dot(x.data, u.data) * np.dot(y.data, v.data))
        errs[k] = abs(approx - exact) / max(abs(exact), 1e-12)
    return errs


def cmd_gradcheck(args) -> int:
    results = C.run_audit(seed=args.seed if args.seed is not None else 0)
    failed = False
    for r in results:
        status = "ok" if r.ok else "FAIL"
        print(f"{status:4s} {r.name:22s} rel_err={r.err:.3e} tol={r.tol:.0e}")
        failed = failed or not r.ok
    if failed:
        bad = ", ".join(r.name for r in results if not r.ok)
        print(f"gradient check failed: {bad}", file=sys.stderr)
        return 1
    return 0


def _add_common(p):
    p.add_argument("--config", help="flat JSON config file")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", default="out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="actf",
                                     description="attentive correlated temporal "
                                                 "feature experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one variant on a synthetic task")
    _add_common(p)
    p.add_argument("--task", choices=sorted(D.TASK_KINDS))
    p.add_argument("--variant", choices=M.VARIANTS)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr0", type=float)
    p.add_argument("--noise", type=float)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("ablate", help="train all variants on the same data/seed")
    _add_common(p)
    p.add_argument("--task", choices=sorted(D.TASK_KINDS))
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr0", type=float)
    p.add_argument("--noise", type=float)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", help="dataset manifest (path<TAB>label records)")
    p.add_argument("--task", choices=sorted(D.TASK_KINDS))
    p.add_argument("--noise", type=float)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sketchbench", help="sketch approximation-error study")
    _add_common(p)
    p.add_argument("--input-dim", type=int, dest="input_dim")
    p.add_argument("--output-dims", dest="output_dims",
                   type=lambda s: [int(x) for x in s.split(",")])
    p.add_argument("--trials", type=int)
    p.set_defaults(fn=cmd_sketchbench)

    p = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    _add_common(p)
    p.set_defaults(fn=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FormatError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (ShapeError, InputError, RuntimeError, FloatingPointError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
