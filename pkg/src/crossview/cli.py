"""Command-line entry point: ``crossview {synth-gen,train,eval,gradcheck}``.

Every command is a pure function of its resolved config, seed and input files.
The resolved config is echoed next to every artifact, and the environment
variable ``CROSSVIEW_RUN_ROOT`` (default ``runs``) sets where outputs land when
``--out`` is not given.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import gradsuite
from .checkpoint import load_checkpoint
from .config import RunConfig, load_config
from .data import DatasetContainer, read_container, synth_generate, write_container
from .errors import ConfigError, CrossViewError, MetricUndefinedError
from .models import ModelSpec, build
from .train import evaluate, format_rows, model_from_checkpoint, train

RUN_ROOT_ENV = "CROSSVIEW_RUN_ROOT"
SPLIT_FOLDS = {"train": 0, "val": 1, "test": 2}

log = logging.getLogger("crossview")


def run_root() -> Path:
    return Path(os.environ.get(RUN_ROOT_ENV, "runs"))


# ---------------------------------------------------------------------------
# data helpers
# ---------------------------------------------------------------------------


def synth_split(cfg: RunConfig, split: str) -> DatasetContainer:
    """Generate one split of the configured synthetic task.

    Splits draw disjoint sample ids from a single generator seed: train takes
    ``0..n-1``, val the next ``val_n`` ids and test the ``test_n`` after that.
    """
    spec = cfg.synth_spec()
    sizes = {"train": spec.n, "val": cfg.synth.val_n, "test": cfg.synth.test_n}
    offset = spec.id_offset + sum(sizes[s] for s in list(SPLIT_FOLDS)[: list(SPLIT_FOLDS).index(split)])
    spec.n, spec.id_offset, spec.fold = sizes[split], offset, SPLIT_FOLDS[split]
    return synth_generate(spec, cfg.synth.seed)[0]


def load_splits(cfg: RunConfig) -> dict[str, DatasetContainer | None]:
    if cfg.data.train is not None:
        return {s: read_container(getattr(cfg.data, s)) if getattr(cfg.data, s) else None for s in SPLIT_FOLDS}
    if cfg.data.val is not None or cfg.data.test is not None:
        raise ConfigError("data.val/data.test given without data.train")
    splits = {s: synth_split(cfg, s) for s in SPLIT_FOLDS}
    return {s: (ds if len(ds) else None) for s, ds in splits.items()}


def check_compatible(spec: ModelSpec, ds: DatasetContainer, what: str) -> None:
    c, h, w = ds.view_shape
    if (c, h) != (spec.in_channels, spec.input_size) or h != w:
        raise ConfigError(f"{what}: views are {c}x{h}x{w}, model expects {spec.in_channels}x{spec.input_size}x{spec.input_size}")
    expected = spec.task_count if spec.head == "multitask" else 1
    if ds.states.shape[1] != expected:
        raise ConfigError(f"{what}: {ds.states.shape[1]} task(s), model has {expected}")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_synth_gen(cfg: RunConfig, out: Path | None) -> Path:
    path = Path(out) if out is not None else run_root() / f"{cfg.synth.name}.xv"
    path.parent.mkdir(parents=True, exist_ok=True)
    container, _ = synth_generate(cfg.synth_spec(), cfg.synth.seed)
    write_container(path, container)
    path.with_name(path.name + ".config.yaml").write_text(cfg.dump())
    print(f"wrote {len(container)} samples to {path}")
    return path


def cmd_train(cfg: RunConfig, out: Path | None) -> Path:
    run_dir = Path(out) if out is not None else run_root() / f"{cfg.model.variant}-s{cfg.seed}"
    splits = load_splits(cfg)
    spec = cfg.model_spec()
    for name, ds in splits.items():
        if ds is not None:
            check_compatible(spec, ds, f"{name} split")
    if splits["train"] is None:
        raise ConfigError("training split is empty")
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.yaml").write_text(cfg.dump())
    result = train(build(spec, cfg.seed), splits["train"], cfg, splits["val"], splits["test"], run_dir, cfg.train.resume)
    parts = []
    for task, sel in result.selected.items():
        aucs = " ".join(f"{k}={sel[k]:.4f}" for k in ("val_auc", "test_auc") if sel.get(k) is not None)
        parts.append(f"{task} epoch={sel['epoch']} {aucs}".rstrip())
    print(f"selected ({cfg.train.selection}): " + "; ".join(parts) + f" [{run_dir}]")
    return run_dir


def cmd_eval(checkpoint: Path, data: Path | None, split: str, cfg: RunConfig | None, out: Path | None) -> dict[str, float]:
    ckpt = load_checkpoint(checkpoint)
    if cfg is not None and cfg.model_spec().to_dict() != ckpt.model_spec:
        raise ConfigError(f"--config model spec differs from the spec stored in {checkpoint}")
    model = model_from_checkpoint(ckpt)
    if data is not None:
        ds, label = read_container(data), str(data)
    else:
        ds, label = synth_split(RunConfig.from_dict(ckpt.config), split), f"synthetic {split} split"
    check_compatible(model.spec, ds, label)
    batch = ckpt.config.get("train", {}).get("eval_batch_size", 100)
    aucs = evaluate(model, ds, batch)
    rows = [(ckpt.epoch, "eval", task, "auc", v) for task, v in aucs.items()]
    text = format_rows(rows)
    if out is not None:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    sys.stdout.write(text)
    return aucs


def aggregate(run_dirs: list[Path]) -> list[tuple]:
    """Mean and sample std (ddof=1) of selected-epoch AUCs across run directories."""
    values: dict[tuple[str, str], list[float]] = {}
    for d in run_dirs:
        path = Path(d) / "final.ckpt"
        if not path.exists():
            raise ConfigError(f"{d}: no final.ckpt to aggregate")
        for task, sel in load_checkpoint(path).extra.get("selection", {}).items():
            for split in ("val", "test"):
                v = sel.get(f"{split}_auc")
                if v is not None:
                    values.setdefault((split, task), []).append(float(v))
    rows = []
    for (split, task), vs in sorted(values.items()):
        std = float(np.std(vs, ddof=1)) if len(vs) > 1 else float("nan")
        rows.append((split, task, "auc", float(np.mean(vs)), std, len(vs)))
    return rows


def cmd_aggregate(run_dirs: list[Path], out: Path | None) -> list[tuple]:
    rows = aggregate(run_dirs)
    fh = open(out, "w", newline="") if out is not None else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("split", "task", "metric", "mean", "std", "n"))
        for split, task, metric, mean, std, n in rows:
            w.writerow([split, task, metric, repr(mean), repr(std), n])
    finally:
        if out is not None:
            fh.close()
    return rows


def cmd_gradcheck(scope: str, seeds: int, eps: float) -> bool:
    results = gradsuite.run(scope, seeds=seeds, eps=eps)
    print(gradsuite.format_table(results))
    ok = all(r.passed for r in results)
    print(f"{'PASS' if ok else 'FAIL'}: {sum(r.passed for r in results)}/{len(results)} operations within {gradsuite.THRESHOLD:g}")
    return ok


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML run config")
    p.add_argument("--seed", type=int, help="run seed (synth-gen: generator seed)")
    p.add_argument("--out", type=Path, help="output path or run directory")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE", help="dotted config override, repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crossview", description="Cross-view transformers for unregistered dual-view images.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", help="write a synthetic dual-view container")
    _common(p)

    p = sub.add_parser("train", help="train a model and write metrics and checkpoints")
    _common(p)

    p = sub.add_parser("eval", help="evaluate a checkpoint, or aggregate run directories")
    _common(p)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--data", type=Path, help="container to evaluate (default: regenerate a synthetic split)")
    p.add_argument("--split", choices=list(SPLIT_FOLDS), default="val")
    p.add_argument("--aggregate", nargs="+", type=Path, metavar="RUN_DIR")

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--scope", default="all", help=f"operation name or 'all' ({', '.join(gradsuite.CASES)})")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--eps", type=float, default=1e-5)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "gradcheck":
        if args.scope != "all" and args.scope not in gradsuite.CASES:
            parser.error(f"unknown gradcheck scope {args.scope!r}; choose 'all' or one of: {', '.join(gradsuite.CASES)}")
        return 0 if cmd_gradcheck(args.scope, args.seeds, args.eps) else 1
    try:
        if args.command == "synth-gen":
            overrides = args.override + ([f"synth.seed={args.seed}"] if args.seed is not None else [])
            cmd_synth_gen(load_config(args.config, overrides), args.out)
        elif args.command == "train":
            cmd_train(load_config(args.config, args.override, args.seed), args.out)
        elif args.aggregate:
            cmd_aggregate(args.aggregate, args.out)
        else:
            if args.checkpoint is None:
                parser.error("eval needs --checkpoint or --aggregate")
            cfg = load_config(args.config, args.override, args.seed) if (args.config or args.override) else None
            cmd_eval(args.checkpoint, args.data, args.split, cfg, args.out)
    except MetricUndefinedError as exc:
        print(f"crossview {args.command}: metric undefined: {exc}", file=sys.stderr)
        return 3
    except CrossViewError as exc:
        print(f"crossview {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, ConfigError) else 1
    except OSError as exc:
        print(f"crossview {args.command}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
