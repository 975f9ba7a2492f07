"""Command-line experiment runner.

    rerankmatch train --config exp.cfg --out runs/a --set hp.lambda_s=0.5
    rerankmatch evaluate --config exp.cfg --out runs/a
    rerankmatch export-embeddings --config exp.cfg --out runs/a
    rerankmatch sweep --config exp.cfg --out runs/sweep --seeds 0,1,2,3,4

Each ``train`` run writes ``metrics.csv`` (one row per optimizer step),
``summary.json``, ``checkpoint.bin`` and the resolved ``config.txt``.
"""

import argparse
import csv
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import build_config, parse_config, read_entries, to_text
from .data import load_idx, make_shapes, make_two_moons, split_ssl
from .errors import CheckpointError, ReRankMatchError
from .estimator import UNLABELED, ReRankMatchClassifier
from .model import load_checkpoint, save_checkpoint
from .trainer import CSV_HEADER

log = logging.getLogger("rerankmatch")


def load_dataset(spec):
    if spec.name == "two_moons":
        return make_two_moons(spec.n, spec.noise, seed=spec.seed)
    if spec.name == "shapes":
        return make_shapes(spec.n, size=spec.size, classes=spec.classes, seed=spec.seed)
    base = Path(spec.cache_dir) if spec.cache_dir else Path(".")
    return load_idx(base / spec.images, base / spec.labels)


def prepare(cfg):
    """Dataset, split and the class ids the classifier head will cover."""
    ds = load_dataset(cfg.dataset)
    split = split_ssl(ds, cfg.split.n_labeled, cfg.split.overlap_mode, seed=cfg.split.seed,
                      val_frac=cfg.split.val_frac, test_frac=cfg.split.test_frac)
    classes = np.unique(ds.labels[split.labeled])
    return ds, split, classes


def eval_subset(ds, idx, classes):
    """Samples of ``idx`` whose class the head covers (all of them unless classes are disjoint)."""
    keep = idx[np.isin(ds.labels[idx], classes)]
    return ds.samples[keep], ds.labels[keep]


def make_estimator(cfg):
    hp, aug = cfg.hp, cfg.augment
    return ReRankMatchClassifier(
        hidden_layer_sizes=cfg.model.hidden, representation_dim=cfg.model.rep_dim,
        ranking_loss=cfg.train.rank_loss, objective=cfg.train.objective,
        batch_size=hp.batch_size, mu=hp.mu, tau=hp.tau, margin=hp.margin,
        temperature=hp.temperature, psi=hp.psi, phi=hp.phi, lambda_u=hp.lambda_u,
        lambda_r=hp.lambda_r, lambda_s=hp.lambda_s, learning_rate=cfg.optim.lr,
        momentum=cfg.optim.momentum, weight_decay=cfg.optim.weight_decay,
        epochs=cfg.train.epochs, max_steps=cfg.train.steps or None,
        shift_max=aug.shift_max, flip_prob=aug.flip_prob, noise_scale=aug.noise_scale,
        jitter_scale=aug.jitter_scale, cutout_frac=aug.cutout_frac,
        random_state=cfg.train.seed)


def run_experiment(cfg, out=None):
    """data -> split -> train -> evaluate; writes artifacts into ``out`` and returns the summary."""
    out = Path(out or cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    ds, split, classes = prepare(cfg)
    train_idx = np.concatenate([split.labeled, split.unlabeled])
    y = np.full(train_idx.size, UNLABELED, dtype=np.int64)
    y[:split.labeled.size] = ds.labels[split.labeled]
    x_test, y_test = eval_subset(ds, split.test if split.test.size else split.validation, classes)
    x_val, y_val = eval_subset(ds, split.validation, classes)

    clf = make_estimator(cfg)
    (out / "config.txt").write_text(to_text(cfg))
    with open(out / "metrics.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)

        def on_step(rec):
            writer.writerow(rec.as_row())

        eval_set = (x_test, y_test) if len(y_test) else None
        clf.fit(ds.samples[train_idx], y, eval_set=eval_set, on_step=on_step)
    val_error = 1.0 - clf.score(x_val, y_val) if len(y_val) else None
    save_checkpoint(clf.params_, out / "checkpoint.bin")

    history = clf.history_
    tail = history[-max(1, len(history) // 4):]
    summary = {
        "label": cfg.label,
        "seed": cfg.train.seed,
        "classes": [int(c) for c in clf.classes_],
        "sample_shape": list(clf.sample_shape_),
        "n_labeled": int(split.labeled.size),
        "n_unlabeled": int(split.unlabeled.size),
        "n_test": int(len(y_test)),
        "steps": len(history),
        "test_error_per_epoch": clf.eval_errors_,
        "final_test_error": clf.eval_errors_[-1] if clf.eval_errors_ else None,
        "final_validation_error": val_error,
        "final_quarter_mean_total": float(np.mean([r.total for r in tail])),
        "final_mask_rate": history[-1].mask_rate,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    return summary


def _load_trained(cfg, out, checkpoint=None):
    out = Path(out)
    path = Path(checkpoint) if checkpoint else out / "checkpoint.bin"
    params = load_checkpoint(path)
    ds, split, classes = prepare(cfg)
    sample_shape = ds.samples.shape[1:]
    if int(np.prod(sample_shape)) != params.dims[0]:
        raise CheckpointError(f"{path}: input width {params.dims[0]} does not match "
                              f"dataset samples of shape {sample_shape}")
    if len(classes) != params.n_classes:
        raise CheckpointError(f"{path}: head has {params.n_classes} outputs, "
                              f"split has {len(classes)} labeled classes")
    clf = ReRankMatchClassifier.from_params(params, classes, sample_shape)
    return clf, ds, split, classes


def evaluate_checkpoint(cfg, out, checkpoint=None, which="test"):
    clf, ds, split, classes = _load_trained(cfg, out, checkpoint)
    x, y = eval_subset(ds, split.sets()[which], classes)
    return 1.0 - clf.score(x, y)


def export_embeddings(cfg, out, path=None, checkpoint=None, which="test"):
    """TSV of L2-normalized logits plus the true label, one row per sample."""
    clf, ds, split, _ = _load_trained(cfg, out, checkpoint)
    idx = split.sets()[which]
    emb = clf.transform(ds.samples[idx]) if idx.size else np.zeros((0, clf.params_.n_classes))
    path = Path(path) if path else Path(out) / f"embeddings_{which}.tsv"
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow([f"e{j}" for j in range(emb.shape[1])] + ["label"])
        for row, label in zip(emb, ds.labels[idx]):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])
    return path


def _grid(specs):
    """``["hp.psi=0.1,0.3", ...]`` -> list of override lists (cartesian product)."""
    axes = []
    for spec in specs:
        key, values = spec.split("=", 1)
        axes.append([f"{key.strip()}={v.strip()}" for v in values.split(",")])
    return [list(combo) for combo in itertools.product(*axes)] if axes else [[]]


def _run_one(args):
    text, out = args
    cfg = build_config(read_entries(text))
    return run_experiment(cfg, out)


def sweep(cfg, out, seeds=None, grid=(), jobs=1):
    """Independent runs over seeds (and optionally a grid); mean/std error per grid cell."""
    out = Path(out)
    seeds = tuple(seeds) if seeds is not None else cfg.run.seeds
    cells = []
    tasks = []
    base_text = to_text(cfg)
    for overrides in _grid(grid):
        cell_name = "_".join(o.replace("=", "-") for o in overrides) or "base"
        cells.append((cell_name, overrides))
        for seed in seeds:
            entries = read_entries(base_text)
            for o in overrides + [f"train.seed={seed}", f"split.seed={seed}"]:
                k, v = o.split("=", 1)
                entries[k.strip()] = (v.strip(), "--set")
            run_dir = out / cell_name / f"seed_{seed}"
            # validate early so bad grid keys fail before any training
            build_config(entries)
            text = "\n".join(f"{k} = {v}" for k, (v, _) in entries.items()) + "\n"
            tasks.append((text, str(run_dir)))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]

    report = {"seeds": list(seeds), "cells": []}
    per_cell = len(seeds)
    for i, (name, overrides) in enumerate(cells):
        runs = results[i * per_cell:(i + 1) * per_cell]
        errors = np.array([r["final_test_error"] for r in runs], dtype=float) * 100.0
        report["cells"].append({
            "name": name,
            "overrides": overrides,
            "label": runs[0]["label"],
            "test_error_pct": errors.tolist(),
            "mean_pct": float(errors.mean()),
            "std_pct": float(errors.std()),
            "error_rate": f"{errors.mean():.2f}±{errors.std():.2f}",
        })
    out.mkdir(parents=True, exist_ok=True)
    (out / "sweep_summary.json").write_text(json.dumps(report, indent=2) + "\n")
    return report


def build_parser():
    parser = argparse.ArgumentParser(prog="rerankmatch", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, help="sets train.seed and split.seed")
        p.add_argument("--out", help="run directory (default: run.out)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override one config key; repeatable")
        p.add_argument("--cache-dir", help="base directory for IDX dataset paths")

    common(sub.add_parser("train", help="train one model"))
    p = sub.add_parser("evaluate", help="error rate of a saved checkpoint")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--split", default="test", choices=("test", "validation", "labeled", "unlabeled"))
    p = sub.add_parser("export-embeddings", help="write L2-normalized logits as TSV")
    common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--split", default="test", choices=("test", "validation", "labeled", "unlabeled"))
    p.add_argument("--output", help="TSV path (default: <out>/embeddings_<split>.tsv)")
    p = sub.add_parser("sweep", help="repeat training over seeds and an optional grid")
    common(p)
    p.add_argument("--seeds", help="comma-separated seeds (default: run.seeds)")
    p.add_argument("--grid", action="append", default=[], metavar="KEY=V1,V2,...")
    p.add_argument("--jobs", type=int, default=1)
    return parser


def config_from_args(args):
    overrides = list(args.set)
    if args.seed is not None:
        overrides += [f"train.seed={args.seed}", f"split.seed={args.seed}"]
    if args.cache_dir:
        overrides.append(f"dataset.cache_dir={args.cache_dir}")
    return parse_config(args.config, overrides)


def main(argv=None):
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        out = args.out or cfg.run.out
        if args.command == "train":
            summary = run_experiment(cfg, out)
            err = summary["final_test_error"]
            log.info("%s: final test error %s after %d steps -> %s", summary["label"],
                     "n/a" if err is None else f"{err:.4f}", summary["steps"], out)
        elif args.command == "evaluate":
            err = evaluate_checkpoint(cfg, out, args.checkpoint, args.split)
            print(f"{args.split} error rate: {err:.6f}")
        elif args.command == "export-embeddings":
            path = export_embeddings(cfg, out, args.output, args.checkpoint, args.split)
            log.info("wrote %s", path)
        elif args.command == "sweep":
            seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
            report = sweep(cfg, out, seeds, args.grid, args.jobs)
            for cell in report["cells"]:
                print(f"{cell['name']}\t{cell['label']}\terror rate (%) {cell['error_rate']}")
    except (ReRankMatchError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
