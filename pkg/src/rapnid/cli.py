"""Command-line entry point: ``rapnid synth|train|eval|estimate-k``."""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint
from .clustering import ClusteringError, estimate_k
from .config import ConfigError, TrainConfig
from .dataset import Dataset, DatasetError, load_jsonl, synth_mixture, write_jsonl
from .encoder import embed
from .prototypes import within_between_stats
from .trainer import EpochLog, TrainingError, infer, train

log = logging.getLogger("rapnid")

LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}


class CLIError(Exception):
    pass


def _setup_logging():
    level = os.environ.get("RAP_LOG", "error").lower()
    if level not in LEVELS:
        raise CLIError(f"RAP_LOG must be one of {sorted(LEVELS)}, got {level!r}")
    logging.basicConfig(level=LEVELS[level], format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def cmd_synth(args) -> int:
    ds = synth_mixture(
        k=args.k, n_per_class=args.n, d=args.d, sep=args.sep, sigma=args.sigma,
        labeled_fraction=args.labeled_frac, known_fraction=args.known_frac,
        seed=args.seed, test_fraction=args.test_frac,
    )
    write_jsonl(ds, args.output)
    total = ds.n_labeled + ds.n_unlabeled + len(ds.test)
    print(f"wrote {args.output}: {total} samples (labeled {ds.n_labeled}, "
          f"unlabeled {ds.n_unlabeled}, test {len(ds.test)}), d={ds.dim}, "
          f"known classes {ds.task.n_known}/{ds.task.total_classes}")
    return 0


FLAG_KEYS = {
    "omega": float, "tau": float, "alpha": float, "momentum": float, "epochs": int,
    "batch_size": int, "learning_rate": float, "warmup_epochs": int, "seed": int,
    "early_stop_patience": int, "embed_dim": int,
}


def _train_config(args) -> TrainConfig:
    config = TrainConfig.from_file(args.config) if args.config else TrainConfig()
    overrides = {k: getattr(args, k) for k in FLAG_KEYS if getattr(args, k) is not None}
    if args.k is not None:
        overrides["k"] = args.k
    return TrainConfig.from_mapping(overrides, config)


def cmd_train(args) -> int:
    config = _train_config(args)
    ds = load_jsonl(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = train(ds, config)
    ckpt_path = checkpoint.save(model, out / checkpoint.DEFAULT_NAME)
    log_path = out / "epochs.csv"
    with log_path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EpochLog.COLUMNS)
        for entry in model.logs:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in entry.row()])
    (out / "config.cfg").write_text(config.to_text())

    results = {}
    split = "test" if ds.test else "unlabeled"
    y = ds.eval_labels(split)
    if y is not None:
        _, report = infer(model, ds.matrix(split), model.n_clusters, seed=config.seed,
                          y_true=y, n_init=config.kmeans_n_init)
        results = {"split": split, **report.to_dict()}
    manifest = {
        "config": config.to_dict(),
        "seed": config.seed,
        "dataset": {"path": str(args.data), "sha256": _sha256(args.data)},
        "artifacts": {"checkpoint": str(ckpt_path), "epoch_log": str(log_path),
                      "config": str(out / "config.cfg")},
        "n_clusters": model.n_clusters,
        "best_epoch": model.best_epoch,
        "epochs_run": len(model.logs),
        "metrics": results,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    print(f"trained {len(model.logs)} epochs (best {model.best_epoch}); "
          f"checkpoint {ckpt_path}")
    if results:
        print(f"{split}: NMI {results['nmi']:.4f}  ARI {results['ari']:.4f}  ACC {results['acc']:.4f}")
    return 0


def _select_split(ds: Dataset, name: str):
    if name == "all":
        samples = ds.labeled + ds.unlabeled + ds.test
    else:
        samples = getattr(ds, name)
    if not samples:
        raise CLIError(f"split {name!r} is empty")
    index = {c: i for i, c in enumerate(ds.class_names())}
    X = np.stack([s.features for s in samples])
    truth = [s.truth for s in samples]
    y = None if any(t is None for t in truth) else np.array([index[t] for t in truth])
    return samples, X, y


def _load_matching(args):
    model = checkpoint.load(args.ckpt)
    ds = load_jsonl(args.data)
    if ds.dim != model.encoder.in_dim:
        raise CLIError(f"checkpoint expects {model.encoder.in_dim}-dim features, "
                       f"dataset has {ds.dim}")
    return model, ds


def _default_split(ds: Dataset) -> str:
    return "test" if ds.test else "all"


def cmd_eval(args) -> int:
    model, ds = _load_matching(args)
    split = args.split or _default_split(ds)
    samples, X, y = _select_split(ds, split)
    k = args.k or model.n_clusters
    seed = model.config.seed if args.seed is None else args.seed
    result, report = infer(model, X, k, seed=seed, y_true=y, n_init=model.config.kmeans_n_init)
    Z = embed(model.encoder, X)
    out = {"split": split, "n": len(samples), "k": k}
    if report is not None:
        out.update(report.to_dict())
        within, between = within_between_stats(Z, _nearest(Z, model), model.prototypes)
        if y is not None and len(np.unique(y)) <= model.prototypes.n_classes:
            within, between = within_between_stats(Z, _aligned_truth(Z, y, model), model.prototypes)
        out.update(within=within, between=between, within_x100=100 * within,
                   between_x100=100 * between)
        print(f"{'metric':<10}{'value':>10}")
        for key in ("nmi", "ari", "acc"):
            print(f"{key.upper():<10}{out[key]:>10.4f}")
        print(f"{'within':<10}{100 * within:>10.2f}")
        print(f"{'between':<10}{100 * between:>10.2f}")
    else:
        sizes = np.bincount(result.labels, minlength=k)
        out["cluster_sizes"] = sizes.tolist()
        print(f"clustered {len(samples)} samples into {k} clusters (no eval labels)")
    if args.json:
        Path(args.json).write_text(json.dumps(out, indent=2))
    else:
        print(json.dumps(out))
    if args.dump_embeddings:
        with open(args.dump_embeddings, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["id"] + [f"z{i}" for i in range(Z.shape[1])] + ["cluster", "eval_label"])
            for s, z, c in zip(samples, Z, result.labels):
                writer.writerow([s.id, *(repr(float(v)) for v in z), int(c), s.truth or ""])
    return 0


def _nearest(Z, model):
    return np.argmax(Z @ model.prototypes.mu.T, axis=1)


def _aligned_truth(Z, y, model):
    """Relabel true classes onto prototype indices by maximum overlap with
    nearest-prototype assignments."""
    from .metrics import acc

    pred = _nearest(Z, model)
    _, mapping = acc(pred, y)  # maps true class -> prototype index
    out = np.array([mapping.mapping.get(int(c), -1) for c in y])
    missing = out < 0
    out[missing] = pred[missing]
    return out


def _parse_k_init(text: str, truth: int) -> int:
    text = text.strip().lower()
    if text.endswith("x"):
        try:
            factor = float(text[:-1])
        except ValueError:
            raise CLIError(f"bad --k-init {text!r}") from None
        return max(1, int(round(factor * truth)))
    try:
        return int(text)
    except ValueError:
        raise CLIError(f"bad --k-init {text!r}; use an integer or a multiple like 2x") from None


def cmd_estimate_k(args) -> int:
    if args.ckpt:
        model, ds = _load_matching(args)
    else:
        model, ds = None, load_jsonl(args.data)
    _, X, y = _select_split(ds, args.split or "all")
    truth = ds.task.total_classes
    k_init = min(_parse_k_init(args.k_init, truth), len(X))
    points = embed(model.encoder, X) if model is not None else X
    k = estimate_k(points, k_init, drop_ratio=args.drop_ratio, seed=args.seed,
                   merge=not args.no_merge)
    out = {"estimated_k": k, "k_init": k_init, "drop_ratio": args.drop_ratio}
    line = f"estimated K = {k}"
    if y is not None:
        n_true = len(np.unique(y))
        err = 100.0 * abs(k - n_true) / n_true
        out.update(ground_truth=n_true, error_rate=err)
        line += f" (ground truth {n_true}, error {err:.2f}%)"
    print(line)
    if args.json:
        Path(args.json).write_text(json.dumps(out, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rapnid", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic Gaussian-mixture dataset")
    p.add_argument("--k", type=int, required=True, help="number of classes")
    p.add_argument("--n", type=int, required=True, help="samples per class")
    p.add_argument("--d", type=int, required=True, help="feature dimension")
    p.add_argument("--sep", type=float, default=6.0)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--labeled-frac", type=float, default=0.1)
    p.add_argument("--known-frac", type=float, default=0.75)
    p.add_argument("--test-frac", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train an encoder and write checkpoint, logs, manifest")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="flat 'key = value' file of training settings")
    p.add_argument("--out", required=True, help="output directory")
    for key, typ in FLAG_KEYS.items():
        p.add_argument("--" + key.replace("_", "-"), dest=key, type=typ)
    p.add_argument("--k", help="cluster count: integer, 'truth' or 'estimate'")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="cluster a split with a trained encoder and score it")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", choices=["labeled", "unlabeled", "test", "all"])
    p.add_argument("--k", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--json", help="also write the JSON report here")
    p.add_argument("--dump-embeddings", help="CSV of id, embedding, cluster, eval label")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("estimate-k", help="estimate the number of clusters")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", help="embed with this checkpoint first (raw features otherwise)")
    p.add_argument("--k-init", default="2x", help="integer or multiple of the task's class count, e.g. 2x")
    p.add_argument("--drop-ratio", type=float, default=0.5)
    p.add_argument("--no-merge", action="store_true", help="skip merging split density modes")
    p.add_argument("--split", choices=["labeled", "unlabeled", "test", "all"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json")
    p.set_defaults(func=cmd_estimate_k)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _setup_logging()
        return args.func(args)
    except (CLIError, ConfigError, DatasetError, checkpoint.CheckpointError, ClusteringError,
            TrainingError, OSError) as exc:
        print(f"rapnid {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
