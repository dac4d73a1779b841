"""Command-line harness: train, extract, classify, gradcheck, ablate.

Exit codes: 0 success, 1 numerical or check failure, 2 usage/config/data
error. All commands are deterministic for a given seed; ``--deterministic``
additionally forces serial gradient reduction.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .errors import ConfigError, InvalidInput, NumericalFailure, ParseError
from .gradcheck import LAYER_CHECKS, run_all
from .network import (
    extract_features,
    init_params,
    load_config,
    load_params,
    save_config,
)
from .skeleton import load_dhg, load_fpha, resample
from .svm import (
    load_features,
    save_features,
    save_svm_model,
    svm_predict_batch,
    svm_train,
)
from .training import train_network

DATASETS = ("dhg14", "dhg28", "fpha")
ABLATION_KNOBS = {"t0": "t0", "N_S": "n_chunks", "grid_mode": "grid_mode",
                  "variant": "variant"}


def _load_dataset(data_root, dataset: str, split: str):
    root = Path(data_root)
    if not root.is_dir():
        raise ConfigError(f"data root does not exist: {root}")
    if dataset == "dhg14":
        return load_dhg(root, split, classes=14)
    if dataset == "dhg28":
        return load_dhg(root, split, classes=28)
    if dataset == "fpha":
        return load_fpha(root, split)
    raise ConfigError(f"unknown dataset {dataset!r}; choices: {DATASETS}")


def _resample_all(sequences, n_frames: int):
    return [resample(s, n_frames) if s.n_frames != n_frames else s for s in sequences]


def _config_overrides(args) -> dict:
    overrides = {}
    if getattr(args, "variant", None):
        overrides["variant"] = args.variant
    if getattr(args, "grid_mode", None):
        overrides["grid_mode"] = args.grid_mode
    return overrides


def _write_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def cmd_train(args) -> int:
    config = load_config(args.config, overrides=_config_overrides(args))
    sequences = _resample_all(
        _load_dataset(args.data_root, args.dataset, args.split), config.n_frames
    )
    if not sequences:
        raise ConfigError(f"split {args.split!r} of {args.data_root} is empty")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    params = init_params(config, args.seed)
    t_start = time.perf_counter()
    result = train_network(
        sequences, params, config,
        epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
        seed=args.seed, workers=args.workers, deterministic=args.deterministic,
        out_dir=out_dir, log=print,
    )
    manifest = result.manifest(
        config=config, seed=args.seed, deterministic=args.deterministic,
        dataset_id=f"{args.dataset}:{args.split}", n_sequences=len(sequences),
        batch_size=args.batch_size, lr=args.lr,
        total_wall_time_s=time.perf_counter() - t_start,
    )
    _write_json(out_dir / "manifest.json", manifest)
    save_config(out_dir / "config.snapshot", config)
    print(f"FINAL loss={result.final_loss!r} acc={result.final_accuracy!r}")
    print(f"wrote {out_dir / 'manifest.json'}")
    return 0


def cmd_extract(args) -> int:
    config = load_config(args.config, overrides=_config_overrides(args))
    params = load_params(args.checkpoint, config)
    sequences = _resample_all(
        _load_dataset(args.data_root, args.dataset, args.split), config.n_frames
    )
    labels = [s.label for s in sequences]
    feats = [extract_features(s, params, config) for s in sequences]
    save_features(args.out, labels,
                  np.stack(feats) if feats else np.zeros((0, config.feature_dim)))
    print(f"wrote {len(feats)} feature lines to {args.out}")
    return 0


def _classify(train_file, test_file, c: float, tol: float, seed: int,
              report_path=None, model_path=None):
    train_labels, train_x = load_features(train_file)
    test_labels, test_x = load_features(test_file)
    if train_x.size and test_x.size and train_x.shape[1] != test_x.shape[1]:
        raise InvalidInput(
            f"feature dims differ: train {train_x.shape[1]} vs test {test_x.shape[1]}"
        )
    model = svm_train(train_x, train_labels, c=c, tol=tol, seed=seed)
    if test_labels.size:
        predictions = svm_predict_batch(model, test_x)
        accuracy = float(np.mean(predictions == test_labels))
    else:
        predictions = np.zeros(0, dtype=np.int64)
        accuracy = float("nan")
    classes = sorted(set(model.class_ids.tolist()) | set(test_labels.tolist()))
    index = {cls: k for k, cls in enumerate(classes)}
    confusion = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for truth, pred in zip(test_labels, predictions):
        confusion[index[int(truth)], index[int(pred)]] += 1

    print(f"ACCURACY {accuracy:.4f}")
    print("CONFUSION rows=truth cols=predicted classes=" + ",".join(map(str, classes)))
    for row in confusion:
        print(" ".join(str(v) for v in row))
    report = {
        "accuracy": accuracy,
        "n_train": int(train_labels.size),
        "n_test": int(test_labels.size),
        "classes": classes,
        "confusion": confusion.tolist(),
        "c": c,
        "tol": tol,
    }
    if report_path:
        _write_json(report_path, report)
    if model_path:
        save_svm_model(model_path, model)
    return accuracy


def cmd_classify(args) -> int:
    _classify(args.train_features, args.test_features, args.C, args.tol, args.seed,
              report_path=args.out, model_path=args.model_out)
    return 0


def cmd_gradcheck(args) -> int:
    results = run_all(seed=args.seed, trials=args.trials, corrupt=args.corrupt,
                      include_end_to_end=args.end_to_end)
    failed = False
    for res in results:
        status = "PASS" if res.passed else "FAIL"
        print(f"GRADCHECK {res.name} max_rel_err={res.max_rel_err:.3e} "
              f"tol={res.tol:.0e} {status}")
        failed = failed or not res.passed
    return 1 if failed else 0


def cmd_ablate(args) -> int:
    field = ABLATION_KNOBS.get(args.knob)
    if field is None:
        raise ConfigError(
            f"unknown ablation knob {args.knob!r}; choices: {sorted(ABLATION_KNOBS)}"
        )
    out_root = Path(args.out)
    out_root.mkdir(parents=True, exist_ok=True)
    rows = []
    for value in args.values:
        config = load_config(args.config, overrides={**_config_overrides(args),
                                                     field: value})
        run_dir = out_root / f"{args.knob}_{value}"
        run_dir.mkdir(parents=True, exist_ok=True)

        sequences = _resample_all(
            _load_dataset(args.data_root, args.dataset, "train"), config.n_frames
        )
        params = init_params(config, args.seed)
        result = train_network(
            sequences, params, config,
            epochs=args.epochs, batch_size=args.batch_size, lr=args.lr,
            seed=args.seed, workers=args.workers, deterministic=args.deterministic,
            out_dir=run_dir, log=None,
        )
        for split in ("train", "test"):
            split_seqs = _resample_all(
                _load_dataset(args.data_root, args.dataset, split), config.n_frames
            )
            feats = [extract_features(s, result.params, config) for s in split_seqs]
            save_features(run_dir / f"{split}.features",
                          [s.label for s in split_seqs],
                          np.stack(feats) if feats else np.zeros((0, config.feature_dim)))
        accuracy = _classify(run_dir / "train.features", run_dir / "test.features",
                             args.C, args.tol, args.seed,
                             report_path=run_dir / "report.json")
        rows.append((value, accuracy))

    print(f"ABLATION knob={args.knob}")
    print(f"{args.knob:>12}  accuracy")
    for value, accuracy in rows:
        print(f"{value:>12}  {accuracy:.4f}")
    for value, accuracy in rows:
        print(f"ABLATE {args.knob}={value} acc={accuracy:.4f}")
    _write_json(out_root / "ablation.json",
                {"knob": args.knob, "rows": [{"value": v, "accuracy": a} for v, a in rows]})
    return 0


def _add_common(parser: argparse.ArgumentParser, *, training: bool) -> None:
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--deterministic", action="store_true",
                        help="force serial reduction (runs are seeded either way)")
    parser.add_argument("--workers", type=int, default=1)
    if training:
        parser.add_argument("--epochs", type=int, default=15)
        parser.add_argument("--batch-size", type=int, default=30)
        parser.add_argument("--lr", type=float, default=0.01)
        parser.add_argument("--variant", choices=("st_ts", "st_only", "ts_only"),
                            default=None, help="override the config variant")
        parser.add_argument("--grid-mode", choices=("full", "physical"), default=None,
                            help="override the config grid mode")
        parser.add_argument("--dataset", choices=DATASETS, default="dhg14")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spdhgr",
        description="Skeleton-based hand-gesture recognition with SPD aggregation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the network, writing checkpoints + manifest")
    p.add_argument("--config", required=True)
    p.add_argument("--data-root", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="train")
    _add_common(p, training=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("extract", help="write log-Euclidean features for a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--data-root", required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--out", required=True)
    p.add_argument("--variant", choices=("st_ts", "st_only", "ts_only"), default=None)
    p.add_argument("--grid-mode", choices=("full", "physical"), default=None)
    p.add_argument("--dataset", choices=DATASETS, default="dhg14")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("classify", help="train/evaluate the linear SVM on feature files")
    p.add_argument("--train-features", required=True)
    p.add_argument("--test-features", required=True)
    p.add_argument("-C", type=float, default=1.0)
    p.add_argument("--tol", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="write a JSON report here")
    p.add_argument("--model-out", default=None, help="write the SVM model here")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("gradcheck", help="finite-difference checks for every layer")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--corrupt", choices=sorted(LAYER_CHECKS), default=None,
                   help="testing aid: corrupt one layer's analytic gradient")
    p.add_argument("--no-end-to-end", dest="end_to_end", action="store_false",
                   help="skip the (slow) whole-network finite-difference sweep")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="train/extract/classify per knob value")
    p.add_argument("--config", required=True)
    p.add_argument("--data-root", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--knob", required=True)
    p.add_argument("--values", nargs="+", required=True)
    p.add_argument("-C", type=float, default=1.0)
    p.add_argument("--tol", type=float, default=0.1)
    _add_common(p, training=True)
    p.set_defaults(func=cmd_ablate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ParseError, InvalidInput) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
