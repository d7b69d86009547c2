"""Command-line entry point: ``hwmamba <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, HWMambaError
from .labels import CLASSES
from .metrics import (THRESHOLD_METRICS, MetricsReport, WeightMatrix, compute_report, search_thresholds,
                      threshold_gap_report, threshold_search)
from .model import NetConfig
from .preprocess import condition, load_dataset, record_rng, save_dataset
from .state import ModelState
from .synth import synth_classes, synth_dataset
from .training import TrainConfig, kfold, predict_records, stratified_split, train

log = logging.getLogger("hwmamba")

PRESETS = {"micro": NetConfig.micro, "paper": NetConfig.paper}


def _read_json(path: str | Path, kind: type[HWMambaError] = ConfigError) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise kind(f"cannot read {path}: {exc}") from exc


def _load_matrix(path: str | Path) -> np.ndarray:
    path = Path(path)
    try:
        if path.suffix == ".npy":
            return np.load(path)
        return np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read matrix {path}: {exc}") from exc


def cmd_preprocess(args) -> None:
    records, classes = load_dataset(args.inp)
    out = [condition(r, normalize=args.normalize, rng=record_rng(args.seed, r.id)) for r in records]
    save_dataset(out, args.out, classes)
    print(f"wrote {len(out)} records to {args.out}")


def cmd_synth(args) -> None:
    records, classes = synth_dataset(args.n, args.classes, args.seq_len, args.seed)
    save_dataset(records, args.out, classes)
    print(f"wrote {len(records)} synthetic records ({', '.join(classes)}) to {args.out}")


def _split(records, cfg: TrainConfig, fold: int | None) -> dict:
    ids = [r.id for r in records]
    labels = np.stack([r.labels for r in records])
    train_ids, test_ids = stratified_split(ids, labels, cfg.train_fraction, cfg.seed)
    split = {"train": train_ids, "test": test_ids, "fold": fold}
    if fold is not None:
        if not 0 <= fold < cfg.folds:
            raise ConfigError(f"fold must lie in [0, {cfg.folds}), got {fold}")
        index = {i: k for k, i in enumerate(ids)}
        folds = kfold(train_ids, labels[[index[i] for i in train_ids]], cfg.folds, cfg.seed)
        split["fit"], split["val"] = folds[fold]
    else:
        split["fit"], split["val"] = train_ids, []
    return split


def cmd_train(args) -> None:
    raw = _read_json(args.config) if args.config else {}
    net = dict(raw.pop("net", {}))
    preset = args.preset or raw.pop("preset", "paper")
    raw.pop("preset", None)
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}")
    if args.seed is not None:
        raw["seed"] = args.seed
    cfg = TrainConfig.from_dict({**raw, "net": PRESETS[preset](**net)})
    records, classes = load_dataset(args.data)
    if len(classes) != cfg.net.num_classes:
        raise ConfigError(f"data has {len(classes)} classes but the network is configured for {cfg.net.num_classes}")
    split = _split(records, cfg, args.fold)
    by_id = {r.id: r for r in records}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "split.json").write_text(json.dumps(split))
    (out / "train_config.json").write_text(json.dumps(cfg.to_dict(), indent=1))
    (out / "classes.json").write_text(json.dumps(classes))
    result = train(cfg, [by_id[i] for i in split["fit"]], out_dir=out)
    ModelState.from_model(result.model, result.optimizer.step_count, {"classes": classes}).save(out / "model")
    (out / "log.json").write_text(json.dumps(result.log, indent=1))
    last = result.log[-1]
    print(f"trained {len(result.log)} epochs; final loss {last['loss']:.5f}; model saved to {out / 'model'}")


def _resolve_thresholds(choice: str, train_pt, test_pt, weights, classes) -> tuple[dict[str, float], str]:
    if choice == "train":
        return search_thresholds(*train_pt, weights, classes), "train"
    if choice == "test":
        return search_thresholds(*test_pt, weights, classes), "test"
    data = _read_json(choice)
    if "thresholds" in data:
        data = data["thresholds"]
    if isinstance(data, dict) and len(data) == 1:
        # one global threshold, whichever metric it was tuned for
        data = {name: next(iter(data.values())) for name in THRESHOLD_METRICS}
    try:
        taus = {name: float(data[name]) for name in THRESHOLD_METRICS}
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"{choice}: thresholds file must give a value for each of {list(THRESHOLD_METRICS)}") from exc
    return taus, "file"


def cmd_eval(args) -> None:
    model_dir = Path(args.model)
    run_dir = model_dir.parent if (model_dir / "model.json").exists() else model_dir
    state_dir = model_dir if (model_dir / "model.json").exists() else model_dir / "model"
    model = ModelState.load(state_dir).build()
    records, classes = load_dataset(args.data)
    cfg_path = run_dir / "train_config.json"
    normalize = bool(_read_json(cfg_path).get("normalize", False)) if cfg_path.exists() else False
    weights = WeightMatrix.from_csv(args.weights) if args.weights else WeightMatrix.identity(classes)
    split_path = run_dir / "split.json"
    by_id = {r.id: r for r in records}
    if split_path.exists():
        split = _read_json(split_path, DataError)
        train_recs = [by_id[i] for i in split["fit"] if i in by_id]
        test_recs = [by_id[i] for i in split["test"] if i in by_id]
    else:
        train_recs, test_recs = [], records
    if not test_recs:
        raise DataError("no evaluation records found in the data directory")
    test_pt = predict_records(model, test_recs, normalize)
    train_pt = predict_records(model, train_recs, normalize) if train_recs else None
    if args.thresholds == "train" and train_pt is None:
        raise DataError("train-calibrated thresholds need the training split recorded next to the model")
    taus, source = _resolve_thresholds(args.thresholds, train_pt, test_pt, weights, classes)
    report = compute_report(*test_pt, taus, source, weights, classes)
    out = Path(args.report)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(report.to_json())
    arrays = {"test_probs": test_pt[0], "test_targets": test_pt[1], "classes": np.array(classes)}
    if train_pt is not None:
        arrays.update(train_probs=train_pt[0], train_targets=train_pt[1])
    np.savez(out.with_suffix(".predictions.npz"), **arrays)
    print(json.dumps(report.csv_row()))


def cmd_threshold(args) -> None:
    probs, targets = _load_matrix(args.probs), _load_matrix(args.targets)
    names = list(THRESHOLD_METRICS) if args.metric == "all" else [args.metric]
    if args.classes:
        classes = [c.strip() for c in args.classes.split(",")]
    else:
        classes = list(CLASSES) if probs.shape[-1] == len(CLASSES) else synth_classes(probs.shape[-1])
    if len(classes) != probs.shape[-1]:
        raise DataError(f"{len(classes)} class names for {probs.shape[-1]} columns")
    weights = WeightMatrix.from_csv(args.weights) if args.weights else WeightMatrix.identity(classes)
    result = {"thresholds": {}, "values": {}}
    for name in names:
        tau, value = threshold_search(probs, targets, name, weights, classes)
        result["thresholds"][name] = tau
        result["values"][name] = value
    Path(args.out).write_text(json.dumps(result, indent=1))
    print(json.dumps(result))


def _gap_rows(npz_path: Path) -> list[dict]:
    data = np.load(npz_path)
    if "train_probs" not in data:
        return []
    classes = [str(c) for c in data["classes"]]
    rows = threshold_gap_report(data["train_probs"], data["train_targets"], data["test_probs"],
                                data["test_targets"], WeightMatrix.identity(classes), classes)
    return [{"source": npz_path.name, **vars(r)} for r in rows]


def cmd_report(args) -> None:
    root = Path(args.inp)
    if not root.exists():
        raise DataError(f"{root} does not exist")
    reports = []
    for path in sorted(root.rglob("*.json")):
        try:
            data = json.loads(path.read_text())
        except ValueError:
            continue
        if isinstance(data, dict) and "threshold_source" in data and "per_class_f1" in data:
            reports.append((path, MetricsReport.from_dict(data)))
    if not reports:
        raise DataError(f"no metrics reports under {root}")
    summary = [{"run": str(p.relative_to(root)), **r.csv_row()} for p, r in reports]
    per_class = [{"run": str(p.relative_to(root)), **dict(zip(r.classes, r.per_class_f1))} for p, r in reports]
    gaps = [row for npz in sorted(root.rglob("*.predictions.npz")) for row in _gap_rows(npz)]
    if args.format == "json":
        print(json.dumps({"metrics": summary, "per_class_f1": per_class, "threshold_gap": gaps}, indent=1))
        return
    buf = io.StringIO()
    for title, rows in (("metrics", summary), ("per_class_f1", per_class), ("threshold_gap", gaps)):
        if not rows:
            continue
        buf.write(f"# {title}\n")
        writer = csv.DictWriter(buf, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    sys.stdout.write(buf.getvalue())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hwmamba", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="resample, fix length and optionally z-score record bundles")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("synth", help="write a synthetic separable dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--seq-len", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model on a record directory")
    p.add_argument("--data", required=True)
    p.add_argument("--config", help="training config JSON (optional 'net' and 'epochs' keys)")
    p.add_argument("--out", required=True)
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--fold", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a trained model on its held-out split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--thresholds", default="train", help="train, test, or a thresholds JSON file")
    p.add_argument("--weights", help="weight matrix CSV (identity when omitted)")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("threshold", help="grid-search a decision threshold")
    p.add_argument("--probs", required=True)
    p.add_argument("--targets", required=True)
    p.add_argument("--metric", required=True, choices=sorted(THRESHOLD_METRICS) + ["all"])
    p.add_argument("--classes", help="comma-separated column names (default: canonical or synthetic order)")
    p.add_argument("--weights", help="weight matrix CSV for the challenge score (identity when omitted)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_threshold)

    p = sub.add_parser("report", help="collect metrics, per-class F1 and threshold gaps from a run directory")
    p.add_argument("--in", dest="inp", required=True)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except HWMambaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
