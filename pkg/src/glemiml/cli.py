"""Command-line surface: train, ablate, evaluate, synth, report.

Exit codes: 0 success, 1 config error, 2 data error, 3 numeric divergence.
Config files are INI-style key/value sections; flags override file values.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .classifier import load_classifier, save_classifier
from .data import (
    MIMLDataset,
    SplitSpec,
    SyntheticConfig,
    generate_synthetic,
    load_dataset,
    save_dataset,
    split_dataset,
)
from .enhancer import enhance_batch, load_enhancer, save_enhancer
from .errors import ConfigError, DataFormatError, DegenerateInputError, NumericError, ShapeError
from .graph import laplacian, median_width, mutual_knn_adjacency
from .losses import LossWeights
from .metrics import METRIC_DIRECTIONS, METRIC_LABELS, average_rank, format_report_table
from .training import LOSS_COLUMNS, TrainConfig, evaluate, run_ablation, train

OUTPUT_ROOT_ENV = "GLEMIML_OUTPUT_ROOT"

_CONFIG_FIELDS = {
    # section, key, type
    "dataset": ("data", str), "synth": ("data", str),
    "num_bags": ("data", int), "feature_dim": ("data", int),
    "label_count": ("data", int), "instances_min": ("data", int),
    "instances_max": ("data", int), "data_seed": ("data", int),
    "train_frac": ("split", float), "test_frac": ("split", float),
    "val_frac": ("split", float), "split_seed": ("split", int),
    "epochs": ("train", int), "batch_size": ("train", int),
    "learning_rate": ("train", float), "optimizer": ("train", str),
    "instance_k": ("train", int), "k_label": ("train", int),
    "embed_dim": ("train", int), "classifier_depth": ("train", int),
    "sim_mode": ("train", str), "seed": ("train", int),
    "checkpoint_every": ("train", int),
    "beta1": ("loss", float), "beta2": ("loss", float), "beta3": ("loss", float),
    "rho": ("loss", float), "gamma_pos": ("loss", float), "gamma_neg": ("loss", float),
    "out": ("output", str), "method_name": ("output", str),
    "export_distributions": ("output", bool), "dump_graph": ("output", bool),
}

_DEFAULTS = {
    "dataset": None, "synth": None,
    "num_bags": 500, "feature_dim": 10, "label_count": 6,
    "instances_min": 2, "instances_max": 5, "data_seed": 7,
    "train_frac": 0.7, "test_frac": 0.2, "val_frac": 0.1, "split_seed": 0,
    "epochs": 50, "batch_size": 32, "learning_rate": 1e-3, "optimizer": "adam",
    "instance_k": 3, "k_label": 3, "embed_dim": 8, "classifier_depth": 2,
    "sim_mode": "mse", "seed": 0, "checkpoint_every": 0,
    "beta1": 1.0 / 3.0, "beta2": 1.0 / 3.0, "beta3": 1.0 / 3.0,
    "rho": 0.5, "gamma_pos": 0.0, "gamma_neg": 4.0,
    "out": None, "method_name": "GLEMIML",
    "export_distributions": False, "dump_graph": False,
}


def resolve_config(args) -> dict:
    """Layer defaults < config file < command-line flags."""
    cfg = dict(_DEFAULTS)
    if getattr(args, "config", None):
        parser = configparser.ConfigParser()
        read = parser.read(args.config)
        if not read:
            raise DataFormatError(f"config file not found: {args.config}")
        for key, (section, typ) in _CONFIG_FIELDS.items():
            if parser.has_option(section, key):
                raw = parser.get(section, key)
                try:
                    cfg[key] = parser.getboolean(section, key) if typ is bool else typ(raw)
                except ValueError as exc:
                    raise ConfigError(f"config [{section}] {key}: {exc}") from exc
    for key in _CONFIG_FIELDS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    if cfg["dataset"] is not None and cfg["synth"] is not None:
        raise ConfigError("choose exactly one data source: --dataset or --synth")
    return cfg


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


def _train_config(cfg: dict, ablation: str = "full") -> TrainConfig:
    return TrainConfig(
        epochs=cfg["epochs"], batch_size=cfg["batch_size"],
        learning_rate=cfg["learning_rate"], optimizer=cfg["optimizer"],
        loss_weights=LossWeights(
            beta1=cfg["beta1"], beta2=cfg["beta2"], beta3=cfg["beta3"],
            rho=cfg["rho"], gamma_pos=cfg["gamma_pos"], gamma_neg=cfg["gamma_neg"],
        ),
        instance_k=cfg["instance_k"], k_label=cfg["k_label"],
        embed_dim=cfg["embed_dim"], classifier_depth=cfg["classifier_depth"],
        sim_mode=cfg["sim_mode"], seed=cfg["seed"], ablation=ablation,
    )


def _load_data(cfg: dict) -> MIMLDataset:
    if cfg["dataset"] is not None:
        if not os.path.exists(cfg["dataset"]):
            raise DataFormatError(f"dataset file not found: {cfg['dataset']}")
        return load_dataset(cfg["dataset"])
    synth_cfg = SyntheticConfig(
        num_bags=cfg["num_bags"], feature_dim=cfg["feature_dim"],
        label_count=cfg["label_count"], instances_min=cfg["instances_min"],
        instances_max=cfg["instances_max"], seed=cfg["data_seed"],
    )
    ds, _ = generate_synthetic(synth_cfg)
    return ds


def _output_dir(cfg: dict) -> str:
    if cfg["out"]:
        return cfg["out"]
    root = os.environ.get(OUTPUT_ROOT_ENV, "glemiml-out")
    return os.path.join(root, "run")


class _OutputLock:
    """One experiment at a time per output directory."""

    def __init__(self, out_dir: str):
        self.path = os.path.join(out_dir, ".lock")
        self.fd = None

    def __enter__(self):
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ConfigError(f"output directory is locked by another run: {self.path}")
        return self

    def __exit__(self, *exc):
        if self.fd is not None:
            os.close(self.fd)
            os.unlink(self.path)
        return False


def _write_json(path: str, doc: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_manifest(out_dir: str, cfg: dict) -> str:
    h = config_hash(cfg)
    _write_json(os.path.join(out_dir, "manifest.json"), {
        "config": cfg, "config_hash": h, "seed": cfg["seed"], "version": __version__,
    })
    return h


def _write_history_csv(path: str, history) -> None:
    if not history.records:
        return
    keys = ["epoch"] + list(LOSS_COLUMNS) + [
        k for k in history.records[0] if k.startswith("val_")
    ]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(keys)
        for rec in history.records:
            writer.writerow([repr(float(rec[k])) if k != "epoch" else rec[k] for k in keys])


def _export_distributions(enh, splits, out_dir: str) -> None:
    for name, ds in zip(("train", "test", "val"), splits):
        if len(ds) == 0:
            continue
        batch = enhance_batch(enh, ds.bags)
        path = os.path.join(out_dir, f"distributions_{name}.csv")
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["bag"] + [f"label_{j}" for j in range(ds.label_count)])
            for i, row in enumerate(batch.distributions):
                writer.writerow([i] + [repr(float(v)) for v in row])


def _dump_graph_debug(ds: MIMLDataset, cfg: dict, out_dir: str) -> None:
    bag = ds.bags[0]
    width = median_width(bag.instances)
    g = mutual_knn_adjacency(bag.instances, cfg["instance_k"], width)
    lap = laplacian(g)
    for name, mat in (("adjacency", g.adjacency), ("laplacian", lap.matrix)):
        np.savetxt(os.path.join(out_dir, f"graph_{name}.csv"), mat, delimiter=",")


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    if getattr(args, "print_config", False):
        print(json.dumps(cfg, sort_keys=True, indent=2, default=str))
        return 0
    ds = _load_data(cfg)
    spec = SplitSpec(cfg["train_frac"], cfg["test_frac"], cfg["val_frac"], cfg["split_seed"])
    splits = split_dataset(ds, spec)
    train_ds, test_ds, val_ds = splits
    tcfg = _train_config(cfg)

    out_dir = _output_dir(cfg)
    os.makedirs(out_dir, exist_ok=True)
    with _OutputLock(out_dir):
        h = _write_manifest(out_dir, cfg)
        callback = None
        if cfg["checkpoint_every"] > 0:
            def callback(enh_m, clf_m, epoch):
                if epoch % cfg["checkpoint_every"] == 0:
                    save_enhancer(enh_m, os.path.join(out_dir, f"enhancer_epoch{epoch:04d}.json"))
                    save_classifier(clf_m, os.path.join(out_dir, f"classifier_epoch{epoch:04d}.json"))
        enh, clf, history = train(train_ds, val_ds, tcfg, epoch_callback=callback)
        report = evaluate(enh, clf, test_ds)

        save_enhancer(enh, os.path.join(out_dir, "enhancer.json"))
        save_classifier(clf, os.path.join(out_dir, "classifier.json"))
        _write_history_csv(os.path.join(out_dir, "history.csv"), history)
        _write_json(os.path.join(out_dir, "report.json"), {
            "method": cfg["method_name"], "dataset": ds.name,
            "metrics": report.as_dict(), "config_hash": h, "version": __version__,
        })
        with open(os.path.join(out_dir, "report.txt"), "w", encoding="utf-8") as fh:
            fh.write(format_report_table({cfg["method_name"]: report}))
        if cfg["export_distributions"]:
            _export_distributions(enh, splits, out_dir)
        if cfg["dump_graph"]:
            _dump_graph_debug(train_ds, cfg, out_dir)
    print(format_report_table({cfg["method_name"]: report}), end="")
    return 0


def cmd_ablate(args) -> int:
    cfg = resolve_config(args)
    if getattr(args, "print_config", False):
        print(json.dumps(cfg, sort_keys=True, indent=2, default=str))
        return 0
    ds = _load_data(cfg)
    spec = SplitSpec(cfg["train_frac"], cfg["test_frac"], cfg["val_frac"], cfg["split_seed"])
    splits = split_dataset(ds, spec)
    tcfg = _train_config(cfg)

    out_dir = _output_dir(cfg)
    os.makedirs(out_dir, exist_ok=True)
    with _OutputLock(out_dir):
        h = _write_manifest(out_dir, cfg)
        reports = run_ablation(splits, tcfg, only=args.only)
        table = f"config {h}\n" + format_report_table(reports)
        with open(os.path.join(out_dir, "ablation.txt"), "w", encoding="utf-8") as fh:
            fh.write(table)
        _write_json(os.path.join(out_dir, "ablation.json"), {
            "dataset": ds.name, "config_hash": h, "version": __version__,
            "variants": {name: rep.as_dict() for name, rep in reports.items()},
        })
    print(table, end="")
    return 0


def cmd_evaluate(args) -> int:
    cfg = resolve_config(args)
    for path in (args.enhancer, args.classifier):
        if not os.path.exists(path):
            raise DataFormatError(f"checkpoint not found: {path}")
    enh = load_enhancer(args.enhancer)
    clf = load_classifier(args.classifier)
    ds = _load_data(cfg)
    if args.split:
        spec = SplitSpec(cfg["train_frac"], cfg["test_frac"], cfg["val_frac"], cfg["split_seed"])
        splits = dict(zip(("train", "test", "val"), split_dataset(ds, spec)))
        ds = splits[args.split]
    report = evaluate(enh, clf, ds)
    doc = {
        "method": cfg["method_name"], "dataset": ds.name,
        "metrics": report.as_dict(), "version": __version__,
    }
    if args.report_out:
        _write_json(args.report_out, doc)
    print(format_report_table({cfg["method_name"]: report}), end="")
    return 0


def cmd_synth(args) -> int:
    cfg = resolve_config(args)
    synth_cfg = SyntheticConfig(
        num_bags=cfg["num_bags"], feature_dim=cfg["feature_dim"],
        label_count=cfg["label_count"], instances_min=cfg["instances_min"],
        instances_max=cfg["instances_max"], seed=cfg["data_seed"],
    )
    ds, truths = generate_synthetic(synth_cfg)
    save_dataset(ds, args.out_file)
    if args.truth_out:
        with open(args.truth_out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"label_{j}" for j in range(ds.label_count)])
            for dist in truths:
                writer.writerow([repr(float(v)) for v in dist])
    print(f"wrote {len(ds)} bags to {args.out_file}")
    return 0


def cmd_report(args) -> int:
    if not args.reports:
        raise ConfigError("report needs at least one report JSON file")
    table: dict = {}
    for path in args.reports:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
        method, dataset = doc["method"], doc["dataset"]
        row = table.setdefault(method, {})
        for metric in METRIC_DIRECTIONS:
            row[f"{dataset}:{metric}"] = doc["metrics"].get(metric)
    col_directions = {}
    for method_scores in table.values():
        for col in method_scores:
            metric = col.split(":")[-1]
            col_directions[col] = METRIC_DIRECTIONS[metric]
    ranks = average_rank(
        {m: {c: v for c, v in scores.items()} for m, scores in table.items()},
        {c: d for c, d in col_directions.items()},
    )
    methods = sorted(table, key=lambda m: ranks[m])
    columns = sorted({c for scores in table.values() for c in scores})
    width = max(18, max(len(c) for c in columns) + 2)
    lines = [f"{'Method':<14}" + "".join(f"{c:>{width}}" for c in columns) + f"{'AvgRank':>10}"]
    for m in methods:
        cells = []
        for c in columns:
            v = table[m].get(c)
            cells.append("N/A" if v is None else f"{v:.4f}")
        lines.append(f"{m:<14}" + "".join(f"{s:>{width}}" for s in cells)
                     + f"{ranks[m]:>10.2f}")
    print("\n".join(lines))
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="INI config file; flags override its values")
    parser.add_argument("--print-config", action="store_true",
                        help="print the fully resolved configuration and exit")
    parser.add_argument("--dataset", help="JSON-lines dataset file")
    parser.add_argument("--synth", nargs="?", const="default",
                        help="use the synthetic generator (default settings unless overridden)")
    for key, (section, typ) in _CONFIG_FIELDS.items():
        if key in ("dataset", "synth", "export_distributions", "dump_graph"):
            continue
        flag = "--" + key.replace("_", "-")
        if typ is bool:
            parser.add_argument(flag, action="store_const", const=True, default=None)
        else:
            parser.add_argument(flag, type=typ, default=None)
    parser.add_argument("--export-distributions", action="store_const", const=True,
                        default=None, help="write enhanced distributions per split as CSV")
    parser.add_argument("--dump-graph", action="store_const", const=True, default=None,
                        help="write adjacency/Laplacian of the first train bag as CSV")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="glemiml", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="split, train, evaluate on the test split")
    _add_common(p_train)
    p_train.set_defaults(func=cmd_train)

    p_ablate = sub.add_parser("ablate", help="run the full/A/B/C ablation grid")
    _add_common(p_ablate)
    p_ablate.add_argument("--only", choices=("full", "A", "B", "C"),
                          help="run a single variant")
    p_ablate.set_defaults(func=cmd_ablate)

    p_eval = sub.add_parser("evaluate", help="evaluate saved checkpoints on a dataset")
    _add_common(p_eval)
    p_eval.add_argument("--enhancer", required=True)
    p_eval.add_argument("--classifier", required=True)
    p_eval.add_argument("--split", choices=("train", "test", "val"))
    p_eval.add_argument("--report-out", help="also write the report JSON here")
    p_eval.set_defaults(func=cmd_evaluate)

    p_synth = sub.add_parser("synth", help="generate and save a synthetic dataset")
    _add_common(p_synth)
    p_synth.add_argument("out_file")
    p_synth.add_argument("--truth-out", help="CSV of ground-truth distributions")
    p_synth.set_defaults(func=cmd_synth)

    p_report = sub.add_parser("report", help="rank methods across report JSON files")
    p_report.add_argument("reports", nargs="*")
    p_report.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except (DataFormatError, ShapeError, DegenerateInputError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
