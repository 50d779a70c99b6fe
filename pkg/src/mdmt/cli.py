"""Command-line entry point: ``mdmt train | eval-matrix | gen-data``.

Exit codes: 0 success, 2 bad input (config, files, arguments), 3 numeric
failure during training.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, checkpoint
from .config import DataSpec, ExperimentConfig, build_tasks, flatten, from_dict
from .data import save_dataset_csv
from .errors import ConfigError, MDMTError, NumericError, ParseError
from .metrics import (
    DECIMALS,
    BShotCurve,
    emit_matrix,
    format_report,
    metrics_report,
    parse_matrix,
    read_matrix,
)
from .trainer import train_sequence

log = logging.getLogger("mdmt")

MANIFEST_VERSION = 1


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _quantize(a: np.ndarray) -> np.ndarray:
    """Values exactly as they read back from the 4-decimal text files."""
    return np.array([[float(f"{v:.{DECIMALS}f}") for v in row] for row in np.atleast_2d(a)])


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_config_or_manifest(path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be an object")
    if "manifest_version" in raw:
        if raw.get("command") != "train":
            raise ConfigError(f"{path}: not a train manifest")
        raw = raw["config"]
    return from_dict(raw)


def write_curves(path: Path, trend, curve: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["series", "t", "b", "value"])
        for t, v in enumerate(trend, start=1):
            w.writerow(["A", t, "", f"{v:.{DECIMALS}f}"])
        for t, row in enumerate(curve, start=1):
            for b, v in enumerate(row):
                w.writerow(["bshot", t, b, f"{v:.{DECIMALS}f}"])


def read_curve(path) -> BShotCurve:
    """Read the b-shot series of a curves CSV, or a plain (T, beta+1) number grid."""
    text = Path(path).read_text()
    first = text.lstrip().split("\n", 1)[0]
    if not first.startswith("series"):
        rows = []
        for lineno, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            try:
                rows.append([float(v) for v in line.replace(",", " ").split()])
            except ValueError:
                raise ParseError("non-numeric entry", str(path), lineno) from None
        if len({len(r) for r in rows}) != 1:
            raise ParseError("ragged curve rows", str(path))
        return BShotCurve(np.array(rows))
    cells: dict[tuple[int, int], float] = {}
    for lineno, rec in enumerate(csv.DictReader(text.splitlines()), start=2):
        if rec.get("series") != "bshot":
            continue
        try:
            cells[(int(rec["t"]), int(rec["b"]))] = float(rec["value"])
        except (TypeError, ValueError):
            raise ParseError("malformed bshot row", str(path), lineno) from None
    if not cells:
        raise ParseError("no bshot rows", str(path))
    T = max(t for t, _ in cells)
    B = max(b for _, b in cells) + 1
    if len(cells) != T * B:
        raise ParseError("incomplete bshot grid", str(path))
    return BShotCurve(np.array([[cells[(t, b)] for b in range(B)] for t in range(1, T + 1)]))


def cmd_train(args) -> int:
    cfg = read_config_or_manifest(args.config)
    flat = dict(cfg.flat)
    if args.seed is not None:
        flat["hp.seed"] = args.seed
    if args.loss_mode is not None:
        flat["hp.loss_mode"] = args.loss_mode
    if args.no_ed:
        flat["hp.use_ed"] = False
    if args.beta is not None:
        flat["hp.lca_beta"] = args.beta
    if args.out is not None:
        flat["out_dir"] = str(args.out)
    cfg = from_dict(flat)

    out = Path(cfg.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None

    tasks = build_tasks(cfg.data)
    matrix, curve, state = train_sequence(tasks, cfg.hp, cfg.hidden)

    (out / "matrix.csv").write_text(emit_matrix(matrix))
    # metrics are computed from what the files hold, so re-analysis matches exactly
    written = read_matrix(out / "matrix.csv")
    q_curve = BShotCurve(_quantize(curve.a_tb))
    report = metrics_report(written, q_curve)
    report["run_label"] = cfg.run_label
    _write_json(out / "metrics.json", report)
    write_curves(out / "curves.csv", report["A_trend"], q_curve.a_tb)
    checkpoint.save(state, out / "checkpoint.bin")

    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "command": "train",
        "package_version": __version__,
        "seed": cfg.hp.seed,
        "config": cfg.flat,
        "task_records": tasks.records,
        "outputs": {name: _sha256(out / name)
                    for name in ("matrix.csv", "metrics.json", "curves.csv", "checkpoint.bin")},
    }
    _write_json(out / "manifest.json", manifest)
    sys.stdout.write(format_report(report))
    return 0


def cmd_eval_matrix(args) -> int:
    matrix = read_matrix(args.matrix)
    curve = read_curve(args.curve) if args.curve else None
    try:
        report = metrics_report(matrix, curve, args.beta if curve is not None else None)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if args.json:
        sys.stdout.write(json.dumps(report, indent=2, sort_keys=True) + "\n")
    else:
        sys.stdout.write(format_report(report))
    return 0


def _gen_spec_from_args(args) -> DataSpec:
    if args.manifest:
        try:
            raw = json.loads(Path(args.manifest).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read manifest {args.manifest}: {exc}") from None
        if raw.get("command") != "gen-data":
            raise ConfigError(f"{args.manifest}: not a gen-data manifest")
        params = raw["params"]
    else:
        if not args.kind:
            raise ConfigError("--kind is required unless --manifest is given")
        params = {
            "kind": args.kind, "source": args.source, "tasks": args.tasks,
            "num_classes": args.classes, "dim": args.dim,
            "train_per_class": args.train_per_class, "test_per_class": args.test_per_class,
            "spread": args.spread, "seed": args.seed, "classes_per_task": args.classes_per_task,
            "sequential_split": args.sequential, "train_images": args.train_images,
            "train_labels": args.train_labels, "test_images": args.test_images,
            "test_labels": args.test_labels, "max_train": args.max_train, "max_test": args.max_test,
        }
    # validate through the experiment schema
    return from_dict({f"data.{k}": v for k, v in params.items() if v is not None}).data


def cmd_gen_data(args) -> int:
    spec = _gen_spec_from_args(args)
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"cannot write to {out}: {exc}") from None
    seq = build_tasks(spec)
    files = {}
    for t, task in enumerate(seq, start=1):
        for split, ds in (("train", task.train), ("test", task.test)):
            name = f"task{t}_{split}.csv"
            save_dataset_csv(ds, out / name)
            files[name] = _sha256(out / name)
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "command": "gen-data",
        "package_version": __version__,
        "kind": seq.kind,
        "seed": spec.seed,
        "params": dataclasses.asdict(spec),
        "num_classes": [task.num_classes for task in seq],
        "records": seq.records,
        "files": files,
    }
    _write_json(out / "manifest.json", manifest)
    sys.stdout.write(f"wrote {len(seq)} tasks to {out}\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mdmt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run a task sequence from a config (or a train manifest)")
    p.add_argument("--config", required=True, type=Path)
    p.add_argument("--out", type=Path, help="override out_dir")
    p.add_argument("--seed", type=int, help="override hp.seed")
    p.add_argument("--loss-mode", choices=["tam", "cds_raw", "vanilla"])
    p.add_argument("--no-ed", action="store_true", help="disable episodic distillation")
    p.add_argument("--beta", type=int, help="override hp.lca_beta")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval-matrix", help="metrics of an accuracy matrix file")
    p.add_argument("matrix", type=Path)
    p.add_argument("--beta", type=int, default=10)
    p.add_argument("--curve", type=Path, help="b-shot curve (curves.csv or plain grid)")
    p.add_argument("--json", action="store_true", help="full-precision JSON instead of text")
    p.set_defaults(func=cmd_eval_matrix)

    p = sub.add_parser("gen-data", help="materialise a task sequence as CSV files")
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--manifest", type=Path, help="regenerate from a gen-data manifest")
    p.add_argument("--kind", choices=["synthetic", "permuted", "split"])
    p.add_argument("--source", choices=["synthetic", "idx"], default="synthetic")
    p.add_argument("--tasks", type=int, default=2)
    p.add_argument("--classes", type=int, default=10)
    p.add_argument("--dim", type=int, default=64)
    p.add_argument("--train-per-class", type=int, default=20)
    p.add_argument("--test-per-class", type=int, default=10)
    p.add_argument("--spread", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes-per-task", type=int, default=5)
    p.add_argument("--sequential", action="store_true", help="split classes in id order")
    p.add_argument("--train-images")
    p.add_argument("--train-labels")
    p.add_argument("--test-images")
    p.add_argument("--test-labels")
    p.add_argument("--max-train", type=int)
    p.add_argument("--max-test", type=int)
    p.set_defaults(func=cmd_gen_data)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3
    except (MDMTError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
