"""Command-line entry point: ``nidt <command> ...``.

Failures print one line ``nidt: error: <CODE>: <message>`` to stderr and exit
non-zero. Results go to stdout.
"""

from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import os
import shutil
import sys
import tempfile
from pathlib import Path
from typing import Iterator, Sequence

from . import dataset, evaluation, transfer
from .config import ConfigError, RunConfig
from .dataset import DatasetError, SplitSpec
from .features import ExtraTreesConfig, fit_importance
from .fileio import atomic_open
from .model import TrainingDivergedError
from .nn import NonFiniteError
from .pipeline import fit_source, tree_config

log = logging.getLogger("nidt")

CHECKPOINT = "model.nidt"

# (exception type, code, exit status); first match wins
_ERRORS = [
    (ConfigError, "CONFIG", 3),
    (transfer.BadMagicError, "BUNDLE_MAGIC", 4),
    (transfer.UnsupportedVersionError, "BUNDLE_VERSION", 4),
    (transfer.PayloadLengthError, "BUNDLE_LENGTH", 4),
    (transfer.HeaderSchemaError, "BUNDLE_HEADER", 4),
    (transfer.BundleError, "BUNDLE", 4),
    (dataset.HeaderMismatchError, "CSV_HEADER", 5),
    (dataset.CellParseError, "CSV_CELL", 5),
    (dataset.LabelError, "CSV_LABEL", 5),
    (DatasetError, "DATA", 5),
    ((TrainingDivergedError, NonFiniteError), "DIVERGED", 6),
    (FileNotFoundError, "NOT_FOUND", 7),
    (OSError, "IO", 7),
    ((ValueError, KeyError), "INVALID", 8),
]


@contextlib.contextmanager
def staged_dir(out: str | os.PathLike) -> Iterator[Path]:
    """Yield a scratch directory; its files move into ``out`` only if the block succeeds."""
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=f".{out.name}.", dir=out.parent))
    try:
        yield tmp
        out.mkdir(parents=True, exist_ok=True)
        for f in sorted(tmp.iterdir()):
            os.replace(f, out / f.name)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def _config(args) -> RunConfig:
    overrides = {}
    for item in args.set or ():
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = str(args.seed)
    if getattr(args, "threads", None) is not None:
        overrides["threads"] = str(args.threads)
    return RunConfig.load(args.config, overrides)


def _family_name(family) -> str:
    return family.value.lower().replace("_", "-")


def _schema(args) -> dataset.ColumnSchema:
    return dataset.load_schema(args.schema) if args.schema else dataset.UNSW_NB15


def cmd_prepare(args) -> None:
    cfg = _config(args)
    schema = _schema(args)
    records = dataset.load_csvs(args.input, schema)
    spec = SplitSpec((cfg.train_ratio, cfg.val_ratio, cfg.test_ratio), cfg.seed, cfg.stratify)
    parts = dataset.split(records, spec)
    counts = dict(zip(("train", "val", "test"), (len(p) for p in parts)))
    with staged_dir(args.out) as tmp:
        for name, part in zip(("train", "val", "test"), parts):
            dataset.write_csv(part, tmp / f"{name}.csv", schema)
        dataset.write_provenance(tmp / "provenance.txt", spec, {"total": len(records), **counts}, [str(p) for p in args.input])
        cfg.save(tmp / "config.txt")
    print(f"records {len(records)}")
    for name, n in counts.items():
        print(f"{name} {n}")


def cmd_importance(args) -> None:
    cfg = _config(args)
    schema = _schema(args)
    records = dataset.load_csv(args.train, schema)
    encoding = dataset.fit_encoding(records, schema=schema)
    X, y = dataset.to_matrix(records, encoding, schema)
    report = fit_importance(X, y, tree_config(cfg))
    report.to_csv(args.out)
    if report.degenerate:
        print("warning: no split was possible; all scores are 0", file=sys.stderr)
    for name, score in report.ranked()[:10]:
        print(f"{name} {score:.6f}")


def cmd_train(args) -> None:
    cfg = _config(args)
    schema = _schema(args)
    data = Path(args.data)
    train_records = dataset.load_csv(data / "train.csv", schema)
    val_records = dataset.load_csv(data / "val.csv", schema)
    art = fit_source(train_records, val_records, args.family, cfg, schema)
    meta = art.metadata(len(train_records), len(val_records), cfg.seed)
    with staged_dir(args.out) as tmp:
        transfer.export_bundle(art.model, art.selection, art.scaler, art.encoding, tmp / CHECKPOINT, schema, meta)
        art.report.to_csv(tmp / "train_report.csv")
        art.importance.to_csv(tmp / "importance.csv")
        art.selection.save(tmp / "selection.txt")
        art.scaler.save(tmp / "scaler.txt")
        art.encoding.save(tmp / "encoding.txt")
        cfg.save(tmp / "config.txt")
    print(f"family {_family_name(art.model.spec.family)}")
    print(f"epochs {len(art.report.epochs)}")
    print(f"best_epoch {art.report.best_epoch}")
    if art.report.best_val_acc is not None:
        print(f"val_accuracy {100 * art.report.best_val_acc:.2f}")


def cmd_export(args) -> None:
    src = Path(args.model)
    if src.is_dir():
        src = src / CHECKPOINT
    header, model = transfer.decode_bundle(src.read_bytes())
    engine = transfer.import_bundle(src)
    n, digest = transfer.export_bundle(
        model, engine.selection, engine.scaler, engine.encoding, args.out, engine.schema, header["metadata"]
    )
    print(f"bytes {n}")
    print(f"digest {digest}")


def _load_engine(args, cfg: RunConfig) -> transfer.InferenceEngine:
    engine = transfer.import_bundle(args.bundle, threads=cfg.effective_threads(), clip=cfg.clip)
    print(f"bundle_digest {transfer.file_digest(args.bundle)}", file=sys.stderr)
    return engine


def cmd_infer(args) -> None:
    cfg = _config(args)
    engine = _load_engine(args, cfg)
    records = engine.load_records(args.input)
    scores, labels = transfer.infer(engine, records, cfg.threshold)
    with atomic_open(args.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["row", "score", "label"])
        for i, (s, l) in enumerate(zip(scores.tolist(), labels.tolist())):
            w.writerow([i, repr(s), l])
    print(f"records {len(records)}")
    print(f"attacks {int(labels.sum())}")


def cmd_evaluate(args) -> None:
    cfg = _config(args)
    engine = _load_engine(args, cfg)
    records = engine.load_records(args.input)
    scores = engine.score(records)
    labels = [r.label for r in records]
    report, curve = evaluation.evaluate(labels, scores, cfg.threshold)
    with staged_dir(args.out) as tmp:
        (tmp / "report.txt").write_text(report.to_text(), encoding="utf-8")
        (tmp / "report.json").write_text(report.to_json(), encoding="utf-8")
        (tmp / "confusion.txt").write_text(report.confusion.grid(), encoding="utf-8")
        curve.to_csv(tmp / "roc.csv")
        cfg.save(tmp / "config.txt")
    sys.stdout.write(report.to_text())


def cmd_benchmark(args) -> None:
    cfg = _config(args)
    engine = _load_engine(args, cfg)
    records = engine.load_records(args.input)
    threads = cfg.effective_threads()
    result = evaluation.benchmark(engine, records, threads)
    model = args.model_name or _family_name(engine.model.spec.family)
    if args.log:
        evaluation.append_benchmark_log(args.log, result, model, args.domain)
    print(",".join(evaluation.BENCHMARK_LOG_HEADER))
    print(",".join(result.csv_row(model, args.domain)))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nidt", description="CNN-LSTM intrusion detection with frozen model transfer")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, schema=False):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
        if schema:
            sp.add_argument("--schema", help="column manifest (default: bundled UNSW-NB15 partition layout)")

    sp = sub.add_parser("prepare", help="load, split and write train/val/test CSVs")
    sp.add_argument("--input", nargs="+", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    common(sp, schema=True)
    sp.set_defaults(func=cmd_prepare)

    sp = sub.add_parser("importance", help="rank features with extra-trees importance")
    sp.add_argument("--train", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    common(sp, schema=True)
    sp.set_defaults(func=cmd_importance)

    sp = sub.add_parser("train", help="source-domain training; writes a checkpoint directory")
    sp.add_argument("--family", choices=["dnn", "cnn", "cnn-lstm"], default="cnn-lstm")
    sp.add_argument("--data", required=True, help="directory holding train.csv and val.csv")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    common(sp, schema=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("export", help="write the transfer bundle from a checkpoint")
    sp.add_argument("--model", required=True, help="checkpoint directory or file")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_export)

    for name, func, help_ in (
        ("infer", cmd_infer, "score records with a bundle"),
        ("evaluate", cmd_evaluate, "accuracy, confusion matrix and ROC with a bundle"),
        ("benchmark", cmd_benchmark, "time a full scoring pass"),
    ):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--bundle", required=True)
        sp.add_argument("--input", required=True)
        sp.add_argument("--threads", type=int)
        if name != "benchmark":
            sp.add_argument("--out", required=True)
        else:
            sp.add_argument("--log", help="append the result row to this CSV")
            sp.add_argument("--model-name")
            sp.add_argument("--domain", default="target")
        common(sp)
        sp.set_defaults(func=func)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        args.func(args)
    except Exception as exc:  # noqa: BLE001 - every failure maps to one line
        for types, code, status in _ERRORS:
            if isinstance(exc, types):
                msg = str(exc).replace("\n", " ")
                if isinstance(exc, KeyError):
                    msg = str(exc.args[0]) if exc.args else msg
                print(f"nidt: error: {code}: {msg}", file=sys.stderr)
                return status
        raise
    return 0


if __name__ == "__main__":
    sys.exit(main())
