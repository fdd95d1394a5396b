"""Command-line entry point: ``mixaug {synth,train,eval,augment-preview,report}``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .augment import mix_batches
from .dataio import (
    IMBALANCE_PROFILES,
    generate_synthetic,
    load_dataset,
    quantize,
    read_manifest,
    to_batch,
    write_pnm,
)
from .errors import ArgumentError, DomainError, MixaugError
from .metrics import evaluate, format_report, format_table, report_csv
from .network import load_checkpoint, predict, save_checkpoint
from .numerics import Rng, sample_beta
from .train import TrainConfig, run_training

log = logging.getLogger("mixaug")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2

TRAIN_DEFAULTS = {
    "mode": "vanilla",
    "alpha": None,
    "dropout": 0.0,
    "flip_prob": 0.0,
    "batch_size": 32,
    "lr": 1e-3,
    "epochs": 100,
    "patience": 15,
    "monitor": "accuracy",
    "seed": 0,
    "seeds": None,
    "data": None,
    "out": "runs",
}
METRIC_KEYS = ("accuracy", "macro_f1", "average_accuracy")


class UsageError(Exception):
    pass


@dataclass
class ExperimentSpec:
    config: TrainConfig
    data: Path
    out: Path
    seeds: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.seeds:
            raise UsageError("seed list must not be empty")

    @property
    def cell(self) -> str:
        c = self.config
        alpha = "none" if c.alpha is None else f"{c.alpha:g}"
        return f"{c.mode}_a{alpha}_d{c.dropout_rate:g}_f{c.flip_prob:g}"


def _patience(text):
    if text is None:
        return None
    if str(text).lower() in ("inf", "none", "0"):
        return "inf"
    return int(text)


def _seed_list(text):
    return [int(s) for s in str(text).replace(" ", "").split(",") if s]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mixaug", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="render the synthetic expression-glyph dataset")
    s.add_argument("--classes", type=int, default=7)
    s.add_argument("--per-class", type=int, default=200, help="train samples per class (eval gets a quarter)")
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.add_argument("--imbalance", default=None,
                   help=f"profile name ({', '.join(IMBALANCE_PROFILES)}) or comma-separated proportions")
    s.add_argument("--landmarks", action="store_true", help="write five-point landmark columns")

    # train flags default to None so a --config file can fill the gaps
    t = sub.add_parser("train", help="train one (mode, alpha, dropout, flip) cell over one or more seeds")
    t.add_argument("--config", help="JSON file with any of the flag names below (flags win)")
    t.add_argument("--mode", choices=("vanilla", "mixup", "mixaugment"))
    t.add_argument("--alpha", type=float)
    t.add_argument("--dropout", type=float)
    t.add_argument("--flip-prob", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--patience", type=_patience, help="epochs without improvement before stopping; 'inf' disables")
    t.add_argument("--monitor", choices=METRIC_KEYS)
    t.add_argument("--seed", type=int)
    t.add_argument("--seeds", type=_seed_list, help="comma-separated seeds (overrides --seed)")
    t.add_argument("--data", help="directory holding train.csv and eval.csv")
    t.add_argument("--out")

    e = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True, help="manifest CSV")
    e.add_argument("--out", help="write report.csv / report.txt here")

    a = sub.add_parser("augment-preview", help="write mixed images with their lambda and soft label")
    a.add_argument("--data", required=True, help="manifest CSV")
    a.add_argument("--alpha", type=float, default=0.2)
    a.add_argument("--lam", type=float, default=None, help="force lambda instead of drawing it")
    a.add_argument("--count", type=int, default=8)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", required=True)

    r = sub.add_parser("report", help="re-render CSV outputs of a run directory as aligned tables")
    r.add_argument("--out", required=True)
    return p


# ---- synth ----------------------------------------------------------------

def cmd_synth(args) -> int:
    if args.classes < 2:
        raise UsageError("--classes must be at least 2")
    if args.per_class < 2:
        raise UsageError("--per-class must be at least 2")
    if args.size < 4:
        raise UsageError("--size must be at least 4")
    proportions = args.imbalance
    if proportions and proportions not in IMBALANCE_PROFILES:
        try:
            proportions = [float(v) for v in proportions.split(",")]
        except ValueError:
            raise UsageError(f"--imbalance: unknown profile {args.imbalance!r}") from None
        if len(proportions) != args.classes:
            raise UsageError(f"--imbalance gives {len(proportions)} proportions for {args.classes} classes")
    train, evals = generate_synthetic(args.classes, args.per_class, args.size, args.seed, args.out,
                                      proportions=proportions, with_landmarks=args.landmarks)
    print(f"wrote {len(train.records)} train / {len(evals.records)} eval images to {args.out}")
    print(format_table([["class", "train", "eval"]] + [
        [n, str(a), str(b)] for n, a, b in zip(train.class_names, train.class_counts(), evals.class_counts())]))
    return EXIT_OK


# ---- train ----------------------------------------------------------------

def resolve_train_args(args) -> ExperimentSpec:
    merged = dict(TRAIN_DEFAULTS)
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            raise UsageError(f"--config: {exc}") from exc
        unknown = set(cfg) - set(TRAIN_DEFAULTS)
        if unknown:
            raise UsageError(f"--config: unknown keys {sorted(unknown)}")
        merged.update(cfg)
    for key in TRAIN_DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            merged[key] = value
    if merged["data"] is None:
        raise UsageError("train needs --data")
    patience = merged["patience"]
    if isinstance(patience, str):
        patience = _patience(patience)
    seeds = merged["seeds"]
    if isinstance(seeds, str):
        seeds = _seed_list(seeds)
    if args.seed is not None and args.seeds is None:
        seeds = [args.seed]
    if not seeds:
        seeds = [int(merged["seed"])]
    try:
        config = TrainConfig(
            mode=merged["mode"],
            alpha=None if merged["mode"] == "vanilla" else merged["alpha"],
            dropout_rate=float(merged["dropout"]),
            flip_prob=float(merged["flip_prob"]),
            batch_size=int(merged["batch_size"]),
            learning_rate=float(merged["lr"]),
            max_epochs=int(merged["epochs"]),
            patience=None if patience == "inf" else int(patience),
            monitor_metric=merged["monitor"],
            seed=seeds[0],
        )
    except (ArgumentError, DomainError, TypeError) as exc:
        raise UsageError(str(exc)) from exc
    return ExperimentSpec(config, Path(merged["data"]), Path(merged["out"]), seeds)


def _load_split(data_dir: Path, split: str):
    return to_batch(load_dataset(data_dir / f"{split}.csv"))


def _aggregate(rows: list[dict]) -> dict:
    out = {}
    for key in METRIC_KEYS:
        v = np.array([r[key] for r in rows])
        q25, q50, q75 = np.percentile(v, [25, 50, 75])
        out[f"{key}_median"] = float(q50)
        out[f"{key}_iqr"] = float(q75 - q25)
    out["best_epoch_median"] = float(np.median([r["best_epoch"] for r in rows]))
    return out


def _write_csv(path: Path, header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue())


def _update_aggregate(out: Path, cell: str, spec: ExperimentSpec, agg: dict):
    path = out / "aggregate.csv"
    header = ["cell", "mode", "alpha", "dropout", "flip_prob", "seeds"] + list(agg)
    rows = {}
    if path.exists():
        with path.open() as fh:
            for row in csv.DictReader(fh):
                rows[row["cell"]] = [row.get(h, "") for h in header]
    c = spec.config
    rows[cell] = [cell, c.mode, "" if c.alpha is None else repr(c.alpha), repr(c.dropout_rate), repr(c.flip_prob),
                  " ".join(map(str, spec.seeds))] + [repr(v) for v in agg.values()]
    _write_csv(path, header, [rows[k] for k in sorted(rows)])


def cmd_train(args) -> int:
    spec = resolve_train_args(args)
    if spec.config.underfit_risk:
        log.warning("alpha=%g is large; mixing that strongly tends to underfit", spec.config.alpha)
    try:
        train_set = _load_split(spec.data, "train")
        eval_set = _load_split(spec.data, "eval")
        names = read_manifest(spec.data / "eval.csv").class_names
    except MixaugError as exc:
        print(f"error: dataset load failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    cell_dir = spec.out / spec.cell
    per_seed = []
    for seed in spec.seeds:
        config = TrainConfig(**{**asdict(spec.config), "seed": seed})
        run_dir = cell_dir / f"seed{seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        params, record = run_training(config, train_set, eval_set)
        (run_dir / "record.csv").write_text(record.to_csv())
        save_checkpoint(run_dir / "checkpoint.bin", params)
        probs = predict(params, eval_set.images)
        report = evaluate(probs, eval_set.labels)
        (run_dir / "report.csv").write_text(report_csv(report, names))
        (run_dir / "report.txt").write_text(format_report(report, names))
        summary = record.summary()
        summary["confidence"] = asdict(report.confidence)
        (run_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
        per_seed.append({**report.scalars(), "seed": seed, "best_epoch": record.best_epoch,
                         "stop_epoch": record.stop_epoch})
        print(f"[{spec.cell}] seed {seed}: accuracy {100 * report.accuracy:.2f}  "
              f"F1 {100 * report.macro_f1:.2f}  avg acc {100 * report.average_accuracy:.2f}  "
              f"(best epoch {record.best_epoch}, stopped {record.stop_epoch})")
    _write_csv(cell_dir / "seeds.csv", ["seed", *METRIC_KEYS, "best_epoch", "stop_epoch"],
               [[r["seed"], *(repr(r[k]) for k in METRIC_KEYS), r["best_epoch"], r["stop_epoch"]] for r in per_seed])
    agg = _aggregate(per_seed)
    _update_aggregate(spec.out, spec.cell, spec, agg)
    if spec.config.underfit_risk:
        (cell_dir / "WARNING.txt").write_text(f"alpha={spec.config.alpha:g}: underfitting risk\n")
        print(f"warning: alpha={spec.config.alpha:g} is in the underfitting range")
    print(render_aggregate(spec.out))
    return EXIT_OK


# ---- eval -----------------------------------------------------------------

def cmd_eval(args) -> int:
    try:
        params = load_checkpoint(args.checkpoint)
        manifest = read_manifest(args.data)
        data = to_batch(load_dataset(manifest)) if manifest.records else None
    except (MixaugError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if data is None:
        print("error: manifest has no records", file=sys.stderr)
        return EXIT_RUNTIME
    arch = (*data.images.shape[1:], data.labels.shape[1])
    if arch != params.arch:
        print(f"error: checkpoint expects (H, W, C, K) = {params.arch}, data is {arch}", file=sys.stderr)
        return EXIT_RUNTIME
    report = evaluate(predict(params, data.images), data.labels)
    text = format_report(report, manifest.class_names)
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.csv").write_text(report_csv(report, manifest.class_names))
        (out / "report.txt").write_text(text)
    return EXIT_OK


# ---- augment-preview ------------------------------------------------------

def cmd_augment_preview(args) -> int:
    if args.count < 1:
        raise UsageError("--count must be positive")
    if args.lam is not None and not 0.0 <= args.lam <= 1.0:
        raise UsageError("--lam must lie in [0, 1]")
    if not args.alpha > 0:
        raise UsageError("--alpha must be positive")
    try:
        manifest = read_manifest(args.data)
        items = load_dataset(manifest)
    except MixaugError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    if len(items) < 2:
        print("error: need at least two images to mix", file=sys.stderr)
        return EXIT_RUNTIME
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = Rng(args.seed)
    batch = to_batch(items)
    for n in range(args.count):
        i, j = rng.permutation(len(items))[:2]
        lam = args.lam if args.lam is not None else sample_beta(args.alpha, rng)
        pair = batch.take([i, j])
        mb = mix_batches(pair, [1, 0], lam)
        write_pnm(out / f"mix_{n:03d}.pnm", quantize(mb.virtual.images[0]))
        soft = mb.virtual.labels[0]
        lines = [f"lambda={lam!r}",
                 f"source_i={manifest.records[i].path}",
                 f"source_j={manifest.records[j].path}"]
        lines += [f"label.{name}={float(w)!r}" for name, w in zip(manifest.class_names, soft) if w > 0]
        (out / f"mix_{n:03d}.txt").write_text("\n".join(lines) + "\n")
    print(f"wrote {args.count} mixed images to {out}")
    return EXIT_OK


# ---- report ---------------------------------------------------------------

def render_aggregate(out: Path) -> str:
    path = Path(out) / "aggregate.csv"
    if not path.exists():
        return ""
    with path.open() as fh:
        rows = list(csv.DictReader(fh))
    table = [["mode", "alpha", "dropout", "flip", "Accuracy", "F1-score", "Aver. Acc.", "best ep.", "seeds"]]
    for r in rows:
        def cell(key):
            return f"{100 * float(r[key + '_median']):.2f} ±{100 * float(r[key + '_iqr']):.2f}"
        table.append([r["mode"], r["alpha"] or "-", r["dropout"], r["flip_prob"], cell("accuracy"),
                      cell("macro_f1"), cell("average_accuracy"), f"{float(r['best_epoch_median']):g}", r["seeds"]])
    return "median ±IQR over seeds\n" + format_table(table)


def cmd_report(args) -> int:
    out = Path(args.out)
    if not out.is_dir():
        print(f"error: {out} is not a directory", file=sys.stderr)
        return EXIT_RUNTIME
    text = render_aggregate(out)
    if not text:
        print(f"error: no aggregate.csv under {out}", file=sys.stderr)
        return EXIT_RUNTIME
    print(text)
    for report in sorted(out.glob("*/seed*/report.csv")):
        rows = [r for r in csv.reader(report.read_text().splitlines()) if r]
        split = next(i for i, r in enumerate(rows) if r[0] == "class")
        print(f"\n{report.parent.relative_to(out)}")
        print(format_table(rows[:split]))
        print(format_table(rows[split:]))
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "augment-preview": cmd_augment_preview,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"mixaug {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MixaugError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
