"""Command-line entry point.

    freightmode generate   --out DIR [--n N] [--noise X] [--seed S]
    freightmode run        [--config FILE] [--seed S] [--workers W] [--out DIR]
    freightmode fit        --family RF [--set key=value ...] [--ratio R] [--config FILE] [--out DIR]
    freightmode importance MODEL.json [MODEL.json ...] [--out DIR]
    freightmode report     [--out DIR]

Each of ``--config``, ``--seed``, ``--workers`` and ``--out`` may also come from
``FREIGHTMODE_CONFIG``, ``FREIGHTMODE_SEED``, ``FREIGHTMODE_WORKERS`` and
``FREIGHTMODE_OUT``; flags win over the environment, which wins over the file.

Exit status: 0 on success, 1 if any grid cell errored, 2 on configuration,
input or I/O errors.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import platform
import sys
from pathlib import Path

import numba
import numpy as np
import yaml

from . import __version__
from . import evaluation as ev
from .config import RunConfig, parse_config, serialize_config, with_overrides
from .dataset import (
    DEFAULT_REGISTRY,
    SyntheticSpec,
    encode_dataset,
    generate_synthetic,
    ingest_table,
    load_registry,
    synthetic_dataset,
    write_table,
)
from .errors import ConfigError, DataError, SchemaError, ShapeError
from .learners import Family, LearnerSpec, TREE_FAMILIES, fit, impurity_importance, load_model, save_model

log = logging.getLogger("freightmode")

ENV_PREFIX = "FREIGHTMODE_"

EXIT_OK = 0
EXIT_CELL_ERRORS = 1
EXIT_USAGE = 2


class CliError(Exception):
    """Reported to stderr and mapped to exit status 2."""


# ---------------------------------------------------------------- shared plumbing


def _env(name):
    value = os.environ.get(ENV_PREFIX + name)
    return value if value not in (None, "") else None


def _env_int(name):
    value = _env(name)
    if value is None:
        return None
    try:
        return int(value)
    except ValueError:
        raise CliError(f"{ENV_PREFIX}{name} must be an integer, got {value!r}") from None


def load_config(args) -> RunConfig:
    path = args.config or _env("CONFIG")
    config = parse_config(path) if path else RunConfig()
    seed = args.seed if args.seed is not None else _env_int("SEED")
    workers = getattr(args, "workers", None)
    workers = workers if workers is not None else _env_int("WORKERS")
    out = args.out or _env("OUT")
    return with_overrides(config, seed=seed, workers=workers, out=out)


def load_data(config: RunConfig):
    """Encoded dataset named by the config: a shipment CSV, or the synthetic generator."""
    registry = load_registry(config.registry_path) if config.registry_path else DEFAULT_REGISTRY
    if config.data_path:
        return encode_dataset(ingest_table(config.data_path, registry), registry=registry)
    s = config.synthetic
    spec = SyntheticSpec(s.n_records, s.target_mode_shares, s.seed, s.noise_level)
    return synthetic_dataset(spec, registry=registry)


class ArtifactWriter:
    """Single funnel for every file a command writes; remembers hashes for the manifest."""

    def __init__(self, root):
        self.root = Path(root)
        self.files = {}

    def write(self, name: str, text: str, track: bool = True) -> Path:
        path = self.root / name
        path.parent.mkdir(parents=True, exist_ok=True)
        data = text.encode("utf-8")
        path.write_bytes(data)
        if track:
            self.files[name] = {"sha256": hashlib.sha256(data).hexdigest(), "bytes": len(data)}
        return path


def _versions() -> dict:
    return {
        "freightmode": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "numba": numba.__version__,
        "pyyaml": yaml.__version__,
    }


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------- commands


def cmd_generate(args) -> int:
    config = parse_config(args.config or _env("CONFIG")) if (args.config or _env("CONFIG")) else RunConfig()
    s = config.synthetic
    seed = args.seed if args.seed is not None else (_env_int("SEED") if _env("SEED") else s.seed)
    spec = SyntheticSpec(
        args.n if args.n is not None else s.n_records,
        s.target_mode_shares,
        seed,
        args.noise if args.noise is not None else s.noise_level,
    )
    out = Path(args.out or _env("OUT") or ".")
    out.mkdir(parents=True, exist_ok=True)
    path = out / "shipments.csv"
    write_table(generate_synthetic(spec), path)
    print(path)
    return EXIT_OK


def _best_cells(rows):
    """Per family, the successful cell with the highest test accuracy (first in cell order on ties)."""
    best = {}
    for r in rows:
        if r["status"] != "ok":
            continue
        cur = best.get(r["family"])
        if cur is None or r["test_accuracy"] > cur["test_accuracy"]:
            best[r["family"]] = r
    return best


def cmd_run(args) -> int:
    config = load_config(args)
    data = load_data(config)
    grid = config.grid()
    n_cells = len(grid.cells())
    log.info("running %d cells on %d rows with %d worker(s)", n_cells, data.n_samples, config.workers)

    done = [0]

    def sink(row):
        done[0] += 1
        status = row["status"] if row["status"] != "ok" else f"cv={row['cv_mean']:.4f} test={row['test_accuracy']:.4f}"
        log.info("[%d/%d] %s ratio=%s k=%s size=%s %s", done[0], n_cells, row["family"], row["split_ratio"],
                 row["n_folds"], row["sample_size"], status)

    result = ev.run_experiment_grid(grid, data, workers=config.workers, sink=sink, keep_models=True)

    w = ArtifactWriter(config.out)
    w.write("config.yaml", serialize_config(config))
    w.write("results.csv", ev.results_csv(result.rows))
    w.write("results.jsonl", ev.results_jsonl(result.rows))
    w.write("cv_folds.csv", ev.cv_folds_csv(result.rows))
    w.write("size_accuracy.csv", ev.size_accuracy_csv(result.rows))
    w.write("per_mode.csv", ev.per_mode_csv(result.rows))
    for fam, row in _best_cells(result.rows).items():
        key = (fam, row["split_ratio"], row["n_folds"], None if row["sample_size"] == "all" else row["sample_size"])
        model = result.models[key]
        w.write(f"models/{fam}.json", json.dumps(model.to_dict(), sort_keys=True))
    # wall times vary run to run, so they stay out of the hashed artifacts
    w.write("timings.csv", ev.timings_csv(result.timings), track=False)
    manifest = {
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "data_hash": data.content_hash(),
        "data_source": config.data_path or "synthetic",
        "n_rows": data.n_samples,
        "n_cells": n_cells,
        "n_errors": result.n_errors,
        "versions": _versions(),
        "artifacts": dict(sorted(w.files.items())),
        "untracked": ["timings.csv"],
    }
    w.write("manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n", track=False)
    print(Path(config.out) / "results.csv")
    if result.n_errors:
        for r in result.rows:
            if r["status"] != "ok":
                print(f"error: {r['family']} ratio={r['split_ratio']} k={r['n_folds']} "
                      f"size={r['sample_size']}: {r['error']}", file=sys.stderr)
        return EXIT_CELL_ERRORS
    return EXIT_OK


def _parse_assignments(items):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise CliError(f"--set expects key=value, got {item!r}")
        key, text = item.split("=", 1)
        out[key.strip()] = yaml.safe_load(text)
    return out


def cmd_fit(args) -> int:
    config = load_config(args)
    fam = Family(args.family.upper())
    hp = {**config.hyperparameters[fam.value], **_parse_assignments(args.set)}
    spec = LearnerSpec(fam, hp, config.seed)
    data = load_data(config)
    summary = {"family": fam.value, "seed": config.seed, "hyperparameters": spec.hyperparameters}
    if args.ratio is not None:
        train, test = ev.holdout_split(data, args.ratio, ev.derive_seed(config.seed, "holdout", None, args.ratio))
        model = fit(spec, train)
        report = ev.compute_metrics(test.labels, model.predict(test.features), test.weights)
        summary.update(n_train=train.n_samples, n_test=test.n_samples, test=report.to_dict())
    else:
        model = fit(spec, data)
        summary.update(n_train=data.n_samples)
    w = ArtifactWriter(config.out)
    path = w.write(f"model_{fam.value}.json", json.dumps(model.to_dict(), sort_keys=True))
    summary["model"] = str(path)
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    return EXIT_OK


IMPORTANCE_HEADER = ["rank", "feature", "importance"]


def importance_table(model):
    """(rank, feature, importance) rows sorted by importance, ties by feature order."""
    imp = impurity_importance(model)
    order = np.lexsort((np.arange(imp.size), -imp))
    return [(r + 1, model.feature_names[j], float(imp[j])) for r, j in enumerate(order)]


def cmd_importance(args) -> int:
    out = args.out or _env("OUT")
    w = ArtifactWriter(out) if out else None
    merged = {}
    labels = []
    for p in args.models:
        model = load_model(p)
        if model.family not in TREE_FAMILIES:
            raise TypeError(f"{p}: {model.family.value} is not a tree-family model")
        table = importance_table(model)
        label = f"{model.family.value}:{Path(p).stem}"
        labels.append(label)
        for rank, name, value in table:
            merged.setdefault(name, {})[label] = (value, rank)
        text = _csv(IMPORTANCE_HEADER, [(r, n, repr(v)) for r, n, v in table])
        print(f"# {label}")
        print(text, end="")
        if w:
            w.write(f"importance_{Path(p).stem}.csv", text)
    header = ["feature"] + [f"{lab}_{c}" for lab in labels for c in ("importance", "rank")]
    rows = []
    for name in merged:
        row = [name]
        for lab in labels:
            v, r = merged[name][lab]
            row += [repr(v), r]
        rows.append(row)
    rows.sort(key=lambda r: r[2] if len(r) > 2 else 0)
    text = _csv(header, rows)
    if len(labels) > 1:
        print("# merged")
        print(text, end="")
    if w:
        w.write("importance_merged.csv", text)
    return EXIT_OK


SUMMARY_HEADER = ["family", "split_ratio", "n_cells", "cv_mean", "cv_fold_std", "test_accuracy"]


def summarize(rows):
    """Per (family, ratio): CV and test accuracy averaged over fold counts and sizes."""
    groups = {}
    for r in rows:
        if r["status"] == "ok":
            groups.setdefault((r["family"], r["split_ratio"]), []).append(r)
    fam_order = {f.value: i for i, f in enumerate(Family)}
    out = []
    for (fam, ratio) in sorted(groups, key=lambda k: (fam_order[k[0]], k[1])):
        g = groups[(fam, ratio)]
        folds = np.concatenate([r["cv_accuracies"] for r in g])
        out.append([fam, ratio, len(g), float(np.mean([r["cv_mean"] for r in g])),
                    float(folds.std(ddof=1)) if folds.size > 1 else 0.0,
                    float(np.mean([r["test_accuracy"] for r in g]))])
    return out


def cmd_report(args) -> int:
    out = Path(args.out or _env("OUT") or "results")
    src = out / "results.jsonl"
    try:
        rows = [json.loads(line) for line in src.read_text(encoding="utf-8").splitlines() if line.strip()]
    except OSError as exc:
        raise CliError(f"cannot read {src}: {exc.strerror or exc}") from None
    table = summarize(rows)
    ArtifactWriter(out).write("summary.csv", _csv(SUMMARY_HEADER, [[*r[:3], repr(r[3]), repr(r[4]), repr(r[5])]
                                                                   for r in table]), track=False)
    print(f"{'family':<7}{'ratio':>7}{'cells':>7}{'cv_mean':>10}{'fold_sd':>10}{'test':>10}")
    for fam, ratio, n, cvm, sd, test in table:
        print(f"{fam:<7}{ratio:>7.2f}{n:>7d}{cvm:>10.4f}{sd:>10.4f}{test:>10.4f}")
    best = _best_cells(rows)
    if best:
        print()
        print("best test accuracy per family:")
        for fam in sorted(best, key=lambda f: -best[f]["test_accuracy"]):
            r = best[fam]
            print(f"  {fam:<6} {r['test_accuracy']:.4f}  (ratio {r['split_ratio']}, {r['n_folds']}-fold)")
    errors = [r for r in rows if r["status"] != "ok"]
    if errors:
        print(f"\n{len(errors)} errored cell(s)")
    return EXIT_OK


# ---------------------------------------------------------------- argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="freightmode", description="Freight mode choice classifier benchmark.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, workers=False):
        p.add_argument("--config", help="YAML run configuration")
        p.add_argument("--seed", type=int, help="master seed")
        p.add_argument("--out", help="output directory")
        if workers:
            p.add_argument("--workers", type=int, help="parallel grid workers")

    p = sub.add_parser("generate", help="write a synthetic shipment table to OUT/shipments.csv")
    common(p)
    p.add_argument("--n", type=int, help="number of records")
    p.add_argument("--noise", type=float, help="noise level in [0, 1]")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", help="run the experiment grid")
    common(p, workers=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("fit", help="fit one classifier and save it")
    common(p)
    p.add_argument("--family", required=True, choices=[f.value for f in Family], type=str.upper)
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="hyperparameter override (repeatable)")
    p.add_argument("--ratio", type=float, help="hold out this fraction and report test metrics")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("importance", help="impurity importance tables for tree-family models")
    p.add_argument("models", nargs="+", help="serialized model files")
    p.add_argument("--out", help="also write CSV tables here")
    p.set_defaults(func=cmd_importance)

    p = sub.add_parser("report", help="summarize a finished run directory")
    p.add_argument("--out", help="run directory (default: results)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(format="%(levelname)s %(message)s", level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (CliError, ConfigError, SchemaError, DataError, ShapeError, TypeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
