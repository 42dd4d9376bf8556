"""Holdout splits, k-fold cross validation, weighted metrics and the experiment grid."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field

import numpy as np

from .dataset.encoding import EncodedDataset
from .dataset.schema import CLASS_NAMES, N_CLASSES
from .errors import ShapeError, ValidationError
from .learners.core import Family, LearnerSpec, fit


# ---------------------------------------------------------------- splitting


@dataclass(frozen=True)
class SplitRatio:
    """Fraction of rows assigned to the test set."""

    ratio: float

    def __post_init__(self):
        r = float(self.ratio)
        if not (0.0 < r < 1.0) or math.isnan(r):
            raise ValidationError(f"split ratio must lie strictly between 0 and 1, got {self.ratio!r}")
        object.__setattr__(self, "ratio", r)


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _stratified_test_rows(labels, n_test, rng):
    """Per-class test quotas by largest remainder, then a seeded draw within each class."""
    classes, counts = np.unique(labels, return_counts=True)
    exact = counts * (n_test / labels.size)
    quota = np.floor(exact).astype(int)
    short = n_test - quota.sum()
    # largest fractional part first, lower class on ties
    for i in np.lexsort((classes, -(exact - quota)))[:short]:
        quota[i] += 1
    picks = []
    for c, q in zip(classes, quota):
        rows = np.flatnonzero(labels == c)
        picks.append(rows[rng.permutation(rows.size)[:q]])
    return np.concatenate(picks)


def holdout_split(data: EncodedDataset, ratio, seed: int, stratify: bool = False):
    """Seeded random train/test split with ``round(ratio * N)`` test rows (halves round up).

    Returns ``(train, test)``; both keep their rows in original order.
    """
    ratio = ratio if isinstance(ratio, SplitRatio) else SplitRatio(ratio)
    n = data.n_samples
    n_test = _round_half_up(ratio.ratio * n)
    if n < 2 or n_test < 1 or n_test > n - 1:
        raise ValidationError(f"ratio {ratio.ratio} on {n} rows leaves an empty train or test set")
    rng = np.random.default_rng(seed)
    if stratify:
        test_rows = _stratified_test_rows(data.labels, n_test, rng)
    else:
        test_rows = rng.permutation(n)[:n_test]
    is_test = np.zeros(n, dtype=bool)
    is_test[test_rows] = True
    return data.subset(np.flatnonzero(~is_test)), data.subset(np.flatnonzero(is_test))


@dataclass(frozen=True)
class FoldAssignment:
    """``fold_of[i]`` is the fold of row ``i``; fold sizes differ by at most one."""

    fold_of: np.ndarray
    k: int

    def test_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == fold)

    def train_rows(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != fold)

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.fold_of, minlength=self.k)


def kfold_partition(n: int, k: int, seed: int) -> FoldAssignment:
    """Seeded permutation cut into ``k`` consecutive folds; the first ``n % k`` folds get one extra row."""
    if isinstance(k, bool) or int(k) != k or k < 2:
        raise ValidationError(f"fold count must be an integer >= 2, got {k!r}")
    if k > n:
        raise ValidationError(f"cannot cut {n} rows into {k} folds")
    k = int(k)
    perm = np.random.default_rng(seed).permutation(n)
    base, extra = divmod(n, k)
    fold_of = np.empty(n, dtype=np.int64)
    start = 0
    for f in range(k):
        size = base + (1 if f < extra else 0)
        fold_of[perm[start:start + size]] = f
        start += size
    fold_of.setflags(write=False)
    return FoldAssignment(fold_of, k)


# ---------------------------------------------------------------- metrics


def weighted_accuracy(y_true, y_pred, weights=None) -> float:
    y_true = np.asarray(y_true)
    w = np.ones(y_true.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
    return float(np.dot(w, y_true == np.asarray(y_pred)) / w.sum())


@dataclass(frozen=True, eq=False)
class MetricsReport:
    """Weighted confusion matrix and the metrics derived from it.

    ``confusion[i, j]`` is the weight of true class ``i`` predicted as ``j``.
    Recall and F1 of a class without support are NaN (undefined). Precision of
    a class that is never predicted is 0 and flagged in ``precision_undefined``.
    """

    confusion: np.ndarray
    accuracy: float
    precision: np.ndarray
    recall: np.ndarray
    f1: np.ndarray
    support: np.ndarray
    precision_undefined: np.ndarray
    class_names: tuple = CLASS_NAMES

    def to_dict(self) -> dict:
        def clean(a):
            return [None if math.isnan(v) else float(v) for v in np.asarray(a, dtype=float)]

        return {
            "accuracy": float(self.accuracy),
            "precision": clean(self.precision),
            "recall": clean(self.recall),
            "f1": clean(self.f1),
            "support": clean(self.support),
            "precision_undefined": [bool(v) for v in self.precision_undefined],
            "confusion": clean(self.confusion.ravel()),
            "class_names": list(self.class_names),
        }


def compute_metrics(y_true, y_pred, weights=None, n_classes: int = N_CLASSES, class_names=None) -> MetricsReport:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.ndim != 1 or y_true.shape != y_pred.shape:
        raise ShapeError(f"label vectors differ in shape: {y_true.shape} vs {y_pred.shape}")
    if y_true.size == 0:
        raise ValidationError("metrics need at least one row")
    w = np.ones(y_true.size) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != y_true.shape:
        raise ShapeError(f"{w.shape[0] if w.ndim else 0} weights for {y_true.size} rows")
    if not (np.all(np.isfinite(w)) and np.all(w > 0)):
        raise ValidationError("weights must be finite and positive")
    for y in (y_true, y_pred):
        if y.min() < 0 or y.max() >= n_classes:
            raise ValidationError(f"labels must lie in 0..{n_classes - 1}")
    M = np.zeros((n_classes, n_classes))
    np.add.at(M, (y_true, y_pred), w)
    diag = np.diag(M)
    support = M.sum(axis=1)
    predicted = M.sum(axis=0)
    no_pred = predicted == 0
    precision = np.divide(diag, predicted, out=np.zeros(n_classes), where=~no_pred)
    with np.errstate(invalid="ignore", divide="ignore"):
        recall = np.where(support > 0, diag / np.where(support > 0, support, 1.0), np.nan)
        denom = precision + recall
        f1 = np.where(denom > 0, 2 * precision * recall / np.where(denom > 0, denom, 1.0), 0.0)
    f1 = np.where(support > 0, f1, np.nan)
    names = tuple(class_names) if class_names is not None else (
        CLASS_NAMES if n_classes == N_CLASSES else tuple(str(c) for c in range(n_classes)))
    return MetricsReport(M, float(diag.sum() / M.sum()), precision, recall, f1, support, no_pred, names)


# ---------------------------------------------------------------- cross validation


class FoldError(RuntimeError):
    """A fit or prediction failed inside one cross-validation fold."""

    def __init__(self, fold: int, cause: BaseException):
        super().__init__(f"fold {fold}: {type(cause).__name__}: {cause}")
        self.fold = fold


@dataclass(frozen=True)
class CrossValidationResult:
    accuracies: tuple
    mean: float
    std: float
    folds: FoldAssignment


def _prepare_fit(data: EncodedDataset, fit_weights: bool) -> EncodedDataset:
    return data if fit_weights else data.with_weights(np.ones(data.n_samples))


def cross_validate(spec: LearnerSpec, train: EncodedDataset, k: int, seed: int, *, fit_weights: bool = True,
                   weighted_eval: bool = True) -> CrossValidationResult:
    """k-fold CV accuracy of ``spec`` on ``train``; std uses the n - 1 denominator.

    ``fit_weights=False`` fits on unit weights (weights then only enter the
    evaluation); ``weighted_eval=False`` scores plain row accuracy.
    """
    folds = kfold_partition(train.n_samples, k, seed)
    accs = []
    for f in range(folds.k):
        fit_part = train.subset(folds.train_rows(f))
        eval_part = train.subset(folds.test_rows(f))
        if np.intersect1d(fit_part.row_ids, eval_part.row_ids).size:
            raise AssertionError(f"fold {f}: evaluated rows leaked into the fitted rows")
        try:
            model = fit(spec, _prepare_fit(fit_part, fit_weights))
            pred = model.predict(eval_part.features)
        except Exception as exc:
            raise FoldError(f, exc) from exc
        accs.append(weighted_accuracy(eval_part.labels, pred, eval_part.weights if weighted_eval else None))
    accs = np.asarray(accs)
    return CrossValidationResult(tuple(float(a) for a in accs), float(accs.mean()), float(accs.std(ddof=1)), folds)


# ---------------------------------------------------------------- experiment grid


def derive_seed(master: int, *key) -> int:
    """Stable 63-bit seed for ``key`` under ``master``; independent of run order and worker count."""
    text = json.dumps([int(master), *[_keypart(k) for k in key]])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little") >> 1


def _keypart(k):
    if isinstance(k, Family):
        return k.value
    if isinstance(k, float):
        return repr(k)
    return k


@dataclass(frozen=True)
class GridConfig:
    """Families x split ratios x fold counts x sample sizes (``None`` = every row)."""

    families: tuple = tuple(f.value for f in Family)
    ratios: tuple = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6)
    folds: tuple = (10, 20, 30)
    sample_sizes: tuple = (None,)
    hyperparameters: dict = field(default_factory=dict)
    seed: int = 0
    fit_weights: bool = True
    weighted_eval: bool = True
    stratify: bool = False

    def __post_init__(self):
        fams = []
        for f in self.families:
            try:
                fams.append(Family(str(getattr(f, "value", f)).upper()))
            except ValueError:
                raise ValidationError(f"unknown classifier family {f!r}") from None
        object.__setattr__(self, "families", tuple(fams))
        object.__setattr__(self, "ratios", tuple(SplitRatio(r).ratio for r in self.ratios))
        for k in self.folds:
            if isinstance(k, bool) or int(k) != k or k < 2:
                raise ValidationError(f"fold counts must be integers >= 2, got {k!r}")
        object.__setattr__(self, "folds", tuple(int(k) for k in self.folds))
        for s in self.sample_sizes:
            if s is not None and (isinstance(s, bool) or int(s) != s or s < 2):
                raise ValidationError(f"sample sizes must be integers >= 2 or null, got {s!r}")
        object.__setattr__(self, "sample_sizes", tuple(None if s is None else int(s) for s in self.sample_sizes))
        hp = {Family(str(getattr(k, "value", k)).upper()): dict(v) for k, v in (self.hyperparameters or {}).items()}
        for fam, values in hp.items():
            LearnerSpec(fam, values)  # validates early
        object.__setattr__(self, "hyperparameters", hp)

    def cells(self):
        """Grid cells in reporting order: sample size, ratio, fold count, family."""
        return [(fam, r, k, s) for s in self.sample_sizes for r in self.ratios for k in self.folds
                for fam in self.families]


CLASS_COLUMNS = [f"{m}_{c}" for m in ("precision", "recall", "f1", "support") for c in CLASS_NAMES]
RESULT_COLUMNS = [
    "family", "split_ratio", "n_folds", "sample_size", "n_rows", "n_train", "n_test", "seed", "status",
    "cv_mean", "cv_std", "test_accuracy", *CLASS_COLUMNS, "error",
]


@dataclass
class ExperimentGridResult:
    """Rows in cell order; wall times are kept apart so the rows are reproducible byte for byte."""

    rows: list
    timings: list
    config: GridConfig
    models: dict = field(default_factory=dict)

    @property
    def n_errors(self) -> int:
        return sum(r["status"] != "ok" for r in self.rows)


def _cell_key(cell):
    fam, ratio, k, size = cell
    return (fam.value, ratio, k, size)


def _subsample(data, size, seed):
    if size is None:
        return data
    if size > data.n_samples:
        raise ValidationError(f"sample size {size} exceeds the {data.n_samples} available rows")
    rows = np.random.default_rng(seed).choice(data.n_samples, size=size, replace=False)
    return data.subset(np.sort(rows))


def run_cell(config: GridConfig, data: EncodedDataset, cell, keep_model: bool = False):
    """Evaluate one grid cell; failures become an ``error`` row instead of raising."""
    fam, ratio, k, size = cell
    master = config.seed
    learner_seed = derive_seed(master, "learner", fam, size, ratio, k)
    row = {
        "family": fam.value, "split_ratio": ratio, "n_folds": k,
        "sample_size": "all" if size is None else size, "seed": learner_seed,
        "n_rows": None, "n_train": None, "n_test": None, "status": "ok", "error": "",
        "cv_mean": None, "cv_std": None, "cv_accuracies": [], "test_accuracy": None, "metrics": None,
    }
    model = None
    t0 = time.perf_counter()
    try:
        sample = _subsample(data, size, derive_seed(master, "subsample", size))
        row["n_rows"] = sample.n_samples
        train, test = holdout_split(sample, ratio, derive_seed(master, "holdout", size, ratio), config.stratify)
        row["n_train"], row["n_test"] = train.n_samples, test.n_samples
        spec = LearnerSpec(fam, config.hyperparameters.get(fam, {}), learner_seed)
        cv = cross_validate(spec, train, k, derive_seed(master, "folds", size, ratio, k),
                            fit_weights=config.fit_weights, weighted_eval=config.weighted_eval)
        row["cv_accuracies"] = list(cv.accuracies)
        row["cv_mean"], row["cv_std"] = cv.mean, cv.std
        model = fit(spec, _prepare_fit(train, config.fit_weights))
        report = compute_metrics(test.labels, model.predict(test.features),
                                 test.weights if config.weighted_eval else None)
        row["test_accuracy"] = report.accuracy
        row["metrics"] = report.to_dict()
    except Exception as exc:  # recorded per cell; the grid carries on
        row["status"] = "error"
        row["error"] = f"{type(exc).__name__}: {exc}"
        model = None
    elapsed = time.perf_counter() - t0
    return row, elapsed, (model if keep_model else None)


_WORKER_STATE = {}


def _worker_init(config, data, keep_models):
    _WORKER_STATE.update(config=config, data=data, keep=keep_models)


def _worker_run(index, cell):
    s = _WORKER_STATE
    return index, run_cell(s["config"], s["data"], cell, s["keep"])


def run_experiment_grid(config: GridConfig, data: EncodedDataset, *, workers: int = 1, sink=None,
                        keep_models: bool = False) -> ExperimentGridResult:
    """Run every cell of ``config`` on ``data``.

    Each cell: seeded subsample, holdout split, k-fold CV on the training part,
    refit on the whole training part, metrics on the test part. Subsample,
    holdout and fold seeds depend only on (master seed, size, ratio, folds), so
    all families are compared on identical rows. ``sink(row)`` is called as
    cells finish (completion order); the returned rows are in cell order.
    """
    cells = config.cells()
    out = [None] * len(cells)
    if workers <= 1 or len(cells) <= 1:
        for i, cell in enumerate(cells):
            out[i] = run_cell(config, data, cell, keep_models)
            if sink is not None:
                sink(out[i][0])
    else:
        with ProcessPoolExecutor(max_workers=workers, initializer=_worker_init,
                                 initargs=(config, data, keep_models)) as pool:
            futures = [pool.submit(_worker_run, i, cell) for i, cell in enumerate(cells)]
            for fut in as_completed(futures):
                i, res = fut.result()
                out[i] = res
                if sink is not None:
                    sink(res[0])
    rows = [r for r, _, _ in out]
    timings = [{"cell": list(_cell_key(c)), "seconds": t} for c, (_, t, _) in zip(cells, out)]
    models = {_cell_key(c): m for c, (_, _, m) in zip(cells, out) if m is not None}
    return ExperimentGridResult(rows, timings, config, models)


# ---------------------------------------------------------------- tables


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def flat_row(row: dict) -> dict:
    """Results-table view of a grid row: per-class metrics spread into named columns."""
    flat = {c: row.get(c) for c in RESULT_COLUMNS if c in row}
    m = row.get("metrics")
    for metric in ("precision", "recall", "f1", "support"):
        for i, name in enumerate(CLASS_NAMES):
            v = None if m is None else m[metric][i]
            flat[f"{metric}_{name}"] = float("nan") if (m is not None and v is None) else v
    return {c: flat.get(c) for c in RESULT_COLUMNS}


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in header])
    return buf.getvalue()


def results_csv(rows) -> str:
    return _csv_text(RESULT_COLUMNS, [flat_row(r) for r in rows])


def results_jsonl(rows) -> str:
    return "".join(json.dumps(r, sort_keys=True, allow_nan=False) + "\n" for r in rows)


CV_FOLD_COLUMNS = ["family", "split_ratio", "n_folds", "sample_size", "fold", "accuracy"]


def cv_folds_csv(rows) -> str:
    """One line per fold accuracy: the distributions behind per-ratio box plots."""
    out = []
    for r in rows:
        for i, a in enumerate(r.get("cv_accuracies") or []):
            out.append({**{c: r[c] for c in CV_FOLD_COLUMNS[:4]}, "fold": i, "accuracy": a})
    return _csv_text(CV_FOLD_COLUMNS, out)


SIZE_COLUMNS = ["family", "sample_size", "n_rows", "split_ratio", "n_folds", "cv_mean", "cv_std", "test_accuracy"]


def size_accuracy_csv(rows) -> str:
    """Accuracy against sample size (successful cells only)."""
    ok = [r for r in rows if r["status"] == "ok"]
    ok.sort(key=lambda r: (r["family"], r["n_rows"], r["split_ratio"], r["n_folds"]))
    return _csv_text(SIZE_COLUMNS, ok)


PER_MODE_COLUMNS = ["family", "split_ratio", "n_folds", "sample_size", "mode", "precision", "recall", "f1",
                    "support", "precision_undefined"]


def per_mode_csv(rows) -> str:
    """Test-set precision / recall / F1 per mode for every successful cell."""
    out = []
    for r in rows:
        m = r.get("metrics")
        if not m:
            continue
        for i, name in enumerate(m["class_names"]):
            out.append({
                **{c: r[c] for c in PER_MODE_COLUMNS[:4]}, "mode": name,
                "precision": m["precision"][i],
                "recall": float("nan") if m["recall"][i] is None else m["recall"][i],
                "f1": float("nan") if m["f1"][i] is None else m["f1"][i],
                "support": m["support"][i], "precision_undefined": int(m["precision_undefined"][i]),
            })
    return _csv_text(PER_MODE_COLUMNS, out)


def timings_csv(timings) -> str:
    out = [{"family": t["cell"][0], "split_ratio": t["cell"][1], "n_folds": t["cell"][2],
            "sample_size": "all" if t["cell"][3] is None else t["cell"][3], "seconds": t["seconds"]} for t in timings]
    return _csv_text(["family", "split_ratio", "n_folds", "sample_size", "seconds"], out)
