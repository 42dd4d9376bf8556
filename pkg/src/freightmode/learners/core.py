"""Uniform classifier contract: hyperparameter specs, fit dispatch, prediction and serialization."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dataset.encoding import EncodedDataset
from ..dataset.schema import CLASS_NAMES, N_CLASSES
from ..errors import DataError, ShapeError

MODEL_FORMAT = "freightmode.model"
MODEL_FORMAT_VERSION = 1


class Family(str, enum.Enum):
    MNL = "MNL"
    NB = "NB"
    SVM = "SVM"
    ANN = "ANN"
    KNN = "KNN"
    CART = "CART"
    RF = "RF"
    BOOST = "BOOST"
    BAG = "BAG"


TREE_FAMILIES = frozenset({Family.CART, Family.RF, Family.BOOST, Family.BAG})

DEFAULT_HYPERPARAMETERS = {
    Family.MNL: {"max_iter": 1000, "tol": 1e-6},
    Family.NB: {"var_smoothing": 1e-9},
    Family.SVM: {"C": 1.0, "max_iter": 1000},
    Family.ANN: {
        "hidden_units": 100,
        "learning_rate": 1e-3,
        "epochs": 200,
        "batch_size": 200,
        "tol": 1e-4,
        "n_iter_no_change": 10,
    },
    Family.KNN: {"k": 5},
    Family.CART: {"max_depth": None, "min_samples_split": 2},
    Family.RF: {"n_trees": 10, "mtry": 2, "max_depth": None, "min_samples_split": 2, "bootstrap": "weighted"},
    Family.BOOST: {"n_stages": 100, "learning_rate": 0.1, "max_depth": 3, "min_samples_split": 2},
    Family.BAG: {"n_estimators": 10, "max_depth": None, "min_samples_split": 2, "bootstrap": "weighted"},
}

BOOTSTRAP_MODES = ("weighted", "uniform", "none")


def _positive_int(v):
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool) and v >= 1


def _nonnegative_int(v):
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool) and v >= 0


def _positive_real(v):
    return isinstance(v, (int, float, np.number)) and not isinstance(v, bool) and np.isfinite(v) and v > 0


_RULES = {
    "max_iter": (_positive_int, "a positive integer"),
    "tol": (_positive_real, "a positive number"),
    "var_smoothing": (_positive_real, "a positive number"),
    "C": (_positive_real, "a positive number"),
    "hidden_units": (_positive_int, "a positive integer"),
    "learning_rate": (_positive_real, "a positive number"),
    "epochs": (_positive_int, "a positive integer"),
    "batch_size": (_positive_int, "a positive integer"),
    "n_iter_no_change": (_positive_int, "a positive integer"),
    "k": (_positive_int, "an integer >= 1"),
    "max_depth": (lambda v: v is None or _positive_int(v), "null or a positive integer"),
    "min_samples_split": (lambda v: _positive_int(v) and v >= 2, "an integer >= 2"),
    "n_trees": (_positive_int, "an integer >= 1"),
    "n_estimators": (_positive_int, "an integer >= 1"),
    "mtry": (_positive_int, "an integer >= 1"),
    "bootstrap": (lambda v: v in BOOTSTRAP_MODES, f"one of {BOOTSTRAP_MODES}"),
    "n_stages": (_nonnegative_int, "an integer >= 0"),
}


class HyperparameterError(ValueError):
    pass


@dataclass(frozen=True)
class LearnerSpec:
    """Classifier family, its hyperparameters (defaults filled in) and the seed for anything random."""

    family: Family
    hyperparameters: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        try:
            family = Family(str(getattr(self.family, "value", self.family)).upper())
        except ValueError:
            raise HyperparameterError(f"unknown classifier family {self.family!r}") from None
        defaults = DEFAULT_HYPERPARAMETERS[family]
        given = dict(self.hyperparameters or {})
        unknown = set(given) - set(defaults)
        if unknown:
            raise HyperparameterError(f"{family.value}: unknown hyperparameter(s) {sorted(unknown)}")
        params = {**defaults, **given}
        for key, value in params.items():
            check, expected = _RULES[key]
            if not check(value):
                raise HyperparameterError(f"{family.value}.{key} must be {expected}, got {value!r}")
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "hyperparameters", params)
        object.__setattr__(self, "seed", int(self.seed))

    def with_seed(self, seed: int) -> "LearnerSpec":
        return LearnerSpec(self.family, dict(self.hyperparameters), seed)


def softmax(scores: np.ndarray) -> np.ndarray:
    """Row-wise softmax; ``-inf`` scores get probability exactly zero."""
    shift = np.max(scores, axis=1, keepdims=True)
    e = np.exp(scores - shift)
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(scores: np.ndarray) -> np.ndarray:
    shift = np.max(scores, axis=1, keepdims=True)
    z = scores - shift
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _to_jsonable(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, dict):
        return {k: _to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v) for v in value]
    return value


class FittedModel:
    """Base class of all trained classifiers.

    Subclasses implement ``_proba`` (rows already validated) plus
    ``_params`` / ``_from_params`` for serialization. Models are treated as
    immutable once ``fit`` returns.
    """

    family: Family = None

    def __init__(self, spec: LearnerSpec, n_features: int, n_samples: int, feature_names=None, info=None):
        self.spec = spec
        self.n_features = int(n_features)
        self.n_samples = int(n_samples)
        self.n_classes = N_CLASSES
        self.feature_names = tuple(feature_names) if feature_names is not None else tuple(
            f"x{j}" for j in range(self.n_features)
        )
        # diagnostics such as convergence flags; not needed for prediction
        self.info = dict(info or {})

    @property
    def hyperparameters(self) -> dict:
        return dict(self.spec.hyperparameters)

    @property
    def seed(self) -> int:
        return self.spec.seed

    def _check_X(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1 and X.size == 0:
            X = X.reshape(0, self.n_features)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ShapeError(f"{self.family.value} model expects {self.n_features} columns, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise DataError("prediction input contains non-finite values")
        return X

    def predict_proba(self, X) -> np.ndarray:
        X = self._check_X(X)
        if X.shape[0] == 0:
            return np.zeros((0, self.n_classes))
        return self._proba(X)

    def predict(self, X) -> np.ndarray:
        """Most probable class per row; ties go to the lowest class index."""
        return np.argmax(self.predict_proba(X), axis=1).astype(np.int64)

    def _proba(self, X):
        raise NotImplementedError

    def _params(self) -> dict:
        raise NotImplementedError

    @classmethod
    def _from_params(cls, spec, meta, params):
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_FORMAT_VERSION,
            "family": self.family.value,
            "hyperparameters": _to_jsonable(self.spec.hyperparameters),
            "seed": self.spec.seed,
            "n_samples": self.n_samples,
            "n_features": self.n_features,
            "feature_names": list(self.feature_names),
            "class_names": list(CLASS_NAMES),
            "info": _to_jsonable(self.info),
            "params": _to_jsonable(self._params()),
        }

    def __repr__(self):
        return f"<{type(self).__name__} {self.family.value} n_samples={self.n_samples} seed={self.seed}>"


_MODEL_CLASSES: dict = {}
_FITTERS: dict = {}


def register(family: Family, model_cls):
    """Decorator registering ``fit_fn(data, spec) -> FittedModel`` for a family."""

    def wrap(fit_fn):
        model_cls.family = family
        _MODEL_CLASSES[family] = model_cls
        _FITTERS[family] = fit_fn
        return fit_fn

    return wrap


def _ensure_registered():
    if not _FITTERS:
        from . import simple, trees  # noqa: F401


def canonical_order(data: EncodedDataset) -> np.ndarray:
    """Row order sorted by features, then label, then weight.

    Fitting on canonically ordered rows makes every learner independent of the
    order rows arrive in.
    """
    X = data.features
    keys = [data.weights, data.labels] + [X[:, j] for j in range(X.shape[1] - 1, -1, -1)]
    return np.lexsort(keys)


def fit(spec: LearnerSpec, data: EncodedDataset) -> FittedModel:
    """Train the classifier family named by ``spec`` on ``data`` (sample weights honoured)."""
    _ensure_registered()
    if not isinstance(spec, LearnerSpec):
        raise TypeError("fit expects a LearnerSpec")
    if not np.all(np.isfinite(data.features)):
        raise DataError("training features contain non-finite values")
    canon = data.subset(canonical_order(data))
    return _FITTERS[spec.family](canon, spec)


def predict(model: FittedModel, X) -> np.ndarray:
    return model.predict(X)


def predict_proba(model: FittedModel, X) -> np.ndarray:
    return model.predict_proba(X)


def model_from_dict(doc: dict) -> FittedModel:
    _ensure_registered()
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError("not a serialized freightmode model")
    if doc.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {doc.get('version')!r}")
    spec = LearnerSpec(doc["family"], doc["hyperparameters"], doc["seed"])
    cls = _MODEL_CLASSES[spec.family]
    model = cls._from_params(spec, doc, doc["params"])
    model.info = dict(doc.get("info") or {})
    return model


def save_model(model: FittedModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_dict()), encoding="utf-8")


def load_model(path) -> FittedModel:
    return model_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def present_classes(data: EncodedDataset) -> np.ndarray:
    """Boolean mask over the five classes: which carry positive training weight."""
    return np.bincount(data.labels, weights=data.weights, minlength=N_CLASSES) > 0
