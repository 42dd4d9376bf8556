"""Run configuration: YAML parsing with key-path errors, defaults and serialization.

An empty file yields the benchmark defaults::

    data:
      path: null              # shipment CSV; null means synthetic
      synthetic: {n_records: 20000, seed: 0, noise_level: 0.3, target_mode_shares: [...]}
    registry: null            # schema registry YAML/JSON; null means built-in
    grid:
      families: [MNL, NB, SVM, ANN, KNN, CART, RF, BOOST, BAG]
      ratios: [0.1, 0.2, 0.3, 0.4, 0.5, 0.6]
      folds: [10, 20, 30]
      sample_sizes: [null]    # null means every row
    evaluation: {fit_weights: true, weighted_eval: true, stratify: false}
    hyperparameters: {RF: {n_trees: 10, mtry: 2, ...}, ...}
    seed: 0
    workers: 1
    out: results
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .dataset.schema import N_CLASSES
from .dataset.synthetic import CFS2012_MODE_SHARES
from .errors import ConfigError
from .evaluation import GridConfig
from .learners.core import DEFAULT_HYPERPARAMETERS, Family, HyperparameterError, LearnerSpec

ALL_FAMILIES = tuple(f.value for f in Family)
DEFAULT_RATIOS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6)
DEFAULT_FOLDS = (10, 20, 30)


@dataclass(frozen=True)
class SyntheticSource:
    n_records: int = 20000
    seed: int = 0
    noise_level: float = 0.3
    target_mode_shares: tuple = CFS2012_MODE_SHARES


def _default_hyperparameters():
    return {f.value: dict(v) for f, v in DEFAULT_HYPERPARAMETERS.items()}


@dataclass(frozen=True)
class RunConfig:
    data_path: str | None = None
    synthetic: SyntheticSource = SyntheticSource()
    registry_path: str | None = None
    families: tuple = ALL_FAMILIES
    ratios: tuple = DEFAULT_RATIOS
    folds: tuple = DEFAULT_FOLDS
    sample_sizes: tuple = (None,)
    fit_weights: bool = True
    weighted_eval: bool = True
    stratify: bool = False
    hyperparameters: dict = field(default_factory=_default_hyperparameters)
    seed: int = 0
    workers: int = 1
    out: str = "results"

    def grid(self) -> GridConfig:
        return GridConfig(
            families=self.families, ratios=self.ratios, folds=self.folds, sample_sizes=self.sample_sizes,
            hyperparameters={f: self.hyperparameters[f] for f in self.families}, seed=self.seed,
            fit_weights=self.fit_weights, weighted_eval=self.weighted_eval, stratify=self.stratify,
        )

    def to_dict(self) -> dict:
        return {
            "data": {
                "path": self.data_path,
                "synthetic": {
                    "n_records": self.synthetic.n_records,
                    "seed": self.synthetic.seed,
                    "noise_level": self.synthetic.noise_level,
                    "target_mode_shares": list(self.synthetic.target_mode_shares),
                },
            },
            "registry": self.registry_path,
            "grid": {
                "families": list(self.families),
                "ratios": list(self.ratios),
                "folds": list(self.folds),
                "sample_sizes": list(self.sample_sizes),
            },
            "evaluation": {
                "fit_weights": self.fit_weights,
                "weighted_eval": self.weighted_eval,
                "stratify": self.stratify,
            },
            "hyperparameters": {f: dict(v) for f, v in self.hyperparameters.items()},
            "seed": self.seed,
            "workers": self.workers,
            "out": self.out,
        }

    def config_hash(self) -> str:
        """Hash of everything that affects results (worker count and output dir excluded)."""
        doc = self.to_dict()
        doc.pop("workers")
        doc.pop("out")
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


# ---------------------------------------------------------------- validation helpers


def _mapping(value, key):
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError(key, f"expected a mapping, got {type(value).__name__}")
    return value


def _reject_unknown(doc, allowed, prefix):
    for k in doc:
        if k not in allowed:
            path = f"{prefix}.{k}" if prefix else str(k)
            raise ConfigError(path, "unknown key")


def _int(value, key, minimum=None):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(key, f"expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(key, f"must be >= {minimum}, got {value}")
    return value


def _real(value, key):
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ConfigError(key, f"expected a finite number, got {value!r}")
    return float(value)


def _bool(value, key):
    if not isinstance(value, bool):
        raise ConfigError(key, f"expected true or false, got {value!r}")
    return value


def _str_or_none(value, key):
    if value is not None and not isinstance(value, str):
        raise ConfigError(key, f"expected a string or null, got {value!r}")
    return value


def _list(value, key):
    if not isinstance(value, (list, tuple)) or len(value) == 0:
        raise ConfigError(key, "expected a non-empty list")
    return list(value)


def _family(value, key):
    name = str(value).upper()
    if name not in ALL_FAMILIES:
        raise ConfigError(key, f"unknown classifier family {value!r}; expected one of {list(ALL_FAMILIES)}")
    return name


def _parse_synthetic(doc, key):
    doc = _mapping(doc, key)
    _reject_unknown(doc, {"n_records", "seed", "noise_level", "target_mode_shares"}, key)
    base = SyntheticSource()
    n = _int(doc.get("n_records", base.n_records), f"{key}.n_records", 1)
    seed = _int(doc.get("seed", base.seed), f"{key}.seed", 0)
    noise = _real(doc.get("noise_level", base.noise_level), f"{key}.noise_level")
    if not 0.0 <= noise <= 1.0:
        raise ConfigError(f"{key}.noise_level", f"must lie in [0, 1], got {noise}")
    shares = doc.get("target_mode_shares", base.target_mode_shares)
    shares = tuple(_real(s, f"{key}.target_mode_shares[{i}]") for i, s in
                   enumerate(_list(shares, f"{key}.target_mode_shares")))
    if len(shares) != N_CLASSES or min(shares) < 0 or abs(sum(shares) - 1.0) > 1e-3:
        raise ConfigError(f"{key}.target_mode_shares", "expected five nonnegative shares summing to 1")
    return SyntheticSource(n, seed, noise, shares)


def _parse_grid(doc):
    doc = _mapping(doc, "grid")
    _reject_unknown(doc, {"families", "ratios", "folds", "sample_sizes"}, "grid")
    families = tuple(dict.fromkeys(
        _family(f, f"grid.families[{i}]")
        for i, f in enumerate(_list(doc.get("families", ALL_FAMILIES), "grid.families"))
    ))
    ratios = []
    for i, r in enumerate(_list(doc.get("ratios", DEFAULT_RATIOS), "grid.ratios")):
        r = _real(r, f"grid.ratios[{i}]")
        if not 0.0 < r < 1.0:
            raise ConfigError(f"grid.ratios[{i}]", f"split ratio must lie strictly between 0 and 1, got {r}")
        ratios.append(r)
    folds = tuple(_int(k, f"grid.folds[{i}]", 2) for i, k in enumerate(_list(doc.get("folds", DEFAULT_FOLDS), "grid.folds")))
    sizes = tuple(
        None if s is None or s == "all" else _int(s, f"grid.sample_sizes[{i}]", 2)
        for i, s in enumerate(_list(doc.get("sample_sizes", [None]), "grid.sample_sizes"))
    )
    return families, tuple(ratios), folds, sizes


def _parse_hyperparameters(doc):
    doc = _mapping(doc, "hyperparameters")
    out = _default_hyperparameters()
    for fam_key, values in doc.items():
        fam = _family(fam_key, f"hyperparameters.{fam_key}")
        values = _mapping(values, f"hyperparameters.{fam_key}")
        _reject_unknown(values, DEFAULT_HYPERPARAMETERS[Family(fam)], f"hyperparameters.{fam_key}")
        try:
            spec = LearnerSpec(fam, {**out[fam], **values})
        except HyperparameterError as exc:
            bad = next((k for k in values if f".{k} " in str(exc)), None)
            path = f"hyperparameters.{fam_key}" + (f".{bad}" if bad else "")
            raise ConfigError(path, str(exc)) from None
        out[fam] = dict(spec.hyperparameters)
    return out


def config_from_dict(doc) -> RunConfig:
    """Validate a parsed YAML document and fill defaults."""
    doc = _mapping(doc, "<root>")
    _reject_unknown(doc, {"data", "registry", "grid", "evaluation", "hyperparameters", "seed", "workers", "out"}, "")
    data = _mapping(doc.get("data"), "data")
    _reject_unknown(data, {"path", "synthetic"}, "data")
    ev = _mapping(doc.get("evaluation"), "evaluation")
    _reject_unknown(ev, {"fit_weights", "weighted_eval", "stratify"}, "evaluation")
    families, ratios, folds, sizes = _parse_grid(doc.get("grid"))
    return RunConfig(
        data_path=_str_or_none(data.get("path"), "data.path"),
        synthetic=_parse_synthetic(data.get("synthetic"), "data.synthetic"),
        registry_path=_str_or_none(doc.get("registry"), "registry"),
        families=families,
        ratios=ratios,
        folds=folds,
        sample_sizes=sizes,
        fit_weights=_bool(ev.get("fit_weights", True), "evaluation.fit_weights"),
        weighted_eval=_bool(ev.get("weighted_eval", True), "evaluation.weighted_eval"),
        stratify=_bool(ev.get("stratify", False), "evaluation.stratify"),
        hyperparameters=_parse_hyperparameters(doc.get("hyperparameters")),
        seed=_int(doc.get("seed", 0), "seed", 0),
        workers=_int(doc.get("workers", 1), "workers", 1),
        out=str(doc.get("out", "results")),
    )


def parse_config_text(text: str) -> RunConfig:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("<file>", f"not valid YAML: {exc}") from None
    return config_from_dict(doc)


def parse_config(path) -> RunConfig:
    """Read and validate a YAML run configuration; an empty file gives the defaults."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError("<file>", f"cannot read {path}: {exc.strerror or exc}") from None
    return parse_config_text(text)


def serialize_config(config: RunConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False)


def with_overrides(config: RunConfig, **changes) -> RunConfig:
    """Apply non-None overrides (seed, workers, out) and revalidate."""
    changes = {k: v for k, v in changes.items() if v is not None}
    if "seed" in changes:
        _int(changes["seed"], "seed", 0)
    if "workers" in changes:
        _int(changes["workers"], "workers", 1)
    return replace(config, **changes)
