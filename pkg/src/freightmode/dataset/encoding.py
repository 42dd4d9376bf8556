"""Numeric encoding of shipment records for the classifiers."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError
from .schema import CLASS_NAMES, DEFAULT_BINNING, DEFAULT_REGISTRY, N_CLASSES, BinningScheme, SchemaRegistry

FEATURE_NAMES = (
    "size_band",
    "value_band",
    "distance_band",
    "commodity",
    "hazmat",
    "temp_controlled",
    "export",
    "origin_cfs",
    "dest_cfs",
    "naics",
    "origin_employee_density",
    "origin_warehouse_count",
    "origin_highway_density",
    "origin_railway_density",
    "origin_temp_over_60f",
    "dest_population_density",
    "dest_income_under_50k",
    "dest_temp_over_60f",
    "dest_highway_density",
    "dest_railway_density",
)

# Record attributes copied through unchanged (booleans become 0/1).
_PASSTHROUGH = FEATURE_NAMES[10:] + ("temp_controlled", "export")


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EncodedDataset:
    """Feature matrix, integer mode labels and positive sample weights.

    ``row_ids`` tracks each row's index in the dataset it was originally
    encoded from, so subsets (folds, holdout parts) stay traceable.
    """

    features: np.ndarray
    labels: np.ndarray
    weights: np.ndarray
    feature_names: tuple = None
    class_names: tuple = CLASS_NAMES
    row_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        X = _frozen(self.features, np.float64)
        if X.ndim != 2:
            raise DataError(f"features must be 2-D, got shape {X.shape}")
        n, d = X.shape
        if n < 1:
            raise DataError("dataset must contain at least one row")
        y = _frozen(self.labels, np.int64)
        w = _frozen(self.weights, np.float64)
        if y.shape != (n,) or w.shape != (n,):
            raise DataError("labels and weights must have one entry per row")
        if not np.all(np.isfinite(X)):
            raise DataError("features contain missing or non-finite values")
        if y.min() < 0 or y.max() >= len(self.class_names):
            raise DataError("labels out of range")
        if not (np.all(np.isfinite(w)) and np.all(w > 0)):
            raise DataError("weights must be finite and positive")
        names = self.feature_names
        if names is None:
            names = FEATURE_NAMES if d == len(FEATURE_NAMES) else tuple(f"x{j}" for j in range(d))
        if len(names) != d:
            raise DataError(f"{len(names)} feature names for {d} columns")
        ids = np.arange(n) if self.row_ids is None else self.row_ids
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "feature_names", tuple(names))
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "row_ids", _frozen(ids, np.int64))

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def subset(self, index) -> "EncodedDataset":
        index = np.asarray(index)
        return EncodedDataset(
            self.features[index],
            self.labels[index],
            self.weights[index],
            self.feature_names,
            self.class_names,
            self.row_ids[index],
        )

    def with_weights(self, weights) -> "EncodedDataset":
        return EncodedDataset(
            self.features, self.labels, weights, self.feature_names, self.class_names, self.row_ids
        )

    def content_hash(self) -> str:
        h = hashlib.sha256()
        for a in (self.features, self.labels, self.weights):
            h.update(np.ascontiguousarray(a).tobytes())
        h.update("\x1f".join(self.feature_names).encode())
        return h.hexdigest()


def encode_dataset(
    records,
    scheme: BinningScheme = DEFAULT_BINNING,
    registry: SchemaRegistry = DEFAULT_REGISTRY,
) -> EncodedDataset:
    """Bands size/value/distance, integer-codes categoricals by registry order, passes densities through."""
    records = list(records)
    if not records:
        raise DataError("cannot encode an empty record list")
    columns = {name: [getattr(r, name) for r in records] for name in _RECORD_FIELDS}
    return encode_columns(columns, scheme, registry)


_RECORD_FIELDS = (
    "mode", "size_lb", "value_usd", "distance_mi", "commodity", "hazmat", "origin_cfs", "dest_cfs", "naics", "weight",
) + _PASSTHROUGH


def encode_columns(columns, scheme=DEFAULT_BINNING, registry=DEFAULT_REGISTRY) -> EncodedDataset:
    """Column-wise form of :func:`encode_dataset`; ``columns`` maps record field names to sequences."""
    cols = {
        "size_band": scheme.size.band(columns["size_lb"]),
        "value_band": scheme.value.band(columns["value_usd"]),
        "distance_band": scheme.distance.band(columns["distance_mi"]),
    }
    for name in ("commodity", "hazmat", "origin_cfs", "dest_cfs", "naics"):
        codes = registry._code_maps[name]
        try:
            cols[name] = [codes[str(v)] for v in columns[name]]
        except KeyError as exc:
            raise DataError(f"{exc.args[0]!r} is not in the {name} vocabulary") from None
    for name in _PASSTHROUGH:
        cols[name] = columns[name]

    X = np.column_stack([np.asarray(cols[name], dtype=np.float64) for name in FEATURE_NAMES])
    y = np.asarray([int(m) for m in columns["mode"]], dtype=np.int64)
    w = np.asarray(columns["weight"], dtype=np.float64)
    return EncodedDataset(X, y, w)


def weighted_mode_shares(data: EncodedDataset, n_classes: int = N_CLASSES) -> np.ndarray:
    """Share of total sample weight carried by each mode."""
    totals = np.bincount(data.labels, weights=data.weights, minlength=n_classes)
    return totals / totals.sum()
