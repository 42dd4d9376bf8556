"""CFS record schema: consolidated modes, categorical vocabularies and size/value/distance bands.

The registry fixes the integer code of every categorical value (its position in
the vocabulary list), so a registry written to disk freezes the encoding and
makes runs comparable across machines.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import yaml

from ..errors import SchemaError


class ModeClass(enum.IntEnum):
    FOR_HIRE_TRUCK = 0
    PRIVATE_TRUCK = 1
    PARCEL_SERVICE = 2
    AIR = 3
    OTHER = 4

    @property
    def label(self) -> str:
        return CLASS_NAMES[self.value]

    @classmethod
    def from_label(cls, text: str) -> "ModeClass":
        key = _squash(text)
        for mode in cls:
            if key in (_squash(mode.label), _squash(mode.name)):
                return mode
        raise SchemaError(f"unknown mode class {text!r}")


CLASS_NAMES = ("ForHireTruck", "PrivateTruck", "ParcelService", "Air", "Other")
N_CLASSES = len(CLASS_NAMES)


def _squash(text: str) -> str:
    return "".join(ch for ch in str(text).lower() if ch.isalnum())


# (code, description, consolidated group). Codes follow the 2012 CFS public-use
# mode list. Aggregate / suppressed codes have no prose assignment and are parked
# in OTHER; plain "truck" (carrier type unknown) goes to FOR_HIRE_TRUCK. Both are
# overridable through a registry file.
DEFAULT_RAW_MODES = (
    (0, "mode suppressed", ModeClass.OTHER),
    (1, "single modes", ModeClass.OTHER),
    (2, "truck", ModeClass.FOR_HIRE_TRUCK),
    (3, "for-hire truck", ModeClass.FOR_HIRE_TRUCK),
    (4, "private truck", ModeClass.PRIVATE_TRUCK),
    (5, "rail", ModeClass.OTHER),
    (6, "water", ModeClass.OTHER),
    (7, "inland water", ModeClass.OTHER),
    (8, "great lakes", ModeClass.OTHER),
    (9, "deep sea", ModeClass.OTHER),
    (10, "multiple waterways", ModeClass.OTHER),
    (11, "air", ModeClass.AIR),
    (12, "pipeline", ModeClass.OTHER),
    (13, "multiple modes", ModeClass.OTHER),
    (14, "parcel", ModeClass.PARCEL_SERVICE),
    (15, "truck and rail", ModeClass.OTHER),
    (16, "truck and water", ModeClass.OTHER),
    (17, "rail and water", ModeClass.OTHER),
    (18, "other multiple modes", ModeClass.OTHER),
    (19, "other and unknown modes", ModeClass.OTHER),
    (20, "other mode", ModeClass.OTHER),
)

COMMODITY_GROUPS = (
    "raw_food",
    "prepared_products",
    "stone_minerals",
    "petroleum_coal",
    "chemicals",
    "wood_paper_textiles",
    "metals_machinery",
    "electronics",
    "furniture_other",
)

HAZMAT_LEVELS = ("class3", "other_hazmat", "not_hazmat")

# Shipper industries in scope of the 2012 CFS.
NAICS_CLASSES = (
    "212", "311", "312", "313", "314", "315", "316", "321", "322", "323",
    "324", "325", "326", "327", "331", "332", "333", "334", "335", "336",
    "337", "339", "4231", "4232", "4233", "4234", "4235", "4236", "4237",
    "4238", "4239", "4241", "4242", "4243", "4244", "4245", "4246", "4247",
    "4248", "4249", "4541", "45431", "4931", "5111", "551114",
)

# Placeholder area identifiers; real runs should ship a registry listing the
# survey's own CFS area codes.
CFS_AREAS = tuple(f"cfs{i:03d}" for i in range(1, 133))

CATEGORICAL_FIELDS = ("commodity", "hazmat", "origin_cfs", "dest_cfs", "naics")
BOOLEAN_FIELDS = (
    "temp_controlled",
    "export",
    "origin_temp_over_60f",
    "dest_income_under_50k",
    "dest_temp_over_60f",
)
TRUE_TOKENS = frozenset({"1", "true", "yes", "y", "t"})
FALSE_TOKENS = frozenset({"0", "false", "no", "n", "f"})


@dataclass(frozen=True)
class SchemaRegistry:
    """Closed vocabularies and the raw-mode consolidation table."""

    vocabularies: dict = field(default_factory=lambda: {
        "commodity": COMMODITY_GROUPS,
        "hazmat": HAZMAT_LEVELS,
        "origin_cfs": CFS_AREAS,
        "dest_cfs": CFS_AREAS,
        "naics": NAICS_CLASSES,
    })
    raw_modes: tuple = DEFAULT_RAW_MODES
    version: int = 1

    def __post_init__(self):
        missing = [f for f in CATEGORICAL_FIELDS if f not in self.vocabularies]
        if missing:
            raise SchemaError(f"registry lacks vocabularies for {missing}")
        for name, vocab in self.vocabularies.items():
            if len(set(vocab)) != len(vocab) or not vocab:
                raise SchemaError(f"vocabulary {name!r} is empty or has duplicates")
        codes = [code for code, _, _ in self.raw_modes]
        if len(set(codes)) != len(codes):
            raise SchemaError("duplicate raw mode codes in registry")
        if {group for _, _, group in self.raw_modes} != set(ModeClass):
            raise SchemaError("raw mode table must cover all five mode classes")
        object.__setattr__(
            self, "vocabularies", {k: tuple(str(v) for v in vs) for k, vs in self.vocabularies.items()}
        )
        object.__setattr__(self, "_code_maps", {
            k: {v: i for i, v in enumerate(vs)} for k, vs in self.vocabularies.items()
        })

    def code_of(self, field_name: str, value: str) -> int:
        try:
            return self._code_maps[field_name][str(value)]
        except KeyError:
            raise SchemaError(f"{value!r} is not in the {field_name} vocabulary", column=field_name) from None

    def has(self, field_name: str, value) -> bool:
        return str(value) in self._code_maps[field_name]

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "vocabularies": {k: list(v) for k, v in self.vocabularies.items()},
            "raw_modes": [
                {"code": code, "name": name, "group": group.label} for code, name, group in self.raw_modes
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SchemaRegistry":
        unknown = set(doc) - {"version", "vocabularies", "raw_modes"}
        if unknown:
            raise SchemaError(f"unknown registry keys {sorted(unknown)}")
        kwargs = {"version": int(doc.get("version", 1))}
        if "vocabularies" in doc:
            vocab = dict(SchemaRegistry().vocabularies)
            vocab.update({k: tuple(v) for k, v in doc["vocabularies"].items()})
            kwargs["vocabularies"] = vocab
        if "raw_modes" in doc:
            kwargs["raw_modes"] = tuple(
                (int(m["code"]), str(m["name"]), ModeClass.from_label(m["group"])) for m in doc["raw_modes"]
            )
        return cls(**kwargs)


DEFAULT_REGISTRY = SchemaRegistry()


def load_registry(path) -> SchemaRegistry:
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh) or {}
    return SchemaRegistry.from_dict(doc)


def dump_registry(registry: SchemaRegistry, path) -> None:
    Path(path).write_text(yaml.safe_dump(registry.to_dict(), sort_keys=False), encoding="utf-8")


def consolidate_mode(raw_mode, registry: SchemaRegistry = DEFAULT_REGISTRY) -> ModeClass:
    """Map a raw CFS mode (integer code, zero-padded code string or description) to its group."""
    if isinstance(raw_mode, (int, np.integer)) and not isinstance(raw_mode, bool):
        for code, _, group in registry.raw_modes:
            if code == raw_mode:
                return group
        raise SchemaError(f"unregistered CFS mode code {raw_mode!r}")
    text = str(raw_mode).strip()
    if text.isdigit():
        return consolidate_mode(int(text), registry)
    key = _squash(text)
    for _, name, group in registry.raw_modes:
        if _squash(name) == key:
            return group
    raise SchemaError(f"unregistered CFS mode {raw_mode!r}")


def parse_mode(value, registry: SchemaRegistry = DEFAULT_REGISTRY) -> ModeClass:
    """Accept either a consolidated class label or anything ``consolidate_mode`` understands."""
    if isinstance(value, ModeClass):
        return value
    try:
        return ModeClass.from_label(value)
    except SchemaError:
        return consolidate_mode(value, registry)


@dataclass(frozen=True)
class BandAxis:
    """Ascending cut points; ``upper_inclusive[i]`` says whether ``x == bounds[i]`` stays in the lower band."""

    bounds: tuple
    upper_inclusive: tuple

    def __post_init__(self):
        b = tuple(float(x) for x in self.bounds)
        flags = tuple(bool(x) for x in self.upper_inclusive)
        if len(b) != len(flags):
            raise ValueError("one inclusivity flag is needed per bound")
        if any(hi <= lo for lo, hi in zip(b, b[1:])):
            raise ValueError(f"band bounds must be strictly ascending, got {b}")
        object.__setattr__(self, "bounds", b)
        object.__setattr__(self, "upper_inclusive", flags)

    @property
    def n_bands(self) -> int:
        return len(self.bounds) + 1

    def band(self, values):
        """Band index (0 = lowest) for a scalar or array of nonnegative values."""
        x = np.asarray(values, dtype=float)
        idx = np.zeros(x.shape, dtype=np.int64)
        for bound, closed in zip(self.bounds, self.upper_inclusive):
            idx += (x > bound) if closed else (x >= bound)
        return int(idx) if idx.ndim == 0 else idx


@dataclass(frozen=True)
class BinningScheme:
    # Edges follow the printed band labels: "<300" / "<100" style cuts keep the
    # bound in the upper band, "≤30" / "1500–2000" style cuts keep it below.
    size: BandAxis = BandAxis((30, 200, 1000, 5000, 30000, 45000), (True,) * 6)
    value: BandAxis = BandAxis((300, 1000, 5000), (False, True, True))
    distance: BandAxis = BandAxis(
        (100, 250, 500, 750, 1000, 1500, 2000), (False,) * 6 + (True,)
    )


DEFAULT_BINNING = BinningScheme()


class Bands(NamedTuple):
    size_band: int
    value_band: int
    distance_band: int


def bin_features(record, scheme: BinningScheme = DEFAULT_BINNING) -> Bands:
    return Bands(
        scheme.size.band(record.size_lb),
        scheme.value.band(record.value_usd),
        scheme.distance.band(record.distance_mi),
    )
