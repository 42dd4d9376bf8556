"""Shipment records and their delimited-text representation."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, fields
from typing import Iterable

from ..errors import SchemaError, ValidationError
from .schema import (
    BOOLEAN_FIELDS,
    CATEGORICAL_FIELDS,
    DEFAULT_REGISTRY,
    FALSE_TOKENS,
    TRUE_TOKENS,
    ModeClass,
    SchemaRegistry,
    parse_mode,
)


@dataclass(frozen=True)
class ShipmentRecord:
    mode: ModeClass
    size_lb: float
    value_usd: float
    distance_mi: float
    commodity: str
    hazmat: str
    temp_controlled: bool
    export: bool
    origin_cfs: str
    dest_cfs: str
    naics: str
    origin_employee_density: float
    origin_warehouse_count: int
    origin_highway_density: float
    origin_railway_density: float
    origin_temp_over_60f: bool
    dest_population_density: float
    dest_income_under_50k: bool
    dest_temp_over_60f: bool
    dest_highway_density: float
    dest_railway_density: float
    weight: float


COLUMNS = tuple(f.name for f in fields(ShipmentRecord))
_FLOAT_FIELDS = (
    "size_lb",
    "value_usd",
    "distance_mi",
    "origin_employee_density",
    "origin_highway_density",
    "origin_railway_density",
    "dest_population_density",
    "dest_highway_density",
    "dest_railway_density",
    "weight",
)


def validate_record(record: ShipmentRecord, registry: SchemaRegistry = DEFAULT_REGISTRY, row=None) -> None:
    for name in _FLOAT_FIELDS:
        value = getattr(record, name)
        if not math.isfinite(value):
            raise ValidationError("value must be finite", row=row, column=name)
        if value < 0:
            raise ValidationError(f"negative value {value!r}", row=row, column=name)
    if record.weight <= 0:
        raise ValidationError("weight must be positive", row=row, column="weight")
    if record.origin_warehouse_count < 0:
        raise ValidationError("negative count", row=row, column="origin_warehouse_count")
    for name in CATEGORICAL_FIELDS:
        value = getattr(record, name)
        if not registry.has(name, value):
            raise SchemaError(f"{value!r} is not in the {name} vocabulary", row=row, column=name)


def _parse_cell(name, text, registry, row):
    text = text.strip()
    if text == "":
        raise ValidationError("missing value", row=row, column=name)
    if name == "mode":
        try:
            return parse_mode(text, registry)
        except SchemaError as exc:
            raise SchemaError(str(exc), row=row, column=name) from None
    if name in BOOLEAN_FIELDS:
        key = text.lower()
        if key in TRUE_TOKENS:
            return True
        if key in FALSE_TOKENS:
            return False
        raise SchemaError(f"{text!r} is not a boolean", row=row, column=name)
    if name == "origin_warehouse_count":
        try:
            value = float(text)
        except ValueError:
            raise SchemaError(f"unparseable number {text!r}", row=row, column=name) from None
        if not value.is_integer():
            raise ValidationError(f"expected an integer count, got {text!r}", row=row, column=name)
        return int(value)
    if name in _FLOAT_FIELDS:
        try:
            return float(text)
        except ValueError:
            raise SchemaError(f"unparseable number {text!r}", row=row, column=name) from None
    return text


def ingest_table(source, registry: SchemaRegistry = DEFAULT_REGISTRY) -> list[ShipmentRecord]:
    """Read comma-separated shipment rows into validated records, preserving row order.

    ``source`` is a path or an open text stream with a header row. Extra columns
    are ignored. Row numbers in error messages count the header as row 1.
    """
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, newline="", encoding="utf-8") as fh:
            return ingest_table(fh, registry)

    reader = csv.reader(source)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError("empty input: no header row") from None
    missing = [c for c in COLUMNS if c not in header]
    if missing:
        raise SchemaError(f"missing required column(s) {', '.join(repr(m) for m in missing)}", column=missing[0])
    positions = [header.index(c) for c in COLUMNS]

    records = []
    for rownum, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) < len(header):
            raise SchemaError(f"expected {len(header)} fields, found {len(row)}", row=rownum)
        values = [_parse_cell(name, row[pos], registry, rownum) for name, pos in zip(COLUMNS, positions)]
        record = ShipmentRecord(*values)
        validate_record(record, registry, row=rownum)
        records.append(record)
    return records


def _format(value) -> str:
    if isinstance(value, ModeClass):
        return value.label
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def write_table(records: Iterable[ShipmentRecord], dest) -> None:
    """Write records in the format ``ingest_table`` reads; floats use ``repr`` so they round-trip exactly."""
    if isinstance(dest, (str, bytes)) or hasattr(dest, "__fspath__"):
        with open(dest, "w", newline="", encoding="utf-8") as fh:
            write_table(records, fh)
        return
    writer = csv.writer(dest, lineterminator="\n")
    writer.writerow(COLUMNS)
    for record in records:
        writer.writerow([_format(getattr(record, c)) for c in COLUMNS])


def table_text(records: Iterable[ShipmentRecord]) -> str:
    buf = io.StringIO()
    write_table(records, buf)
    return buf.getvalue()
