"""Canonical terminal-state records and their CSV form.

A record is the plain dict produced by ``CrystalEnv.to_record``::

    {"space_group": 225, "crystal_lattice_system": "cubic",
     "point_symmetry": "centrosymmetric", "composition": {"Li": 4, "F": 4},
     "lattice": {"a": 4.0, ..., "gamma": 90.0}}      # or None

CSV columns are ``RECORD_COLUMNS`` plus any extra numeric columns (for
example ``energy_ev_per_atom``). The composition is written as
``Li:4;F:4`` in element-table order; empty lattice cells mean ``None``.
"""
from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Iterable, Optional, Sequence

from . import symtab
from .symtab import LATTICE_DIMS

RECORD_COLUMNS = ("space_group", "crystal_lattice_system", "point_symmetry", "composition", *LATTICE_DIMS)
ENERGY_COLUMN = "energy_ev_per_atom"


class RecordParseError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def format_composition(comp: dict) -> str:
    order = sorted(comp, key=lambda s: symtab.element(s).Z)
    return ";".join(f"{s}:{int(comp[s])}" for s in order)


def parse_composition(text: str) -> dict[str, int]:
    comp = {}
    for part in text.split(";"):
        sym, sep, n = part.partition(":")
        if not sep:
            raise ValueError(f"bad composition entry {part!r}")
        sym = sym.strip()
        symtab.element(sym)
        if sym in comp:
            raise ValueError(f"element {sym} listed twice")
        k = int(n)
        if k <= 0:
            raise ValueError(f"non-positive count for {sym}")
        comp[sym] = k
    return comp


def record_to_row(rec: dict) -> list[str]:
    lat = rec.get("lattice")
    lat_cells = ["" if lat is None else repr(float(lat[d])) for d in LATTICE_DIMS]
    return [
        str(int(rec["space_group"])),
        rec["crystal_lattice_system"],
        rec["point_symmetry"],
        format_composition(rec["composition"]),
        *lat_cells,
    ]


def row_to_record(row: dict) -> dict:
    sg = int(row["space_group"])
    info = symtab.record(sg)
    if row["crystal_lattice_system"] != info.crystal_lattice_system or row["point_symmetry"] != info.point_symmetry:
        raise ValueError(f"categories do not match space group {sg}")
    cells = [row[d].strip() for d in LATTICE_DIMS]
    if all(c == "" for c in cells):
        lattice = None
    elif any(c == "" for c in cells):
        raise ValueError("lattice parameters partially missing")
    else:
        vals = [float(c) for c in cells]
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("non-finite lattice parameter")
        lattice = dict(zip(LATTICE_DIMS, vals))
    return {
        "space_group": sg,
        "crystal_lattice_system": info.crystal_lattice_system,
        "point_symmetry": info.point_symmetry,
        "composition": parse_composition(row["composition"]),
        "lattice": lattice,
    }


def write_csv(path: str | Path, records: Iterable[dict], extra: Sequence[str] = (), values: Iterable[Sequence] = ()):
    """Write records (and aligned ``extra`` column values) to ``path``."""
    values = list(values)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*RECORD_COLUMNS, *extra])
        for i, rec in enumerate(records):
            row = record_to_row(rec)
            if extra:
                row += [repr(float(v)) for v in values[i]]
            w.writerow(row)


def read_csv(path: str | Path, extra: Sequence[str] = ()) -> tuple[list[dict], list[list[float]]]:
    """Parse a record CSV; malformed rows raise ``RecordParseError`` with the 1-based file line."""
    records, values = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in (*RECORD_COLUMNS, *extra) if c not in (reader.fieldnames or ())]
        if missing:
            raise RecordParseError(f"missing columns {missing}", 1)
        for row in reader:
            line = reader.line_num
            if None in row or any(v is None for v in row.values()):
                raise RecordParseError("wrong number of fields", line)
            try:
                records.append(row_to_record(row))
                vals = [float(row[c]) for c in extra]
            except (ValueError, KeyError) as exc:
                raise RecordParseError(str(exc), line) from None
            if not all(math.isfinite(v) for v in vals):
                raise RecordParseError("non-finite value", line)
            values.append(vals)
    return records, values


def canonical_key(rec: dict) -> tuple:
    """Total order on records: space group, sorted composition, lattice 6-tuple."""
    lat = rec.get("lattice")
    lat_key = () if lat is None else tuple(float(lat[d]) for d in LATTICE_DIMS)
    return (int(rec["space_group"]), tuple(sorted(rec["composition"].items())), lat_key)
