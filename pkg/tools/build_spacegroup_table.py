"""Regenerate ``src/crystalflow/data/spacegroups.json``.

Wyckoff multiplicities and Hermann-Mauguin symbols are read from the
``wyckoff_list.csv`` / ``symbols.json`` files distributed with PyXtal
(MIT licence; conventional ITA settings, hexagonal axes for R groups).
Crystal classes are assigned from the standard ITA number ranges below.

Usage::

    python tools/build_spacegroup_table.py /path/to/pyxtal/database
"""
import ast
import csv
import json
import sys
from pathlib import Path

# (point group, first sg, last sg, centrosymmetric, enantiomorphic, polar)
CRYSTAL_CLASSES = [
    ("1", 1, 1, False, True, True),
    ("-1", 2, 2, True, False, False),
    ("2", 3, 5, False, True, True),
    ("m", 6, 9, False, False, True),
    ("2/m", 10, 15, True, False, False),
    ("222", 16, 24, False, True, False),
    ("mm2", 25, 46, False, False, True),
    ("mmm", 47, 74, True, False, False),
    ("4", 75, 80, False, True, True),
    ("-4", 81, 82, False, False, False),
    ("4/m", 83, 88, True, False, False),
    ("422", 89, 98, False, True, False),
    ("4mm", 99, 110, False, False, True),
    ("-42m", 111, 122, False, False, False),
    ("4/mmm", 123, 142, True, False, False),
    ("3", 143, 146, False, True, True),
    ("-3", 147, 148, True, False, False),
    ("32", 149, 155, False, True, False),
    ("3m", 156, 161, False, False, True),
    ("-3m", 162, 167, True, False, False),
    ("6", 168, 173, False, True, True),
    ("-6", 174, 174, False, False, False),
    ("6/m", 175, 176, True, False, False),
    ("622", 177, 182, False, True, False),
    ("6mm", 183, 186, False, False, True),
    ("-6m2", 187, 190, False, False, False),
    ("6/mmm", 191, 194, True, False, False),
    ("23", 195, 199, False, True, False),
    ("m-3", 200, 206, True, False, False),
    ("432", 207, 214, False, True, False),
    ("-43m", 215, 220, False, False, False),
    ("m-3m", 221, 230, True, False, False),
]

RHOMBOHEDRAL = {146, 148, 155, 160, 161, 166, 167}


def crystal_lattice_system(n):
    if n <= 2:
        return "triclinic"
    if n <= 15:
        return "monoclinic"
    if n <= 74:
        return "orthorhombic"
    if n <= 142:
        return "tetragonal"
    if n <= 167:
        return "trigonal-rhombohedral" if n in RHOMBOHEDRAL else "trigonal-hexagonal"
    if n <= 194:
        return "hexagonal-hexagonal"
    return "cubic"


def point_symmetry(centro, enantio, polar):
    if enantio and polar:
        return "enantiomorphic-polar"
    if enantio:
        return "enantiomorphic"
    if polar:
        return "polar"
    if centro:
        return "centrosymmetric"
    return "non-centrosymmetric"


def main(database):
    database = Path(database)
    csv.field_size_limit(10**8)
    with open(database / "wyckoff_list.csv") as fh:
        rows = list(csv.reader(fh))[2:]
    multiplicities = {int(r[0]): [len(orbit) for orbit in ast.literal_eval(r[1])] for r in rows}
    symbols = json.loads((database / "symbols.json").read_text())["space_group"]

    records = []
    for pg, first, last, centro, enantio, polar in CRYSTAL_CLASSES:
        for n in range(first, last + 1):
            records.append(
                {
                    "number": n,
                    "symbol": symbols[n - 1],
                    "point_group": pg,
                    "crystal_lattice_system": crystal_lattice_system(n),
                    "point_symmetry": point_symmetry(centro, enantio, polar),
                    "wyckoff_multiplicities": sorted(multiplicities[n], reverse=True),
                }
            )
    assert [r["number"] for r in records] == list(range(1, 231))
    out = Path(__file__).resolve().parents[1] / "src" / "crystalflow" / "data" / "spacegroups.json"
    lines = ",\n".join("  " + json.dumps(r) for r in records)
    out.write_text('{\n "version": 1,\n "space_groups": [\n' + lines + "\n ]\n}\n")
    print(f"wrote {len(records)} records to {out}")


if __name__ == "__main__":
    main(sys.argv[1])
