"""Crystallographic and chemical lookup tables.

Everything is loaded once from the JSON files under ``crystalflow/data`` and
is immutable afterwards. See ``docs/tables.md`` for the file schemas.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Iterable, Mapping, Optional

import numpy as np

from . import kernels

CRYSTAL_LATTICE_SYSTEMS = (
    "triclinic",
    "monoclinic",
    "orthorhombic",
    "tetragonal",
    "trigonal-rhombohedral",
    "trigonal-hexagonal",
    "hexagonal-hexagonal",
    "cubic",
)
POINT_SYMMETRIES = (
    "centrosymmetric",
    "non-centrosymmetric",
    "enantiomorphic",
    "polar",
    "enantiomorphic-polar",
)
LATTICE_SYSTEMS = (
    "triclinic",
    "monoclinic",
    "orthorhombic",
    "tetragonal",
    "rhombohedral",
    "hexagonal",
    "cubic",
)
LATTICE_DIMS = ("a", "b", "c", "alpha", "beta", "gamma")

# 12-element vocabulary of the reference experiments
DEFAULT_ELEMENTS = ("H", "Li", "C", "N", "O", "F", "Mg", "Si", "P", "S", "Cl", "Fe")


class TableKeyError(KeyError):
    """Lookup of an unknown space group or element."""


@dataclass(frozen=True)
class SpaceGroupRecord:
    number: int
    symbol: str
    point_group: str
    crystal_lattice_system: str
    point_symmetry: str
    lattice_system: str
    wyckoff_multiplicities: tuple[int, ...]

    @property
    def min_multiplicity(self) -> int:
        return min(self.wyckoff_multiplicities)


@dataclass(frozen=True)
class ElementInfo:
    symbol: str
    Z: int
    period: int
    group: int
    oxidation_states: tuple[int, ...]
    physical_properties: tuple[float, ...]


@dataclass(frozen=True)
class LatticeConstraint:
    """Which lattice parameters are tied, pinned, or free for one lattice system.

    ``tied_length_groups`` partitions ``{a, b, c}``. ``tied_angle_groups``
    partitions the free angles (rhombohedral ties all three). ``fixed_angles``
    maps the remaining angles to their value in degrees.
    """

    lattice_system: str
    tied_length_groups: tuple[tuple[str, ...], ...]
    tied_angle_groups: tuple[tuple[str, ...], ...]
    fixed_angles: Mapping[str, float] = field(hash=False)

    @property
    def free_angles(self) -> tuple[str, ...]:
        return tuple(name for group in self.tied_angle_groups for name in group)

    @property
    def representatives(self) -> tuple[int, ...]:
        """Index into ``LATTICE_DIMS`` of the first member of every tie group."""
        groups = self.tied_length_groups + self.tied_angle_groups
        return tuple(LATTICE_DIMS.index(g[0]) for g in groups)

    @property
    def tie_map(self) -> tuple[int, ...]:
        """For each of the 6 dims, the representative it copies; ``-1`` when pinned."""
        out = [-1] * 6
        for group in self.tied_length_groups + self.tied_angle_groups:
            rep = LATTICE_DIMS.index(group[0])
            for name in group:
                out[LATTICE_DIMS.index(name)] = rep
        return tuple(out)

    @property
    def n_free(self) -> int:
        return len(self.tied_length_groups) + len(self.tied_angle_groups)


def _read_json(name: str) -> dict:
    return json.loads(resources.files("crystalflow").joinpath("data", name).read_text())


class Tables:
    """Read-only view over the shipped data files."""

    def __init__(self):
        lat_doc = _read_json("lattice_systems.json")
        self.cls_to_lattice: dict[str, str] = dict(lat_doc["crystal_lattice_to_lattice"])
        self.lattice_constraints: dict[str, LatticeConstraint] = {}
        for name, spec in lat_doc["lattice_systems"].items():
            self.lattice_constraints[name] = LatticeConstraint(
                lattice_system=name,
                tied_length_groups=tuple(tuple(g) for g in spec["tied_lengths"]),
                tied_angle_groups=tuple(tuple(g) for g in spec["tied_angles"]),
                fixed_angles=dict(spec["fixed_angles"]),
            )

        self.space_groups: dict[int, SpaceGroupRecord] = {}
        for row in _read_json("spacegroups.json")["space_groups"]:
            cls = row["crystal_lattice_system"]
            self.space_groups[row["number"]] = SpaceGroupRecord(
                number=row["number"],
                symbol=row["symbol"],
                point_group=row["point_group"],
                crystal_lattice_system=cls,
                point_symmetry=row["point_symmetry"],
                lattice_system=self.cls_to_lattice[cls],
                wyckoff_multiplicities=tuple(row["wyckoff_multiplicities"]),
            )

        el_doc = _read_json("elements.json")
        self.property_names: tuple[str, ...] = tuple(el_doc["property_names"])
        self.elements: dict[str, ElementInfo] = {}
        for row in el_doc["elements"]:
            self.elements[row["symbol"]] = ElementInfo(
                symbol=row["symbol"],
                Z=row["Z"],
                period=row["period"],
                group=row["group"],
                oxidation_states=tuple(row["oxidation_states"]),
                physical_properties=tuple(float(v) for v in row["properties"]),
            )

        self.default_space_groups: tuple[int, ...] = tuple(_read_json("default_spacegroups.json")["space_groups"])

    def record(self, sg: int) -> SpaceGroupRecord:
        try:
            return self.space_groups[int(sg)]
        except (KeyError, ValueError, TypeError):
            raise TableKeyError(f"unknown space group {sg!r}") from None

    def element(self, symbol: str) -> ElementInfo:
        try:
            return self.elements[symbol]
        except KeyError:
            raise TableKeyError(f"unknown element {symbol!r}") from None

    def as_json(self, table: str) -> object:
        """Plain-JSON dump of one table, used by the ``tables`` subcommand."""
        if table == "spacegroups":
            return [
                {
                    "number": r.number,
                    "symbol": r.symbol,
                    "point_group": r.point_group,
                    "crystal_lattice_system": r.crystal_lattice_system,
                    "point_symmetry": r.point_symmetry,
                    "lattice_system": r.lattice_system,
                    "wyckoff_multiplicities": list(r.wyckoff_multiplicities),
                }
                for r in self.space_groups.values()
            ]
        if table == "elements":
            return {
                "property_names": list(self.property_names),
                "elements": [
                    {
                        "symbol": e.symbol,
                        "Z": e.Z,
                        "period": e.period,
                        "group": e.group,
                        "oxidation_states": list(e.oxidation_states),
                        "physical_properties": list(e.physical_properties),
                    }
                    for e in self.elements.values()
                ],
            }
        if table == "lattice":
            return {
                name: {
                    "tied_length_groups": [list(g) for g in c.tied_length_groups],
                    "tied_angle_groups": [list(g) for g in c.tied_angle_groups],
                    "fixed_angles": dict(c.fixed_angles),
                    "n_free": c.n_free,
                }
                for name, c in self.lattice_constraints.items()
            }
        if table == "default-spacegroups":
            return list(self.default_space_groups)
        raise TableKeyError(f"unknown table {table!r}")


TABLE_NAMES = ("spacegroups", "elements", "lattice", "default-spacegroups")


@lru_cache(maxsize=1)
def tables() -> Tables:
    return Tables()


def record(sg: int) -> SpaceGroupRecord:
    return tables().record(sg)


def element(symbol: str) -> ElementInfo:
    return tables().element(symbol)


def space_groups_matching(cls: Optional[str] = None, ps: Optional[str] = None) -> frozenset[int]:
    """Space groups whose record agrees with every filter given."""
    return frozenset(
        n
        for n, r in tables().space_groups.items()
        if (cls is None or r.crystal_lattice_system == cls) and (ps is None or r.point_symmetry == ps)
    )


def compatible_categories(
    ps: Optional[str] = None, cls: Optional[str] = None, within: Optional[Iterable[int]] = None
) -> tuple[frozenset[str], frozenset[str]]:
    """Crystal-lattice systems and point symmetries co-occurring with the filters.

    ``within`` restricts the scan to a subset of space groups (a run's whitelist).
    """
    pool = tables().space_groups if within is None else {n: record(n) for n in within}
    hits = [
        r
        for r in pool.values()
        if (cls is None or r.crystal_lattice_system == cls) and (ps is None or r.point_symmetry == ps)
    ]
    return (
        frozenset(r.crystal_lattice_system for r in hits),
        frozenset(r.point_symmetry for r in hits),
    )


@lru_cache(maxsize=None)
def _coin(sg: int, nmax: int) -> np.ndarray:
    mults = np.array(record(sg).wyckoff_multiplicities, dtype=np.int64)
    table = kernels.coin_table(mults, nmax)
    table.setflags(write=False)
    return table


def count_compatible(sg: int, n: int) -> bool:
    """Whether ``n`` atoms of one element can be spread over the Wyckoff multiplicities of ``sg``.

    Only multiplicity combinations are checked; the once-only occupancy of
    fixed special positions is ignored, so this is necessary, not sufficient.
    """
    record(sg)
    n = int(n)
    if n < 1:
        raise ValueError(f"atom count must be positive, got {n}")
    return bool(_coin(int(sg), max(n, 64))[n])


def allowed_counts(sg: int, kmax: int) -> np.ndarray:
    """Boolean vector ``[kmax+1]``; entry ``k`` is ``count_compatible(sg, k)`` (entry 0 is False)."""
    out = _coin(int(sg), max(kmax, 64))[: kmax + 1].copy()
    out[0] = False
    return out


def neutrality_feasible(
    counts: Mapping[str, int], oxidation_states: Optional[Mapping[str, Iterable[int]]] = None
) -> bool:
    """Can every atom pick one of its element's oxidation states so the total charge is zero?

    Atoms choose independently, so mixed valence is allowed. ``oxidation_states``
    overrides the table per symbol.
    """
    items = [(s, int(k)) for s, k in counts.items() if int(k) != 0]
    if any(k < 0 for _, k in items):
        raise ValueError("counts must be non-negative")
    if not items:
        return True
    ox = {}
    for s, _ in items:
        states = oxidation_states[s] if oxidation_states and s in oxidation_states else element(s).oxidation_states
        ox[s] = np.array(sorted(states), dtype=np.int64)
    q = sum(k * int(np.abs(ox[s]).max()) for s, k in items)
    q = max(q, 1)
    kmax = max(k for _, k in items)
    sums = np.stack([kernels.element_charge_sums(ox[s], kmax, q) for s, _ in items])
    vec = np.array([k for _, k in items], dtype=np.int64)
    return bool(kernels.reach_of_counts(vec, sums, q)[q])


def lattice_constraint(sg: int) -> LatticeConstraint:
    return tables().lattice_constraints[record(sg).lattice_system]
