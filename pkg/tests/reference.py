"""Independent crystallographic reference data used as test oracles.

Typed in from the standard crystal-class listing (space-group number ranges,
Hermann-Mauguin point-group symbols and orders). Nothing here is read from
the package data files.
"""

# (point group, first SG, last SG, order)
CRYSTAL_CLASSES = [
    ("1", 1, 1, 1), ("-1", 2, 2, 2),
    ("2", 3, 5, 2), ("m", 6, 9, 2), ("2/m", 10, 15, 4),
    ("222", 16, 24, 4), ("mm2", 25, 46, 4), ("mmm", 47, 74, 8),
    ("4", 75, 80, 4), ("-4", 81, 82, 4), ("4/m", 83, 88, 8), ("422", 89, 98, 8),
    ("4mm", 99, 110, 8), ("-42m", 111, 122, 8), ("4/mmm", 123, 142, 16),
    ("3", 143, 146, 3), ("-3", 147, 148, 6), ("32", 149, 155, 6), ("3m", 156, 161, 6), ("-3m", 162, 167, 12),
    ("6", 168, 173, 6), ("-6", 174, 174, 6), ("6/m", 175, 176, 12), ("622", 177, 182, 12),
    ("6mm", 183, 186, 12), ("-6m2", 187, 190, 12), ("6/mmm", 191, 194, 24),
    ("23", 195, 199, 12), ("m-3", 200, 206, 24), ("432", 207, 214, 24), ("-43m", 215, 220, 24), ("m-3m", 221, 230, 48),
]

CRYSTAL_SYSTEM_RANGES = {
    "triclinic": (1, 2),
    "monoclinic": (3, 15),
    "orthorhombic": (16, 74),
    "tetragonal": (75, 142),
    "trigonal": (143, 167),
    "hexagonal": (168, 194),
    "cubic": (195, 230),
}

RHOMBOHEDRAL_GROUPS = {146, 148, 155, 160, 161, 166, 167}

# the 11 centrosymmetric (Laue) classes
LAUE_CLASSES = {"-1", "2/m", "mmm", "4/m", "4/mmm", "-3", "-3m", "6/m", "6/mmm", "m-3", "m-3m"}
# the 11 chiral (Sohncke) classes
CHIRAL_CLASSES = {"1", "2", "222", "4", "422", "3", "32", "6", "622", "23", "432"}
# the 10 polar classes
POLAR_CLASSES = {"1", "2", "m", "mm2", "4", "4mm", "3", "3m", "6", "6mm"}

# textbook totals over the 230 types
N_CENTROSYMMETRIC = 92
N_SOHNCKE = 65
N_POLAR = 68

CENTERING_FACTOR = {"P": 1, "A": 2, "B": 2, "C": 2, "I": 2, "F": 4, "R": 3}

# which lattice parameters are free / tied / fixed, by lattice system
LATTICE_RULES = {
    "triclinic": {"ties": [], "fixed": {}},
    "monoclinic": {"ties": [], "fixed": {"alpha": 90.0, "gamma": 90.0}},
    "orthorhombic": {"ties": [], "fixed": {"alpha": 90.0, "beta": 90.0, "gamma": 90.0}},
    "tetragonal": {"ties": [("a", "b")], "fixed": {"alpha": 90.0, "beta": 90.0, "gamma": 90.0}},
    "rhombohedral": {"ties": [("a", "b", "c"), ("alpha", "beta", "gamma")], "fixed": {}},
    "hexagonal": {"ties": [("a", "b")], "fixed": {"alpha": 90.0, "beta": 90.0, "gamma": 120.0}},
    "cubic": {"ties": [("a", "b", "c")], "fixed": {"alpha": 90.0, "beta": 90.0, "gamma": 90.0}},
}


def crystal_class(n: int):
    for pg, lo, hi, order in CRYSTAL_CLASSES:
        if lo <= n <= hi:
            return pg, order
    raise KeyError(n)


def crystal_system(n: int) -> str:
    for name, (lo, hi) in CRYSTAL_SYSTEM_RANGES.items():
        if lo <= n <= hi:
            return name
    raise KeyError(n)


def lattice_system(n: int) -> str:
    cs = crystal_system(n)
    if cs == "trigonal":
        return "rhombohedral" if n in RHOMBOHEDRAL_GROUPS else "hexagonal"
    return cs


def crystal_lattice_system(n: int) -> str:
    cs = crystal_system(n)
    if cs == "trigonal":
        return "trigonal-rhombohedral" if n in RHOMBOHEDRAL_GROUPS else "trigonal-hexagonal"
    if cs == "hexagonal":
        return "hexagonal-hexagonal"
    return cs


def point_symmetry(n: int) -> str:
    pg, _ = crystal_class(n)
    chiral, polar = pg in CHIRAL_CLASSES, pg in POLAR_CLASSES
    if chiral and polar:
        return "enantiomorphic-polar"
    if chiral:
        return "enantiomorphic"
    if polar:
        return "polar"
    if pg in LAUE_CLASSES:
        return "centrosymmetric"
    return "non-centrosymmetric"


def representable(n: int, multiplicities) -> bool:
    """Plain recursive coin check, independent of the package DP."""
    mults = sorted(set(multiplicities), reverse=True)

    def rec(rest, i):
        if rest == 0:
            return True
        if i == len(mults):
            return False
        m = mults[i]
        return any(rec(rest - j * m, i + 1) for j in range(rest // m, -1, -1))

    return rec(n, 0)


def charge_set(ox_states, k: int) -> set[int]:
    """Totals reachable by k atoms each picking one state (set iteration)."""
    sums = {0}
    for _ in range(k):
        sums = {s + o for s in sums for o in ox_states}
    return sums


def neutral(counts: dict, ox: dict) -> bool:
    totals = {0}
    for sym, k in counts.items():
        if k:
            totals = {a + b for a in totals for b in charge_set(ox[sym], k)}
    return 0 in totals


LATTICE_NAMES = ("a", "b", "c", "alpha", "beta", "gamma")


def terminal_violations(state, elements, ox, config, cls_names, ps_names, tol=1e-12) -> list[str]:
    """Re-check a terminal crystal using only this module's tables.

    ``state`` needs ``sg``, ``cls``, ``ps``, ``counts`` and ``coords`` (unit
    cube); ``config`` supplies the composition limits and the angle range for
    pinned angles.
    """
    out = []
    sg = state.sg
    if cls_names[state.cls] != crystal_lattice_system(sg):
        out.append("crystal-lattice system")
    if ps_names[state.ps] != point_symmetry(sg):
        out.append("point symmetry")
    comp = {e: k for e, k in zip(elements, state.counts) if k}
    if not comp:
        out.append("empty")
    if len(comp) > config.max_elements:
        out.append("too many elements")
    if sum(comp.values()) > config.max_atoms:
        out.append("too many atoms")
    if any(k > config.max_atoms_per_element for k in comp.values()):
        out.append("per-element cap")
    if not neutral(comp, ox):
        out.append("not neutral")
    for e, k in comp.items():
        if not representable(k, WYCKOFF[sg]):
            out.append(f"wyckoff {e}{k} in {sg}")
    if state.coords is not None:
        x = dict(zip(LATTICE_NAMES, state.coords))
        rules = LATTICE_RULES[lattice_system(sg)]
        for tie in rules["ties"]:
            if max(x[d] for d in tie) - min(x[d] for d in tie) > tol:
                out.append(f"tie {tie}")
        lo, hi = config.angle_range
        for d, deg in rules["fixed"].items():
            if abs(x[d] - (deg - lo) / (hi - lo)) > tol:
                out.append(f"pinned {d}")
        if any(not 0.0 <= v <= 1.0 for v in state.coords):
            out.append("outside cube")
    return out


# filled lazily by tests that need multiplicities (taken from the package
# tables, whose general positions are checked against CRYSTAL_CLASSES above)
WYCKOFF: dict[int, tuple[int, ...]] = {}
