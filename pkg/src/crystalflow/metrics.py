"""Energy and diversity summaries of sample sets.

A sample set is a sequence of ``(record, energy)`` pairs where ``record`` is
the canonical terminal dict (see ``records``). Every report is a pure
function of the multiset of samples.
"""
from __future__ import annotations

from collections import Counter
from typing import Optional, Sequence

import numpy as np

from . import symtab
from .records import canonical_key
from .symtab import CRYSTAL_LATTICE_SYSTEMS, LATTICE_DIMS, POINT_SYMMETRIES

Sample = tuple[dict, float]

DEFAULT_THRESHOLDS = (-2.0,)
DEFAULT_BIN_EDGES = tuple(np.round(np.arange(-6.0, 2.01, 0.25), 2).tolist())


class EmptySampleSetError(ValueError):
    pass


def _check(samples: Sequence[Sample]) -> None:
    if len(samples) == 0:
        raise EmptySampleSetError("sample set is empty")


def fraction_below(energies: Sequence[float], threshold: float) -> float:
    e = np.asarray(energies, dtype=np.float64)
    if e.size == 0:
        raise EmptySampleSetError("sample set is empty")
    return float(np.count_nonzero(e < threshold) / e.size)


def energy_report(
    samples: Sequence[Sample],
    thresholds: Sequence[float] = DEFAULT_THRESHOLDS,
    bin_edges: Sequence[float] = DEFAULT_BIN_EDGES,
) -> dict:
    """Median, mean, extrema, strict ``fraction_below`` per threshold and a histogram.

    Energies outside the bin edges are reported as ``underflow`` / ``overflow``.
    """
    _check(samples)
    e = np.sort(np.array([float(en) for _, en in samples]))
    edges = np.asarray(bin_edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin edges must be strictly increasing with at least two entries")
    counts, _ = np.histogram(e, bins=edges)
    return {
        "n": int(e.size),
        "median": float(np.median(e)),
        "mean": float(np.mean(e)),
        "std": float(np.std(e)),
        "min": float(e[0]),
        "max": float(e[-1]),
        "fraction_below": {repr(float(t)): fraction_below(e, t) for t in thresholds},
        "histogram": {
            "edges": edges.tolist(),
            "counts": counts.astype(int).tolist(),
            "underflow": int(np.count_nonzero(e < edges[0])),
            "overflow": int(np.count_nonzero(e > edges[-1])),
        },
    }


def diversity_report(
    samples: Sequence[Sample],
    elements: Optional[Sequence[str]] = None,
    space_groups: Optional[Sequence[int]] = None,
) -> dict:
    """Element prevalence, binarised co-occurrence, space-group histogram, coverage and lattice stats.

    ``elements`` / ``space_groups`` define the configured vocabulary used as
    the coverage denominator (default: the 12 default elements and the shipped
    space-group list).
    """
    _check(samples)
    elements = list(elements or symtab.DEFAULT_ELEMENTS)
    space_groups = sorted(space_groups or symtab.tables().default_space_groups)
    seen_elements = {s for rec, _ in samples for s in rec["composition"]}
    for s in sorted(seen_elements - set(elements), key=lambda s: symtab.element(s).Z):
        elements.append(s)
    pos = {s: i for i, s in enumerate(elements)}

    stoich = np.zeros(len(elements), dtype=np.int64)
    binary = np.zeros(len(elements), dtype=np.int64)
    cooc = np.zeros((len(elements), len(elements)), dtype=np.int64)
    sg_hist: Counter = Counter()
    cls_hist: Counter = Counter()
    ps_hist: Counter = Counter()
    n_elements_hist: Counter = Counter()
    lattice_rows = []
    for rec, _ in samples:
        idx = [pos[s] for s in rec["composition"]]
        for s, k in rec["composition"].items():
            stoich[pos[s]] += int(k)
        binary[idx] += 1
        cooc[np.ix_(idx, idx)] += 1
        sg_hist[int(rec["space_group"])] += 1
        cls_hist[rec["crystal_lattice_system"]] += 1
        ps_hist[rec["point_symmetry"]] += 1
        n_elements_hist[len(idx)] += 1
        if rec.get("lattice") is not None:
            lattice_rows.append([float(rec["lattice"][d]) for d in LATTICE_DIMS])

    configured_cls = {symtab.record(n).crystal_lattice_system for n in space_groups}
    configured_ps = {symtab.record(n).point_symmetry for n in space_groups}
    lattice = None
    if lattice_rows:
        arr = np.array(lattice_rows)
        lattice = {
            d: {
                "mean": float(arr[:, i].mean()),
                "std": float(arr[:, i].std()),
                "min": float(arr[:, i].min()),
                "median": float(np.median(arr[:, i])),
                "max": float(arr[:, i].max()),
            }
            for i, d in enumerate(LATTICE_DIMS)
        }
    sg_hits = set(sg_hist) & set(space_groups)
    return {
        "n": len(samples),
        "elements": elements,
        "element_prevalence": {
            "stoichiometric": dict(zip(elements, stoich.tolist())),
            "binary": dict(zip(elements, binary.tolist())),
        },
        "cooccurrence": cooc.tolist(),
        "n_elements_histogram": {str(k): n_elements_hist[k] for k in sorted(n_elements_hist)},
        "space_group_histogram": {str(k): sg_hist[k] for k in sorted(sg_hist)},
        "crystal_lattice_system_histogram": {c: cls_hist[c] for c in CRYSTAL_LATTICE_SYSTEMS if cls_hist[c]},
        "point_symmetry_histogram": {p: ps_hist[p] for p in POINT_SYMMETRIES if ps_hist[p]},
        "coverage": {
            "space_groups": coverage(len(sg_hits), len(space_groups)),
            "crystal_lattice_systems": coverage(len(set(cls_hist) & configured_cls), len(configured_cls)),
            "point_symmetries": coverage(len(set(ps_hist) & configured_ps), len(configured_ps)),
            "elements": coverage(int(np.count_nonzero(binary)), len(elements)),
        },
        "lattice": lattice,
    }


def coverage(observed: int, configured: int) -> dict:
    if configured <= 0:
        raise ValueError("configured category count must be positive")
    return {"observed": int(observed), "configured": int(configured), "fraction": observed / configured}


def topk(samples: Sequence[Sample], k: int) -> list[Sample]:
    """The ``k`` lowest-energy samples; ties broken by ``records.canonical_key``."""
    if k < 0 or k > len(samples):
        raise ValueError(f"k={k} outside [0, {len(samples)}]")
    return sorted(samples, key=lambda s: (float(s[1]), canonical_key(s[0])))[:k]
