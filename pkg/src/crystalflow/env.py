"""The stacked crystal environment: space group -> composition -> lattice parameters.

States are immutable values and the environment is a stateless rule object.
Discrete forward actions share one flat index space (see ``CrystalEnv``
layout attributes); continuous lattice moves carry their 6-vector payload on
the ``Action`` itself.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from . import kernels, symtab
from .symtab import CRYSTAL_LATTICE_SYSTEMS, LATTICE_DIMS, POINT_SYMMETRIES

N_CLS = len(CRYSTAL_LATTICE_SYSTEMS)
N_PS = len(POINT_SYMMETRIES)
N_SG = 230


class EnvError(RuntimeError):
    pass


class InvalidActionError(EnvError):
    """An action that the current mask forbids."""


class TerminalStateError(EnvError):
    pass


class NoParentsError(EnvError):
    pass


class DeadEndError(EnvError):
    """A non-terminal state with an empty mask. Indicates a masking bug."""


class UnsetLatticeError(EnvError):
    pass


class Stage(IntEnum):
    SG = 0
    COMP = 1
    LP = 2
    DONE = 3


class Kind(IntEnum):
    SET_CLS = 0
    SET_PS = 1
    SET_SG = 2
    SG_STOP = 3
    ADD_ATOMS = 4
    COMP_STOP = 5
    LP_FROM_SOURCE = 6
    LP_INCREMENT = 7
    LP_STOP = 8


CONTINUOUS_KINDS = (Kind.LP_FROM_SOURCE, Kind.LP_INCREMENT)


@dataclass(frozen=True)
class Action:
    """One transition. ``index`` is the category / space group / element, ``amount``
    the atom count for ``ADD_ATOMS``, ``values`` the 6-vector for lattice moves."""

    kind: Kind
    index: int = -1
    amount: int = 0
    values: Optional[tuple[float, ...]] = None

    def __repr__(self):
        if self.kind == Kind.ADD_ATOMS:
            return f"AddAtoms({self.index}, {self.amount})"
        if self.values is not None:
            return f"{self.kind.name}({', '.join(f'{v:.4g}' for v in self.values)})"
        if self.index >= 0:
            return f"{self.kind.name}({self.index})"
        return self.kind.name


@dataclass(frozen=True)
class CrystalState:
    """Hybrid state. ``cls``/``ps`` are indices into the category tuples of
    ``symtab``; ``coords`` is ``None`` at the lattice source."""

    stage: Stage
    cls: Optional[int] = None
    ps: Optional[int] = None
    sg: Optional[int] = None
    counts: tuple[int, ...] = ()
    coords: Optional[tuple[float, ...]] = None

    @property
    def is_source(self) -> bool:
        return self.coords is None


@dataclass(frozen=True)
class EnvConfig:
    elements: tuple[str, ...] = symtab.DEFAULT_ELEMENTS
    oxidation_states: Optional[Mapping[str, tuple[int, ...]]] = field(default=None, hash=False)
    space_groups: Optional[tuple[int, ...]] = None  # None -> shipped 113-group list
    max_atoms_per_element: int = 16
    max_atoms: int = 50
    max_elements: int = 5
    enforce_neutrality: bool = True
    enforce_wyckoff: bool = True
    sg_stage: bool = True
    fixed_space_group: int = 1
    composition_stage: bool = True
    fixed_composition: Optional[Mapping[str, int]] = field(default=None, hash=False)
    lp_stage: bool = True
    length_range: tuple[float, float] = (0.9, 100.0)
    angle_range: tuple[float, float] = (50.0, 150.0)
    min_increment: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "elements", tuple(self.elements))
        if self.space_groups is not None:
            object.__setattr__(self, "space_groups", tuple(int(n) for n in self.space_groups))
        if self.oxidation_states is not None:
            object.__setattr__(
                self, "oxidation_states", {k: tuple(int(x) for x in v) for k, v in self.oxidation_states.items()}
            )
        if not (0.0 < self.min_increment < 1.0):
            raise ValueError("min_increment must lie in (0, 1)")
        if not self.composition_stage and not self.fixed_composition:
            raise ValueError("a fixed composition is required when the composition stage is disabled")


class CompositionRules:
    """Composition-stage feasibility: Wyckoff counts, budgets and charge neutrality.

    Masking of ``AddAtoms`` is exact: an addition is allowed only if some
    neutral, budget-respecting completion still exists afterwards, so a
    composition trajectory can never strand itself. Completion tables (fewest
    extra atoms per reachable charge) are cached per (admissible counts,
    unused elements, element budget).
    """

    def __init__(self, config: EnvConfig):
        self.elements = config.elements
        self.kmax = config.max_atoms_per_element
        self.n_max = config.max_atoms
        self.e_max = config.max_elements
        self.neutrality = config.enforce_neutrality
        self.wyckoff = config.enforce_wyckoff
        overrides = config.oxidation_states or {}
        self.ox = [
            np.array(sorted(overrides.get(s, symtab.element(s).oxidation_states)), dtype=np.int64)
            for s in self.elements
        ]
        self.ox_min = np.array([o.min() for o in self.ox])
        self.ox_max = np.array([o.max() for o in self.ox])
        self.q = max(1, self.n_max * int(max(np.abs(o).max() for o in self.ox)))
        self.sums = np.stack([kernels.element_charge_sums(o, self.kmax, self.q) for o in self.ox])
        self._min_atoms: dict[bytes, np.ndarray] = {}
        self._completion: dict[tuple, np.ndarray] = {}
        self._allowed: dict[int, np.ndarray] = {}

    def allowed(self, sg: Optional[int]) -> np.ndarray:
        if sg not in self._allowed:
            if self.wyckoff and sg is not None:
                a = symtab.allowed_counts(sg, self.kmax)
            else:
                a = np.ones(self.kmax + 1, dtype=np.bool_)
                a[0] = False
            a.setflags(write=False)
            self._allowed[sg] = a
        return self._allowed[sg]

    def _min_atoms_for(self, allowed: np.ndarray) -> np.ndarray:
        key = allowed.tobytes()
        table = self._min_atoms.get(key)
        if table is None:
            d, _, width = self.sums.shape
            table = np.full((d, width), kernels.INF_ATOMS, dtype=np.int32)
            for k in np.nonzero(allowed)[0]:
                fresh = self.sums[:, k, :] & (table == kernels.INF_ATOMS)
                table[fresh] = k
            self._min_atoms[key] = table
        return table

    def completion_row(self, allowed: np.ndarray, unused: tuple[int, ...], e_budget: int) -> np.ndarray:
        key = (allowed.tobytes(), unused, e_budget)
        row = self._completion.get(key)
        if row is None:
            width = 2 * self.q + 1
            if e_budget <= 0 or not unused:
                row = np.full(width, kernels.INF_ATOMS, dtype=np.int32)
                row[self.q] = 0
            else:
                min_atoms = np.ascontiguousarray(self._min_atoms_for(allowed)[list(unused)])
                row = kernels.completion_table(min_atoms, e_budget, self.n_max)[e_budget].copy()
            row.setflags(write=False)
            self._completion[key] = row
        return row

    def reach(self, counts: np.ndarray) -> np.ndarray:
        return kernels.reach_of_counts(counts, self.sums, self.q)

    def add_mask(self, counts: np.ndarray, sg: Optional[int]) -> np.ndarray:
        """Boolean ``[D, K+1]``; entry ``[d, k]`` allows ``AddAtoms(d, k)``."""
        n_elem = len(self.elements)
        mask = np.zeros((n_elem, self.kmax + 1), dtype=np.bool_)
        total = int(counts.sum())
        nnz = int(np.count_nonzero(counts))
        if nnz >= self.e_max or total >= self.n_max:
            return mask
        allowed = self.allowed(sg)
        atoms_left = self.n_max - total
        unused = tuple(int(u) for u in np.nonzero(counts == 0)[0])
        if not self.neutrality:
            ks = np.arange(self.kmax + 1) <= atoms_left
            for d in unused:
                mask[d] = allowed & ks
            return mask
        reach = self.reach(counts)
        e_left = self.e_max - nnz - 1
        for d in unused:
            rest = tuple(u for u in unused if u != d)
            row = self.completion_row(allowed, rest, e_left)
            mask[d] = kernels.feasible_counts(reach, self.sums[d], allowed, row, atoms_left)
        return mask

    def stop_ok(self, counts: np.ndarray, sg: Optional[int]) -> bool:
        if not counts.any():
            return False
        if counts.sum() > self.n_max or np.count_nonzero(counts) > self.e_max:
            return False
        allowed = self.allowed(sg)
        if any(not allowed[k] for k in counts if k > 0):
            return False
        if self.neutrality and not self.reach(counts)[self.q]:
            return False
        return True

    def has_start(self, sg: Optional[int]) -> bool:
        return bool(self.add_mask(np.zeros(len(self.elements), dtype=np.int64), sg).any())


class CrystalEnv:
    """Rules of the three-stage environment.

    Forward discrete index layout (``n_actions`` entries)::

        [0, 8)            SetCLS
        [8, 13)           SetPS
        [13, 243)         SetSG(1..230)
        243               SGStop
        [244, 244+D*K)    AddAtoms(d, k) at 244 + d*K + k - 1
        244+D*K           CompStop
        +1, +2, +3        LPFromSource, LPIncrement, LPStop

    Backward index layout (``n_backward`` entries): UnsetCLS, UnsetPS,
    four UnsetSG variants (parent kept cls&ps / cls / ps / neither),
    SGStop, RemoveElement(d) x D, CompStop, ToSource, BackIncrement, LPStop.
    """

    def __init__(self, config: Optional[EnvConfig] = None):
        self.config = config = config or EnvConfig()
        self.elements = config.elements
        self.n_elements = len(config.elements)
        self.kmax = config.max_atoms_per_element
        self.delta = config.min_increment
        for s in self.elements:
            symtab.element(s)
        self.rules = CompositionRules(config)

        self.off_cls = 0
        self.off_ps = N_CLS
        self.off_sg = N_CLS + N_PS
        self.i_sg_stop = self.off_sg + N_SG
        self.off_add = self.i_sg_stop + 1
        self.i_comp_stop = self.off_add + self.n_elements * self.kmax
        self.i_lp_source = self.i_comp_stop + 1
        self.i_lp_inc = self.i_comp_stop + 2
        self.i_lp_stop = self.i_comp_stop + 3
        self.n_actions = self.i_lp_stop + 1

        self.b_unset_cls = 0
        self.b_unset_ps = 1
        self.b_unset_sg = 2  # 4 variants
        self.b_sg_stop = 6
        self.b_remove = 7
        self.b_comp_stop = 7 + self.n_elements
        self.b_to_source = self.b_comp_stop + 1
        self.b_increment = self.b_comp_stop + 2
        self.b_lp_stop = self.b_comp_stop + 3
        self.n_backward = self.b_lp_stop + 1

        if config.composition_stage:
            self.fixed_counts = None
        else:
            unknown = set(config.fixed_composition) - set(self.elements)
            if unknown:
                raise ValueError(f"fixed composition uses elements outside the vocabulary: {sorted(unknown)}")
            self.fixed_counts = tuple(int(config.fixed_composition.get(s, 0)) for s in self.elements)

        if config.sg_stage:
            whitelist = config.space_groups or symtab.tables().default_space_groups
            for n in whitelist:
                symtab.record(n)
            self.space_groups = tuple(sorted(n for n in set(whitelist) if self._sg_usable(n)))
            if not self.space_groups:
                raise ValueError("no configured space group admits a valid composition")
        else:
            symtab.record(config.fixed_space_group)
            if not self._sg_usable(config.fixed_space_group):
                raise ValueError(f"space group {config.fixed_space_group} admits no valid composition")
            self.space_groups = (config.fixed_space_group,)
        self.dropped_space_groups = tuple(
            sorted(set(config.space_groups or symtab.tables().default_space_groups) - set(self.space_groups))
        ) if config.sg_stage else ()
        self._build_sg_index()
        self._mask_cache: dict[CrystalState, np.ndarray] = {}

    # -- setup -------------------------------------------------------------

    def _sg_usable(self, sg: int) -> bool:
        if self.fixed_counts is not None:
            return self.rules.stop_ok(np.array(self.fixed_counts, dtype=np.int64), sg)
        return self.rules.has_start(sg)

    def _build_sg_index(self):
        recs = {n: symtab.record(n) for n in self.space_groups}
        self._sg_cls = {n: CRYSTAL_LATTICE_SYSTEMS.index(r.crystal_lattice_system) for n, r in recs.items()}
        self._sg_ps = {n: POINT_SYMMETRIES.index(r.point_symmetry) for n, r in recs.items()}
        self._matching: dict[tuple, tuple[int, ...]] = {}
        for c in [None, *range(N_CLS)]:
            for p in [None, *range(N_PS)]:
                self._matching[(c, p)] = tuple(
                    n
                    for n in self.space_groups
                    if (c is None or self._sg_cls[n] == c) and (p is None or self._sg_ps[n] == p)
                )

    def matching(self, cls: Optional[int], ps: Optional[int]) -> tuple[int, ...]:
        return self._matching[(cls, ps)]

    # -- index helpers -----------------------------------------------------

    def action_index(self, a: Action) -> int:
        k = a.kind
        if k == Kind.SET_CLS:
            return self.off_cls + a.index
        if k == Kind.SET_PS:
            return self.off_ps + a.index
        if k == Kind.SET_SG:
            return self.off_sg + a.index - 1
        if k == Kind.SG_STOP:
            return self.i_sg_stop
        if k == Kind.ADD_ATOMS:
            return self.off_add + a.index * self.kmax + a.amount - 1
        if k == Kind.COMP_STOP:
            return self.i_comp_stop
        if k == Kind.LP_FROM_SOURCE:
            return self.i_lp_source
        if k == Kind.LP_INCREMENT:
            return self.i_lp_inc
        return self.i_lp_stop

    def action_from_index(self, i: int, values: Optional[Sequence[float]] = None) -> Action:
        i = int(i)
        if i < self.off_ps:
            return Action(Kind.SET_CLS, i)
        if i < self.off_sg:
            return Action(Kind.SET_PS, i - self.off_ps)
        if i < self.i_sg_stop:
            return Action(Kind.SET_SG, i - self.off_sg + 1)
        if i == self.i_sg_stop:
            return Action(Kind.SG_STOP)
        if i < self.i_comp_stop:
            d, k = divmod(i - self.off_add, self.kmax)
            return Action(Kind.ADD_ATOMS, d, k + 1)
        if i == self.i_comp_stop:
            return Action(Kind.COMP_STOP)
        if i == self.i_lp_stop:
            return Action(Kind.LP_STOP)
        kind = Kind.LP_FROM_SOURCE if i == self.i_lp_source else Kind.LP_INCREMENT
        return Action(kind, values=None if values is None else tuple(float(v) for v in values))

    # -- states ------------------------------------------------------------

    def initial_state(self) -> CrystalState:
        cfg = self.config
        zeros = (0,) * self.n_elements
        if cfg.sg_stage:
            return CrystalState(Stage.SG, counts=zeros)
        sg = cfg.fixed_space_group
        cls, ps = self._sg_cls[sg], self._sg_ps[sg]
        if cfg.composition_stage:
            return CrystalState(Stage.COMP, cls, ps, sg, zeros)
        if cfg.lp_stage:
            return CrystalState(Stage.LP, cls, ps, sg, self.fixed_counts)
        raise ValueError("at least one stage must be enabled")

    def is_initial(self, s: CrystalState) -> bool:
        return s == self.initial_state()

    def constraint(self, s: CrystalState) -> symtab.LatticeConstraint:
        if s.sg is None:
            raise UnsetLatticeError("space group not set")
        return symtab.lattice_constraint(s.sg)

    def pinned_coords(self, constraint: symtab.LatticeConstraint) -> dict[int, float]:
        lo, hi = self.config.angle_range
        return {LATTICE_DIMS.index(n): (v - lo) / (hi - lo) for n, v in constraint.fixed_angles.items()}

    # -- forward masks -----------------------------------------------------

    def valid_actions(self, s: CrystalState) -> np.ndarray:
        """Boolean mask over the forward discrete index space."""
        if s.stage == Stage.DONE:
            raise TerminalStateError("no actions from a terminal state")
        cached = self._mask_cache.get(s)
        if cached is not None:
            return cached
        mask = np.zeros(self.n_actions, dtype=np.bool_)
        if s.stage == Stage.SG:
            if s.sg is not None:
                mask[self.i_sg_stop] = True
            else:
                if s.cls is None:
                    for c in range(N_CLS):
                        if self._matching[(c, s.ps)]:
                            mask[self.off_cls + c] = True
                if s.ps is None:
                    for p in range(N_PS):
                        if self._matching[(s.cls, p)]:
                            mask[self.off_ps + p] = True
                for n in self._matching[(s.cls, s.ps)]:
                    mask[self.off_sg + n - 1] = True
        elif s.stage == Stage.COMP:
            counts = np.array(s.counts, dtype=np.int64)
            add = self.rules.add_mask(counts, s.sg)
            mask[self.off_add : self.i_comp_stop] = add[:, 1:].reshape(-1)
            mask[self.i_comp_stop] = self.rules.stop_ok(counts, s.sg)
        else:
            if s.is_source:
                mask[self.i_lp_source] = True
            else:
                mask[self.i_lp_stop] = True
                mask[self.i_lp_inc] = self._can_increment(s)
        if len(self._mask_cache) > 200_000:
            self._mask_cache.clear()
        mask.setflags(write=False)
        self._mask_cache[s] = mask
        return mask

    def _can_increment(self, s: CrystalState) -> bool:
        reps = self.constraint(s).representatives
        return all(1.0 - s.coords[i] >= self.delta for i in reps)

    def is_valid(self, s: CrystalState, a: Action) -> bool:
        if s.stage == Stage.DONE:
            return False
        idx = self.action_index(a)
        if not self.valid_actions(s)[idx]:
            return False
        if a.kind in CONTINUOUS_KINDS:
            return self._continuous_ok(s, a)
        return True

    def _continuous_ok(self, s: CrystalState, a: Action) -> bool:
        if a.values is None or len(a.values) != 6:
            return False
        v = np.asarray(a.values, dtype=np.float64)
        reps = self.constraint(s).representatives
        if a.kind == Kind.LP_FROM_SOURCE:
            return all(0.0 <= v[i] <= 1.0 for i in reps)
        x = np.asarray(s.coords)
        tol = 1e-12
        return all(v[i] >= self.delta - tol and x[i] + v[i] <= 1.0 + tol for i in reps)

    # -- transitions -------------------------------------------------------

    def step(self, s: CrystalState, a: Action) -> CrystalState:
        if s.stage == Stage.DONE:
            raise TerminalStateError("cannot step from a terminal state")
        if not self.is_valid(s, a):
            raise InvalidActionError(f"{a!r} is masked in {s!r}")
        cfg = self.config
        k = a.kind
        if k == Kind.SET_CLS:
            return replace(s, cls=a.index)
        if k == Kind.SET_PS:
            return replace(s, ps=a.index)
        if k == Kind.SET_SG:
            return replace(s, sg=a.index, cls=self._sg_cls[a.index], ps=self._sg_ps[a.index])
        if k == Kind.SG_STOP:
            if cfg.composition_stage:
                return replace(s, stage=Stage.COMP)
            return replace(s, stage=Stage.LP if cfg.lp_stage else Stage.DONE, counts=self.fixed_counts)
        if k == Kind.ADD_ATOMS:
            counts = list(s.counts)
            counts[a.index] = a.amount
            return replace(s, counts=tuple(counts))
        if k == Kind.COMP_STOP:
            return replace(s, stage=Stage.LP if cfg.lp_stage else Stage.DONE)
        if k == Kind.LP_STOP:
            return replace(s, stage=Stage.DONE)
        c = self.constraint(s)
        if k == Kind.LP_FROM_SOURCE:
            reps = np.asarray(a.values, dtype=np.float64)
            return replace(s, coords=self._tie(reps, c))
        x = np.array(s.coords, dtype=np.float64)
        u = np.asarray(a.values, dtype=np.float64)
        new = x.copy()
        for i in c.representatives:
            new[i] = min(x[i] + u[i], 1.0)
        return replace(s, coords=self._tie(new, c))

    def _tie(self, values: np.ndarray, c: symtab.LatticeConstraint) -> tuple[float, ...]:
        pinned = self.pinned_coords(c)
        out = []
        for i, rep in enumerate(c.tie_map):
            out.append(pinned[i] if rep < 0 else float(values[rep]))
        return tuple(out)

    # -- backward ----------------------------------------------------------

    def backward_mask(self, s: CrystalState) -> np.ndarray:
        """Boolean mask over the backward index space (which parent to go back to)."""
        if self.is_initial(s):
            raise NoParentsError("the source state has no parents")
        mask = np.zeros(self.n_backward, dtype=np.bool_)
        cfg = self.config
        if s.stage == Stage.SG:
            if s.sg is not None:
                mask[self.b_unset_sg : self.b_unset_sg + 4] = True
            else:
                mask[self.b_unset_cls] = s.cls is not None
                mask[self.b_unset_ps] = s.ps is not None
        elif s.stage == Stage.COMP:
            if any(s.counts):
                for d, k in enumerate(s.counts):
                    mask[self.b_remove + d] = k > 0
            else:
                mask[self.b_sg_stop] = True
        elif s.stage == Stage.LP:
            if s.is_source:
                mask[self.b_comp_stop if cfg.composition_stage else self.b_sg_stop] = True
            else:
                mask[self.b_to_source] = True
                mask[self.b_increment] = self._can_back_increment(s)
        elif cfg.lp_stage:
            mask[self.b_lp_stop] = True
        else:
            mask[self.b_comp_stop if cfg.composition_stage else self.b_sg_stop] = True
        return mask

    def _can_back_increment(self, s: CrystalState) -> bool:
        reps = self.constraint(s).representatives
        return all(s.coords[i] >= self.delta for i in reps)

    def backward_step(
        self, s: CrystalState, b: int, values: Optional[Sequence[float]] = None
    ) -> tuple[CrystalState, Action]:
        """Parent and forward action for backward choice ``b``.

        ``values`` is the increment vector for ``b == b_increment``.
        """
        if not self.backward_mask(s)[b]:
            raise InvalidActionError(f"backward choice {b} is masked in {s!r}")
        if b == self.b_unset_cls:
            return replace(s, cls=None), Action(Kind.SET_CLS, s.cls)
        if b == self.b_unset_ps:
            return replace(s, ps=None), Action(Kind.SET_PS, s.ps)
        if self.b_unset_sg <= b < self.b_unset_sg + 4:
            variant = b - self.b_unset_sg
            keep_cls = variant in (0, 1)
            keep_ps = variant in (0, 2)
            parent = replace(s, sg=None, cls=s.cls if keep_cls else None, ps=s.ps if keep_ps else None)
            return parent, Action(Kind.SET_SG, s.sg)
        if b == self.b_sg_stop:
            return replace(s, stage=Stage.SG, counts=(0,) * self.n_elements), Action(Kind.SG_STOP)
        if self.b_remove <= b < self.b_remove + self.n_elements:
            d = b - self.b_remove
            counts = list(s.counts)
            k = counts[d]
            counts[d] = 0
            return replace(s, counts=tuple(counts)), Action(Kind.ADD_ATOMS, d, k)
        if b == self.b_comp_stop:
            return replace(s, stage=Stage.COMP, coords=None), Action(Kind.COMP_STOP)
        if b == self.b_to_source:
            return replace(s, coords=None), Action(Kind.LP_FROM_SOURCE, values=s.coords)
        if b == self.b_increment:
            if values is None:
                raise InvalidActionError("backward increment needs an increment vector")
            c = self.constraint(s)
            u = np.asarray(values, dtype=np.float64)
            x = np.array(s.coords, dtype=np.float64)
            parent = x.copy()
            u_full = np.zeros(6)
            for i in c.representatives:
                parent[i] = max(x[i] - u[i], 0.0)
                u_full[i] = u[i]
            u_tied = self._tie(u_full, c)
            u_tied = tuple(u_tied[i] if c.tie_map[i] >= 0 else 0.0 for i in range(6))
            return replace(s, coords=self._tie(parent, c)), Action(Kind.LP_INCREMENT, values=u_tied)
        return replace(s, stage=Stage.LP), Action(Kind.LP_STOP)

    def backward_choice(self, parent: CrystalState, a: Action) -> int:
        """Backward index that undoes ``a`` applied at ``parent``."""
        k = a.kind
        if k == Kind.SET_CLS:
            return self.b_unset_cls
        if k == Kind.SET_PS:
            return self.b_unset_ps
        if k == Kind.SET_SG:
            variant = {(True, True): 0, (True, False): 1, (False, True): 2, (False, False): 3}
            return self.b_unset_sg + variant[(parent.cls is not None, parent.ps is not None)]
        if k == Kind.SG_STOP:
            return self.b_sg_stop
        if k == Kind.ADD_ATOMS:
            return self.b_remove + a.index
        if k == Kind.COMP_STOP:
            return self.b_comp_stop
        if k == Kind.LP_FROM_SOURCE:
            return self.b_to_source
        if k == Kind.LP_INCREMENT:
            return self.b_increment
        return self.b_lp_stop

    def parent_transitions(self, s: CrystalState) -> list[tuple[CrystalState, Action]]:
        """All discrete ``(parent, action)`` pairs with ``step(parent, action) == s``.

        For a lattice state that also has incremental parents, the returned list
        contains a single ``(None, Action(LP_INCREMENT))`` placeholder standing for
        the continuous family ``{(x - u, LPIncrement(u)) : delta <= u_i <= x_i}``.
        """
        mask = self.backward_mask(s)
        out = []
        for b in np.nonzero(mask)[0]:
            if b == self.b_increment:
                out.append((None, Action(Kind.LP_INCREMENT)))
            else:
                out.append(self.backward_step(s, int(b)))
        return out

    # -- lattice geometry --------------------------------------------------

    def cube_to_physical(self, s: CrystalState) -> tuple[float, ...]:
        if s.coords is None:
            raise UnsetLatticeError("lattice parameters are still at the source")
        return cube_to_physical(s.coords, self.constraint(s), self.config.length_range, self.config.angle_range)

    # -- records -----------------------------------------------------------

    def to_record(self, s: CrystalState) -> dict:
        if s.stage != Stage.DONE:
            raise EnvError("only terminal states serialise to records")
        rec = symtab.record(s.sg)
        lattice = None
        if s.coords is not None:
            lattice = dict(zip(LATTICE_DIMS, self.cube_to_physical(s)))
        return {
            "space_group": s.sg,
            "crystal_lattice_system": rec.crystal_lattice_system,
            "point_symmetry": rec.point_symmetry,
            "composition": {sym: int(k) for sym, k in zip(self.elements, s.counts) if k > 0},
            "lattice": lattice,
        }

    def validate_terminal(self, s: CrystalState, tol: float = 1e-12) -> list[str]:
        """Re-check C1-C4 on a terminal state from the tables; returns the violations."""
        problems = []
        rec = symtab.record(s.sg)
        if CRYSTAL_LATTICE_SYSTEMS[s.cls] != rec.crystal_lattice_system:
            problems.append("crystal-lattice system disagrees with space group")
        if POINT_SYMMETRIES[s.ps] != rec.point_symmetry:
            problems.append("point symmetry disagrees with space group")
        comp = {sym: k for sym, k in zip(self.elements, s.counts) if k > 0}
        if not comp:
            problems.append("empty composition")
        if self.config.enforce_wyckoff:
            for sym, k in comp.items():
                if not symtab.count_compatible(s.sg, k):
                    problems.append(f"{k} {sym} incompatible with Wyckoff multiplicities of {s.sg}")
        if self.config.enforce_neutrality and not symtab.neutrality_feasible(comp, self.config.oxidation_states):
            problems.append("composition cannot be charge neutral")
        if self.config.lp_stage:
            c = symtab.lattice_constraint(s.sg)
            x = s.coords
            for group in c.tied_length_groups + c.tied_angle_groups:
                vals = [x[LATTICE_DIMS.index(n)] for n in group]
                if max(vals) - min(vals) > tol:
                    problems.append(f"tie {group} broken")
            for i, v in self.pinned_coords(c).items():
                if abs(x[i] - v) > tol:
                    problems.append(f"{LATTICE_DIMS[i]} not pinned")
            if any(not (0.0 <= v <= 1.0) for v in x):
                problems.append("lattice coordinate outside the unit cube")
        return problems

    def greedy_completion(self, sg: int) -> list[CrystalState]:
        """A complete trajectory through ``sg`` built from the first valid action at each step."""
        s = self.initial_state()
        path = [s]
        while s.stage != Stage.DONE:
            mask = self.valid_actions(s)
            if s.stage == Stage.SG and s.sg is None:
                a = Action(Kind.SET_SG, sg)
            elif s.stage == Stage.COMP and mask[self.i_comp_stop]:
                a = Action(Kind.COMP_STOP)
            elif s.stage == Stage.LP and s.is_source:
                a = Action(Kind.LP_FROM_SOURCE, values=(0.5,) * 6)
            elif s.stage == Stage.LP:
                a = Action(Kind.LP_STOP)
            else:
                valid = np.nonzero(mask)[0]
                if valid.size == 0:
                    raise DeadEndError(f"dead end at {s!r}")
                a = self.action_from_index(valid[0])
            s = self.step(s, a)
            path.append(s)
        return path


def cube_to_physical(
    coords: Sequence[float],
    constraint: symtab.LatticeConstraint,
    length_range: tuple[float, float] = (0.9, 100.0),
    angle_range: tuple[float, float] = (50.0, 150.0),
) -> tuple[float, ...]:
    """Map unit-cube coordinates to ``(a, b, c, alpha, beta, gamma)``.

    Pinned angles come out at their exact table value; tied dims share the
    representative's value.
    """
    if coords is None:
        raise UnsetLatticeError("lattice parameters are still at the source")
    lmin, lmax = length_range
    tmin, tmax = angle_range
    out = []
    for i, name in enumerate(LATTICE_DIMS):
        rep = constraint.tie_map[i]
        if rep < 0:
            out.append(float(constraint.fixed_angles[name]))
            continue
        x = coords[rep]
        if i < 3:
            out.append(lmin + x * (lmax - lmin))
        else:
            out.append(tmin + x * (tmax - tmin))
    return tuple(out)


def physical_to_cube(
    params: Sequence[float],
    length_range: tuple[float, float] = (0.9, 100.0),
    angle_range: tuple[float, float] = (50.0, 150.0),
) -> tuple[float, ...]:
    lmin, lmax = length_range
    tmin, tmax = angle_range
    return tuple(
        (v - lmin) / (lmax - lmin) if i < 3 else (v - tmin) / (tmax - tmin) for i, v in enumerate(params)
    )


def max_trajectory_length(env: CrystalEnv) -> int:
    """Upper bound on the number of transitions of any trajectory."""
    cfg = env.config
    n = 0
    if cfg.sg_stage:
        n += 3 + 1  # at most cls, ps, sg, then stop
    if cfg.composition_stage:
        n += cfg.max_elements + 1
    if cfg.lp_stage:
        n += 1 + math.ceil(1.0 / cfg.min_increment) + 1
    return n
