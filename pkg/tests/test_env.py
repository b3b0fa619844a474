import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from crystalflow import symtab
from crystalflow.env import (
    Action,
    CrystalEnv,
    EnvConfig,
    InvalidActionError,
    Kind,
    NoParentsError,
    Stage,
    TerminalStateError,
    UnsetLatticeError,
    cube_to_physical,
    max_trajectory_length,
    physical_to_cube,
)
from crystalflow.gfn import rollout, trajectory_rng
from crystalflow.oracle import enumerate_terminals
from crystalflow.symtab import CRYSTAL_LATTICE_SYSTEMS, POINT_SYMMETRIES

import reference as ref
from conftest import cached_env


ref.WYCKOFF.update({n: symtab.record(n).wyckoff_multiplicities for n in range(1, 231)})

SMALL = dict(
    elements=("Li", "O", "F", "Mg", "Fe"),
    space_groups=(1, 2, 5, 12, 62, 139, 148, 160, 166, 186, 194, 221, 225, 227),
    max_atoms_per_element=8,
    max_atoms=20,
    max_elements=3,
)


def _check(env, s):
    ox = {e: symtab.element(e).oxidation_states for e in env.elements}
    return ref.terminal_violations(s, env.elements, ox, env.config, CRYSTAL_LATTICE_SYSTEMS, POINT_SYMMETRIES)


def test_index_layout_roundtrip(small_env):
    env = small_env
    for i in range(env.n_actions):
        values = (0.5,) * 6 if i in (env.i_lp_source, env.i_lp_inc) else None
        assert env.action_index(env.action_from_index(i, values)) == i
    assert env.n_actions == 8 + 5 + 230 + 1 + env.n_elements * env.kmax + 1 + 3
    assert env.n_backward == 7 + env.n_elements + 4


def test_initial_state_and_stage_order(small_env):
    s = small_env.initial_state()
    assert s.stage == Stage.SG and s.sg is None and not any(s.counts)
    with pytest.raises(NoParentsError):
        small_env.backward_mask(s)
    mask = small_env.valid_actions(s)
    # composition and lattice moves are closed before a space group is chosen
    assert not mask[small_env.off_add :].any()
    assert not mask[small_env.i_sg_stop]


def test_sg_stage_masks_follow_categories(small_env):
    env = small_env
    s = env.initial_state()
    cubic = CRYSTAL_LATTICE_SYSTEMS.index("cubic")
    s = env.step(s, Action(Kind.SET_CLS, cubic))
    m = env.valid_actions(s)
    allowed = {n for n in range(1, 231) if m[env.off_sg + n - 1]}
    assert allowed == {n for n in env.space_groups if ref.crystal_lattice_system(n) == "cubic"}
    assert not m[env.off_cls : env.off_ps].any()
    ps_allowed = {POINT_SYMMETRIES[p] for p in range(5) if m[env.off_ps + p]}
    assert ps_allowed == {ref.point_symmetry(n) for n in allowed}
    with pytest.raises(InvalidActionError):
        env.step(s, Action(Kind.SET_SG, 1))


def test_terminal_state_refuses_actions(comp_env):
    t = comp_env.greedy_completion(1)[-1]
    assert t.stage == Stage.DONE
    with pytest.raises(TerminalStateError):
        comp_env.valid_actions(t)
    with pytest.raises(TerminalStateError):
        comp_env.step(t, Action(Kind.COMP_STOP))


def test_composition_stage_rejects_readding(small_env):
    env = small_env
    s = env.initial_state()
    s = env.step(s, Action(Kind.SET_SG, 1))
    s = env.step(s, Action(Kind.SG_STOP))
    s = env.step(s, Action(Kind.ADD_ATOMS, env.elements.index("Li"), 2))
    assert not env.valid_actions(s)[env.action_index(Action(Kind.ADD_ATOMS, env.elements.index("Li"), 1))]
    # Li2 alone is not neutral
    assert not env.valid_actions(s)[env.i_comp_stop]
    s = env.step(s, Action(Kind.ADD_ATOMS, env.elements.index("O"), 1))
    assert env.valid_actions(s)[env.i_comp_stop]


@pytest.mark.parametrize("seed", range(40))
def test_uniform_rollouts_are_valid_and_reversible(small_env, seed):
    env = small_env
    traj = rollout(None, env, 1.0, trajectory_rng(seed, 0, 0))
    assert len(traj) <= max_trajectory_length(env)
    t = traj.terminal
    assert t.stage == Stage.DONE
    assert _check(env, t) == []
    assert env.validate_terminal(t) == []
    for parent, a, child, b in zip(traj.states[:-1], traj.actions, traj.states[1:], traj.bchoices):
        assert env.backward_mask(child)[b]
        back, a_back = env.backward_step(child, int(b), a.values)
        assert a_back.kind == a.kind
        if a.kind == Kind.LP_INCREMENT:
            np.testing.assert_allclose(back.coords, parent.coords, atol=1e-12)
            assert back.stage == parent.stage and back.counts == parent.counts
            continue
        assert back == parent
        if a.kind == Kind.LP_FROM_SOURCE:
            assert a_back.values == child.coords
        else:
            assert a_back == a
        assert env.step(parent, a) == child


def test_parent_transitions_cover_trajectory(small_env):
    env = small_env
    for seed in range(10):
        traj = rollout(None, env, 1.0, trajectory_rng(seed, 1, 0))
        for parent, child in zip(traj.states[:-1], traj.states[1:]):
            parents = env.parent_transitions(child)
            discrete = [p for p, _ in parents if p is not None]
            has_inc = any(p is None for p, _ in parents)
            assert parent in discrete or (has_inc and parent.coords is not None)
            for p, a in parents:
                if p is not None:
                    assert env.step(p, a) == child


def test_sg_only_unset_variants(small_env):
    env = small_env
    s0 = env.initial_state()
    s = env.step(s0, Action(Kind.SET_SG, 225))
    assert env.backward_mask(s)[env.b_unset_sg : env.b_unset_sg + 4].all()
    parents = {env.backward_step(s, env.b_unset_sg + v)[0] for v in range(4)}
    assert s0 in parents and len(parents) == 4


def test_lattice_increment_bounds(cubic_lp_env):
    env = cubic_lp_env
    s = env.initial_state()
    assert s.stage == Stage.LP and s.is_source
    s = env.step(s, Action(Kind.LP_FROM_SOURCE, values=(0.85,) + (0.0,) * 5))
    assert len(set(s.coords[:3])) == 1
    # remaining room 0.15 >= delta: increments in [0.1, 0.15] are valid
    assert env.valid_actions(s)[env.i_lp_inc]
    assert env.is_valid(s, Action(Kind.LP_INCREMENT, values=(0.12,) + (0.0,) * 5))
    assert not env.is_valid(s, Action(Kind.LP_INCREMENT, values=(0.05,) + (0.0,) * 5))
    assert not env.is_valid(s, Action(Kind.LP_INCREMENT, values=(0.2,) + (0.0,) * 5))
    s = env.step(s, Action(Kind.LP_INCREMENT, values=(0.12,) + (0.0,) * 5))
    assert not env.valid_actions(s)[env.i_lp_inc]
    assert env.valid_actions(s)[env.i_lp_stop]


def test_cubic_angles_come_out_exact(cubic_lp_env):
    env = cubic_lp_env
    s = env.step(env.initial_state(), Action(Kind.LP_FROM_SOURCE, values=(0.3,) * 6))
    a, b, c, al, be, ga = env.cube_to_physical(s)
    assert a == b == c
    assert (al, be, ga) == (90.0, 90.0, 90.0)


def test_hexagonal_gamma_is_exactly_120():
    c = symtab.lattice_constraint(194)
    phys = cube_to_physical((0.2, 0.2, 0.7, 0.4, 0.4, 0.7), c)
    assert phys[5] == 120.0 and phys[3] == phys[4] == 90.0
    with pytest.raises(UnsetLatticeError):
        cube_to_physical(None, c)


@given(st.lists(st.floats(0.0, 1.0), min_size=6, max_size=6))
def test_physical_cube_roundtrip(x):
    phys = cube_to_physical(x, symtab.lattice_constraint(1))
    np.testing.assert_allclose(physical_to_cube(phys), x, atol=1e-12)


def test_enumerated_terminals_are_unique_and_valid(comp_env):
    terms = enumerate_terminals(comp_env)
    assert len(terms) == len(set(terms)) == 37
    for t in terms:
        assert _check(comp_env, t) == []


def test_enumeration_agrees_with_brute_force(comp_env):
    # every neutral composition of at most 3 atoms per element, 3 elements
    ox = {e: symtab.element(e).oxidation_states for e in comp_env.elements}
    brute = set()
    for counts in np.ndindex(4, 4, 4):
        comp = dict(zip(comp_env.elements, counts))
        if any(counts) and ref.neutral(comp, ox):
            brute.add(tuple(int(k) for k in counts))
    assert {t.counts for t in enumerate_terminals(comp_env)} == brute


def test_dropped_space_groups_admit_nothing():
    env = CrystalEnv(EnvConfig(elements=("Li", "F"), space_groups=(1, 230), max_atoms_per_element=8))
    # 230 needs at least 16 atoms of an element
    assert env.dropped_space_groups == (230,)
    assert env.space_groups == (1,)


def test_config_validation():
    with pytest.raises(ValueError):
        EnvConfig(min_increment=0.0)
    with pytest.raises(ValueError):
        EnvConfig(composition_stage=False)
    with pytest.raises(symtab.TableKeyError):
        CrystalEnv(EnvConfig(elements=("Li", "Qq")))


def test_no_dead_ends_in_composition_stage(small_env):
    """Every reachable COMP state with a chosen space group can still finish."""
    env = small_env
    for sg in env.space_groups:
        s = env.step(env.step(env.initial_state(), Action(Kind.SET_SG, sg)), Action(Kind.SG_STOP))
        frontier, seen = [s], set()
        while frontier:
            s = frontier.pop()
            if s in seen or len(seen) > 3000:
                continue
            seen.add(s)
            m = env.valid_actions(s)
            assert m.any()
            for i in np.flatnonzero(m[env.off_add : env.i_comp_stop])[:6]:
                frontier.append(env.step(s, env.action_from_index(env.off_add + i)))


@settings(max_examples=30)
@given(st.integers(0, 10**6))
def test_neutral_space_group_composition_agree(seed):
    env = cached_env(**SMALL)
    t = rollout(None, env, 1.0, trajectory_rng(seed, 2, 0)).terminal
    comp = {e: k for e, k in zip(env.elements, t.counts) if k}
    assert symtab.neutrality_feasible(comp)
    assert all(symtab.count_compatible(t.sg, k) for k in comp.values())
    assert sum(comp.values()) <= 20 and len(comp) <= 3


def test_max_trajectory_length_default(default_env):
    assert max_trajectory_length(default_env) == 4 + 6 + 1 + math.ceil(1 / 0.1) + 1
