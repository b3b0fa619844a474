import itertools
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from crystalflow import kernels

import reference as ref

IMPLS = kernels.implementations()
INF = int(kernels.INF_ATOMS)


@pytest.fixture(params=sorted(IMPLS))
def impl(request):
    return IMPLS[request.param]


def _both(name, *args):
    """Run kernel ``name`` on every backend with private copies of the arguments."""
    return [getattr(mod, name)(*[a.copy() if isinstance(a, np.ndarray) else a for a in args]) for mod in IMPLS.values()]


_mults = st.lists(st.integers(1, 48), min_size=1, max_size=6)


@given(_mults, st.integers(1, 60))
def test_coin_table_against_recursion(mults, nmax):
    for table in _both("coin_table", np.array(mults), nmax):
        assert [bool(x) for x in table] == [ref.representable(n, mults) for n in range(nmax + 1)]


_ox = st.lists(st.integers(-4, 7), min_size=1, max_size=4, unique=True)


@given(_ox, st.integers(1, 6))
def test_element_charge_sums_against_sets(ox, kmax):
    q = 8 * kmax
    for sums in _both("element_charge_sums", np.array(ox), kmax, q):
        for k in range(kmax + 1):
            got = {c - q for c in np.flatnonzero(sums[k])}
            assert got == ref.charge_set(ox, k)


@given(st.lists(st.tuples(_ox, st.integers(0, 4)), min_size=1, max_size=3))
def test_reach_of_counts_against_sets(elems):
    kmax, q = 4, 3 * 4 * 7  # window holds every partial sum, as in the env
    sums = np.stack([kernels._numpy.element_charge_sums(np.array(o), kmax, q) for o, _ in elems])
    counts = np.array([k for _, k in elems])
    expected = {0}
    for o, k in elems:
        expected = {a + b for a in expected for b in ref.charge_set(o, k)}
    for reach in _both("reach_of_counts", counts, sums, q):
        assert {c - q for c in np.flatnonzero(reach)} == expected


def _brute_completion(ox_sets, kmax, e_max, a_max, q):
    """Fewest atoms reaching each charge using at most ``e`` of the elements."""
    out = np.full((e_max + 1, 2 * q + 1), INF, dtype=np.int64)
    for e in range(e_max + 1):
        for subset in itertools.combinations(range(len(ox_sets)), e):
            for ks in itertools.product(range(1, kmax + 1), repeat=e):
                if sum(ks) > a_max:
                    continue
                totals = {0}
                for i, k in zip(subset, ks):
                    totals = {a + b for a in totals for b in ref.charge_set(ox_sets[i], k)}
                for c in totals:
                    out[e:, c + q] = np.minimum(out[e:, c + q], sum(ks))
    return out


@given(st.lists(st.lists(st.integers(-3, 3), min_size=1, max_size=3, unique=True), min_size=1, max_size=3),
       st.integers(1, 3), st.integers(1, 8))
def test_completion_table_against_enumeration(ox_sets, e_max, a_max):
    kmax = 3
    q = 3 * a_max
    min_atoms = np.full((len(ox_sets), 2 * q + 1), INF, dtype=np.int32)
    for u, ox in enumerate(ox_sets):
        sums = kernels._numpy.element_charge_sums(np.array(ox), kmax, q)
        for k in range(kmax, 0, -1):
            min_atoms[u, sums[k]] = k
    expected = _brute_completion(ox_sets, kmax, e_max, a_max, q)
    for table in _both("completion_table", min_atoms, e_max, a_max):
        np.testing.assert_array_equal(table.astype(np.int64), expected)


@given(st.integers(0, 2**32 - 1), st.integers(0, 12))
def test_feasible_counts_backends_agree(seed, atoms_left):
    rng = np.random.default_rng(seed)
    q, kmax = 10, 5
    reach = rng.random(2 * q + 1) < 0.2
    sums = rng.random((kmax + 1, 2 * q + 1)) < 0.15
    allowed = rng.random(kmax + 1) < 0.7
    row = np.where(rng.random(2 * q + 1) < 0.4, rng.integers(0, 8, 2 * q + 1), INF).astype(np.int32)
    results = _both("feasible_counts", reach, sums, allowed, row, atoms_left)
    for r in results[1:]:
        np.testing.assert_array_equal(r, results[0])
    # brute force: new charge c + s must be cancelled by a completion within budget
    for k in range(1, kmax + 1):
        ok = allowed[k] and k <= atoms_left and any(
            reach[a] and sums[k, b] and 0 <= (a - q) + (b - q) + q <= 2 * q
            and row[2 * q - ((a - q) + (b - q) + q)] <= atoms_left - k
            for a in range(2 * q + 1)
            for b in range(2 * q + 1)
        )
        assert bool(results[0][k]) == ok


@given(st.integers(0, 2**32 - 1))
def test_beta_mixture_against_scipy(seed):
    rng = np.random.default_rng(seed)
    n, j = 7, 4
    r = rng.uniform(1e-3, 1 - 1e-3, n)
    lw = rng.normal(size=(n, j))
    a = rng.uniform(0.1, 50, (n, j))
    b = rng.uniform(0.1, 50, (n, j))
    w = np.exp(lw) / np.exp(lw).sum(axis=1, keepdims=True)
    expected = np.log((w * stats.beta.pdf(r[:, None], a, b)).sum(axis=1))
    outs = _both("beta_mixture_logpdf", r, lw, a, b)
    for logp, dw, da, db in outs:
        np.testing.assert_allclose(logp, expected, rtol=1e-9, atol=1e-9)
    for got, want in zip(outs[-1], outs[0]):
        np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-10)


def test_adam_matches_textbook_formula(impl):
    rng = np.random.default_rng(0)
    p = rng.normal(size=50)
    m = np.zeros(50)
    v = np.zeros(50)
    p_ref, m_ref, v_ref = p.copy(), m.copy(), v.copy()
    lr, b1, b2, eps = 1e-3, 0.9, 0.999, 1e-8
    for t in range(1, 6):
        g = rng.normal(size=50)
        impl.adam_update(p, g, m, v, lr / (1 - b1**t), b1, b2, 1 / np.sqrt(1 - b2**t), eps)
        m_ref = b1 * m_ref + (1 - b1) * g
        v_ref = b2 * v_ref + (1 - b2) * g * g
        p_ref = p_ref - lr * (m_ref / (1 - b1**t)) / (np.sqrt(v_ref / (1 - b2**t)) + eps)
    np.testing.assert_allclose(p, p_ref, rtol=1e-10, atol=1e-14)


def test_disable_flag_selects_numpy():
    code = "from crystalflow import kernels; print(kernels.BACKEND_NAME)"
    env = dict(os.environ, CRYSTALFLOW_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


_PROBE = """
from crystalflow.env import CrystalEnv, EnvConfig
from crystalflow.gfn import sample_batch
from crystalflow.oracle import enumerate_terminals
env = CrystalEnv(EnvConfig(elements=("H", "N", "Fe"), max_atoms_per_element=3, sg_stage=False, lp_stage=False))
print(sorted(t.counts for t in enumerate_terminals(env)))
env = CrystalEnv(EnvConfig(elements=("Li", "O", "Fe", "Mg"), space_groups=(1, 12, 139, 166, 194, 225),
                           max_atoms_per_element=8, max_atoms=20, max_elements=3))
print([t.terminal for t in sample_batch(None, env, 200, 1.0, seed=5)])
"""


def test_backends_drive_identical_environments():
    outs = []
    for flag in ("", "1"):
        env = dict(os.environ, CRYSTALFLOW_DISABLE_NUMBA=flag)
        res = subprocess.run([sys.executable, "-c", _PROBE], env=env, capture_output=True, text=True, check=True)
        outs.append(res.stdout)
    assert outs[0] == outs[1]
