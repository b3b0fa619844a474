import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.special import erf

from crystalflow.env import Stage
from crystalflow.oracle import (
    StateSpaceTooLargeError,
    backward_closure,
    binned_l1,
    binned_marginal,
    enumerate_terminals,
    exact_distribution,
    l1_divergence,
)

from conftest import cached_env


def _forward_reachable(env):
    seen, stack = set(), [env.initial_state()]
    while stack:
        s = stack.pop()
        if s in seen:
            continue
        seen.add(s)
        if s.stage != Stage.DONE:
            stack += [env.step(s, env.action_from_index(i)) for i in np.flatnonzero(env.valid_actions(s))]
    return seen


def test_enumeration_is_deterministic(comp_env):
    assert enumerate_terminals(comp_env) == enumerate_terminals(comp_env)


def test_budget_refusal(comp_env):
    with pytest.raises(StateSpaceTooLargeError):
        enumerate_terminals(comp_env, budget=10)


def test_lattice_stage_cannot_be_enumerated(cubic_lp_env):
    with pytest.raises(ValueError):
        enumerate_terminals(cubic_lp_env)


def test_backward_closure_equals_forward_reachable_set(comp_env):
    terms = enumerate_terminals(comp_env)
    assert backward_closure(comp_env, terms) == _forward_reachable(comp_env)


def test_sg_and_composition_dag_closure():
    env = cached_env(
        elements=("Li", "O"), space_groups=(1, 2, 225), max_atoms_per_element=4, max_elements=2, lp_stage=False
    )
    terms = enumerate_terminals(env)
    # Fm-3m needs multiples of 4 per element, and Li4O2 is out of reach
    assert env.dropped_space_groups == (225,)
    assert {t.sg for t in terms} == {1, 2}
    assert backward_closure(env, terms) == _forward_reachable(env)


def test_exact_distribution_against_direct_sum():
    lr = [0.3, -1.2, 2.0, 0.0]
    d = exact_distribution(["a", "b", "c", "d"], lr)
    z = sum(math.exp(v) for v in lr)
    assert d.logZ == pytest.approx(math.log(z), abs=1e-14)
    np.testing.assert_allclose(d.probs, [math.exp(v) / z for v in lr], rtol=1e-14)
    assert len(d) == 4 and d.as_dict()["c"] == pytest.approx(math.exp(2.0) / z)


@given(st.lists(st.floats(-30, 30), min_size=1, max_size=20), st.floats(-100, 100))
def test_exact_distribution_shift(lr, c):
    a = exact_distribution(list(range(len(lr))), lr)
    b = exact_distribution(list(range(len(lr))), np.array(lr) + c)
    np.testing.assert_allclose(a.probs, b.probs, rtol=1e-9, atol=1e-300)
    assert b.logZ == pytest.approx(a.logZ + c, abs=1e-9)
    assert a.probs.sum() == pytest.approx(1.0, abs=1e-12)


def test_exact_distribution_errors():
    with pytest.raises(ValueError):
        exact_distribution([], [])
    with pytest.raises(ValueError):
        exact_distribution(["a"], [1.0, 2.0])
    with pytest.raises(ValueError):
        exact_distribution(["a"], [float("-inf")])


def test_l1_divergence_cases():
    d = exact_distribution(["a", "b"], [0.0, math.log(3.0)])
    assert l1_divergence({"a": 1, "b": 3}, d) == pytest.approx(0.0, abs=1e-15)
    assert l1_divergence(["a", "b", "b", "b"], d) == pytest.approx(0.0, abs=1e-15)
    assert l1_divergence({"z": 5}, d) == pytest.approx(2.0)
    assert l1_divergence({"a": 1}, d) == pytest.approx(1.5)
    with pytest.raises(ValueError):
        l1_divergence({}, d)


def test_binned_marginal_uniform():
    masses, log_z = binned_marginal(lambda x: 0.0)
    np.testing.assert_allclose(masses, 0.1, rtol=1e-12)
    assert log_z == pytest.approx(0.0, abs=1e-12)


def test_binned_marginal_against_gaussian_closed_form():
    mu, sd = 0.4, 0.15
    cdf = lambda x: 0.5 * (1 + erf((x - mu) / (sd * math.sqrt(2))))
    edges = np.linspace(0, 1, 11)
    total = cdf(1) - cdf(0)
    want = np.array([cdf(b) - cdf(a) for a, b in zip(edges[:-1], edges[1:])]) / total
    masses, log_z = binned_marginal(lambda x: -0.5 * ((x - mu) / sd) ** 2 + 3.0)
    np.testing.assert_allclose(masses, want, rtol=1e-9, atol=1e-14)
    assert log_z == pytest.approx(3.0 + math.log(sd * math.sqrt(2 * math.pi) * total), abs=1e-10)


def test_binned_l1():
    masses = np.full(10, 0.1)
    assert binned_l1(np.linspace(0.05, 0.95, 10), masses) == pytest.approx(0.0, abs=1e-15)
    assert binned_l1([0.01] * 10, masses) == pytest.approx(1.8)
    # the right edge belongs to the last bin
    assert binned_l1([1.0], np.eye(10)[-1]) == 0.0
