import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from crystalflow.env import CrystalEnv, EnvConfig

settings.register_profile(
    "default",
    max_examples=60,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.register_profile("ci", max_examples=200, deadline=None, suppress_health_check=list(HealthCheck))
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# (criterion, passed, detail) rows filled by test_acceptance.py
ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: int(r[0].split()[1].rstrip(":"))):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")


_ENV_CACHE: dict = {}


def cached_env(**kwargs) -> CrystalEnv:
    key = tuple(sorted((k, repr(v)) for k, v in kwargs.items()))
    if key not in _ENV_CACHE:
        _ENV_CACHE[key] = CrystalEnv(EnvConfig(**kwargs))
    return _ENV_CACHE[key]


@pytest.fixture(scope="session")
def default_env():
    return cached_env()


@pytest.fixture(scope="session")
def small_env():
    """All three stages over a handful of elements and space groups of every lattice system."""
    return cached_env(
        elements=("Li", "O", "F", "Mg", "Fe"),
        space_groups=(1, 2, 5, 12, 62, 139, 148, 160, 166, 186, 194, 221, 225, 227),
        max_atoms_per_element=8,
        max_atoms=20,
        max_elements=3,
    )


@pytest.fixture(scope="session")
def comp_env():
    """Composition-only environment, small enough to enumerate."""
    return cached_env(
        elements=("H", "N", "Fe"),
        max_atoms_per_element=3,
        max_elements=3,
        sg_stage=False,
        lp_stage=False,
    )


@pytest.fixture(scope="session")
def cubic_lp_env():
    """Lattice-only environment with a single free coordinate."""
    return cached_env(
        elements=("Li", "F"),
        sg_stage=False,
        fixed_space_group=221,
        composition_stage=False,
        fixed_composition={"Li": 1, "F": 1},
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
