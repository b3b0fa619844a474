"""Brute-force ground truth for small configurations.

Discrete configurations (lattice stage disabled) are enumerated exhaustively
by depth-first search over the masked DAG. Configurations whose only
continuous part is a single free lattice coordinate are checked with a binned
marginal integrated by quadrature.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Hashable, Iterable, Mapping, Sequence

import numpy as np
from scipy import integrate
from scipy.special import logsumexp

from .env import CrystalEnv, CrystalState, Stage

MAX_TERMINALS = 1_000_000


class StateSpaceTooLargeError(RuntimeError):
    pass


def enumerate_terminals(env: CrystalEnv, budget: int = MAX_TERMINALS) -> list[CrystalState]:
    """Every terminal state reachable from ``initial_state``, each exactly once.

    The order is deterministic: depth-first, children in action-index order,
    a terminal listed on its first visit.
    """
    if env.config.lp_stage:
        raise ValueError("exhaustive enumeration needs the lattice stage disabled")
    seen: set[CrystalState] = set()
    out: list[CrystalState] = []
    stack = [env.initial_state()]
    while stack:
        s = stack.pop()
        if s in seen:
            continue
        seen.add(s)
        if s.stage == Stage.DONE:
            out.append(s)
            if len(out) > budget:
                raise StateSpaceTooLargeError(f"more than {budget} terminal states")
            continue
        if len(seen) > 20 * budget:
            raise StateSpaceTooLargeError(f"more than {20 * budget} intermediate states")
        children = [env.step(s, env.action_from_index(int(i))) for i in np.flatnonzero(env.valid_actions(s))]
        stack.extend(reversed(children))
    return out


def backward_closure(env: CrystalEnv, terminals: Iterable[CrystalState]) -> set[CrystalState]:
    """All states from which some given terminal is reachable, found via ``parent_transitions``."""
    seen = set()
    stack = list(terminals)
    while stack:
        s = stack.pop()
        if s in seen:
            continue
        seen.add(s)
        if not env.is_initial(s):
            stack.extend(p for p, _ in env.parent_transitions(s))
    return seen


@dataclass(frozen=True)
class ExactDistribution:
    states: tuple
    probs: np.ndarray
    logZ: float

    def as_dict(self) -> dict:
        return dict(zip(self.states, self.probs.tolist()))

    def __len__(self):
        return len(self.states)


def exact_distribution(states: Sequence[Hashable], log_rewards: Sequence[float]) -> ExactDistribution:
    """``p(x) = R(x) / sum R`` computed in log space; ``logZ = log sum R``."""
    lr = np.asarray(log_rewards, dtype=np.float64)
    if lr.size == 0:
        raise ValueError("need at least one terminal state")
    if lr.shape != (len(states),):
        raise ValueError("one log-reward per state required")
    if not np.all(np.isfinite(lr)):
        raise ValueError("log-rewards must be finite")
    log_z = float(logsumexp(lr))
    return ExactDistribution(tuple(states), np.exp(lr - log_z), log_z)


def l1_divergence(counts: Mapping[Hashable, int] | Iterable[Hashable], exact: ExactDistribution) -> float:
    """``sum_x |p_hat(x) - p(x)|`` over the union of supports; in ``[0, 2]``."""
    if not isinstance(counts, Mapping):
        counts = Counter(counts)
    total = sum(counts.values())
    if total <= 0:
        raise ValueError("empirical counts are empty")
    p = exact.as_dict()
    keys = set(p) | set(counts)
    return float(sum(abs(counts.get(k, 0) / total - p.get(k, 0.0)) for k in keys))


def binned_marginal(log_reward_fn: Callable[[float], float], bins: int = 10) -> tuple[np.ndarray, float]:
    """Bin masses of the density proportional to ``exp(log_reward_fn(x))`` on [0, 1].

    Returns ``(masses, log Z)`` with ``Z = integral of R over [0, 1]``.
    """
    edges = np.linspace(0.0, 1.0, bins + 1)
    shift = max(log_reward_fn(x) for x in np.linspace(0.0, 1.0, 1001))
    pieces = np.array(
        [
            integrate.quad(lambda x: math.exp(log_reward_fn(x) - shift), lo, hi, epsabs=1e-13, epsrel=1e-11, limit=200)[0]
            for lo, hi in zip(edges[:-1], edges[1:])
        ]
    )
    z = pieces.sum()
    return pieces / z, float(math.log(z) + shift)


def binned_l1(samples: Sequence[float], masses: np.ndarray) -> float:
    """L1 distance between the histogram of ``samples`` on [0, 1] and reference bin masses."""
    bins = len(masses)
    hist, _ = np.histogram(np.clip(samples, 0.0, 1.0), bins=bins, range=(0.0, 1.0))
    return float(np.abs(hist / hist.sum() - masses).sum())
