"""Forward and backward policies.

A policy is a tanh MLP whose output vector is sliced into masked categorical
logits (every discrete action of the stacked environment) and a Beta-mixture
block for the six lattice dimensions. Gradients are computed by hand: the
log-probability helpers return ``d logp / d output`` alongside the value and
``MLP.backward`` pushes those through the trunk.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .env import (
    Action,
    CrystalEnv,
    CrystalState,
    InvalidActionError,
    Kind,
    N_CLS,
    N_PS,
    N_SG,
    Stage,
)

ALPHA_MIN = 0.1
ALPHA_MAX = 100.0
_LOG_SPAN = math.log(ALPHA_MAX / ALPHA_MIN)
# raw output 0 -> alpha = 1 (uniform Beta at initialisation)
_SQUASH_SHIFT = math.log((-math.log(ALPHA_MIN) / _LOG_SPAN) / (1.0 - (-math.log(ALPHA_MIN) / _LOG_SPAN)))
# Beta-space points are kept off the endpoints only by float resolution, so
# components with alpha or beta < 1 keep their full mass near 0 and 1
R_LO = 1e-300
R_HI = float(np.nextafter(1.0, 0.0))
SPAN_EPS = 1e-12


class DeadEndSampleError(RuntimeError):
    pass


def squash(raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Map raw outputs into ``[0.1, 100]`` (log-scale sigmoid); returns value and derivative."""
    sig = 1.0 / (1.0 + np.exp(-(raw + _SQUASH_SHIFT)))
    val = ALPHA_MIN * np.exp(_LOG_SPAN * sig)
    return val, val * _LOG_SPAN * sig * (1.0 - sig)


# --------------------------------------------------------------------------- MLP


class MLP:
    """Fully connected tanh network with a linear output layer."""

    def __init__(self, sizes: Sequence[int], rng: Optional[np.random.Generator] = None, zero_last: bool = True):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.sizes = tuple(int(s) for s in sizes)
        self.params: list[np.ndarray] = []
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            last = i == len(self.sizes) - 2
            if last and zero_last:
                w = np.zeros((fan_in, fan_out))
            else:
                bound = math.sqrt(6.0 / (fan_in + fan_out))
                w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            self.params += [w, np.zeros(fan_out)]

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list]:
        acts = [x]
        h = x
        n_layers = len(self.params) // 2
        for i in range(n_layers):
            w, b = self.params[2 * i], self.params[2 * i + 1]
            h = h @ w + b
            if i < n_layers - 1:
                h = np.tanh(h)
                acts.append(h)
        return h, acts

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, acts: list, d_out: np.ndarray) -> list[np.ndarray]:
        grads = [None] * len(self.params)
        g = d_out
        n_layers = len(self.params) // 2
        for i in range(n_layers - 1, -1, -1):
            a = acts[i]
            grads[2 * i] = a.T @ g
            grads[2 * i + 1] = g.sum(axis=0)
            if i > 0:
                g = (g @ self.params[2 * i].T) * (1.0 - a * a)
        return grads

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, vec: np.ndarray) -> None:
        i = 0
        for p in self.params:
            p[...] = vec[i : i + p.size].reshape(p.shape)
            i += p.size


# ---------------------------------------------------------------------- encoding


class StateEncoder:
    """One-hot / scaled encoding of ``CrystalState``.

    Layout: CLS (8 + unset) | PS (5 + unset) | SG (230 + unset) | counts / K (D)
    | lattice coords (6) + source flag | stage one-hot (4).
    """

    def __init__(self, env: CrystalEnv):
        self.env = env
        self.o_ps = N_CLS + 1
        self.o_sg = self.o_ps + N_PS + 1
        self.o_counts = self.o_sg + N_SG + 1
        self.o_lat = self.o_counts + env.n_elements
        self.o_stage = self.o_lat + 7
        self.dim = self.o_stage + 4

    def encode(self, states: Sequence[CrystalState]) -> np.ndarray:
        x = np.zeros((len(states), self.dim))
        kmax = self.env.kmax
        for i, s in enumerate(states):
            x[i, N_CLS if s.cls is None else s.cls] = 1.0
            x[i, self.o_ps + (N_PS if s.ps is None else s.ps)] = 1.0
            x[i, self.o_sg + (N_SG if s.sg is None else s.sg - 1)] = 1.0
            if s.counts:
                x[i, self.o_counts : self.o_lat] = np.asarray(s.counts, dtype=np.float64) / kmax
            if s.coords is None:
                x[i, self.o_lat + 6] = 1.0
            else:
                x[i, self.o_lat : self.o_lat + 6] = s.coords
            x[i, self.o_stage + int(s.stage)] = 1.0
        return x


# ------------------------------------------------------------------ distributions


@dataclass
class PolicyOutput:
    """Network output for one state: raw logits and the Beta-mixture block.

    ``mixture`` is ``[6, K_B, 3]`` raw values (weight logit, alpha, beta).
    """

    logits: np.ndarray
    mixture: np.ndarray

    def beta_params(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        weights = self.mixture[..., 0]
        weights = np.exp(weights - weights.max(axis=-1, keepdims=True))
        weights /= weights.sum(axis=-1, keepdims=True)
        alpha, _ = squash(self.mixture[..., 1])
        beta, _ = squash(self.mixture[..., 2])
        return weights, alpha, beta


def masked_log_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Row-wise log-softmax restricted to ``mask``; masked entries get ``-inf``."""
    z = np.where(mask, logits, -np.inf)
    mx = z.max(axis=-1, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    lse = mx + np.log(np.exp(z - mx).sum(axis=-1, keepdims=True))
    return z - lse


def mixture_logpdf(r: np.ndarray, mixture: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Beta-mixture log density for ``r[N]`` with raw params ``mixture[N, K_B, 3]``.

    Returns ``(logp[N], d logp / d mixture [N, K_B, 3])``.
    """
    r = np.clip(np.asarray(r, dtype=np.float64), R_LO, R_HI)
    alpha, dalpha_raw = squash(mixture[..., 1])
    beta, dbeta_raw = squash(mixture[..., 2])
    logp, dw, da, db = kernels.beta_mixture_logpdf(
        r, np.ascontiguousarray(mixture[..., 0]), np.ascontiguousarray(alpha), np.ascontiguousarray(beta)
    )
    grad = np.stack([dw, da * dalpha_raw, db * dbeta_raw], axis=-1)
    return logp, grad


def sample_mixture(mixture: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One draw per row from the Beta mixtures described by ``mixture[N, K_B, 3]``."""
    out = PolicyOutput(np.zeros(0), mixture)
    w, a, b = out.beta_params()
    n = mixture.shape[0]
    u = rng.random(n)
    comp = np.minimum((np.cumsum(w, axis=1) < (u * w.sum(axis=1))[:, None]).sum(axis=1), w.shape[1] - 1)
    rows = np.arange(n)
    r = rng.beta(a[rows, comp], b[rows, comp])
    return np.clip(r, R_LO, R_HI)


def build_action(
    env: CrystalEnv, idx: int, s: CrystalState, r: Optional[np.ndarray], rng: np.random.Generator
) -> Action:
    """Turn a discrete index into an ``Action``; lattice moves use Beta-space draws ``r``.

    ``r=None`` draws them uniformly.
    """
    if idx not in (env.i_lp_source, env.i_lp_inc):
        return env.action_from_index(idx)
    reps = list(env.constraint(s).representatives)
    if r is None:
        r = np.clip(rng.random(len(reps)), R_LO, R_HI)
    values = np.zeros(6)
    if idx == env.i_lp_source:
        values[reps] = r
    else:
        values[reps] = increment_from_r(np.asarray(s.coords)[reps], r, env.delta)
    return env.action_from_index(idx, values)


def increment_from_r(x: np.ndarray, r: np.ndarray, delta: float) -> np.ndarray:
    """Forward increment ``u = delta + r (1 - x - delta)``, so ``u >= delta`` and ``x + u <= 1``."""
    # the span can round to -1e-17 when x sits exactly delta below the edge
    return delta + r * np.maximum(1.0 - x - delta, 0.0)


def uniform_action(env: CrystalEnv, mask: np.ndarray, s: CrystalState, rng: np.random.Generator) -> Action:
    """Uniform draw over the valid discrete actions, then uniform over the lattice box."""
    valid = np.flatnonzero(mask)
    if valid.size == 0:
        raise DeadEndSampleError(f"empty mask at {s!r}")
    idx = int(valid[0]) if valid.size == 1 else int(valid[rng.integers(valid.size)])
    return build_action(env, idx, s, None, rng)


# ------------------------------------------------------------------------ policy


class Policy:
    """Forward and backward networks over a ``CrystalEnv``.

    Forward output: ``env.n_actions`` logits followed by ``6 * K_B * 3`` mixture
    values. Backward output: ``env.n_backward`` logits followed by the same
    mixture block (over backward increments).
    """

    def __init__(self, env: CrystalEnv, hidden: Sequence[int] = (256, 256, 256), n_components: int = 5, seed: int = 0):
        self.env = env
        self.encoder = StateEncoder(env)
        self.n_components = int(n_components)
        self.hidden = tuple(int(h) for h in hidden)
        self.n_mix = 6 * self.n_components * 3
        rng = np.random.default_rng(seed)
        self.forward_net = MLP([self.encoder.dim, *self.hidden, env.n_actions + self.n_mix], rng)
        self.backward_net = MLP([self.encoder.dim, *self.hidden, env.n_backward + self.n_mix], rng)
        self.delta = env.delta

    # -- parameters --------------------------------------------------------

    @property
    def params(self) -> list[np.ndarray]:
        return self.forward_net.params + self.backward_net.params

    def param_names(self) -> list[str]:
        names = []
        for tag, net in (("forward", self.forward_net), ("backward", self.backward_net)):
            for i in range(len(net.params) // 2):
                names += [f"{tag}.{i}.weight", f"{tag}.{i}.bias"]
        return names

    # -- single-state API --------------------------------------------------

    def _split(self, row: np.ndarray, n_disc: int) -> PolicyOutput:
        return PolicyOutput(row[:n_disc], row[n_disc:].reshape(6, self.n_components, 3))

    def forward(self, s: CrystalState) -> PolicyOutput:
        row = self.forward_net(self.encoder.encode([s]))[0]
        return self._split(row, self.env.n_actions)

    def forward_batch(self, states: Sequence[CrystalState]) -> list[PolicyOutput]:
        rows = self.forward_net(self.encoder.encode(states))
        return [self._split(row, self.env.n_actions) for row in rows]

    def backward(self, s: CrystalState) -> PolicyOutput:
        row = self.backward_net(self.encoder.encode([s]))[0]
        return self._split(row, self.env.n_backward)

    def log_prob(self, out: PolicyOutput, mask: np.ndarray, a: Action, s: CrystalState) -> float:
        """Forward log-probability (density for lattice moves) of ``a`` at ``s``."""
        idx = self.env.action_index(a)
        if not mask[idx]:
            raise InvalidActionError(f"{a!r} is masked")
        lp = float(masked_log_softmax(out.logits, mask)[idx])
        if a.kind in (Kind.LP_FROM_SOURCE, Kind.LP_INCREMENT):
            r, jac = self._forward_r(s, a)
            reps = list(self.env.constraint(s).representatives)
            dens, _ = mixture_logpdf(r, out.mixture[reps])
            lp += float(dens.sum() + jac)
        return lp

    def sample(
        self, out: PolicyOutput, mask: np.ndarray, s: CrystalState, rng: np.random.Generator, uniform: bool = False
    ) -> Action:
        """Draw an action from the masked policy (or uniformly over the mask when ``uniform``)."""
        valid = np.flatnonzero(mask)
        if valid.size == 0:
            raise DeadEndSampleError(f"empty mask at {s!r}")
        if valid.size == 1:
            idx = int(valid[0])
        elif uniform:
            idx = int(valid[rng.integers(valid.size)])
        else:
            p = np.exp(masked_log_softmax(out.logits, mask)[valid])
            idx = int(valid[min(np.searchsorted(np.cumsum(p), rng.random() * p.sum()), valid.size - 1)])
        r = None
        if not uniform and idx in (self.env.i_lp_source, self.env.i_lp_inc):
            r = sample_mixture(out.mixture[list(self.env.constraint(s).representatives)], rng)
        return build_action(self.env, idx, s, r, rng)

    # -- change of variables -----------------------------------------------

    def _forward_r(self, s: CrystalState, a: Action) -> tuple[np.ndarray, float]:
        """Beta-space points for a lattice move and the log-Jacobian to add."""
        reps = list(self.env.constraint(s).representatives)
        v = np.asarray(a.values, dtype=np.float64)[reps]
        if a.kind == Kind.LP_FROM_SOURCE:
            return v, 0.0
        span = 1.0 - np.asarray(s.coords)[reps] - self.delta
        span = np.maximum(span, SPAN_EPS)
        return (v - self.delta) / span, float(-np.log(span).sum())

    def _backward_r(self, child: CrystalState, a: Action) -> tuple[np.ndarray, float]:
        reps = list(self.env.constraint(child).representatives)
        u = np.asarray(a.values, dtype=np.float64)[reps]
        span = np.asarray(child.coords)[reps] - self.delta
        span = np.maximum(span, SPAN_EPS)
        return (u - self.delta) / span, float(-np.log(span).sum())

    # -- batched log-probs with gradients ----------------------------------

    def forward_logp_batch(
        self, states: Sequence[CrystalState], masks: np.ndarray, actions: Sequence[Action]
    ) -> tuple[np.ndarray, np.ndarray, list]:
        """Forward log-probs of ``actions``; returns ``(logp, d logp/d output, net cache)``."""
        x = self.encoder.encode(states)
        out, acts = self.forward_net.forward(x)
        n_disc = self.env.n_actions
        idx = np.array([self.env.action_index(a) for a in actions])
        logp, grad = self._discrete(out[:, :n_disc], masks, idx)
        self._add_continuous(out, grad, logp, n_disc, states, actions, forward=True)
        return logp, grad, acts

    def backward_logp_batch(
        self, children: Sequence[CrystalState], bmasks: np.ndarray, choices: np.ndarray, actions: Sequence[Action]
    ) -> tuple[np.ndarray, np.ndarray, list]:
        """Backward log-probs of going from each child back along ``actions``."""
        x = self.encoder.encode(children)
        out, acts = self.backward_net.forward(x)
        n_disc = self.env.n_backward
        logp, grad = self._discrete(out[:, :n_disc], bmasks, np.asarray(choices))
        self._add_continuous(out, grad, logp, n_disc, children, actions, forward=False, choices=choices)
        return logp, grad, acts

    def _discrete(self, logits, masks, idx):
        n = logits.shape[0]
        rows = np.arange(n)
        if not masks[rows, idx].all():
            raise InvalidActionError("log-prob requested for a masked action")
        ls = masked_log_softmax(logits, masks)
        logp = ls[rows, idx].copy()
        grad_logits = -np.where(masks, np.exp(ls), 0.0)
        grad_logits[rows, idx] += 1.0
        grad = np.zeros((n, logits.shape[1] + self.n_mix))
        grad[:, : logits.shape[1]] = grad_logits
        return logp, grad

    def _add_continuous(self, out, grad, logp, n_disc, states, actions, forward, choices=None):
        env = self.env
        rows, dims, rs = [], [], []
        for i, (s, a) in enumerate(zip(states, actions)):
            if forward and a.kind in (Kind.LP_FROM_SOURCE, Kind.LP_INCREMENT):
                r, jac = self._forward_r(s, a)
            elif not forward and choices[i] == env.b_increment:
                r, jac = self._backward_r(s, a)
            else:
                continue
            logp[i] += jac
            for j, d in enumerate(env.constraint(s).representatives):
                rows.append(i)
                dims.append(d)
                rs.append(r[j])
        if not rows:
            return
        rows = np.array(rows)
        dims = np.array(dims)
        mix = out[:, n_disc:].reshape(-1, 6, self.n_components, 3)[rows, dims]
        lp, g = mixture_logpdf(np.array(rs), mix)
        np.add.at(logp, rows, lp)
        gview = grad[:, n_disc:].reshape(-1, 6, self.n_components, 3)
        np.add.at(gview, (rows, dims), g)
        grad[:, n_disc:] = gview.reshape(grad.shape[0], -1)

    # -- checkpoint helpers --------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return dict(zip(self.param_names(), self.params))

    def load_state_dict(self, tensors: dict[str, np.ndarray]) -> None:
        for name, p in zip(self.param_names(), self.params):
            if name not in tensors:
                raise ValueError(f"checkpoint is missing tensor {name!r}")
            if tensors[name].shape != p.shape:
                raise ValueError(f"shape mismatch for {name}: checkpoint {tensors[name].shape}, model {p.shape}")
            p[...] = tensors[name]
