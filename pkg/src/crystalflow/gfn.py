"""Trajectory sampling, the trajectory-balance loss and the training loop."""
from __future__ import annotations

import csv
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from . import kernels, tensorio
from .env import Action, CrystalEnv, CrystalState, DeadEndError, Stage, max_trajectory_length
from .policy import Policy, uniform_action

N_LOGZ = 16
LOG_COLUMNS = ("iteration", "loss", "logZ", "mean_reward", "mean_energy")


class NumericalDivergenceError(FloatingPointError):
    pass


@dataclass
class Trajectory:
    states: list[CrystalState]
    actions: list[Action]
    masks: np.ndarray
    bmasks: np.ndarray
    bchoices: np.ndarray
    logpf: np.ndarray = field(default_factory=lambda: np.zeros(0))
    logpb: np.ndarray = field(default_factory=lambda: np.zeros(0))
    energy: float = float("nan")
    log_reward: float = float("nan")

    @property
    def terminal(self) -> CrystalState:
        return self.states[-1]

    @property
    def reward(self) -> float:
        return math.exp(self.log_reward)

    def __len__(self):
        return len(self.actions)


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 50_000
    trajectories_per_iter: int = 10
    epsilon: float = 0.10
    lr_policy: float = 1e-4
    lr_logz: float = 1e-2
    temperature: float = 8.0
    seed: int = 0
    checkpoint_every: int = 0
    max_grad_norm: float = 0.0  # 0 disables clipping

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.iterations < 0 or self.trajectories_per_iter < 1:
            raise ValueError("iterations >= 0 and trajectories_per_iter >= 1 required")
        if not self.max_grad_norm >= 0:
            raise ValueError("max_grad_norm must be non-negative")

    @property
    def queries(self) -> int:
        return self.iterations * self.trajectories_per_iter


class LogZ:
    """Learned log-partition function: the sum of ``N_LOGZ`` scalars, all starting at 0."""

    def __init__(self, n: int = N_LOGZ):
        self.weights = np.zeros(n)

    @property
    def value(self) -> float:
        return float(self.weights.sum())


class Adam:
    def __init__(self, params: Sequence[np.ndarray], lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        step = self.lr / c1
        inv = 1.0 / math.sqrt(c2)
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            kernels.adam_update(
                p.reshape(-1), np.ascontiguousarray(g, dtype=np.float64).reshape(-1), m.reshape(-1), v.reshape(-1),
                step, self.b1, self.b2, inv, self.eps,
            )


def clip_grad_norm(grads: Sequence[np.ndarray], max_norm: float) -> tuple[list[np.ndarray], float]:
    """Rescale ``grads`` so their joint L2 norm is at most ``max_norm`` (``0`` leaves them alone).

    Returns the possibly rescaled gradients and the norm before clipping.
    """
    norm = math.sqrt(sum(float(np.vdot(g, g)) for g in grads))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        return [g * scale for g in grads], norm
    return list(grads), norm


def trajectory_rng(seed: int, iteration: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(iteration), int(index)]))


def rollout(
    policy: Optional[Policy], env: CrystalEnv, epsilon: float, rng: np.random.Generator
) -> Trajectory:
    """Sample one trajectory.

    Each step is drawn uniformly from the valid actions with probability
    ``epsilon`` and from the policy otherwise. ``policy=None`` means a purely
    uniform sampler. Log-probabilities are filled in later by ``tb_loss`` or
    ``score_trajectories``, always under the policy itself.
    """
    return rollout_batch(policy, env, epsilon, [rng])[0]


def rollout_batch(
    policy: Optional[Policy], env: CrystalEnv, epsilon: float, rngs: Sequence[np.random.Generator]
) -> list[Trajectory]:
    """Advance ``len(rngs)`` independent trajectories in lockstep.

    Trajectory ``j`` draws all of its randomness from ``rngs[j]`` (first the
    exploration coin, then the action), and the policy is evaluated once per
    step on the states that need it.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    n = len(rngs)
    limit = max_trajectory_length(env)
    states = [[env.initial_state()] for _ in range(n)]
    actions: list[list[Action]] = [[] for _ in range(n)]
    masks: list[list[np.ndarray]] = [[] for _ in range(n)]
    active = [j for j in range(n) if states[j][-1].stage != Stage.DONE]
    while active:
        cur = [states[j][-1] for j in active]
        step_masks = [env.valid_actions(s) for s in cur]
        for j, s, m in zip(active, cur, step_masks):
            if len(actions[j]) >= limit:
                raise DeadEndError(f"trajectory exceeded {limit} steps")
            if not m.any():
                raise DeadEndError(f"empty mask at non-terminal state {s!r}")
        explore = [policy is None or (epsilon > 0.0 and rngs[j].random() < epsilon) for j in active]
        need = [i for i, e in enumerate(explore) if not e]
        outs = dict(zip(need, policy.forward_batch([cur[i] for i in need]))) if need else {}
        for i, j in enumerate(active):
            if explore[i]:
                a = uniform_action(env, step_masks[i], cur[i], rngs[j])
            else:
                a = policy.sample(outs[i], step_masks[i], cur[i], rngs[j])
            masks[j].append(step_masks[i])
            actions[j].append(a)
            states[j].append(env.step(cur[i], a))
        active = [j for j in active if states[j][-1].stage != Stage.DONE]
    out = []
    for j in range(n):
        st, ac = states[j], actions[j]
        bmasks = np.array([env.backward_mask(c) for c in st[1:]])
        bchoices = np.array([env.backward_choice(p, a) for p, a in zip(st[:-1], ac)])
        out.append(Trajectory(st, ac, np.array(masks[j]), bmasks, bchoices))
    return out


def sample_batch(
    policy: Optional[Policy],
    env: CrystalEnv,
    n: int,
    epsilon: float,
    seed: int,
    iteration: int = 0,
    threads: Optional[int] = None,
    chunk: int = 1024,
) -> list[Trajectory]:
    """``n`` independent rollouts with per-trajectory streams ``(seed, iteration, j)``.

    Rollouts run in lockstep chunks of at most ``chunk`` trajectories. With
    ``threads > 1`` (default from ``CRYSTALFLOW_THREADS``) the chunks are
    spread over a thread pool; the chunking does not depend on the thread
    count, so results are identical for any number of threads.
    """
    threads = threads or int(os.environ.get("CRYSTALFLOW_THREADS", "1") or 1)
    rngs = [trajectory_rng(seed, iteration, j) for j in range(n)]
    chunks = [rngs[i : i + chunk] for i in range(0, n, chunk)]
    if threads <= 1 or len(chunks) <= 1:
        parts = [rollout_batch(policy, env, epsilon, c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda c: rollout_batch(policy, env, epsilon, c), chunks))
    return [t for part in parts for t in part]


def _gather(trajs: Sequence[Trajectory]):
    f_states, f_masks, f_actions, seg = [], [], [], []
    b_states, b_masks, b_choices = [], [], []
    for i, t in enumerate(trajs):
        f_states += t.states[:-1]
        f_actions += t.actions
        f_masks.append(t.masks)
        b_states += t.states[1:]
        b_masks.append(t.bmasks)
        b_choices.append(t.bchoices)
        seg += [i] * len(t.actions)
    return (
        f_states,
        np.concatenate(f_masks),
        f_actions,
        b_states,
        np.concatenate(b_masks),
        np.concatenate(b_choices),
        np.array(seg),
    )


def trajectory_balance(log_z: float, sum_logpf, log_rewards, sum_logpb) -> tuple[float, np.ndarray]:
    """Mean squared residual ``logZ + sum log P_F - log R - sum log P_B`` and the residuals."""
    resid = log_z + np.asarray(sum_logpf, float) - np.asarray(log_rewards, float) - np.asarray(sum_logpb, float)
    return float(np.mean(resid**2)), resid


def tb_loss(
    trajs: Sequence[Trajectory], policy: Policy, logz: LogZ, compute_grads: bool = True
) -> tuple[float, Optional[list[np.ndarray]], Optional[np.ndarray]]:
    """Mean squared trajectory-balance residual over ``trajs``.

    Residual per trajectory: ``logZ + sum log P_F - log R(x) - sum log P_B``.
    Returns ``(loss, policy grads, logZ grads)`` and fills each trajectory's
    ``logpf`` / ``logpb``. Every trajectory must already carry ``log_reward``.
    """
    log_r = np.array([t.log_reward for t in trajs], dtype=np.float64)
    if not np.all(np.isfinite(log_r)):
        raise ValueError("trajectory rewards must be strictly positive and finite")
    f_states, f_masks, f_actions, b_states, b_masks, b_choices, seg = _gather(trajs)
    lpf, gf, acts_f = policy.forward_logp_batch(f_states, f_masks, f_actions)
    lpb, gb, acts_b = policy.backward_logp_batch(b_states, b_masks, b_choices, f_actions)
    n = len(trajs)
    sum_f = np.bincount(seg, weights=lpf, minlength=n)
    sum_b = np.bincount(seg, weights=lpb, minlength=n)
    start = 0
    for t in trajs:
        t.logpf = lpf[start : start + len(t)]
        t.logpb = lpb[start : start + len(t)]
        start += len(t)
    loss, resid = trajectory_balance(logz.value, sum_f, log_r, sum_b)
    if not compute_grads:
        return loss, None, None
    coef = 2.0 * resid / n
    grads = policy.forward_net.backward(acts_f, gf * coef[seg][:, None])
    grads += policy.backward_net.backward(acts_b, gb * (-coef[seg])[:, None])
    glogz = np.full_like(logz.weights, coef.sum())
    return loss, grads, glogz


@dataclass
class TrainResult:
    policy: Policy
    logz: LogZ
    log: list[dict]


EnergyFn = Callable[[Sequence[CrystalState]], np.ndarray]


def assign_rewards(trajs: Sequence[Trajectory], energy_fn: EnergyFn, temperature: float) -> None:
    energies = np.asarray(energy_fn([t.terminal for t in trajs]), dtype=np.float64)
    if not np.all(np.isfinite(energies)):
        raise NumericalDivergenceError("energy backend returned a non-finite value")
    for t, e in zip(trajs, energies):
        t.energy = float(e)
        t.log_reward = -float(e) / temperature


def format_row(row: dict) -> list[str]:
    return [str(row["iteration"])] + [repr(float(row[c])) for c in LOG_COLUMNS[1:]]


def train(
    config: TrainConfig,
    env: CrystalEnv,
    energy_fn: EnergyFn,
    policy: Optional[Policy] = None,
    out_dir: Optional[str | Path] = None,
    meta: Optional[dict] = None,
    progress: Optional[Callable[[dict], None]] = None,
) -> TrainResult:
    """Trajectory-balance training.

    Per iteration: ``trajectories_per_iter`` rollouts with epsilon-uniform
    exploration, rewards ``exp(-E/T)``, one Adam step on both policies
    (``lr_policy``) and on the log-partition weights (``lr_logz``). With
    ``max_grad_norm > 0`` the policy gradients are first rescaled to at most
    that joint norm; the logZ gradient is never clipped.

    When ``out_dir`` is given, ``train_log.csv`` (deterministic columns) and
    ``train_timing.csv`` (wall-clock per iteration) are appended row by row and
    checkpoints are written every ``checkpoint_every`` iterations.
    """
    policy = policy or Policy(env, seed=config.seed)
    logz = LogZ()
    opt_policy = Adam(policy.params, config.lr_policy)
    opt_logz = Adam([logz.weights], config.lr_logz)
    log_fh = timing_fh = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(out_dir / "train_log.csv", "w", newline="")
        timing_fh = open(out_dir / "train_timing.csv", "w", newline="")
        log_csv, timing_csv = csv.writer(log_fh), csv.writer(timing_fh)
        log_csv.writerow(LOG_COLUMNS)
        timing_csv.writerow(("iteration", "wall_ms"))
    rows = []
    try:
        for it in range(config.iterations):
            tic = time.perf_counter()
            trajs = sample_batch(policy, env, config.trajectories_per_iter, config.epsilon, config.seed, it)
            assign_rewards(trajs, energy_fn, config.temperature)
            loss, grads, glogz = tb_loss(trajs, policy, logz)
            if not math.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                raise NumericalDivergenceError(
                    f"non-finite loss/gradient at iteration {it}: loss={loss}, logZ={logz.value}, "
                    f"log rewards={[t.log_reward for t in trajs]}"
                )
            grads, _ = clip_grad_norm(grads, config.max_grad_norm)
            opt_policy.step(grads)
            opt_logz.step([glogz])
            row = {
                "iteration": it,
                "loss": loss,
                "logZ": logz.value,
                "mean_reward": float(np.mean([t.reward for t in trajs])),
                "mean_energy": float(np.mean([t.energy for t in trajs])),
            }
            rows.append(row)
            if log_fh is not None:
                log_csv.writerow(format_row(row))
                timing_csv.writerow((it, f"{(time.perf_counter() - tic) * 1e3:.3f}"))
                if config.checkpoint_every and (it + 1) % config.checkpoint_every == 0:
                    save_checkpoint(out_dir / f"checkpoint_{it + 1:06d}.bin", policy, logz, meta)
            if progress is not None:
                progress(row)
    finally:
        if log_fh is not None:
            log_fh.close()
            timing_fh.close()
    if out_dir is not None:
        save_checkpoint(out_dir / "checkpoint.bin", policy, logz, meta)
    return TrainResult(policy, logz, rows)


def save_checkpoint(path: str | Path, policy: Policy, logz: LogZ, meta: Optional[dict] = None) -> None:
    tensors = dict(policy.state_dict())
    tensors["logZ.weights"] = logz.weights
    info = dict(meta or {})
    info.update(
        {
            "hidden": list(policy.hidden),
            "n_components": policy.n_components,
            "n_actions": policy.env.n_actions,
            "n_backward": policy.env.n_backward,
            "encoding_dim": policy.encoder.dim,
        }
    )
    tensorio.save(path, tensors, info)


def load_checkpoint(path: str | Path, env: CrystalEnv) -> tuple[Policy, LogZ, dict]:
    tensors, meta = tensorio.load(path)
    policy = Policy(env, hidden=meta["hidden"], n_components=meta["n_components"])
    if meta["n_actions"] != env.n_actions or meta["n_backward"] != env.n_backward:
        raise ValueError(
            f"checkpoint action space ({meta['n_actions']}, {meta['n_backward']}) does not match "
            f"the environment ({env.n_actions}, {env.n_backward})"
        )
    policy.load_state_dict(tensors)
    logz = LogZ(len(tensors["logZ.weights"]))
    logz.weights[...] = tensors["logZ.weights"]
    return policy, logz, meta


def score_trajectories(trajs: Sequence[Trajectory], policy: Policy) -> None:
    """Fill ``logpf`` / ``logpb`` without computing gradients."""
    f_states, f_masks, f_actions, b_states, b_masks, b_choices, seg = _gather(trajs)
    lpf, _, _ = policy.forward_logp_batch(f_states, f_masks, f_actions)
    lpb, _, _ = policy.backward_logp_batch(b_states, b_masks, b_choices, f_actions)
    start = 0
    for t in trajs:
        t.logpf = lpf[start : start + len(t)]
        t.logpb = lpb[start : start + len(t)]
        start += len(t)
