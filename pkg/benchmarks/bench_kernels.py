"""Compare the numba and numpy kernel backends.

Micro-benchmarks call both implementations on identical inputs taken from the
default environment. The end-to-end part runs a fresh interpreter per backend
(``CRYSTALFLOW_DISABLE_NUMBA``) that builds the default environment and draws
uniform rollouts.

    python benchmarks/bench_kernels.py [--repeat 20] [--rollouts 500] [--json out.json]
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time
import timeit

import numpy as np

from crystalflow import kernels, symtab
from crystalflow.env import CrystalEnv

_E2E = """
import time
t0 = time.perf_counter()
from crystalflow.env import CrystalEnv
from crystalflow import gfn
env = CrystalEnv()
t1 = time.perf_counter()
gfn.sample_batch(None, env, {n}, 1.0, 0)
t2 = time.perf_counter()
print(t1 - t0, t2 - t1)
"""


def kernel_cases(env: CrystalEnv):
    rules = env.rules
    rng = np.random.default_rng(0)
    q = rules.q
    counts = np.zeros(env.n_elements, dtype=np.int64)
    counts[[1, 4]] = [2, 3]
    reach = kernels.reach_of_counts(counts, rules.sums, q)
    allowed = symtab.allowed_counts(225, env.kmax)
    min_atoms = np.ascontiguousarray(rules._min_atoms_for(allowed)[:8])
    row = kernels.completion_table(min_atoms, 3, env.config.max_atoms)[3]
    n = 64
    r = rng.uniform(0.01, 0.99, n)
    logit = rng.normal(size=(n, 5))
    a = rng.uniform(0.1, 100, (n, 5))
    b = rng.uniform(0.1, 100, (n, 5))
    p = rng.normal(size=300_000)
    g = rng.normal(size=p.size)
    mults = np.array(symtab.record(230).wyckoff_multiplicities, dtype=np.int64)
    ox = np.array([-3, 3, 5], dtype=np.int64)
    return {
        "coin_table": lambda m: m.coin_table(mults, 256),
        "element_charge_sums": lambda m: m.element_charge_sums(ox, env.kmax, q),
        "reach_of_counts": lambda m: m.reach_of_counts(counts, rules.sums, q),
        "completion_table": lambda m: m.completion_table(min_atoms, 3, env.config.max_atoms),
        "feasible_counts": lambda m: m.feasible_counts(reach, rules.sums[0], allowed, row, 40),
        "beta_mixture_logpdf[64x5]": lambda m: m.beta_mixture_logpdf(r, logit, a, b),
        "adam_update[300k]": lambda m: m.adam_update(p, g, np.zeros_like(p), np.zeros_like(p), 1e-4, 0.9, 0.999, 1.0, 1e-8),
    }


def micro(repeat: int) -> list[dict]:
    impls = kernels.implementations()
    if "numba" not in impls:
        raise SystemExit("numba is not importable; nothing to compare")
    env = CrystalEnv()
    rows = []
    for name, fn in kernel_cases(env).items():
        fn(impls["numba"])  # compile
        res = {"kernel": name}
        for label, mod in impls.items():
            number = max(1, int(0.05 / max(timeit.timeit(lambda: fn(mod), number=1), 1e-7)))
            times = timeit.repeat(lambda: fn(mod), number=number, repeat=repeat)
            res[label] = min(times) / number
        res["speedup"] = res["numpy"] / res["numba"]
        rows.append(res)
    return rows


def end_to_end(n: int) -> dict:
    out = {}
    for label, flag in (("numba", "0"), ("numpy", "1")):
        env = dict(os.environ, CRYSTALFLOW_DISABLE_NUMBA=flag)
        proc = subprocess.run([sys.executable, "-c", _E2E.format(n=n)], env=env, capture_output=True, text=True, check=True)
        build, roll = map(float, proc.stdout.split())
        out[label] = {"env_build_s": build, "rollouts_s": roll}
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=7)
    ap.add_argument("--rollouts", type=int, default=500)
    ap.add_argument("--json", help="also write the results here")
    args = ap.parse_args(argv)

    rows = micro(args.repeat)
    print(f"{'kernel':28s} {'numpy':>12s} {'numba':>12s} {'speedup':>8s}")
    for r in rows:
        print(f"{r['kernel']:28s} {r['numpy'] * 1e6:10.1f}us {r['numba'] * 1e6:10.1f}us {r['speedup']:7.1f}x")
    e2e = end_to_end(args.rollouts)
    print(f"\ndefault env build + {args.rollouts} uniform rollouts (fresh process each):")
    for label, v in e2e.items():
        print(f"  {label:6s} build {v['env_build_s']:6.2f}s  rollouts {v['rollouts_s']:6.2f}s")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"kernels": rows, "end_to_end": e2e, "timestamp": time.time()}, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
