"""Command-line entry point.

Subcommands: ``train``, ``sample``, ``eval``, ``oracle-check``, ``tables``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure,
4 resource refusal (state space too large for the oracle).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__, config, gfn, metrics, oracle, records, reward, symtab, tensorio
from .env import CrystalEnv, EnvError
from .policy import Policy

log = logging.getLogger("crystalflow")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_RESOURCE = 4


class CommandError(Exception):
    def __init__(self, message: str, code: int = EXIT_CONFIG):
        self.code = code
        super().__init__(message)


# ----------------------------------------------------------------- helpers


def _load_config(args) -> config.RunConfig:
    return config.load(args.config, seed=args.seed, output_dir=args.out)


def _out_dir(run: config.RunConfig) -> Path:
    out = run.output_dir
    out.mkdir(parents=True, exist_ok=True)
    return out


def _build(run: config.RunConfig):
    env = CrystalEnv(run.env_config())
    if env.dropped_space_groups:
        log.info("dropped %d space groups that admit no valid composition", len(env.dropped_space_groups))
    backend = reward.make_backend(run.reward_config())
    return env, backend


def _new_policy(run: config.RunConfig, env: CrystalEnv) -> Policy:
    p = run.doc["policy"]
    return Policy(env, hidden=p["hidden"], n_components=p["n_components"], seed=run.seed)


def _checkpoint_meta(run: config.RunConfig) -> dict:
    return {"config": run.doc, "version": __version__}


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- commands


def cmd_train(args) -> int:
    run = _load_config(args)
    out = _out_dir(run)
    env, backend = _build(run)
    tcfg = run.train_config()
    log.info("training %d iterations x %d trajectories (%d queries)", tcfg.iterations, tcfg.trajectories_per_iter, tcfg.queries)
    (out / "config.resolved.json").write_text(run.to_json())

    def progress(row):
        if row["iteration"] % max(1, tcfg.iterations // 20) == 0:
            log.info("it %d loss %.4g logZ %.4f mean E %.4f", row["iteration"], row["loss"], row["logZ"], row["mean_energy"])

    gfn.train(
        tcfg,
        env,
        reward.state_energy_fn(env, backend),
        policy=_new_policy(run, env),
        out_dir=out,
        meta=_checkpoint_meta(run),
        progress=progress,
    )
    log.info("wrote %s", out / "checkpoint.bin")
    return EXIT_OK


def _load_policy(run: config.RunConfig, env: CrystalEnv, checkpoint: Optional[str]) -> Policy:
    if checkpoint is None:
        return _new_policy(run, env)
    try:
        policy, _, _ = gfn.load_checkpoint(checkpoint, env)
    except (tensorio.TensorFormatError, KeyError, OSError) as exc:
        raise CommandError(f"cannot load checkpoint {checkpoint}: {exc}") from None
    except ValueError as exc:
        raise CommandError(f"checkpoint does not match the configuration: {exc}") from None
    return policy


def sample_records(policy: Policy, env: CrystalEnv, backend, n: int, seed: int, batch: int = 1000):
    """``n`` on-policy terminal records and their energies, each re-validated."""
    recs, energies = [], []
    for start in range(0, n, batch):
        trajs = gfn.sample_batch(policy, env, min(batch, n - start), 0.0, seed, iteration=start // batch)
        for t in trajs:
            problems = env.validate_terminal(t.terminal)
            if problems:
                raise EnvError(f"sampled an invalid crystal {t.terminal!r}: {problems}")
        chunk = [env.to_record(t.terminal) for t in trajs]
        recs += chunk
        energies += list(np.asarray(backend(chunk), dtype=np.float64))
    return recs, energies


def cmd_sample(args) -> int:
    run = _load_config(args)
    out = _out_dir(run)
    env, backend = _build(run)
    checkpoint = None if args.untrained else (args.checkpoint or str(out / "checkpoint.bin"))
    policy = _load_policy(run, env, checkpoint)
    if args.n < 0:
        raise CommandError("--n must be non-negative")
    recs, energies = sample_records(policy, env, backend, args.n, run.seed)
    path = Path(args.samples) if args.samples else out / "samples.csv"
    records.write_csv(path, recs, extra=(records.ENERGY_COLUMN,), values=[[e] for e in energies])
    log.info("wrote %d samples to %s", len(recs), path)
    return EXIT_OK


def cmd_eval(args) -> int:
    run = _load_config(args)
    out = _out_dir(run)
    src = Path(args.samples) if args.samples else out / "samples.csv"
    try:
        recs, vals = records.read_csv(src, extra=(records.ENERGY_COLUMN,))
    except OSError as exc:
        raise CommandError(f"cannot read {src}: {exc}") from None
    if not recs:
        raise CommandError(f"{src} contains no samples")
    samples = [(r, v[0]) for r, v in zip(recs, vals)]
    env_doc = run.doc["env"]
    space_groups = env_doc["space_groups"] or list(symtab.tables().default_space_groups)
    if not env_doc["sg_stage"]:
        space_groups = [env_doc["fixed_space_group"]]
    report = {
        "energy": metrics.energy_report(samples),
        "diversity": metrics.diversity_report(samples, env_doc["elements"], space_groups),
        "top": [{"record": r, "energy": e} for r, e in metrics.topk(samples, min(args.top, len(samples)))],
    }
    path = Path(args.report) if args.report else out / "metrics.json"
    _write_json(path, report)
    log.info("wrote %s", path)
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    run = _load_config(args)
    out = _out_dir(run)
    env, backend = _build(run)
    if env.config.lp_stage:
        raise CommandError("oracle-check needs the lattice stage disabled", EXIT_CONFIG)
    budget = run.doc["oracle"]["max_terminals"]
    try:
        terminals = oracle.enumerate_terminals(env, budget=budget)
    except oracle.StateSpaceTooLargeError as exc:
        raise CommandError(f"refusing: {exc}", EXIT_RESOURCE) from None
    tcfg = run.train_config()
    energy_fn = reward.state_energy_fn(env, backend)
    exact = oracle.exact_distribution(terminals, reward.log_reward(energy_fn(terminals), tcfg.temperature))
    result = gfn.train(tcfg, env, energy_fn, policy=_new_policy(run, env), out_dir=out, meta=_checkpoint_meta(run))
    n = run.doc["oracle"]["samples"]
    trajs = gfn.sample_batch(result.policy, env, n, 0.0, run.seed + 1, iteration=0)
    counts = Counter(t.terminal for t in trajs)
    report = {
        "terminal_count": len(terminals),
        "logZ_true": exact.logZ,
        "logZ_learned": result.logz.value,
        "logZ_gap": result.logz.value - exact.logZ,
        "samples": n,
        "l1": oracle.l1_divergence(counts, exact),
        "iterations": tcfg.iterations,
    }
    _write_json(out / "oracle_report.json", report)
    print(json.dumps(report, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_tables(args) -> int:
    print(json.dumps(symtab.tables().as_json(args.table), indent=2))
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="crystalflow", description="Constrained GFlowNet sampler for crystals.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="run configuration JSON (defaults when omitted)")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out", help="override the configured output directory")

    p = sub.add_parser("train", help="train a sampler")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="draw crystals from a checkpoint")
    common(p)
    p.add_argument("--checkpoint", help="checkpoint path (default: OUT/checkpoint.bin)")
    p.add_argument("--untrained", action="store_true", help="sample from a freshly initialised policy")
    p.add_argument("--n", type=int, default=10_000, help="number of samples")
    p.add_argument("--samples", help="output CSV (default: OUT/samples.csv)")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="energy and diversity reports for a samples CSV")
    common(p)
    p.add_argument("--samples", help="samples CSV (default: OUT/samples.csv)")
    p.add_argument("--report", help="output JSON (default: OUT/metrics.json)")
    p.add_argument("--top", type=int, default=100, help="number of lowest-energy samples to list")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("oracle-check", help="train briefly and compare against exhaustive enumeration")
    common(p)
    p.set_defaults(func=cmd_oracle_check)

    p = sub.add_parser("tables", help="dump a lookup table as JSON")
    p.add_argument("table", choices=symtab.TABLE_NAMES)
    p.set_defaults(func=cmd_tables)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except config.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except records.RecordParseError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (reward.ProxyFormatError, reward.VocabularyError) as exc:
        print(f"reward error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CommandError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (gfn.NumericalDivergenceError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
