"""Command-line experiment harness writing deterministic CSV tables.

    filab enumerate      exact divergence of every policy in a finite class
    filab estimate-bias  exact divergences next to small-sample estimates
    filab train          f-VIM, i-RKL-VIM, behaviour cloning, DAgger, interactive DRE
    filab sweep          bandit divergences across the control-noise grid
    filab verify         randomised numerical checks

Exit codes: 0 success, 1 check failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from filab import __version__
from filab.divergences import get_spec, state_action_divergence
from filab.enumeration import divergence_vs_noise_sweep, enumerate_bandit, enumerate_gridworld
from filab.envs import (
    ParametricPolicy,
    grid_policy_actions,
    grid_policy_id,
    grid_policy_name,
    make_bandit,
    make_gridworld,
)
from filab.errors import DomainError, InputError, NumericalError, ResourceError
from filab.estimation import fit_discriminator, sample_from_table, variational_estimate
from filab.interactive import run_dagger, run_interactive_dre, run_irkl_vim
from filab.mdp import TabularPolicy, occupancy
from filab.metrics import mode_metrics
from filab.verify import CHECKS, run_checks
from filab.vim import VimConfig, behavior_cloning, expert_demonstrations, run_f_vim

SCHEMA_VERSION = 1
ALGOS = ("f-vim", "irkl-vim", "bc", "dagger", "dre")

# Flag defaults.  Flags parse to None so that a --config file can fill gaps.
DEFAULTS = {
    "env": "bandit",
    "div": "KL,RKL,JS,TV",
    "eps0": 0.28,
    "eps1": 0.14,
    "eps2": 0.15,
    "horizon": 8,
    "iters": None,
    "seeds": "0",
    "samples": 200,
    "threads": 1,
    "algo": "f-vim",
    "sharpness": 2.5,
    "episodes": 64,
    "clip": 0.1,
    "top": 20,
    "max_policies": 500,
    "est_steps": 500,
    "est_lr": 0.5,
    "eps0_grid": "0.01:0.49:0.01",
    "angles": 64,
    "seed": 0,
}


class UsageError(Exception):
    pass


# -- formatting -------------------------------------------------------------


def fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        if math.isnan(x):
            return "nan"
        return format(x, ".17g")
    return str(x)


def write_csv(out, command: str, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    buf.write(f"# filab-csv schema={SCHEMA_VERSION} command={command}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    text = buf.getvalue()
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


# -- argument handling --------------------------------------------------------


def _float_list(text: str) -> list[float]:
    """``a,b,c`` or an inclusive range ``start:stop:step``."""
    text = text.strip()
    if not text:
        return []
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise UsageError(f"bad range {text!r}; expected start:stop:step")
        start, stop, step = map(float, parts)
        if step <= 0:
            raise UsageError("range step must be positive")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + i * step, 12) for i in range(max(n, 0))]
    return [float(x) for x in text.split(",") if x.strip()]


def _seed_list(text: str) -> list[int]:
    text = str(text).strip()
    if ":" in text:
        lo, hi = text.split(":")
        seeds = list(range(int(lo), int(hi)))
    else:
        seeds = [int(x) for x in text.split(",") if x.strip()]
    if not seeds:
        raise UsageError("empty seed list")
    return seeds


def _div_list(text: str) -> list[str]:
    try:
        names = [get_spec(x.strip()).name for x in text.split(",") if x.strip()]
    except InputError as exc:
        raise UsageError(str(exc)) from None
    if not names:
        raise UsageError("empty divergence list")
    return names


def read_config(path: str) -> dict[str, str]:
    """Plain ``key=value`` lines; ``#`` starts a comment; dashes and underscores are interchangeable."""
    cfg = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in DEFAULTS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        cfg[key] = value
    return cfg


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--env", choices=("bandit", "grid"))
    p.add_argument("--div", help="comma list of kl,rkl,js,tv")
    p.add_argument("--eps0", type=float, help="bandit control noise")
    p.add_argument("--eps1", type=float, help="gridworld control noise")
    p.add_argument("--eps2", type=float, help="gridworld transition noise")
    p.add_argument("--horizon", type=int)
    p.add_argument("--iters", type=int)
    p.add_argument("--seeds", help="comma list or start:stop")
    p.add_argument("--samples", type=int)
    p.add_argument("--out", help="output CSV path (stdout by default)")
    p.add_argument("--threads", type=int)
    p.add_argument("--config", help="key=value file merged under the flags")
    p.add_argument("--timing", action="store_true", help="append a wall_ms column (not reproducible)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="filab", description="f-divergence imitation learning experiments")
    parser.add_argument("--version", action="version", version=f"filab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enumerate", help="exact divergences over a finite policy class")
    _common(p)
    p.add_argument("--top", type=int, help="rows per divergence for the gridworld ranking")

    p = sub.add_parser("estimate-bias", help="true divergence vs sample estimate per policy")
    _common(p)
    p.add_argument("--max-policies", type=int, help="gridworld policies sampled besides the expert modes")
    p.add_argument("--angles", type=int, help="bandit angle-class policies besides A, B and M")
    p.add_argument("--est-steps", type=int)
    p.add_argument("--est-lr", type=float)

    p = sub.add_parser("train", help="run a learner over a seed list")
    _common(p)
    p.add_argument("--algo", choices=ALGOS)
    p.add_argument("--sharpness", type=float)
    p.add_argument("--episodes", type=int, help="rollouts per iteration for dagger / dre")
    p.add_argument("--clip", type=float, help="ratio clip floor c for dre")

    p = sub.add_parser("sweep", help="bandit divergences over a control-noise grid")
    _common(p)
    p.add_argument("--eps0-grid", help="comma list or start:stop:step (inclusive)")

    p = sub.add_parser("verify", help="randomised numerical checks")
    _common(p)
    p.add_argument("--list", action="store_true", help="print check names and exit")
    p.add_argument("--checks", help="comma list of checks to run")
    p.add_argument("--mutate", default="", help="comma list of checks to run in mutated form")
    p.add_argument("--seed", type=int)
    return parser


@dataclass
class RunConfig:
    command: str
    values: dict
    out: str | None
    timing: bool

    def __getattr__(self, key):
        try:
            return self.values[key]
        except KeyError:
            raise AttributeError(key) from None


_CASTS = {
    "eps0": float, "eps1": float, "eps2": float, "horizon": int, "iters": int, "samples": int,
    "threads": int, "sharpness": float, "episodes": int, "clip": float, "top": int,
    "max_policies": int, "est_steps": int, "est_lr": float, "angles": int, "seed": int,
}


def resolve(args: argparse.Namespace) -> RunConfig:
    cfg = read_config(args.config) if args.config else {}
    values = {}
    for key, default in DEFAULTS.items():
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
        elif key in cfg:
            try:
                values[key] = _CASTS.get(key, str)(cfg[key])
            except ValueError:
                raise UsageError(f"bad value for {key}: {cfg[key]!r}") from None
        else:
            values[key] = default
    if values["threads"] < 1:
        raise UsageError("--threads must be >= 1")
    if values["samples"] < 1:
        raise UsageError("--samples must be >= 1")
    if values["env"] not in ("bandit", "grid"):
        raise UsageError(f"unknown env {values['env']!r}")
    values["div"] = _div_list(values["div"])
    values["seeds"] = _seed_list(values["seeds"])
    return RunConfig(args.command, values, args.out, args.timing)


def _env(cfg: RunConfig):
    if cfg.env == "bandit":
        return make_bandit(cfg.eps0)
    return make_gridworld(cfg.eps1, cfg.eps2, cfg.horizon)


def _pmap(fn, items, threads: int) -> list:
    """Order-preserving map; results never depend on the worker count."""
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _timed(fn):
    def wrapper(x):
        t0 = time.perf_counter()
        row = fn(x)
        return row, 1000.0 * (time.perf_counter() - t0)

    return wrapper


def _emit(cfg: RunConfig, header: list[str], timed_rows) -> None:
    if cfg.timing:
        header = header + ["wall_ms"]
        rows = [row + [ms] for row, ms in timed_rows]
    else:
        rows = [row for row, _ in timed_rows]
    write_csv(cfg.out, cfg.command, header, rows)


# -- subcommands --------------------------------------------------------------


ENUM_HEADER = [
    "experiment", "divergence", "policy_id", "policy_name", "rank", "value", "is_argmin", "ties",
    "collapse_score", "cover_score", "unsafe_mass",
]


def cmd_enumerate(cfg: RunConfig) -> int:
    t0 = time.perf_counter()
    env = _env(cfg)
    if cfg.env == "bandit":
        result = enumerate_bandit(cfg.eps0, cfg.div)
        tables = [env.named_policies[n] for n in result.policy_names]
        keep = {d: result.ranking[d] for d in cfg.div}
    else:
        result = enumerate_gridworld(cfg.eps1, cfg.eps2, cfg.horizon, cfg.div)
        keep = {d: result.ranking[d][: max(cfg.top, 1)] for d in cfg.div}
        tables = None
    elapsed = 1000.0 * (time.perf_counter() - t0)
    rows = []
    for d in cfg.div:
        for rank, idx in enumerate(keep[d]):
            if tables is not None:
                policy = tables[idx]
            else:
                policy = TabularPolicy.deterministic(grid_policy_actions(result.policy_ids[idx]), 4)
            m = mode_metrics(policy, env)
            row = [
                f"enumerate-{cfg.env}", d, result.policy_ids[idx], result.policy_names[idx], rank,
                result.values[d][idx], idx == result.argmin[d], len(result.ties[d]),
                m.collapse_score, m.cover_score, m.unsafe_mass,
            ]
            rows.append((row, elapsed))
    _emit(cfg, ENUM_HEADER, rows)
    return 0


BIAS_HEADER = [
    "experiment", "divergence", "policy_id", "seed", "true_value", "estimate",
    "true_norm", "estimate_norm", "flagged",
]


def _bias_policies(cfg: RunConfig, env) -> list[tuple[str, TabularPolicy]]:
    if cfg.env == "bandit":
        out = [(name, pol) for name, pol in env.named_policies.items()]
        for k in range(cfg.angles):
            theta = -math.pi + 2.0 * math.pi * k / cfg.angles
            out.append((f"theta={theta:.6f}", ParametricPolicy("bandit", theta).tabular()))
        out.append(("expert", env.expert.policy))
        return out
    rng = np.random.default_rng(cfg.seeds[0])
    ids = set(rng.choice(4**9, size=min(cfg.max_policies, 4**9), replace=False).tolist())
    ids |= {grid_policy_id(np.argmax(m.probs, axis=1)) for m in env.expert.modes}
    out = [(grid_policy_name(grid_policy_actions(i)), TabularPolicy.deterministic(grid_policy_actions(i), 4))
           for i in sorted(ids)]
    out.append(("expert", env.expert.policy))
    return out


def _minmax(values: np.ndarray) -> np.ndarray:
    finite = np.isfinite(values)
    out = np.where(finite, 0.0, np.inf)
    if finite.any():
        lo, hi = values[finite].min(), values[finite].max()
        span = hi - lo if hi > lo else 1.0
        out[finite] = (values[finite] - lo) / span
    return out


def cmd_estimate_bias(cfg: RunConfig) -> int:
    env = _env(cfg)
    policies = _bias_policies(cfg, env)
    expert_table = occupancy(env.mdp, env.expert.policy).state_action
    units = [(di, d, pi, seed) for di, d in enumerate(cfg.div) for pi in range(len(policies)) for seed in cfg.seeds]

    def work(unit):
        di, d, pi, seed = unit
        name, policy = policies[pi]
        learner_table = occupancy(env.mdp, policy).state_action
        true = state_action_divergence(env.mdp, env.expert.policy, policy, d)
        rng = np.random.default_rng([seed, pi, di])
        expert = sample_from_table(expert_table, cfg.samples, rng, "expert")
        learner = sample_from_table(learner_table, cfg.samples, rng, "learner")
        V = fit_discriminator(expert, learner, d, cfg.est_steps, cfg.est_lr)
        return true, variational_estimate(expert, learner, V, d)

    results = _pmap(_timed(work), units, cfg.threads)
    table = {u: r for u, r in zip(units, results)}
    rows = []
    gaps: dict[str, float] = {}
    for di, d in enumerate(cfg.div):
        flagged_rows = []
        for seed in cfg.seeds:
            keys = [(di, d, pi, seed) for pi in range(len(policies))]
            trues = np.array([table[k][0][0] for k in keys])
            ests = np.array([table[k][0][1] for k in keys])
            # the expert row is a p = q control and never flagged
            candidate = np.array([policies[k[2]][0] != "expert" for k in keys])
            cutoff = np.percentile(ests[candidate], 1.0)
            flagged = candidate & (ests <= cutoff)
            tn, en = _minmax(trues), _minmax(ests)
            for k, t, e, a, b, f in zip(keys, trues, ests, tn, en, flagged):
                row = ["estimate-bias", d, policies[k[2]][0], seed, t, e, a, b, f]
                rows.append((row, table[k][1]))
                if f:
                    flagged_rows.append((t, e))
        t_mean = float(np.mean([t for t, _ in flagged_rows]))
        e_mean = float(np.mean([e for _, e in flagged_rows]))
        rows.append((["flagged-mean", d, "", "", t_mean, e_mean, "", "", len(flagged_rows)], 0.0))
        gaps[d] = t_mean - e_mean
        print(f"{d}: bottom-1% estimates, mean(true - estimate) = {fmt(gaps[d])}", file=sys.stderr)
    # soft gate: KL and JS are expected to underestimate more than RKL
    if "RKL" in gaps and any(gaps.get(d, -math.inf) <= gaps["RKL"] for d in ("KL", "JS") if d in gaps):
        print("warning: RKL underestimation gap is not the smallest among KL/JS/RKL", file=sys.stderr)
    _emit(cfg, BIAS_HEADER, rows)
    return 0


TRAIN_HEADER = [
    "experiment", "algo", "divergence", "seed", "iterations", "true_value",
    "collapse_score", "cover_score", "unsafe_mass", "params_hash",
]


def _train_one(cfg: RunConfig, env, d: str, seed: int) -> list:
    algo = cfg.algo
    demo_rng = np.random.default_rng([seed, 1])
    if algo in ("f-vim", "irkl-vim", "bc"):
        iters = 500 if cfg.iters is None else cfg.iters
        config = VimConfig(divergence=d, iterations=iters, seed=seed, sharpness=cfg.sharpness,
                           expert_demos=cfg.samples)
        if algo == "f-vim":
            demos = expert_demonstrations(env, config.expert_demos, demo_rng)
            policy, hist = run_f_vim(env, demos, config)
        elif algo == "irkl-vim":
            policy, hist = run_irkl_vim(env, env.expert, config)
        else:
            demos = expert_demonstrations(env, config.expert_demos, demo_rng)
            policy = behavior_cloning(demos, env.policy_kind, steps=iters, seed=seed, sharpness=cfg.sharpness)
            hist = None
        table = policy.tabular()
        true = state_action_divergence(env.mdp, env.expert.policy, table, d)
        h = hist.records[-1].params_hash if hist is not None and hist.records else ""
    else:
        iters = 10 if cfg.iters is None else cfg.iters
        if algo == "dagger":
            table, report = run_dagger(env, env.expert, iters, cfg.episodes, seed)
            true = report.records[report.best_index].action_kl
        else:
            table, report = run_interactive_dre(env, env.expert, iters, cfg.episodes, cfg.clip, seed)
            true = report.records[report.best_index].action_rkl
        h = ""
    m = mode_metrics(table, env)
    return [f"train-{cfg.env}", algo, d, seed, iters, true, m.collapse_score, m.cover_score, m.unsafe_mass, h]


def cmd_train(cfg: RunConfig) -> int:
    env = _env(cfg)
    divs = cfg.div if cfg.algo == "f-vim" else ["RKL" if cfg.algo in ("irkl-vim", "dre") else cfg.div[0]]
    if cfg.algo == "dagger":
        divs = ["KL"]
    units = [(d, s) for d in divs for s in cfg.seeds]
    rows = _pmap(_timed(lambda u: _train_one(cfg, env, *u)), units, cfg.threads)
    _emit(cfg, TRAIN_HEADER, rows)
    return 0


SWEEP_HEADER = ["experiment", "epsilon0", "divergence", "value_A", "value_B", "value_M", "argmin"]


def cmd_sweep(cfg: RunConfig) -> int:
    grid = _float_list(cfg.eps0_grid)
    if not grid:
        raise UsageError("empty --eps0-grid")
    if any(not 0.0 <= e <= 0.5 for e in grid):
        raise UsageError("--eps0-grid values must lie in [0, 0.5]")
    t0 = time.perf_counter()
    table = divergence_vs_noise_sweep(grid, cfg.div)
    elapsed = 1000.0 * (time.perf_counter() - t0) / max(len(table), 1)
    rows = [
        (["sweep", r.epsilon0, r.divergence, r.values["A"], r.values["B"], r.values["M"], r.argmin], elapsed)
        for r in table
    ]
    _emit(cfg, SWEEP_HEADER, rows)
    return 0


VERIFY_HEADER = ["check", "mutated", "instances", "failures", "max_violation", "passed"]


def cmd_verify(cfg: RunConfig, args: argparse.Namespace) -> int:
    if args.list:
        for name, fn in CHECKS.items():
            doc = (fn.__doc__ or "").strip().splitlines()[0]
            print(f"{name}\t{doc}")
        return 0
    names = [n.strip() for n in args.checks.split(",")] if args.checks else list(CHECKS)
    mutate = [n.strip() for n in args.mutate.split(",") if n.strip()]
    unknown = [n for n in names + mutate if n not in CHECKS]
    if unknown:
        raise UsageError(f"unknown checks: {', '.join(unknown)}")
    seed = cfg.seed
    reports = _pmap(_timed(lambda n: run_checks([n], seed=seed, mutate=mutate)[0]), names, cfg.threads)
    rows = []
    for (r, ms), name in zip(reports, names):
        print(r.summary(), file=sys.stderr)
        rows.append(([r.name, name in mutate, r.instances, len(r.failures), r.max_violation, r.passed], ms))
    if cfg.out is not None:
        _emit(cfg, VERIFY_HEADER, rows)
    return 0 if all(r.passed for r, _ in reports) else 1


COMMANDS = {
    "enumerate": cmd_enumerate,
    "estimate-bias": cmd_estimate_bias,
    "train": cmd_train,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve(args)
        if args.command == "verify":
            return cmd_verify(cfg, args)
        return COMMANDS[args.command](cfg)
    except (UsageError, InputError, DomainError) as exc:
        print(f"filab: error: {exc}", file=sys.stderr)
        return 2
    except (ResourceError, NumericalError) as exc:
        print(f"filab: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())


__all__ = ["main", "build_parser", "read_config", "write_csv", "fmt"]
