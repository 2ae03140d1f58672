"""Batch experiment harness.

Subcommands: env, exact, mc, dynsys, llt, clt, slln.  Every stochastic
command requires an explicit --seed, all randomness derives from it through
component-keyed streams, and output files are never overwritten without
--force.  Exit codes: 0 success, 2 validation, 3 numeric budget, 4 I/O.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import random_env
from .environment import (
    DEFAULT_N_CAP,
    DEFAULT_TAIL_TOL,
    Environment,
    LsvParams,
    diagnostics,
    env_from_lsv,
    env_from_powerlaw,
    env_geometric,
    load_env_file,
    write_env_file,
)
from .errors import DeficitBudgetError, TailTruncationError, ValidationError
from .limits import (
    LimitParams,
    clt_report,
    fit_limit_params,
    llt_report,
    llt_report_json,
    slln_report,
)
from .walk import (
    McConfig,
    mc_tv_tolerance,
    position_distribution,
    simulate_paths,
    tv_distance,
)
from .dynsys import TrajectoryConfig, simulate_trajectories


def _fmt(v) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def _out_path(path: str) -> str:
    """Relative output paths land in $WALKLAB_OUT_DIR when it is set."""
    base = os.environ.get("WALKLAB_OUT_DIR")
    if base and not os.path.isabs(path):
        return os.path.join(base, path)
    return path


def _write_text(path: str, text: str, force: bool) -> None:
    path = _out_path(path)
    if os.path.exists(path) and not force:
        raise FileExistsError(f"refusing to overwrite {path}; pass --force")
    with open(path, "w") as fh:
        fh.write(text)


def _write_csv(path: str, header: list[str], rows, force: bool) -> None:
    lines = [",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    _write_text(path, "\n".join(lines) + "\n", force)


def _write_json(path: str, payload, force: bool) -> None:
    _write_text(path, json.dumps(payload, sort_keys=True, indent=1) + "\n", force)


def _parse_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v != ""]
    except ValueError as exc:
        raise ValidationError(f"expected comma-separated numbers, got {text!r}") from exc


def _parse_ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v != ""]
    except ValueError as exc:
        raise ValidationError(f"expected comma-separated integers, got {text!r}") from exc


# ---------------------------------------------------------------------------
# env command
# ---------------------------------------------------------------------------

def _build_random_model(args) -> random_env.RandomEnvModel:
    kind, _, family = args.random.partition("-")
    kind = {"iid": "iid", "mdep": "m-dependent", "markov": "markov"}.get(kind)
    if kind is None or family not in ("powerlaw", "geometric", "lsv"):
        raise ValidationError(f"unknown random model {args.random!r}")
    common = dict(kind=kind, family=family, seed=args.seed,
                  window=args.window if kind == "m-dependent" else 0,
                  lsv_c=args.c if args.c is not None else 0.5,
                  beta_diag=args.beta_diag)
    if kind == "markov":
        choices = _parse_floats(args.choices or "")
        if len(choices) < 2:
            raise ValidationError("markov models need --choices with >= 2 states")
        k = len(choices)
        stay = args.stay
        if not 0.0 < stay < 1.0:
            raise ValidationError("--stay must lie in (0, 1)")
        trans = np.full((k, k), (1.0 - stay) / (k - 1))
        np.fill_diagonal(trans, stay)
        return random_env.RandomEnvModel(
            chain=random_env.MarkovChainSpec(tuple(choices), trans), **common
        )
    if args.choices:
        return random_env.RandomEnvModel(choices=tuple(_parse_floats(args.choices)), **common)
    if args.range:
        lo, hi = _parse_floats(args.range)
        return random_env.RandomEnvModel(low=lo, high=hi, **common)
    raise ValidationError("random models need --choices or --range")


def _cmd_env(args) -> int:
    if args.random:
        if args.seed is None:
            raise ValidationError("sampling commands require --seed")
        sample = random_env.sample_environment(
            _build_random_model(args), args.xmax, args.ncap, args.tail_tol
        )
        env = sample.environment
    elif args.family == "geometric":
        if args.r is None:
            raise ValidationError("geometric family requires --r")
        env = env_geometric(args.r, args.xmax, args.ncap, args.tail_tol)
        env.model["beta_diag"] = args.beta_diag
    elif args.family == "powerlaw":
        if args.beta is None:
            raise ValidationError("powerlaw family requires --beta")
        env = env_from_powerlaw(args.beta, args.xmax, args.ncap, args.tail_tol)
    elif args.family == "lsv":
        if args.alpha is None:
            raise ValidationError("lsv family requires --alpha")
        if args.c is not None:
            params = LsvParams.from_alpha_c(args.alpha, args.c)
        elif args.kappa is not None:
            params = LsvParams.from_alpha_kappa(args.alpha, args.kappa)
        else:
            raise ValidationError("lsv family requires --c or --kappa")
        env = env_from_lsv(params, args.xmax, args.ncap, args.tail_tol)
    else:
        raise ValidationError("env needs --family or --random")

    write_env_file(env, _out_path(args.out), force=args.force)
    diag = diagnostics(env, _beta_diag(env))
    _write_csv(
        args.diagnostics_out or _suffixed(args.out, "-diagnostics.csv"),
        ["x", "A", "A_prime", "K", "m", "s2", "mu", "sigma2"],
        (
            (int(x), diag.A[x], diag.A_prime[x], diag.K[x], diag.m[x],
             diag.s2[x], diag.mu[x], diag.sigma2[x])
            for x in diag.x
        ),
        args.force,
    )
    _write_csv(
        args.m_table_out or _suffixed(args.out, "-mtable.csv"),
        ["n", "M"],
        ((n, int(diag.M[n])) for n in range(diag.M.size)),
        args.force,
    )
    print(f"env: {len(env)} sites -> {args.out}")
    return 0


def _suffixed(path: str, suffix: str) -> str:
    stem, _ = os.path.splitext(path)
    return stem + suffix


def _beta_diag(env: Environment):
    beta = env.model.get("beta_diag")
    if beta is None:
        raise ValidationError(
            "environment carries no diagnostic beta; rebuild it with a family "
            "command or pass a model descriptor with beta_diag"
        )
    return beta


def _load(args) -> Environment:
    return load_env_file(args.env)


def _limit_params(env: Environment, args) -> LimitParams:
    if args.mu is not None and args.sigma2 is not None:
        return LimitParams(mu=args.mu, sigma2=args.sigma2, eta=args.eta)
    diag = diagnostics(env, _beta_diag(env))
    return fit_limit_params(diag, eta=args.eta).params


# ---------------------------------------------------------------------------
# report commands
# ---------------------------------------------------------------------------

def _cmd_exact(args) -> int:
    env = _load(args)
    dist = position_distribution(env, args.n, args.trunc_tol)
    _write_csv(
        args.out,
        ["x", "prob", "deficit_bound"],
        ((int(x), dist.probs[i], dist.deficit) for i, x in enumerate(dist.support)),
        args.force,
    )
    print(f"exact: law of X_{args.n} -> {args.out}")
    return 0


def _cmd_mc(args) -> int:
    env = _load(args)
    cfg = McConfig(paths=args.paths, horizon=args.n, seed=args.seed, record=args.record)
    sample = simulate_paths(env, cfg, method=args.method)
    if args.record == "endpoint-only":
        counts = sample.endpoint_counts()
        rows = ((x, int(c), args.paths) for x, c in enumerate(counts) if c)
        _write_csv(args.out, ["x", "count", "paths"], rows, args.force)
    elif args.record == "full-path":
        rows = (
            (p, t, int(sample.full_x[p, t]), int(sample.full_y[p, t]))
            for p in range(args.paths)
            for t in range(args.n + 1)
        )
        _write_csv(args.out, ["path", "n", "x", "y"], rows, args.force)
    else:
        rows = (
            (p, x, int(sample.hitting[p, x]))
            for p in range(args.paths)
            for x in range(sample.hitting.shape[1])
        )
        _write_csv(args.out, ["path", "x", "T"], rows, args.force)
    print(f"mc: {args.paths} paths, record={args.record} -> {args.out}")
    return 0


def _cmd_dynsys(args) -> int:
    env = _load(args)
    times = _parse_ints(args.times) if args.times else [args.n]
    cfg = TrajectoryConfig(paths=args.paths, horizon=args.n, seed=args.seed)
    sample = simulate_trajectories(env, cfg, times=times, levels=True)
    hist_rows = []
    level_rows = []
    summary = []
    for t in sorted(sample.cell_counts):
        counts = sample.cell_counts[t]
        hist_rows += [(t, x, int(c), args.paths) for x, c in enumerate(counts) if c]
        xs, ys, cs = sample.level_counts[t]
        level_rows += [
            (t, int(x), int(y), int(c), args.paths) for x, y, c in zip(xs, ys, cs)
        ]
        exact = position_distribution(env, t, args.trunc_tol)
        contributing = sample.contributing[t]
        summary.append({
            "n": t,
            "contributing_paths": contributing,
            "tv_cells": tv_distance(exact, counts, contributing),
            "tolerance": mc_tv_tolerance(max(t, 1), contributing),
        })
    _write_csv(args.out_hist, ["n", "x", "count", "paths"], hist_rows, args.force)
    _write_csv(args.out_levels, ["n", "x", "y", "count", "paths"], level_rows, args.force)
    _write_json(args.out_summary, {
        "paths": args.paths, "seed": args.seed,
        "flagged_paths": sample.flagged, "rows": summary,
    }, args.force)
    print(f"dynsys: {args.paths} trajectories -> {args.out_summary}")
    return 0


def _cmd_llt(args) -> int:
    env = _load(args)
    params = _limit_params(env, args)
    diag = diagnostics(env, _beta_diag(env))
    reports = []
    for n in _parse_ints(args.n_grid):
        rep = llt_report(env, params, diag, n, trunc_tol=args.trunc_tol)
        reports.append(llt_report_json(rep))
        print(f"llt: n={n} sup_err_scaled={rep.sup_err_scaled:.6g}")
    _write_json(args.out, reports, args.force)
    return 0


def _cmd_clt(args) -> int:
    env = _load(args)
    params = _limit_params(env, args)
    rep = clt_report(env, params, _parse_ints(args.n_grid), trunc_tol=args.trunc_tol)
    _write_csv(
        args.out,
        ["n", "kolmogorov_X", "x", "kolmogorov_T"],
        (
            (int(rep.n[i]), rep.dist_position[i], int(rep.hitting_x[i]), rep.dist_hitting[i])
            for i in range(rep.n.size)
        ),
        args.force,
    )
    print(f"clt: grid {args.n_grid} -> {args.out}")
    return 0


def _cmd_slln(args) -> int:
    env = _load(args)
    params = _limit_params(env, args)
    times = np.unique(np.linspace(1, args.horizon, num=min(args.horizon, 32), dtype=np.int64))
    cfg = McConfig(paths=args.paths, horizon=args.horizon, seed=args.seed)
    sample = simulate_paths(env, cfg, method="sojourn", times=times)
    rep = slln_report(env, params, sample, tol=args.tol)
    _write_csv(
        args.out,
        ["n", "mean_ratio", "frac_within"],
        (
            (int(rep.times[i]), rep.mean_ratio[i], rep.frac_within[i])
            for i in range(rep.times.size)
        ),
        args.force,
    )
    print(
        f"slln: speed={rep.speed:.6g} final_frac_within={rep.final_frac_within:.4f} "
        f"-> {args.out}"
    )
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_common(p, seed_required: bool) -> None:
    p.add_argument("--seed", type=int, required=seed_required,
                   help="stream seed (required for stochastic commands)")
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")


def _add_params_flags(p) -> None:
    p.add_argument("--mu", type=float, help="override the fitted mean sojourn")
    p.add_argument("--sigma2", type=float, help="override the fitted sojourn variance")
    p.add_argument("--eta", type=float, default=0.0, help="residual rate exponent")
    p.add_argument("--trunc-tol", type=float, default=1e-12,
                   dest="trunc_tol", help="per-convolution trim tolerance")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="walklab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("env", help="build or sample an environment file")
    p.add_argument("--family", choices=["geometric", "powerlaw", "lsv"])
    p.add_argument("--random", help="random model, e.g. iid-powerlaw, mdep-powerlaw, markov-powerlaw")
    p.add_argument("--r", type=float, help="geometric ratio")
    p.add_argument("--beta", type=float, help="power-law exponent")
    p.add_argument("--alpha", type=float, help="neutral-branch exponent")
    p.add_argument("--c", type=float, help="branch cut point")
    p.add_argument("--kappa", type=float, help="branch coefficient")
    p.add_argument("--choices", help="comma-separated parameter states")
    p.add_argument("--range", help="comma-separated low,high parameter range")
    p.add_argument("--window", type=int, default=0, help="m-dependence window")
    p.add_argument("--stay", type=float, default=0.6, help="markov stay probability")
    p.add_argument("--beta-diag", type=float, default=3.0, dest="beta_diag",
                   help="diagnostic tail exponent for super-polynomial families")
    p.add_argument("--xmax", type=int, required=True)
    p.add_argument("--ncap", type=int, default=DEFAULT_N_CAP)
    p.add_argument("--tail-tol", type=float, default=DEFAULT_TAIL_TOL, dest="tail_tol")
    p.add_argument("--out", required=True)
    p.add_argument("--diagnostics-out", dest="diagnostics_out")
    p.add_argument("--m-table-out", dest="m_table_out")
    _add_common(p, seed_required=False)
    p.set_defaults(run=_cmd_env)

    p = sub.add_parser("exact", help="exact law of the position at time n")
    p.add_argument("--env", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--trunc-tol", type=float, default=1e-14, dest="trunc_tol")
    p.add_argument("--out", required=True)
    _add_common(p, seed_required=False)
    p.set_defaults(run=_cmd_exact)

    p = sub.add_parser("mc", help="Monte Carlo walk paths")
    p.add_argument("--env", required=True)
    p.add_argument("--paths", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--record", default="endpoint-only",
                   choices=["endpoint-only", "full-path", "hitting-times"])
    p.add_argument("--method", choices=["chain", "sojourn"])
    p.add_argument("--out", required=True)
    _add_common(p, seed_required=True)
    p.set_defaults(run=_cmd_mc)

    p = sub.add_parser("dynsys", help="trajectory histograms vs exact laws")
    p.add_argument("--env", required=True)
    p.add_argument("--paths", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--times", help="comma-separated record times (default: n)")
    p.add_argument("--trunc-tol", type=float, default=1e-12, dest="trunc_tol")
    p.add_argument("--out-hist", required=True, dest="out_hist")
    p.add_argument("--out-levels", required=True, dest="out_levels")
    p.add_argument("--out-summary", required=True, dest="out_summary")
    _add_common(p, seed_required=True)
    p.set_defaults(run=_cmd_dynsys)

    p = sub.add_parser("llt", help="pointwise comparison against the local predictor")
    p.add_argument("--env", required=True)
    p.add_argument("--n-grid", required=True, dest="n_grid")
    p.add_argument("--out", required=True)
    _add_params_flags(p)
    _add_common(p, seed_required=False)
    p.set_defaults(run=_cmd_llt)

    p = sub.add_parser("clt", help="Kolmogorov distances of standardized laws")
    p.add_argument("--env", required=True)
    p.add_argument("--n-grid", required=True, dest="n_grid")
    p.add_argument("--out", required=True)
    _add_params_flags(p)
    _add_common(p, seed_required=False)
    p.set_defaults(run=_cmd_clt)

    p = sub.add_parser("slln", help="path-speed report")
    p.add_argument("--env", required=True)
    p.add_argument("--paths", type=int, required=True)
    p.add_argument("--horizon", type=int, required=True)
    p.add_argument("--tol", type=float, default=0.02)
    p.add_argument("--out", required=True)
    _add_params_flags(p)
    _add_common(p, seed_required=True)
    p.set_defaults(run=_cmd_slln)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.run(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DeficitBudgetError, TailTruncationError) as exc:
        print(f"numeric budget exceeded: {exc}", file=sys.stderr)
        print("hint: increase N_cap, tighten tail_tol, or coarsen --trunc-tol",
              file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
