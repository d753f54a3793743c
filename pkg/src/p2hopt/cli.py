"""Command-line interface.

Subcommands mirror the pipeline: ``calibrate`` fits model parameters from
hourly CSVs, ``solve`` runs the backward recursion, ``train`` runs double
Q-learning, ``simulate`` rolls out and compares policies, ``export`` dumps
plot data, and ``gen-quantizer`` builds quantizer files.  Exit code 0 on
success, 2 on usage errors or missing files (argparse convention).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path


def _fail(parser, message):
    parser.exit(2, f"error: {message}\n")


def _require_file(parser, path, what):
    if not Path(path).is_file():
        _fail(parser, f"{what} not found: {path}")


def _load_config(parser, path):
    from .config import ConfigError, load_config

    _require_file(parser, path, "config file")
    try:
        return load_config(path)
    except ConfigError as exc:
        _fail(parser, str(exc))


def cmd_calibrate(parser, args):
    from .calibration import calibrate, read_series_csv
    from .config import RunConfig, load_config, save_config
    import dataclasses

    _require_file(parser, args.wind_csv, "wind CSV")
    _require_file(parser, args.price_csv, "price CSV")
    wind = read_series_csv(args.wind_csv, "wind")
    price = read_series_csv(args.price_csv, "price")
    result = calibrate(wind, price)
    base = _load_config(parser, args.base) if args.base else RunConfig()
    cfg = dataclasses.replace(base, ou=result.ou, seasonality=result.seasonality)
    cfg.validate()
    save_config(args.output, cfg)
    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(f"calibrated parameters written to {args.output}")
    print(f"  lambda_W={result.ou.lambda_W:.4f} sigma_W={result.ou.sigma_W:.4f}")
    print(f"  lambda_S={result.ou.lambda_S:.4f} sigma_S={result.ou.sigma_S:.4f} "
          f"c_W={result.ou.c_W:.4f}")
    return 0


def cmd_solve(parser, args):
    import time

    from .bdp import solve
    from .containers import save_solve_result

    cfg = _load_config(parser, args.config)
    quantizer = cfg.quantizer.load()
    t0 = time.time()
    n_total = cfg.system.N

    def progress(n):
        if args.verbose and (n % 10 == 0 or n == 0):
            print(f"  period {n}/{n_total} [{time.time() - t0:.1f}s]", flush=True)

    result = solve(cfg.model(), cfg.grid, quantizer, progress=progress)
    save_solve_result(args.output, result, cfg.grid)
    print(f"solved {n_total} periods on a {cfg.grid.n_R}x{cfg.grid.n_W}x"
          f"{cfg.grid.n_S} grid in {time.time() - t0:.1f}s -> {args.output}")
    return 0


def cmd_train(parser, args):
    import time

    from .containers import save_qnet
    from .qlearn import train

    cfg = _load_config(parser, args.config)
    t0 = time.time()
    result = train(cfg.training, cfg.model(), n_O=cfg.grid.n_O,
                   n_I=cfg.grid.n_I, k_R=cfg.grid.k_R,
                   metrics_path=args.metrics)
    save_qnet(args.output, result)
    print(f"trained {cfg.training.k_max} episodes in {time.time() - t0:.1f}s "
          f"-> {args.output}")
    return 0


def _build_policy(parser, name, cfg, artifact):
    from .model import P2HModel
    from .simulate import AlwaysIdlePolicy, BDPPolicy, MyopicThresholdPolicy, QPolicy

    model = cfg.model()
    if name == "idle":
        return AlwaysIdlePolicy(model)
    if name == "myopic":
        return MyopicThresholdPolicy(model)
    if artifact is None:
        _fail(parser, f"policy {name!r} needs --artifact")
    _require_file(parser, artifact, "artifact")
    if name == "bdp":
        from .containers import load_solve_result
        result, gcfg = load_solve_result(artifact)
        return BDPPolicy(result, cfg.quantizer.load(), model, gcfg)
    if name == "q":
        from .containers import load_qnet
        return QPolicy(load_qnet(artifact, model))
    _fail(parser, f"unknown policy {name!r}")


def cmd_simulate(parser, args):
    from .export import export_eval_report, export_trajectory
    from .simulate import evaluate_policies, simulate

    cfg = _load_config(parser, args.config)
    model = cfg.model()
    x0 = cfg.simulation.initial_state(model)
    n_traj = args.trajectories or cfg.simulation.n_trajectories
    seed = args.seed if args.seed is not None else cfg.simulation.seed
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)

    policies = [_build_policy(parser, name, cfg, args.artifact)
                for name in args.policy]
    if len(policies) >= 2:
        report = evaluate_policies(policies, model, x0, n_traj, seed)
        export_eval_report(report, out / "evaluation.csv")
        for e in report.entries:
            print(f"{e.policy}: mean cost {e.mean_cost:.2f} EUR "
                  f"+- {e.std_error:.2f} (n={e.n_trajectories})")
    sample = simulate(policies[0], model, x0, min(n_traj, 1), seed)
    export_trajectory(sample[0], out / "trajectory_sample.csv")
    if len(policies) == 1:
        trajs = simulate(policies[0], model, x0, n_traj, seed)
        import numpy as np
        totals = np.array([t.total_cost for t in trajs])
        print(f"{policies[0].name}: mean cost {totals.mean():.2f} EUR "
              f"+- {totals.std(ddof=1) / len(totals) ** 0.5:.2f} (n={n_traj})")
    print(f"outputs in {out}/")
    return 0


def cmd_export(parser, args):
    from .containers import load_solve_result
    from .export import export_policy_heatmap, export_value_slice

    cfg = _load_config(parser, args.config)
    _require_file(parser, args.artifact, "artifact")
    result, gcfg = load_solve_result(args.artifact)
    if args.kind == "value-slice":
        axis, _, idx = (args.fix or "s=0").partition("=")
        if axis not in ("r", "w", "s") or not idx.lstrip("-").isdigit():
            _fail(parser, "--fix must look like s=25")
        export_value_slice(result, args.period, axis, int(idx), args.output)
    elif args.kind == "policy-heatmap":
        export_policy_heatmap(result, cfg.quantizer.load(), cfg.model(),
                              gcfg, args.output)
    else:
        _fail(parser, f"unknown export kind {args.kind!r}")
    print(f"wrote {args.output}")
    return 0


def cmd_gen_quantizer(parser, args):
    from .quantization import (lloyd_generate, refine_with_exact_probabilities,
                               save_quantizer)

    q = lloyd_generate(args.L, args.samples, seed=args.seed,
                       max_iter=args.max_iter)
    if args.polish > 0:
        q = refine_with_exact_probabilities(q, polish_iters=args.polish)
    save_quantizer(args.output, q)
    print(f"L={args.L} quantizer (distortion {q.distortion:.6f}) -> {args.output}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="p2hopt",
        description="Cost-optimal operation of an industrial power-to-heat "
                    "plant: solvers, calibration, simulation.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="fit wind/price model from hourly CSVs")
    p.add_argument("wind_csv")
    p.add_argument("price_csv")
    p.add_argument("-o", "--output", required=True, help="config JSON to write")
    p.add_argument("--base", help="config to copy non-fitted blocks from")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("solve", help="backward dynamic programming")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("-o", "--output", required=True, help="tables container")
    p.add_argument("-v", "--verbose", action="store_true")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("train", help="double Q-learning")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("-o", "--output", required=True, help="network container")
    p.add_argument("--metrics", help="per-episode metrics CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("simulate", help="Monte-Carlo rollouts and comparison")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--policy", action="append", required=True,
                   choices=["bdp", "q", "idle", "myopic"],
                   help="repeat to compare policies under common noise")
    p.add_argument("--artifact", help="tables/network container for bdp/q")
    p.add_argument("--traj", dest="trajectories", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("export", help="CSV plot data from artifacts")
    p.add_argument("-c", "--config", required=True)
    p.add_argument("--artifact", required=True)
    p.add_argument("--kind", required=True,
                   choices=["value-slice", "policy-heatmap"])
    p.add_argument("--period", type=int, default=0)
    p.add_argument("--fix", help="fixed axis for value-slice, e.g. s=25")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("gen-quantizer", help="build a Gaussian quantizer file")
    p.add_argument("-L", type=int, required=True)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--samples", type=int, default=1_000_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iter", type=int, default=120)
    p.add_argument("--polish", type=int, default=8)
    p.set_defaults(func=cmd_gen_quantizer)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(parser, args) or 0
    except SystemExit:
        raise
    except Exception as exc:  # surface everything with a diagnostic, code 1
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
