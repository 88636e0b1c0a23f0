"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 solver nonconvergence,
4 numeric failure.
"""
import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .config import ConfigError, load_config, parse_mv, parse_online_qp, parse_pha, parse_utility
from .convex import MinimizerError
from .online_qp import OnlineQpAdapter, ProblemError, diagonalize, lq_dp_solve
from .pha import AdapterError, DivergenceError, PhaError, pha_solve
from .portfolio import (
    MarketError,
    UtilityAdapter,
    bankruptcy_rate,
    lambda_search,
    mv_analytical_policy,
    wealth_paths,
    wealth_statistics,
)
from .tree import TreeError

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_NUMERIC = 0, 2, 3, 4
MACHINE_DECIMALS = 6
LQ_TOLERANCE = 1e-6

log = logging.getLogger("scendecomp")


def _fmt(x, decimals):
    s = f"{x:.{decimals}f}"
    # avoid "-0.00" in tables
    return s[1:] if s.startswith("-") and float(s) == 0 else s


class _Writer:
    """Collects CSV tables and writes full-precision and rounded copies."""

    def __init__(self, outdir, print_decimals):
        self.outdir = Path(outdir)
        self.outdir.mkdir(parents=True, exist_ok=True)
        self.print_decimals = print_decimals
        self.files = []

    def table(self, name, header, rows, numeric_from=0, rounded=True):
        self._write(f"{name}.csv", header, rows, numeric_from, MACHINE_DECIMALS)
        if rounded:
            self._write(f"{name}_print.csv", header, rows, numeric_from, self.print_decimals)

    def _write(self, fname, header, rows, numeric_from, decimals):
        with open(self.outdir / fname, "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(header)
            for row in rows:
                out.writerow([
                    _fmt(v, decimals) if k >= numeric_from and isinstance(v, (float, np.floating)) else v
                    for k, v in enumerate(row)
                ])
        self.files.append(fname)

    def iterations(self, header, rows):
        with open(self.outdir / "iterations.csv", "w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(header)
            for row in rows:
                out.writerow([f"{v:.6e}" if isinstance(v, float) else v for v in row])
        self.files.append("iterations.csv")

    def manifest(self, record):
        record = dict(record, artifacts=sorted(set(self.files)) + ["manifest.json"])
        with open(self.outdir / "manifest.json", "w") as fh:
            json.dump(record, fh, indent=2, sort_keys=True, default=float)
            fh.write("\n")


def _bundle_rows(tree, U_hat, n, prefix=()):
    """One row per (stage, bundle): conditioning outcome indices and controls."""
    rows = []
    for t in range(tree.horizon):
        for b, i in enumerate(tree.bundle_representatives(t)):
            cond = "-".join(str(int(k) + 1) for k in tree.outcome_index[i, :t]) or "root"
            rows.append(list(prefix) + [t, b, cond] + [float(v) for v in U_hat[i, t * n:(t + 1) * n]])
    return rows


def _pha_record(cfg, args):
    return {
        "alpha": cfg.alpha,
        "epsilon": cfg.epsilon,
        "max_iterations": cfg.max_iterations,
        "init": cfg.init,
        "jobs": args.jobs,
        "results_depend_on_jobs": False,
        "kernel_backend": kernels.BACKEND,
        "version": __version__,
    }


def _overrides(args):
    return {"alpha": args.alpha, "epsilon": args.epsilon, "max_iterations": args.max_iter}


def _problem(cfg, kind):
    block = cfg["problem"]
    if block.get("type", kind) != kind:
        raise ConfigError(f"expected a '{kind}' problem, got '{block.get('type')}'")
    return block


def run_qp(args):
    cfg = load_config(args.input)
    problem = parse_online_qp(_problem(cfg, "online_qp"))
    pha_cfg = parse_pha(cfg, _overrides(args))
    decimals = cfg.get("output", {}).get("print_decimals", 2)
    adapter = OnlineQpAdapter(problem)
    tree = adapter.tree
    res = pha_solve(tree, adapter, pha_cfg, jobs=args.jobs)
    out = _Writer(args.outdir, decimals)
    n = problem.n
    out.table("controls", ["stage", "bundle", "condition"] + [f"u{k + 1}" for k in range(n)],
              _bundle_rows(tree, res.u_hat.values, n), numeric_from=3)
    out.iterations(["iteration", "stopping_metric"], [(k, m) for k, m, _ in res.history()])
    expected = float(tree.probabilities @ adapter.objectives(res.u_hat.values))
    out.manifest(dict(_pha_record(pha_cfg, args), command="run-qp", scenarios=tree.n_scenarios,
                      iterations=res.iterations, converged=res.converged, expected_objective=expected))
    log.info("run-qp: %d iterations, converged=%s", res.iterations, res.converged)
    return EXIT_OK if res.converged else EXIT_NONCONVERGED


def check_lq(args):
    cfg = load_config(args.input)
    problem = diagonalize(parse_online_qp(_problem(cfg, "online_qp")))
    pha_cfg = parse_pha(cfg, _overrides(args))
    policy = lq_dp_solve(problem)
    adapter = OnlineQpAdapter(problem)
    tree = adapter.tree
    dp = policy.evaluate_on_tree(problem, tree)
    reference = (dp, adapter.optimal_multipliers(dp)) if args.diagnostics else None
    res = pha_solve(tree, adapter, pha_cfg, reference=reference, jobs=args.jobs)
    diff = float(np.abs(res.u_hat.values - dp).max())
    n = problem.n
    out = _Writer(args.outdir, cfg.get("output", {}).get("print_decimals", 2))
    pha_rows = _bundle_rows(tree, res.u_hat.values, n)
    dp_rows = _bundle_rows(tree, dp, n)
    rows = [p + q[3:] + [max(abs(a - b) for a, b in zip(p[3:], q[3:]))] for p, q in zip(pha_rows, dp_rows)]
    header = ["stage", "bundle", "condition"] + [f"pha_u{k + 1}" for k in range(n)] + \
        [f"dp_u{k + 1}" for k in range(n)] + ["abs_diff"]
    out.table("controls", header, rows, numeric_from=3, rounded=False)
    if args.diagnostics:
        out.iterations(["iteration", "stopping_metric", "reference_distance"], res.history())
    else:
        out.iterations(["iteration", "stopping_metric"], [(k, m) for k, m, _ in res.history()])
    out.manifest(dict(_pha_record(pha_cfg, args), command="check-lq", iterations=res.iterations,
                      converged=res.converged, max_abs_diff=diff, tolerance=LQ_TOLERANCE,
                      dp_value=float(policy.value(problem.x0))))
    print(f"max |PHA - DP| = {diff:.3e}")
    if not res.converged or diff > LQ_TOLERANCE:
        return EXIT_NONCONVERGED
    return EXIT_OK


def run_utility(args):
    cfg = load_config(args.input)
    block = _problem(cfg, "utility")
    market, utility, specs = parse_utility(block, args.gamma)
    pha_cfg = parse_pha(cfg, _overrides(args))
    decimals = cfg.get("output", {}).get("print_decimals", 2)
    tree = market.tree()
    bench = market.riskless_path() if block.get("benchmark", "riskless") == "riskless" \
        else np.full(market.T + 1, float(block["benchmark"]))
    controls, stats, iters, runs = [], [], [], []
    status = EXIT_OK
    n = market.n
    for spec in specs:
        adapter = UtilityAdapter(market, utility, spec, tree)
        res = pha_solve(tree, adapter, pha_cfg, jobs=args.jobs)
        X = wealth_paths(market, tree, res.u_hat.values)
        st = wealth_statistics(tree, X)
        br, empty = bankruptcy_rate(tree, X, bench)
        g = spec.gamma
        controls += _bundle_rows(tree, res.u_hat.values, n, prefix=(g,))
        for t in range(market.T + 1):
            rate = 0.0 if t == 0 else float(br[t - 1])
            stats.append([g, t, float(bench[t]), float(st["mean"][t]), float(st["var"][t]), rate,
                          float(st["worst"][t])])
        iters += [(g, k, m) for k, m, _ in res.history()]
        runs.append({"gamma": g, "iterations": res.iterations, "converged": res.converged,
                     "worst_final_wealth": float(st["worst"][-1]),
                     "expected_utility_objective": adapter.expected_objective(res.u_hat.values),
                     "empty_survivor_stages": [int(t + 1) for t in np.flatnonzero(empty)]})
        if not res.converged:
            status = EXIT_NONCONVERGED
        log.info("run-utility gamma=%g: %d iterations, converged=%s", g, res.iterations, res.converged)
    out = _Writer(args.outdir, decimals)
    out.table("controls", ["gamma", "stage", "bundle", "condition"] + [f"u{k + 1}" for k in range(n)],
              controls, numeric_from=4)
    out.table("stats", ["gamma", "t", "benchmark", "mean", "var", "bankruptcy_rate", "worst"], stats,
              numeric_from=2)
    out.iterations(["gamma", "iteration", "stopping_metric"], iters)
    out.manifest(dict(_pha_record(pha_cfg, args), command="run-utility", scenarios=tree.n_scenarios,
                      utility={"a": utility.a, "b": utility.b}, runs=runs))
    return status


def run_mv(args):
    cfg = load_config(args.input)
    block = _problem(cfg, "mv")
    market, specs = parse_mv(block, args.w, args.gamma)
    pha_cfg = parse_pha(cfg, _overrides(args))
    decimals = cfg.get("output", {}).get("print_decimals", 4)
    theta_cfg = args.theta if args.theta is not None else block.get("theta")
    if theta_cfg is not None and not theta_cfg > 0:
        raise ConfigError("theta must be positive")
    tree = market.tree()
    bench = np.full(market.T + 1, float(block.get("benchmark", 0.0)))
    controls, stats, grid_rows, iters, runs = [], [], [], [], []
    status = EXIT_OK
    n = market.n
    for spec in specs:
        sources = []
        if spec.w > 0:
            _, X_mv = mv_analytical_policy(market, spec.w).evaluate_on_tree(market, tree)
            sources.append(("MV", X_mv))
        search = lambda_search(tree, market, spec, pha_cfg, theta=theta_cfg, jobs=args.jobs)
        sources.append(("MVS", search.wealth))
        for model, X in sources:
            st = wealth_statistics(tree, X)
            br, _ = bankruptcy_rate(tree, X, bench)
            for t in range(market.T + 1):
                rate = 0.0 if t == 0 else float(br[t - 1])
                stats.append([spec.w, spec.gamma, model, t, float(st["mean"][t]), float(st["var"][t]), rate,
                              float(st["worst"][t])])
        controls += _bundle_rows(tree, search.result.u_hat.values, n, prefix=(spec.w,))
        grid_rows += [[spec.w, float(lam), float(val), it, conv] for lam, val, it, conv in search.grid]
        iters += [(spec.w, k, m) for k, m, _ in search.result.history()]
        e_xT = float(tree.probabilities @ search.wealth[:, -1])
        converged = all(g[3] for g in search.grid) and search.result.converged
        runs.append({"w": spec.w, "gamma": spec.gamma, "lambda_star": search.lambda_star,
                     "lambda_bounds": list(search.bounds), "theta": search.theta,
                     "lambda_grid": [g[0] for g in search.grid], "vertex": search.vertex,
                     "lambda_residual": abs(search.lambda_star - (1 + 2 * spec.w * e_xT)),
                     "iterations_at_lambda_star": search.result.iterations, "converged": converged,
                     "notes": search.notes})
        if not converged:
            status = EXIT_NONCONVERGED
        log.info("run-mv w=%g: lambda*=%.6f", spec.w, search.lambda_star)
    out = _Writer(args.outdir, decimals)
    out.table("stats", ["w", "gamma", "model", "t", "mean", "var", "bankruptcy_rate", "worst"], stats,
              numeric_from=4)
    out.table("controls", ["w", "stage", "bundle", "condition"] + [f"u{k + 1}" for k in range(n)],
              controls, numeric_from=4)
    out.table("lambda_grid", ["w", "lambda", "tilde_u", "iterations", "converged"], grid_rows,
              numeric_from=1, rounded=False)
    out.iterations(["w", "iteration", "stopping_metric"], iters)
    out.manifest(dict(_pha_record(pha_cfg, args), command="run-mv", scenarios=tree.n_scenarios, runs=runs))
    return status


COMMANDS = {"run-qp": run_qp, "run-utility": run_utility, "run-mv": run_mv, "check-lq": check_lq}


def build_parser():
    parser = argparse.ArgumentParser(prog="scendecomp", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--input", required=True, help="config path or bundled fixture name")
        p.add_argument("--outdir", default="out")
        p.add_argument("--alpha", type=float)
        p.add_argument("--epsilon", type=float)
        p.add_argument("--max-iter", type=int)
        p.add_argument("--theta", type=float)
        p.add_argument("--gamma", type=float)
        p.add_argument("--w", type=float)
        p.add_argument("--diagnostics", action="store_true")
        p.add_argument("--jobs", type=int, default=1)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.diagnostics else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, ProblemError, TreeError, MarketError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FloatingPointError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DivergenceError, AdapterError, MinimizerError) as exc:
        print(f"solver did not converge: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (PhaError, np.linalg.LinAlgError, ZeroDivisionError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
