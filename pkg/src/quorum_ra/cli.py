"""Command-line front end: ``quorum-ra <subcommand> [options] [key=value ...]``.

Exit codes: 0 success, 2 configuration or input error, 3 assumption violation
(connectivity or step size), 4 runtime failure.
"""

import argparse
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import harness
from .config import dump_config, parse_config
from .errors import (
    ConfigError,
    GraphError,
    NonPositiveComponent,
    NotStronglyConnected,
    QuorumError,
    RhoNotLessThanOne,
    SingularIminusQ,
)
from .graph import is_strongly_connected, laplacian, left_eigenvector, read_graph, write_graph
from .spectral import alpha_upper_bound, build_report, consensus_matrices, spectral_radius_Q

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_ASSUMPTION = 3
EXIT_RUNTIME = 4

SUBCOMMANDS = ("graph-gen", "graph-check", "bounds", "eigvec", "estimate", "compare", "sweep")


class RuntimeFailure(Exception):
    pass


def build_parser():
    p = argparse.ArgumentParser(prog="quorum-ra", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=SUBCOMMANDS)
    p.add_argument("args", nargs="*", metavar="key=value",
                   help="config overrides; graph-check also takes a graph file path")
    p.add_argument("-c", "--config", help="config file (key = value lines)")
    p.add_argument("-o", "--out", default="results", help="output directory (default: results)")
    p.add_argument("-w", "--workers", type=int, help="worker processes for the run ensemble")
    p.add_argument("--plot", action="store_true", help="also render PNG plots from the CSV files")
    p.add_argument("--allow-failures", action="store_true",
                   help="do not treat TQ denominator underflows as a runtime failure")
    return p


def _graph_summary(g, alpha):
    lap = laplacian(g)
    ev = left_eigenvector(lap)
    P, Q = consensus_matrices(lap.L, ev.omega, alpha)
    bound = alpha_upper_bound(lap.L)
    return lap, ev, bound, spectral_radius_Q(Q, lap.L, alpha)


def cmd_graph_gen(cfg, out, opts):
    g = harness.load_graph(cfg)
    write_graph(g, out / "graph.txt")
    print(f"wrote graph with n={g.n}, {len(g.edges())} edges")


def cmd_graph_check(cfg, out, opts):
    if opts.graph_path:
        g = read_graph(opts.graph_path)
    else:
        g = harness.load_graph(cfg)
    if not is_strongly_connected(g):
        raise NotStronglyConnected("Assumption 1 violated: graph is not strongly connected")
    lap, ev, bound, rho = _graph_summary(g, cfg.alpha)
    print(f"n = {g.n}")
    print(f"edges = {len(g.edges())}")
    print("strongly_connected = true")
    print(f"max_degree = {harness.fmt(lap.max_degree)}")
    print(f"alpha_bound = {harness.fmt(bound.exact)}")
    print(f"alpha_crude = {harness.fmt(bound.crude)}")
    print(f"rhoQ = {harness.fmt(rho)}")
    print("omega = " + ",".join(harness.fmt(w) for w in ev.omega))
    harness.write_rows(out / "omega.csv", ("node", "omega"),
                       zip(range(1, g.n + 1), ev.omega))
    if rho >= 1:
        raise RhoNotLessThanOne(f"alpha = {cfg.alpha} gives rho(Q) = {rho:.6g} >= 1")


def cmd_bounds(cfg, out, opts):
    g, lap, setup = harness.make_setup(cfg)
    y, _ = harness.ensemble_inputs(g.n, cfg.theta, cfg.sigma, cfg.seed, np.arange(cfg.runs),
                                   cfg.x_init)
    delta = cfg.delta if cfg.quantizer_kind != "none" else 0.0
    rep = build_report(lap, setup.omega, cfg.alpha, delta, np.max(np.abs(y), axis=0), cU=cfg.cU)
    sc = rep.scalars()
    for k, v in sc.items():
        print(f"{k} = {harness.fmt(int(v) if isinstance(v, bool) else v)}")
    harness.write_report_csv(rep, out / "bounds.csv")
    row = harness.read_csv(out / "bounds.csv")[0]
    print(",".join(row))
    print(",".join(row.values()))


def _check_failures(m, cfg, opts):
    if m.failures and not (opts.allow_failures and cfg.rule_kind == "tq"):
        codes = np.unique(m.fail_code[m.fail_code != 0]).tolist()
        raise RuntimeFailure(f"{m.failures} of {m.runs} runs failed (codes {codes}); "
                             "pass --allow-failures to keep TQ results")


def _plots(paths, opts):
    if opts.plot:
        from .plotting import plot_metric_csv

        for p in paths:
            plot_metric_csv(p)


def cmd_eigvec(cfg, out, opts):
    m = harness.run_ensemble(cfg, workers=opts.workers, stage2=False)
    _check_failures(m, cfg, opts)
    paths = harness.write_metric_csvs(m, out, stage1_only=True)
    harness.write_rows(out / "omega.csv", ("node", "omega"),
                       zip(range(1, m.report.n + 1), m.report.omega))
    _plots(paths, opts)
    print(f"final MSE_Zbar = {harness.fmt(m.mse_zbar[-1])}")


def cmd_estimate(cfg, out, opts):
    m = harness.run_ensemble(cfg, workers=opts.workers)
    _check_failures(m, cfg, opts)
    paths = harness.write_metric_csvs(m, out)
    harness.write_runs_csv(m, out / "runs.csv")
    if m.rU_hat is not None:
        harness.write_rk_csv(m, out / "rk.csv")
    harness.write_report_csv(m.report, out / "bounds.csv", extra={
        "eta_measured": m.eta_measured, "eta_fixed": m.eta_fixed,
        "first_eta_hit": m.first_eta_hit, "failures": m.failures,
    })
    _plots(paths, opts)
    for note in m.notes:
        print(f"note: {note}", file=sys.stderr)
    ok = m.ok
    print(f"theta_hat (mean over runs) = {harness.fmt(np.mean(m.theta_hat))}")
    print(f"final MSE_xbar = {harness.fmt(m.mse_xbar[-1])}")
    print(f"measured eta = {harness.fmt(m.eta_measured)}; failures = {m.failures}/{m.runs}")
    if ok.any():
        print(f"mean final xbar = {harness.fmt(np.mean(m.xbar_final[ok]))}")


def _table(rows, cfg, out, opts, name):
    bad = [r for r in rows if r.failures and harness.RULE_LABELS[r.rule][0] != "tq"]
    if bad and not opts.allow_failures:
        raise RuntimeFailure("runs failed for " + ", ".join(f"{r.rule} (delta={r.delta})"
                                                           for r in bad))
    path = out / f"{name}.csv"
    harness.write_comparison_csv(rows, path)
    if opts.plot:
        from .plotting import plot_comparison_csv

        plot_comparison_csv(path)
    for r in rows:
        print(f"{r.rule:>8} delta={harness.fmt(r.delta):<5} mse_last150={harness.fmt(r.mse_last150)} "
              f"failures={r.failures}")


def cmd_compare(cfg, out, opts):
    _table(harness.compare_rules(cfg, workers=opts.workers), cfg, out, opts, "comparison")


def cmd_sweep(cfg, out, opts):
    _table(harness.sweep(cfg, workers=opts.workers), cfg, out, opts, "sweep")


COMMANDS = {
    "graph-gen": cmd_graph_gen,
    "graph-check": cmd_graph_check,
    "bounds": cmd_bounds,
    "eigvec": cmd_eigvec,
    "estimate": cmd_estimate,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
}


def _split_args(command, args):
    overrides, graph_path = [], None
    for a in args:
        if "=" in a:
            overrides.append(a)
        elif command == "graph-check" and graph_path is None:
            graph_path = a
        else:
            raise ConfigError(f"expected key=value override, got {a!r}")
    return overrides, graph_path


def _publish(staging, out):
    out.mkdir(parents=True, exist_ok=True)
    for f in sorted(staging.iterdir()):
        shutil.move(str(f), str(out / f.name))


def main(argv=None):
    opts = build_parser().parse_intermixed_args(argv)
    out = Path(opts.out)
    staging = None
    try:
        overrides, opts.graph_path = _split_args(opts.command, opts.args)
        cfg = parse_config(opts.config, overrides)
        if opts.workers is not None:
            if opts.workers < 1:
                raise ConfigError("--workers must be >= 1")
            cfg = cfg.with_overrides(workers=opts.workers)
        opts.workers = cfg.workers
        out.parent.mkdir(parents=True, exist_ok=True)
        staging = Path(tempfile.mkdtemp(prefix=f".{out.name}.staging-", dir=out.parent))
        COMMANDS[opts.command](cfg, staging, opts)
        if opts.command not in ("graph-gen", "graph-check"):
            (staging / "config.conf").write_text(dump_config(cfg))
        _publish(staging, out)
        return EXIT_OK
    except (NotStronglyConnected, NonPositiveComponent, RhoNotLessThanOne, SingularIminusQ) as exc:
        print(f"error: assumption violated: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except (ConfigError, GraphError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RuntimeFailure, QuorumError, FloatingPointError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    finally:
        if staging is not None and staging.exists():
            shutil.rmtree(staging, ignore_errors=True)


def run():
    sys.exit(main())


if __name__ == "__main__":
    run()
