"""Monte-Carlo ensembles, rule comparisons and CSV output.

Runs are split into fixed-size chunks of run indices. Each chunk is simulated
independently (optionally in a worker process) and the results are folded
back in run-index order, so the ensemble does not depend on the worker count.
"""

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import EtaOutOfRange
from .graph import laplacian, left_eigenvector, random_strongly_connected, read_graph
from .kernels import simulate_batch
from .protocol import RULE_NAMES, ProtocolSetup
from .quantizer import QuantizerSpec
from .rng import Purpose, box_muller, stream_keys, uniform_block
from .spectral import MIN_RK_RUNS, build_report, ms_bound_stage1, ms_bound_stage2

RUN_CHUNK = 25
LAST_WINDOW = 150

# comparison label -> (update rule, quantizer kind, running average)
RULE_LABELS = {
    "prob-ra": ("compensating", "prob", True),
    "prob": ("compensating", "prob", False),
    "unif": ("compensating", "unif", False),
    "unif-ra": ("compensating", "unif", True),
    "pq-ra": ("pq", "prob", True),
    "tq-ra": ("tq", "prob", True),
    "compensating+ra": ("compensating", "prob", True),
    "compensating": ("compensating", "prob", False),
    "pq+ra": ("pq", "prob", True),
    "tq+ra": ("tq", "prob", True),
}


def generate_measurements(n, theta, sigma, rng):
    """``y_i = theta + sigma * w_i`` with standard normal ``w``; returns ``(y, thetahat)``.

    ``rng`` is a :class:`~quorum_ra.protocol.RunStreams`; node ``i`` uses its
    own noise stream.
    """
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    u = rng.block(Purpose.NOISE, 0, n, 2)
    y = theta + sigma * box_muller(u[:, 0], u[:, 1])
    return y, float(np.mean(y))


def ensemble_inputs(n, theta, sigma, seed, runs, x_init="uniform"):
    """Measurements and stage-2 starting points for a list of run indices, shape ``(R, n)``."""
    runs = np.asarray(runs, dtype=np.int64)
    u = uniform_block(stream_keys(seed, runs, n, Purpose.NOISE), 0, 2)
    y = theta + sigma * box_muller(u[..., 0], u[..., 1])
    if x_init == "measurement":
        x0 = y.copy()
    else:
        w = uniform_block(stream_keys(seed, runs, n, Purpose.INIT_X), 0, 1)[..., 0]
        x0 = y - 1.0 + 2.0 * w
    return y, x0


def load_graph(cfg):
    if cfg.graph_file:
        return read_graph(cfg.graph_file)
    return random_strongly_connected(cfg.graph_n, cfg.graph_p, cfg.graph_seed)


def make_setup(cfg, graph=None, stage2=True):
    g = load_graph(cfg) if graph is None else graph
    lap = laplacian(g)
    omega = left_eigenvector(lap).omega
    quant = QuantizerSpec.from_name(cfg.quantizer_kind, cfg.delta)
    setup = ProtocolSetup(
        weights=g.weights, omega=omega, alpha=cfg.alpha, quant=quant, kappa=cfg.kappa,
        k0=cfg.k0, t0=cfg.t0, steps=cfg.steps, rule=RULE_NAMES[cfg.rule_kind],
        averaging=cfg.averaging, eta=cfg.eta, eta_from=cfg.eta_from, stage2=stage2,
    )
    return g, lap, setup


def config_for_rule(cfg, label, delta=None):
    rule, kind, avg = RULE_LABELS[label]
    if cfg.quantizer_kind == "none":
        kind = "none"
    return replace(cfg, rule_kind=rule, quantizer_kind=kind, averaging=avg,
                   delta=cfg.delta if delta is None else delta)


@dataclass
class RunMetrics:
    """Ensemble means over successful runs plus per-run diagnostics and bound curves."""

    t: np.ndarray
    k0: int
    t0: int
    mse_z: np.ndarray
    mse_zbar: np.ndarray
    mse_x: np.ndarray
    mse_xbar: np.ndarray
    theta_hat: np.ndarray
    xbar_final: np.ndarray
    fail_code: np.ndarray
    fail_step: np.ndarray
    eta_min: np.ndarray
    t_eta: np.ndarray
    max_qerr: np.ndarray
    cU_runs: np.ndarray
    conservation: np.ndarray
    compensation: np.ndarray
    eta_measured: float = math.nan
    eta_fixed: float = 0.9
    report: object = None
    bound_zbar: np.ndarray = None
    bound_xbar_measured: np.ndarray = None
    bound_xbar_fixed: np.ndarray = None
    rk_K: np.ndarray = None
    rU_hat: np.ndarray = None
    rV_hat: np.ndarray = None
    rk_cap: np.ndarray = None
    notes: list = field(default_factory=list)

    @property
    def runs(self):
        return self.fail_code.shape[0]

    @property
    def failures(self):
        return int(np.count_nonzero(self.fail_code))

    @property
    def ok(self):
        return self.fail_code == 0

    @property
    def K_stage1(self):
        return self.t - self.k0

    @property
    def K_stage2(self):
        return self.t - self.t0

    @property
    def first_eta_hit(self):
        """Latest first-hit step over successful runs (``-1`` if some run never reached eta)."""
        hits = self.t_eta[self.ok]
        if hits.size == 0 or np.any(hits < 0):
            return -1
        return int(hits.max())


def _chunk(args):
    setup, y, x0, seed, runs, backend, record_rk, stride = args
    return simulate_batch(setup, y, x0, seed, runs, backend=backend, record_rk=record_rk,
                          rk_stride=stride)


def _run_chunks(jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [_chunk(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(_chunk, jobs))


def _rk_from_stream(parts, R, n, delta):
    """rU_hat on the stride grid and rV_hat for every K from streamed sums."""
    grid = parts[0].rk_grid
    u_sum = sum(p.u_sum for p in parts)
    outer = sum(p.u_outer_cum for p in parts)
    ss = np.cumsum(np.einsum("kia,kib->kiab", u_sum, u_sum), axis=0)
    S_u = (outer - ss[grid - 1] / R) / (R - 1)
    rU = np.linalg.eigvalsh(S_u)[..., -1].max(axis=1)
    v = np.concatenate([p.v_trace for p in parts], axis=0)
    dv = v - v.mean(axis=0, keepdims=True)
    S_v = np.cumsum(np.einsum("rka,rkb->kab", dv, dv), axis=0) / (R - 1)
    rV = np.linalg.eigvalsh(S_v)[..., -1][grid - 1]
    return grid, rU, rV, n * delta**2 * grid / 4.0


def _ensemble_mean(a, ok):
    if not ok.any():
        return np.full(a.shape[1], np.nan)
    return a[ok].mean(axis=0)


def _clip_eta(e):
    if not np.isfinite(e) or e <= 0:
        return math.nan
    return min(float(e), 1.0 - 1e-12)


def run_ensemble(cfg, workers=None, backend=None, stage2=True, graph=None):
    """Simulate ``cfg.runs`` runs and attach bound curves; failed runs are counted, not fatal."""
    workers = cfg.workers if workers is None else workers
    g, lap, setup = make_setup(cfg, graph, stage2=stage2)
    n, R, T = g.n, cfg.runs, cfg.steps
    y, x0 = ensemble_inputs(n, cfg.theta, cfg.sigma, cfg.seed, np.arange(R), cfg.x_init)
    record = cfg.rk_record and R >= MIN_RK_RUNS and cfg.quantizer_kind != "none"
    jobs = []
    for lo in range(0, R, RUN_CHUNK):
        hi = min(R, lo + RUN_CHUNK)
        jobs.append((setup, y[lo:hi], x0[lo:hi], cfg.seed, np.arange(lo, hi), backend, record,
                     cfg.rk_stride))
    parts = _run_chunks(jobs, workers)

    def cat(name):
        return np.concatenate([getattr(p, name) for p in parts], axis=0)

    code = cat("fail_code")
    ok = code == 0
    m = RunMetrics(
        t=np.arange(T + 1), k0=cfg.k0, t0=cfg.t0,
        mse_z=_ensemble_mean(cat("mse_z"), ok), mse_zbar=_ensemble_mean(cat("mse_zbar"), ok),
        mse_x=_ensemble_mean(cat("mse_x"), ok), mse_xbar=_ensemble_mean(cat("mse_xbar"), ok),
        theta_hat=cat("theta_hat"), xbar_final=cat("xbar_final"), fail_code=code,
        fail_step=cat("fail_step"), eta_min=cat("eta_min"), t_eta=cat("t_eta"),
        max_qerr=cat("max_qerr"), cU_runs=cat("cU"), conservation=cat("conservation"),
        compensation=cat("compensation"), eta_fixed=cfg.eta,
    )
    if record:
        m.rk_K, m.rU_hat, m.rV_hat, m.rk_cap = _rk_from_stream(parts, R, n, cfg.delta)
    _attach_bounds(m, cfg, lap, setup, y, ok)
    return m


def _attach_bounds(m, cfg, lap, setup, y, ok):
    delta = cfg.delta if cfg.quantizer_kind != "none" else 0.0
    cU = cfg.cU if cfg.cU is not None else (float(np.max(m.cU_runs[ok])) if ok.any() else None)
    # worst case over runs of |y_i|, so y' and y'' cover every realization
    y_abs = np.max(np.abs(y), axis=0)
    m.report = build_report(lap, setup.omega, cfg.alpha, delta, y_abs, cU=cU)
    m.eta_measured = _clip_eta(np.min(m.eta_min[ok])) if ok.any() else math.nan
    K1 = m.K_stage1.astype(np.float64)
    K2 = m.K_stage2.astype(np.float64)
    m.bound_zbar = np.full(K1.shape, np.nan)
    m.bound_zbar[K1 >= 1] = ms_bound_stage1(m.report, K1[K1 >= 1])
    m.bound_xbar_fixed = np.full(K2.shape, np.nan)
    m.bound_xbar_measured = np.full(K2.shape, np.nan)
    sel = K2 >= 2
    m.bound_xbar_fixed[sel] = ms_bound_stage2(m.report, cfg.eta, K2[sel])
    try:
        m.bound_xbar_measured[sel] = ms_bound_stage2(m.report, m.eta_measured, K2[sel])
    except EtaOutOfRange:
        m.notes.append("measured eta unavailable; bound_measured_eta left empty")


def summary_value(m, averaged):
    """Mean of the last 150 ensemble MSE values (running average or raw state)."""
    curve = m.mse_xbar if averaged else m.mse_x
    return float(np.mean(curve[-LAST_WINDOW:]))


@dataclass
class ComparisonRow:
    rule: str
    delta: float
    mse_last150: float
    failures: int
    metrics: RunMetrics = None


def compare_rules(cfg, rules=None, deltas=None, workers=None, backend=None):
    """One ensemble per (delta, rule) over shared graph, measurements and seeds."""
    rules = cfg.compare_rules if rules is None else rules
    deltas = (cfg.delta,) if deltas is None else deltas
    graph = load_graph(cfg)
    rows = []
    for d in deltas:
        for label in rules:
            if label not in RULE_LABELS:
                raise ValueError(f"unknown rule label {label!r}")
            sub = replace(config_for_rule(cfg, label, d), rk_record=False)
            m = run_ensemble(sub, workers=workers, backend=backend, graph=graph)
            rows.append(ComparisonRow(label, float(d), summary_value(m, RULE_LABELS[label][2]),
                                      m.failures, m))
    return rows


def sweep(cfg, deltas=None, rules=None, workers=None, backend=None):
    deltas = cfg.sweep_deltas if deltas is None else deltas
    rules = cfg.sweep_rules if rules is None else rules
    return compare_rules(cfg, rules, deltas, workers, backend)


# ---------------------------------------------------------------- CSV output

def fmt(v):
    """Deterministic text for a number: integers as-is, floats with 17 significant digits."""
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "nan"
    return format(v, ".17g")


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([x if isinstance(x, str) else fmt(x) for x in row])


METRIC_HEADER = ("K", "value", "bound_measured_eta", "bound_fixed_eta", "t")


def write_metric_csvs(m, outdir, stage1_only=False):
    """One file per metric; ``K`` counts rounds since the relevant averaging start."""
    outdir = Path(outdir)
    nan = np.full(m.t.shape, np.nan)
    specs = [
        ("mse_z", m.K_stage1, m.mse_z, nan, nan),
        ("mse_zbar", m.K_stage1, m.mse_zbar, m.bound_zbar, m.bound_zbar),
    ]
    if not stage1_only:
        specs += [
            ("mse_x", m.K_stage2, m.mse_x, nan, nan),
            ("mse_xbar", m.K_stage2, m.mse_xbar, m.bound_xbar_measured, m.bound_xbar_fixed),
        ]
    paths = []
    for name, K, val, bm, bf in specs:
        p = outdir / f"{name}.csv"
        write_rows(p, METRIC_HEADER, zip(K.tolist(), val, bm, bf, m.t.tolist()))
        paths.append(p)
    return paths


def write_runs_csv(m, path):
    header = ("run", "theta_hat", "fail_code", "fail_step", "eta_min", "t_eta", "max_qerr", "cU",
              "conservation", "compensation")
    rows = zip(range(m.runs), m.theta_hat, m.fail_code.tolist(), m.fail_step.tolist(), m.eta_min,
               m.t_eta.tolist(), m.max_qerr, m.cU_runs, m.conservation, m.compensation)
    write_rows(path, header, rows)


def write_rk_csv(m, path):
    write_rows(path, ("K", "rU_hat", "rV_hat", "cap"),
               zip(m.rk_K.tolist(), m.rU_hat, m.rV_hat, m.rk_cap))


COMPARISON_HEADER = ("rule", "delta", "mse_last150", "failures")


def write_comparison_csv(rows, path):
    write_rows(path, COMPARISON_HEADER,
               ((r.rule, r.delta, r.mse_last150, r.failures) for r in rows))


def write_report_csv(report, path, extra=None):
    sc = dict(report.scalars())
    if extra:
        sc.update(extra)
    keys = list(sc)
    vals = [int(v) if isinstance(v, bool) else v for v in sc.values()]
    write_rows(path, keys, [vals])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
