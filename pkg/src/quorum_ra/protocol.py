"""Stage 1 (left-eigenvector estimation) and stage 2 (corrected estimation) node updates.

This module is the readable per-run reference: one synchronous round per call,
every node quantizing its own state once and broadcasting that value. The
batched Monte-Carlo kernels in :mod:`quorum_ra.kernels` implement the same
arithmetic and are tested against it.

Time bookkeeping: ``zbar(s)`` is the stage-1 running average after global step
``s``, i.e. the mean of ``Z(k0+1..s)``; it exists for ``s >= k0+1``. The
stage-2 correction at time ``t`` reads ``zbar(t+1)`` and ``zbar(t)``, so
stage 1 is always one round ahead of the stage-2 state it feeds (two rounds
ahead of the correction index used by the node-level listing).
"""

from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

from .errors import DenominatorUnderflow
from .quantizer import QuantizerKind, quantize_array
from .rng import Purpose, stream_keys, uniform_block

UNDERFLOW_REL = 1e-8


class UpdateRule(IntEnum):
    COMPENSATING = 0
    PARTIAL = 1
    TOTAL = 2


RULE_NAMES = {"compensating": UpdateRule.COMPENSATING, "pq": UpdateRule.PARTIAL, "tq": UpdateRule.TOTAL}


class RunStreams:
    """Per-run draw source: node ``i`` reads its own stream for each purpose."""

    def __init__(self, seed, run):
        self.seed = seed
        self.run = run
        self._keys = {}

    def keys(self, purpose, n):
        if (purpose, n) not in self._keys:
            self._keys[purpose, n] = stream_keys(self.seed, [self.run], n, purpose)[0]
        return self._keys[purpose, n]

    def block(self, purpose, step, n, ncomp):
        """Uniforms of shape ``(n, ncomp)``: row i from node i's stream at ``step``."""
        return uniform_block(self.keys(purpose, n), step, ncomp)


def feed_steps(t):
    """Stage-1 average indices read by the stage-2 correction at time ``t``."""
    return t + 1, t


def scale_factor(n, kappa):
    return float(n) ** kappa


def underflow_floor(n, kappa):
    return UNDERFLOW_REL * scale_factor(n, kappa)


@dataclass
class Stage1State:
    Z: np.ndarray
    Zbar: np.ndarray
    t: int
    kappa: float
    k0: int
    U: np.ndarray = None  # quantization errors of the last round

    @classmethod
    def initial(cls, n, kappa, k0):
        return cls(Z=scale_factor(n, kappa) * np.eye(n), Zbar=None, t=0, kappa=kappa, k0=k0)

    @property
    def K(self):
        return self.t - self.k0 if self.t >= self.k0 else None

    @property
    def n(self):
        return self.Z.shape[0]

    def estimate(self):
        """Current node estimates of omega: ``zbar_i / n^kappa`` (raw z before averaging starts)."""
        src = self.Z if self.Zbar is None else self.Zbar
        return src / scale_factor(self.n, self.kappa)


def _mix(weights, alpha, rule, own, sent):
    """One synchronous update given each node's own value and its broadcast value."""
    A = weights
    d = A.sum(axis=1)
    recv = A @ sent
    if rule == UpdateRule.COMPENSATING:
        return own + alpha * (recv - d.reshape((-1,) + (1,) * (sent.ndim - 1)) * sent)
    if rule == UpdateRule.PARTIAL:
        return own + alpha * (recv - d.reshape((-1,) + (1,) * (own.ndim - 1)) * own)
    return sent + alpha * (recv - d.reshape((-1,) + (1,) * (sent.ndim - 1)) * sent)


def stage1_step(s, g, alpha, quant, rng, rule=UpdateRule.COMPENSATING):
    """Advance stage 1 by one round; ``rng`` is a :class:`RunStreams`."""
    n = s.n
    u = rng.block(Purpose.STAGE1, s.t, n, n)
    sent = quantize_array(quant.kind, quant.delta, s.Z, u)
    Z = _mix(g.weights, alpha, rule, s.Z, sent)
    t = s.t + 1
    Zbar = s.Zbar
    if t > s.k0:
        K = t - s.k0
        Zbar = Z.copy() if Zbar is None else (K - 1) / K * Zbar + Z / K
    return Stage1State(Z=Z, Zbar=Zbar, t=t, kappa=s.kappa, k0=s.k0, U=sent - s.Z)


def stage1_run(g, alpha, quant, kappa, k0, steps, rng, omega, rule=UpdateRule.COMPENSATING):
    """Run stage 1 alone.

    Returns ``(estimates, errors)``: ``estimates[t]`` is the ``n x n`` matrix of
    node estimates ``zbar_i / n^kappa`` after step ``t`` (raw ``z`` while
    ``t <= k0``) and ``errors[t] = ||estimates[t] - 1 omega^T||_F``.
    """
    if steps <= k0:
        raise ValueError(f"steps ({steps}) must exceed k0 ({k0})")
    omega = getattr(omega, "omega", omega)
    s = Stage1State.initial(g.n, kappa, k0)
    target = np.outer(np.ones(g.n), omega)
    est = np.empty((steps + 1, g.n, g.n))
    est[0] = s.estimate()
    for t in range(steps):
        s = stage1_step(s, g, alpha, quant, rng, rule)
        est[t + 1] = s.estimate()
    err = np.linalg.norm(est - target, axis=(1, 2))
    return est, err


def correction_term(y_i, zbar_next, zbar_prev, kappa, n, is_first, x_start=None,
                    floor=None, node=0, step=0):
    """Correction for one node.

    First round (``t = t0``): ``n^(kappa-1) y_i / zbar(t0+1) - x_i(t0)``, which is
    the textbook ``[n^(kappa-1)/zbar - 1] y_i`` when ``x_i(t0) = y_i`` (the
    default when ``x_start`` is omitted). Later rounds: the telescoping
    difference ``n^(kappa-1) y_i (zbar(t) - zbar(t+1)) / (zbar(t) zbar(t+1))``.
    """
    if floor is None:
        floor = underflow_floor(n, kappa)
    c = float(n) ** (kappa - 1.0)
    if abs(zbar_next) < floor:
        raise DenominatorUnderflow(node, step, zbar_next, floor)
    if is_first:
        start = y_i if x_start is None else x_start
        return c * y_i / zbar_next - start
    if abs(zbar_prev) < floor:
        raise DenominatorUnderflow(node, step, zbar_prev, floor)
    return c * y_i * (zbar_prev - zbar_next) / (zbar_prev * zbar_next)


@dataclass
class Stage2State:
    x: np.ndarray
    y: np.ndarray
    t: int
    t0: int
    kappa: float
    xbar: np.ndarray = None
    eps: np.ndarray = None  # correction applied in the last round
    v: np.ndarray = None  # quantization errors of the last round
    x_start: np.ndarray = field(default=None)

    @classmethod
    def initial(cls, x0, y, t0, kappa):
        return cls(x=np.array(x0, dtype=np.float64), y=np.asarray(y, dtype=np.float64),
                   t=0, t0=t0, kappa=kappa)

    @property
    def K(self):
        return self.t - self.t0 if self.t >= self.t0 else None

    @property
    def n(self):
        return self.x.shape[0]

    def estimate(self):
        return self.x if self.xbar is None else self.xbar


def corrections(s, feed_next, feed_prev, floor=None):
    """Correction vector for round ``s.t`` from the stage-1 diagonal feed."""
    n, t = s.n, s.t
    if t < s.t0:
        return np.zeros(n)
    first = t == s.t0
    start = s.x if first else None
    return np.array([
        correction_term(s.y[i], feed_next[i], None if first else feed_prev[i], s.kappa, n, first,
                        x_start=None if start is None else start[i], floor=floor, node=i, step=t)
        for i in range(n)
    ])


def stage2_step(s, g, alpha, quant, rng, feed_next, feed_prev, rule=UpdateRule.COMPENSATING,
                floor=None):
    """Advance stage 2 by one round.

    ``feed_next`` and ``feed_prev`` are the stage-1 diagonals ``zbar_ii(t+1)``
    and ``zbar_ii(t)`` (``n^kappa`` scale); ``feed_prev`` is ignored at ``t0``.
    """
    n = s.n
    eps = corrections(s, feed_next, feed_prev, floor)
    xh = s.x + eps
    u = rng.block(Purpose.STAGE2, s.t, n, 1)[:, 0]
    sent = quantize_array(quant.kind, quant.delta, xh, u)
    x = _mix(g.weights, alpha, rule, xh, sent)
    t = s.t + 1
    xbar = s.xbar
    if t > s.t0:
        K = t - s.t0
        xbar = x.copy() if xbar is None else (K - 1) / K * xbar + x / K
    x_start = s.x.copy() if s.t == s.t0 else s.x_start
    return replace(s, x=x, t=t, xbar=xbar, eps=eps, v=sent - xh, x_start=x_start)


@dataclass(frozen=True)
class ProtocolSetup:
    """Everything one Monte-Carlo run needs besides its measurements and seed."""

    weights: np.ndarray
    omega: np.ndarray
    alpha: float
    quant: object
    kappa: float = 1.15
    k0: int = 25
    t0: int = 25
    steps: int = 2025
    rule: UpdateRule = UpdateRule.COMPENSATING
    averaging: bool = True
    eta: float = 0.9
    eta_from: int = 100  # measured eta = min of zbar_ii/(n^kappa omega_i) over t >= t0 + eta_from
    stage2: bool = True  # False runs stage 1 alone; x stays at x0

    @property
    def n(self):
        return self.weights.shape[0]

    def validate(self):
        if self.t0 < self.k0:
            raise ValueError(f"t0 ({self.t0}) must be >= k0 ({self.k0}) so zbar(t0+1) exists")
        if self.eta_from < 1:
            raise ValueError("eta_from must be >= 1")
        if self.steps <= max(self.k0, self.t0) + 2:
            raise ValueError("steps must exceed max(k0, t0) + 2")


def reference_run(setup, y, x0, seed, run, record=False):
    """Simulate one run with the step API; returns a dict of per-step traces.

    Raises :class:`DenominatorUnderflow` like the node algorithm would.
    Used as the oracle for the batched kernels.
    """
    from .graph import Digraph

    setup.validate()
    n = setup.n
    g = Digraph(n, setup.weights)
    rng = RunStreams(seed, run)
    w = setup.omega
    theta_hat = float(np.mean(y))
    sf = scale_factor(n, setup.kappa)
    s1 = Stage1State.initial(n, setup.kappa, setup.k0)
    s2 = Stage2State.initial(x0, y, setup.t0, setup.kappa)
    T = setup.steps
    out = {k: np.empty(T + 1) for k in ("mse_z", "mse_zbar", "mse_x", "mse_xbar")}
    u_tr = np.empty((T, n, n)) if record else None
    v_tr = np.empty((T, n)) if record else None
    cons, comp = [], []

    def metrics(t):
        out["mse_z"][t] = np.sum((s1.Z / sf - w) ** 2) / n
        out["mse_zbar"][t] = np.sum((s1.estimate() - w) ** 2) / n
        out["mse_x"][t] = np.mean((s2.x - theta_hat) ** 2)
        out["mse_xbar"][t] = np.mean((s2.estimate() - theta_hat) ** 2)

    metrics(0)
    prev_feed = None
    for t in range(T):
        s1 = stage1_step(s1, g, setup.alpha, setup.quant, rng, setup.rule)
        feed = np.diag(s1.Zbar if (setup.averaging and s1.Zbar is not None) else s1.Z).copy()
        x_before = s2.x
        s2 = stage2_step(s2, g, setup.alpha, setup.quant, rng, feed, prev_feed, setup.rule)
        cons.append(abs(w @ s2.x - w @ (x_before + s2.eps)) / (1 + np.linalg.norm(x_before)))
        if s2.t > setup.t0:
            target = sf / n * np.sum(w * y / feed)
            comp.append(abs(w @ s2.x - target) / max(abs(target), 1e-300))
        prev_feed = feed
        if record:
            u_tr[t] = s1.U
            v_tr[t] = s2.v
        metrics(t + 1)
    out.update(theta_hat=theta_hat, xbar=s2.estimate().copy(), zbar=s1.Zbar.copy(),
               conservation=np.array(cons), compensation=np.array(comp), u=u_tr, v=v_tr)
    return out


__all__ = [
    "UpdateRule", "RULE_NAMES", "RunStreams", "Stage1State", "Stage2State", "ProtocolSetup",
    "stage1_step", "stage1_run", "stage2_step", "correction_term", "corrections", "feed_steps",
    "reference_run", "scale_factor", "underflow_floor", "QuantizerKind",
]
