"""Constants of the convergence theory for a (graph, alpha, delta, y) tuple.

Matrix 2-norms are largest singular values. ``c_Q`` has no closed form and is
estimated as a finite-horizon maximum; ``c_U`` is an empirical input.
"""

import math
from dataclasses import asdict, dataclass, fields
from typing import NamedTuple

import numpy as np

from .errors import (
    EigenFailure,
    EtaOutOfRange,
    InsufficientRuns,
    RhoNotLessThanOne,
    SingularIminusQ,
)
from .graph import ZERO_EIG_RTOL

RANK_RTOL = 1e-8
EIG_CLUSTER_TOL = 1e-6
MIN_RK_RUNS = 30


def norm2(M):
    return float(np.linalg.norm(M, 2))


def consensus_matrices(L, omega, alpha):
    """``P = I - alpha L`` and ``Q = P - 1 omega^T``."""
    L = getattr(L, "L", L)
    omega = getattr(omega, "omega", omega)
    n = L.shape[0]
    P = np.eye(n) - alpha * L
    Q = P - np.outer(np.ones(n), omega)
    return P, Q


def laplacian_spectrum(L):
    """Eigenvalues of L with the (single) zero eigenvalue first."""
    L = getattr(L, "L", L)
    try:
        lam = np.linalg.eigvals(L)
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise EigenFailure(str(exc))
    k = int(np.argmin(np.abs(lam)))
    return np.concatenate([[lam[k]], np.delete(lam, k)])


def spectral_radius_Q(Q, L=None, alpha=None):
    """``max |eig(Q)|``; with ``L`` and ``alpha`` also checks ``max_{i>=2} |1 - alpha lambda_i|``."""
    try:
        rho = float(np.max(np.abs(np.linalg.eigvals(Q))))
    except np.linalg.LinAlgError as exc:  # pragma: no cover
        raise EigenFailure(str(exc))
    if L is not None and alpha is not None:
        lam = laplacian_spectrum(L)[1:]
        other = float(np.max(np.abs(1.0 - alpha * lam))) if lam.size else 0.0
        if abs(other - rho) > 1e-8:
            raise EigenFailure(f"rho(Q)={rho} disagrees with Laplacian spectrum value {other}")
    return rho


class AlphaBound(NamedTuple):
    exact: float
    crude: float


def alpha_upper_bound(L):
    """Exact step-size bound ``min 2 Re(l)/|l|^2`` over nonzero eigenvalues, and ``1/max d_i``."""
    Lm = getattr(L, "L", L)
    lam = laplacian_spectrum(Lm)[1:]
    scale = max(norm2(Lm), 1e-300)
    if np.any(np.abs(lam) < ZERO_EIG_RTOL * scale):
        raise EigenFailure("Laplacian has a repeated zero eigenvalue; graph is not strongly connected")
    exact = float(np.min(2.0 * lam.real / np.abs(lam) ** 2))
    crude = 1.0 / float(np.max(np.diag(Lm)))
    if exact < crude - 1e-9:
        raise EigenFailure(f"exact alpha bound {exact} below crude bound {crude}")
    return AlphaBound(exact, crude)


def _distinct_eigenvalues(vals, tol):
    reps = []
    for v in vals:
        if not any(abs(v - r) <= tol * max(1.0, abs(r)) for r in reps):
            reps.append(v)
    return reps


def minimal_polynomial_index(Q):
    """Largest multiplicity of a nonzero eigenvalue of Q in its minimal polynomial.

    For each distinct nonzero eigenvalue the index is the smallest ``m`` with
    ``rank((Q - l I)^m) == rank((Q - l I)^(m+1))``; ranks use a singular-value
    threshold of ``1e-8 * ||Q||_2``.
    """
    n = Q.shape[0]
    scale = norm2(Q)
    if scale == 0.0:
        return 1
    tol = RANK_RTOL * scale
    vals = np.linalg.eigvals(Q)
    q = 1
    for lam in _distinct_eigenvalues(vals, EIG_CLUSTER_TOL):
        if abs(lam) <= tol:
            continue
        B = Q.astype(complex) - lam * np.eye(n)
        power = B.copy()
        prev = np.linalg.matrix_rank(power, tol=tol)
        m = 1
        while m < n:
            power = power @ B
            r = np.linalg.matrix_rank(power, tol=tol * max(1.0, norm2(power) / scale))
            if r == prev:
                break
            prev = r
            m += 1
        q = max(q, m)
    return q


def cq_prime(rho, q):
    """Bound on ``sum_{k>=1} k^(q-1) rho^k`` (series constant)."""
    if not 0.0 <= rho < 1.0:
        raise RhoNotLessThanOne(f"rho(Q) = {rho} is not < 1")
    if q == 1:
        return rho / (1.0 - rho)
    if rho == 0.0:
        return 0.0
    lr = math.log(rho)
    peak = ((1 - q) / (math.e * lr)) ** (q - 1)
    tail = sum(
        math.factorial(q - 1) * rho / (math.factorial(j) * (-lr) ** (q - j)) for j in range(q)
    )
    return peak + tail


def cqn_from(n, cq, rho, q):
    """Uniform bound on ``||I - Q^k||_F``."""
    if q == 1:
        return math.sqrt(n + 2 + n**2 * cq**2)
    peak = ((1 - q) / (math.e * math.log(rho))) ** (2 * (q - 1))
    return math.sqrt(n + 2 + n**2 * cq**2 * peak)


class DecayConstants(NamedTuple):
    q: int
    cQ: float
    cQn: float
    cQprime: float


def power_decay_constants(Q, horizon=500, q=None):
    """Estimate ``(q, c_Q, c_{Q,n}, c_Q')`` with c_Q a max over ``k in [1, horizon]``.

    Powers are taken of ``Q / rho`` so the ratio never under- or overflows.
    """
    n = Q.shape[0]
    rho = spectral_radius_Q(Q)
    if rho >= 1.0:
        raise RhoNotLessThanOne(f"rho(Q) = {rho} is not < 1")
    if q is None:
        q = minimal_polynomial_index(Q)
    if rho <= 1e-14:
        # numerically nilpotent: only finitely many nonzero powers
        power = np.eye(n)
        for _ in range(n):
            power = power @ Q
        cq = 0.0 if np.linalg.norm(power) <= 1e-12 else math.inf
        if norm2(Q) > 1e-12:
            cq = math.inf
        return DecayConstants(q, cq, cqn_from(n, cq, rho, 1), cq_prime(0.0, q))
    S = Q / rho
    power = np.eye(n)
    cq = 0.0
    for k in range(1, horizon + 1):
        power = power @ S
        cq = max(cq, np.linalg.norm(power, "fro") / (n * k ** (q - 1)))
    return DecayConstants(q, cq, cqn_from(n, cq, rho, q), cq_prime(rho, q))


@dataclass(eq=False)
class SpectralReport:
    n: int
    alpha: float
    delta: float
    P: np.ndarray
    Q: np.ndarray
    omega: np.ndarray
    rhoQ: float
    alpha_exact: float
    alpha_crude: float
    q: int
    cQ: float
    cQn: float
    cQprime: float
    Qtilde: np.ndarray = None
    Ltilde: np.ndarray = None
    Qtilde_norm: float = math.nan
    Ltilde_norm: float = math.nan
    nu: float = math.nan
    cU: float = 0.0
    mu: float = math.nan
    mu_lower: float = math.nan
    yprime: float = math.nan
    ydoubleprime: float = math.nan
    varpi: float = math.nan
    cU_is_empirical: bool = False

    _MATRICES = ("P", "Q", "omega", "Qtilde", "Ltilde")

    def scalars(self):
        """Scalar fields in declaration order (matrices dropped)."""
        return {
            f.name: getattr(self, f.name)
            for f in fields(self)
            if f.name not in self._MATRICES
        }

    def as_dict(self):
        return asdict(self)


def spectral_report(L, omega, alpha, delta, horizon=500):
    """Matrix constants that do not depend on the measurements."""
    Lm = getattr(L, "L", L)
    w = getattr(omega, "omega", omega)
    P, Q = consensus_matrices(Lm, w, alpha)
    rho = spectral_radius_Q(Q, Lm, alpha)
    bound = alpha_upper_bound(Lm)
    if rho >= 1.0:
        raise RhoNotLessThanOne(
            f"rho(Q) = {rho:.6g} >= 1 for alpha = {alpha}; need alpha < {bound.exact:.6g}"
        )
    dc = power_decay_constants(Q, horizon)
    return SpectralReport(
        n=Lm.shape[0], alpha=alpha, delta=delta, P=P, Q=Q, omega=np.asarray(w),
        rhoQ=rho, alpha_exact=bound.exact, alpha_crude=bound.crude,
        q=dc.q, cQ=dc.cQ, cQn=dc.cQn, cQprime=dc.cQprime,
    )


def theory_constants(report, delta, alpha, y, cU=None):
    """Fill the (I-Q)^{-1} terms, nu, mu, y', y'' and varpi into ``report`` (returned).

    ``cU`` is the empirical boundedness constant; ``mu_lower`` always uses 0.
    """
    n = report.n
    Q = report.Q
    L = (np.eye(n) - report.P) / alpha if alpha != 0 else None
    IQ = np.eye(n) - Q
    try:
        if np.linalg.cond(IQ) > 1e12:
            raise np.linalg.LinAlgError("I - Q is numerically singular")
        inv = np.linalg.inv(IQ)
    except np.linalg.LinAlgError as exc:
        raise SingularIminusQ(f"I - Q is singular ({exc}); rho(Q) >= 1 upstream")
    if np.linalg.norm(IQ @ inv - np.eye(n), "fro") >= 1e-9:
        raise SingularIminusQ("inverse of I - Q failed the residual check")
    w = report.omega
    y = np.asarray(y, dtype=np.float64)
    report.delta = delta
    report.alpha = alpha
    report.Qtilde = inv @ Q
    report.Ltilde = inv @ L
    report.Qtilde_norm = norm2(report.Qtilde)
    report.Ltilde_norm = norm2(report.Ltilde)
    report.nu = alpha * math.sqrt(n + 2) * delta * report.Ltilde_norm
    report.cU_is_empirical = cU is not None
    report.cU = 0.0 if cU is None else float(cU)

    def _mu(cu):
        return math.sqrt(n + 2) * report.Qtilde_norm + alpha * n * (
            n * report.cQ * report.cQprime * delta + cu
        ) * report.Ltilde_norm

    report.mu = _mu(report.cU)
    report.mu_lower = _mu(0.0)
    report.yprime = float(np.max(np.abs(y) / w**2))
    report.ydoubleprime = float(np.max(np.abs(y) / w))
    report.varpi = 2 * report.cQn * report.yprime * report.Qtilde_norm + math.sqrt(n) * report.ydoubleprime
    return report


def build_report(g_lap, omega, alpha, delta, y, cU=None, horizon=500):
    rep = spectral_report(g_lap, omega, alpha, delta, horizon)
    return theory_constants(rep, delta, alpha, y, cU)


def ms_bound_stage1(report, K):
    """Mean-square bound ``n nu^2 / (4K)`` on ``||Zbar(K) - 1 omega^T||_F^2``."""
    K = np.asarray(K, dtype=np.float64)
    if np.any(K < 1):
        raise ValueError("K must be >= 1")
    return report.n * report.nu**2 / (4.0 * K)


def ms_bound_stage2(report, eta, K):
    """Mean-square bound on ``||xbar(K) - thetahat 1||^2``, of order ``log K / K``."""
    if not 0.0 < eta < 1.0:
        raise EtaOutOfRange(f"eta must lie in (0, 1), got {eta}")
    K = np.asarray(K, dtype=np.float64)
    if np.any(K < 2):
        raise ValueError("K must be >= 2")
    n = report.n
    coef = 3 * report.nu**2 * (
        n * report.ydoubleprime**2 + 2 * report.cQn**2 * report.yprime**2 * report.Qtilde_norm**2
    ) / (n * eta**4)
    return coef * np.log(K) / K


REGIMES = ("v:fin,U:fin", "v:fin,U:inf", "v:inf,U:fin", "v:inf,U:inf")


class TableBound(NamedTuple):
    value: float
    loglog_clamped: bool


def _lil(r):
    """``sqrt(r log log r)``, clamped to 0 when ``r <= e``."""
    if r <= math.e:
        return 0.0, True
    return math.sqrt(r * math.log(math.log(r))), False


def as_bound_table1(report, eta, K, regime, rU=None, rV=None):
    """Almost-sure bound on ``||xbar(K) - thetahat 1||`` for one noise regime."""
    if regime not in REGIMES:
        raise ValueError(f"regime must be one of {REGIMES}")
    if not 0.0 < eta < 1.0:
        raise EtaOutOfRange(f"eta must lie in (0, 1), got {eta}")
    n, a, mu, vp, lt = report.n, report.alpha, report.mu, report.varpi, report.Ltilde_norm
    logK = math.log(K)
    clamped = False
    v_fin, u_fin = regime.split(",")
    lil_u = lil_v = 0.0
    if u_fin == "U:inf":
        if rU is None:
            raise ValueError("regime needs rU")
        lil_u, c = _lil(rU)
        clamped |= c
    if v_fin == "v:inf":
        if rV is None:
            raise ValueError("regime needs rV")
        lil_v, c = _lil(rV)
        clamped |= c
    if regime == REGIMES[0]:
        val = math.sqrt(2) * mu / (n * eta**2) * vp * logK / K
    elif regime == REGIMES[1]:
        val = 2 * a / eta**2 * vp * lt * logK / K * lil_u
    elif regime == REGIMES[2]:
        val = math.sqrt(2) / (n * eta**2) * (a * n * eta**2 * lt + mu * vp) / K * max(lil_v, logK)
    else:
        val = math.sqrt(2) * a / eta**2 * (1 + math.sqrt(2) * vp) * lt / K * max(lil_v, lil_u * logK)
    return TableBound(val, clamped)


class RkStatistics(NamedTuple):
    K: np.ndarray
    rU_hat: np.ndarray
    rV_hat: np.ndarray
    cap: np.ndarray


def rk_statistics(u_trace, v_trace, delta):
    """Running covariance-sum statistics from per-run quantization errors.

    ``u_trace`` has shape ``(runs, K, n, n)`` (row i = error vector of node i),
    ``v_trace`` has shape ``(runs, K, n)``. Returns, for ``K = 1..K_max``, the
    estimates of ``max_i lambda_max(sum_{k<K} Cov(u_i(k)))`` and
    ``lambda_max(sum_{k<K} Cov(v(k)))`` plus the cap ``n delta^2 K / 4``.
    """
    u = np.asarray(u_trace, dtype=np.float64)
    v = np.asarray(v_trace, dtype=np.float64)
    runs, steps, n, _ = u.shape
    if runs < MIN_RK_RUNS:
        raise InsufficientRuns(f"need at least {MIN_RK_RUNS} runs, got {runs}")
    du = u - u.mean(axis=0, keepdims=True)
    cov_u = np.einsum("rkia,rkib->kiab", du, du) / (runs - 1)
    dv = v - v.mean(axis=0, keepdims=True)
    cov_v = np.einsum("rka,rkb->kab", dv, dv) / (runs - 1)
    S_u = np.cumsum(cov_u, axis=0)
    S_v = np.cumsum(cov_v, axis=0)
    rU = np.linalg.eigvalsh(S_u)[..., -1].max(axis=1)
    rV = np.linalg.eigvalsh(S_v)[..., -1]
    K = np.arange(1, steps + 1)
    return RkStatistics(K, rU, rV, n * delta**2 * K / 4.0)
