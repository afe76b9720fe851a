"""Batched Monte-Carlo kernels for the two-stage protocol.

``simulate_batch`` runs a list of independent runs of one setup. The numba
path loops over runs then rounds; the numpy path vectorizes over runs and
loops over rounds in Python. Both read the same counter-based draws, so they
agree up to floating-point summation order.
"""

from dataclasses import dataclass

import numpy as np

from ._accel import njit, resolve_backend
from .protocol import UpdateRule, scale_factor, underflow_floor
from .quantizer import QuantizerKind, quantize_array, quantize_scalar_nb
from .rng import Purpose, step_key_nb, stream_keys, uniform_block, uniform_nb

FAIL_NONE = 0
FAIL_UNDERFLOW = 1
FAIL_NONFINITE = 2


@dataclass
class BatchResult:
    """Per-run traces for a batch. Metric arrays have shape ``(runs, steps + 1)``."""

    runs: np.ndarray
    mse_z: np.ndarray
    mse_zbar: np.ndarray
    mse_x: np.ndarray
    mse_xbar: np.ndarray
    fail_code: np.ndarray
    fail_step: np.ndarray
    fail_node: np.ndarray
    eta_min: np.ndarray
    t_eta: np.ndarray
    max_qerr: np.ndarray
    cU: np.ndarray
    conservation: np.ndarray
    compensation: np.ndarray
    xbar_final: np.ndarray
    theta_hat: np.ndarray
    u_sum: np.ndarray = None  # (steps, n, n): sum over runs of U(k)
    u_outer_cum: np.ndarray = None  # (G, n, n, n): sum_r sum_{k<K_g} u_i u_i^T
    v_trace: np.ndarray = None  # (runs, steps, n)
    rk_grid: np.ndarray = None  # K values of u_outer_cum rows

    @property
    def failed(self):
        return self.fail_code != FAIL_NONE


@njit(cache=True)
def _batch_nb(A, dvec, omega, alpha, kind, delta, rule, averaging, kappa, k0, t0, steps,
              eta_fixed, eta_from, floor, stage2, keys1, keys2, y, x0, record, rk_grid,
              mse, fail_code, fail_step, fail_node, eta_min, t_eta, max_qerr, cU,
              cons_out, comp_out, xbar_out, u_sum, u_outer_cum, v_tr):
    R, n = y.shape
    sf = float(n) ** kappa
    c = float(n) ** (kappa - 1.0)
    G = rk_grid.shape[0]
    Z = np.empty((n, n))
    Zn = np.empty((n, n))
    Zbar = np.empty((n, n))
    sent = np.empty((n, n))
    x = np.empty(n)
    xh = np.empty(n)
    xs = np.empty(n)
    xn = np.empty(n)
    xbar = np.empty(n)
    eps = np.empty(n)
    feed = np.empty(n)
    prev = np.empty(n)
    cum_u = np.empty((n, n))
    M = np.empty((n, n, n))
    for r in range(R):
        th = 0.0
        for i in range(n):
            th += y[r, i]
        th /= n
        for i in range(n):
            for j in range(n):
                Z[i, j] = sf if i == j else 0.0
                Zbar[i, j] = 0.0
                cum_u[i, j] = 0.0
            x[i] = x0[r, i]
            xbar[i] = 0.0
        if record:
            M[:, :, :] = 0.0
        g = 0
        qerr = 0.0
        cu = 0.0
        worst_cons = 0.0
        worst_comp = 0.0
        emin = np.inf
        teta = -1
        code = 0
        for t in range(steps + 1):
            # metrics of the state at time t
            mz = 0.0
            mzb = 0.0
            for i in range(n):
                for j in range(n):
                    e = Z[i, j] / sf - omega[j]
                    mz += e * e
                    if t > k0:
                        e = Zbar[i, j] / sf - omega[j]
                    mzb += e * e
            mx = 0.0
            mxb = 0.0
            for i in range(n):
                e = x[i] - th
                mx += e * e
                if t > t0:
                    e = xbar[i] - th
                mxb += e * e
            mse[0, r, t] = mz / n
            mse[1, r, t] = mzb / n
            mse[2, r, t] = mx / n
            mse[3, r, t] = mxb / n
            if t == steps:
                break
            # stage 1
            for i in range(n):
                sk = step_key_nb(keys1[r, i], t)
                for j in range(n):
                    q = quantize_scalar_nb(kind, delta, Z[i, j], uniform_nb(sk, j))
                    sent[i, j] = q
                    du = q - Z[i, j]
                    if abs(du) > qerr:
                        qerr = abs(du)
                    cum_u[i, j] += du
                    if record:
                        u_sum[t, i, j] += du
            if record:
                for i in range(n):
                    for a in range(n):
                        ua = sent[i, a] - Z[i, a]
                        for b in range(n):
                            M[i, a, b] += ua * (sent[i, b] - Z[i, b])
            for i in range(n):
                nrm = 0.0
                for j in range(n):
                    nrm += cum_u[i, j] * cum_u[i, j]
                if nrm > cu:
                    cu = nrm
            for i in range(n):
                for j in range(n):
                    acc = 0.0
                    for k in range(n):
                        acc += A[i, k] * sent[k, j]
                    if rule == 0:
                        Zn[i, j] = Z[i, j] + alpha * (acc - dvec[i] * sent[i, j])
                    elif rule == 1:
                        Zn[i, j] = Z[i, j] + alpha * (acc - dvec[i] * Z[i, j])
                    else:
                        Zn[i, j] = sent[i, j] + alpha * (acc - dvec[i] * sent[i, j])
            for i in range(n):
                for j in range(n):
                    Z[i, j] = Zn[i, j]
            if t + 1 > k0:
                K1 = t + 1 - k0
                for i in range(n):
                    for j in range(n):
                        Zbar[i, j] = (K1 - 1.0) / K1 * Zbar[i, j] + Z[i, j] / K1
                ratio = np.inf
                for i in range(n):
                    rr = Zbar[i, i] / (sf * omega[i])
                    if rr < ratio:
                        ratio = rr
                if teta < 0 and ratio >= eta_fixed:
                    teta = t + 1
                if t + 1 >= t0 + eta_from and ratio < emin:
                    emin = ratio
            if record and g < G and rk_grid[g] == t + 1:
                for i in range(n):
                    for a in range(n):
                        for b in range(n):
                            u_outer_cum[g, i, a, b] += M[i, a, b]
                g += 1
            for i in range(n):
                if averaging and t + 1 > k0:
                    feed[i] = Zbar[i, i]
                else:
                    feed[i] = Z[i, i]
            if not stage2:
                continue
            # stage 2
            if t >= t0:
                for i in range(n):
                    if abs(feed[i]) < floor or (t > t0 and abs(prev[i]) < floor):
                        code = 1
                        fail_node[r] = i
                        break
                if code != 0:
                    fail_step[r] = t
                    break
                for i in range(n):
                    if t == t0:
                        eps[i] = c * y[r, i] / feed[i] - x[i]
                    else:
                        eps[i] = c * y[r, i] * (prev[i] - feed[i]) / (prev[i] * feed[i])
            else:
                for i in range(n):
                    eps[i] = 0.0
            xnorm = 0.0
            for i in range(n):
                xnorm += x[i] * x[i]
                xh[i] = x[i] + eps[i]
                sk = step_key_nb(keys2[r, i], t)
                xs[i] = quantize_scalar_nb(kind, delta, xh[i], uniform_nb(sk, 0))
                dv = xs[i] - xh[i]
                if abs(dv) > qerr:
                    qerr = abs(dv)
                if record:
                    v_tr[r, t, i] = dv
            ok = True
            wx = 0.0
            wxh = 0.0
            for i in range(n):
                acc = 0.0
                for k in range(n):
                    acc += A[i, k] * xs[k]
                if rule == 0:
                    xn[i] = xh[i] + alpha * (acc - dvec[i] * xs[i])
                elif rule == 1:
                    xn[i] = xh[i] + alpha * (acc - dvec[i] * xh[i])
                else:
                    xn[i] = xs[i] + alpha * (acc - dvec[i] * xs[i])
                if not np.isfinite(xn[i]):
                    ok = False
                wx += omega[i] * xn[i]
                wxh += omega[i] * xh[i]
            if not ok:
                code = 2
                fail_step[r] = t
                break
            dc = abs(wx - wxh) / (1.0 + np.sqrt(xnorm))
            if dc > worst_cons:
                worst_cons = dc
            if t + 1 > t0:
                tgt = 0.0
                for i in range(n):
                    tgt += omega[i] * y[r, i] / feed[i]
                tgt *= c
                dc = abs(wx - tgt) / max(abs(tgt), 1e-300)
                if dc > worst_comp:
                    worst_comp = dc
            for i in range(n):
                x[i] = xn[i]
                prev[i] = feed[i]
            if t + 1 > t0:
                K2 = t + 1 - t0
                for i in range(n):
                    xbar[i] = (K2 - 1.0) / K2 * xbar[i] + x[i] / K2
        fail_code[r] = code
        if code != 0:
            for t in range(fail_step[r] + 1, steps + 1):
                for m in range(4):
                    mse[m, r, t] = np.nan
        eta_min[r] = emin
        t_eta[r] = teta
        max_qerr[r] = qerr
        cU[r] = np.sqrt(cu)
        cons_out[r] = worst_cons
        comp_out[r] = worst_comp
        for i in range(n):
            xbar_out[r, i] = xbar[i] if code == 0 else np.nan


def _batch_numpy(A, dvec, omega, alpha, kind, delta, rule, averaging, kappa, k0, t0, steps,
                 eta_fixed, eta_from, floor, stage2, keys1, keys2, y, x0, record, rk_grid, out):
    R, n = y.shape
    sf = float(n) ** kappa
    c = float(n) ** (kappa - 1.0)
    th = y.mean(axis=1)
    Z = np.broadcast_to(sf * np.eye(n), (R, n, n)).copy()
    Zbar = np.zeros((R, n, n))
    x = x0.astype(np.float64).copy()
    xbar = np.zeros((R, n))
    prev = np.ones((R, n))
    cum_u = np.zeros((R, n, n))
    alive = np.ones(R, dtype=bool)
    code = np.zeros(R, dtype=np.int8)
    fstep = np.full(R, -1, dtype=np.int64)
    fnode = np.full(R, -1, dtype=np.int64)
    qerr = np.zeros(R)
    cu = np.zeros(R)
    cons = np.zeros(R)
    comp = np.zeros(R)
    emin = np.full(R, np.inf)
    teta = np.full(R, -1, dtype=np.int64)
    M = np.zeros((n, n, n)) if record else None
    mse = out["mse"]
    g = 0
    dcol = dvec[:, None]
    for t in range(steps + 1):
        mse[0, :, t] = np.sum((Z / sf - omega) ** 2, axis=(1, 2)) / n
        mse[1, :, t] = np.sum(((Zbar if t > k0 else Z) / sf - omega) ** 2, axis=(1, 2)) / n
        mse[2, :, t] = np.mean((x - th[:, None]) ** 2, axis=1)
        mse[3, :, t] = np.mean(((xbar if t > t0 else x) - th[:, None]) ** 2, axis=1)
        if t == steps:
            break
        u = uniform_block(keys1, t, n)
        sent = quantize_array(kind, delta, Z, u)
        U = sent - Z
        qerr = np.maximum(qerr, np.abs(U).max(axis=(1, 2)))
        cum_u += U
        cu = np.maximum(cu, np.sqrt(np.max(np.sum(cum_u**2, axis=2), axis=1)))
        if record:
            out["u_sum"][t] = U.sum(axis=0)
            M += np.einsum("ria,rib->iab", U, U)
        recv = A @ sent
        if rule == UpdateRule.COMPENSATING:
            Z = Z + alpha * (recv - dcol * sent)
        elif rule == UpdateRule.PARTIAL:
            Z = Z + alpha * (recv - dcol * Z)
        else:
            Z = sent + alpha * (recv - dcol * sent)
        if t + 1 > k0:
            K1 = t + 1 - k0
            Zbar = (K1 - 1.0) / K1 * Zbar + Z / K1
            ratio = np.min(np.diagonal(Zbar, axis1=1, axis2=2) / (sf * omega), axis=1)
            teta = np.where((teta < 0) & (ratio >= eta_fixed), t + 1, teta)
            if t + 1 >= t0 + eta_from:
                emin = np.minimum(emin, ratio)
        if record and g < rk_grid.size and rk_grid[g] == t + 1:
            out["u_outer_cum"][g] = M
            g += 1
        feed = np.diagonal(Zbar if (averaging and t + 1 > k0) else Z, axis1=1, axis2=2).copy()
        if not stage2:
            continue
        if t >= t0:
            bad = np.abs(feed) < floor
            if t > t0:
                bad |= np.abs(prev) < floor
            newly = alive & bad.any(axis=1)
            if newly.any():
                code[newly] = 1
                fstep[newly] = t
                fnode[newly] = np.argmax(bad[newly], axis=1)
                alive &= ~newly
            safe_feed = np.where(alive[:, None], feed, 1.0)
            safe_prev = np.where(alive[:, None], prev, 1.0)
            if t == t0:
                eps = c * y / safe_feed - x
            else:
                eps = c * y * (safe_prev - safe_feed) / (safe_prev * safe_feed)
        else:
            eps = np.zeros((R, n))
        eps = np.where(alive[:, None], eps, 0.0)
        xh = x + eps
        v = uniform_block(keys2, t, 1)[..., 0]
        xs = quantize_array(kind, delta, np.where(alive[:, None], xh, 0.0), v)
        dv = xs - xh
        qerr = np.where(alive, np.maximum(qerr, np.abs(dv).max(axis=1)), qerr)
        if record:
            out["v_trace"][:, t] = dv
        recv = xs @ A.T
        if rule == UpdateRule.COMPENSATING:
            xn = xh + alpha * (recv - dvec * xs)
        elif rule == UpdateRule.PARTIAL:
            xn = xh + alpha * (recv - dvec * xh)
        else:
            xn = xs + alpha * (recv - dvec * xs)
        nonfinite = alive & ~np.all(np.isfinite(xn), axis=1)
        if nonfinite.any():
            code[nonfinite] = 2
            fstep[nonfinite] = t
            alive &= ~nonfinite
        xn = np.where(alive[:, None], xn, 0.0)
        wx = xn @ omega
        dc = np.abs(wx - xh @ omega) / (1.0 + np.linalg.norm(x, axis=1))
        cons = np.where(alive, np.maximum(cons, dc), cons)
        if t + 1 > t0:
            tgt = c * np.sum(omega * y / np.where(alive[:, None], feed, 1.0), axis=1)
            dc = np.abs(wx - tgt) / np.maximum(np.abs(tgt), 1e-300)
            comp = np.where(alive, np.maximum(comp, dc), comp)
        x = xn
        prev = feed
        if t + 1 > t0:
            K2 = t + 1 - t0
            xbar = (K2 - 1.0) / K2 * xbar + x / K2
    for r in np.flatnonzero(code):
        mse[:, r, fstep[r] + 1:] = np.nan
    xbar = np.where(code[:, None] == 0, xbar, np.nan)
    out.update(fail_code=code, fail_step=fstep, fail_node=fnode, eta_min=emin, t_eta=teta,
               max_qerr=qerr, cU=cu, conservation=cons, compensation=comp, xbar_final=xbar)


def rk_grid_for(steps, stride):
    grid = np.arange(stride, steps + 1, stride, dtype=np.int64)
    if grid.size == 0 or grid[-1] != steps:
        grid = np.append(grid, steps)
    return grid


def simulate_batch(setup, y, x0, seed, runs, backend=None, record_rk=False, rk_stride=10):
    """Simulate ``runs`` (run indices) with measurements ``y`` and starts ``x0`` (both ``(R, n)``)."""
    setup.validate()
    backend = resolve_backend(backend)
    runs = np.asarray(runs, dtype=np.int64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    x0 = np.ascontiguousarray(x0, dtype=np.float64)
    R, n = y.shape
    T = setup.steps
    A = np.ascontiguousarray(setup.weights, dtype=np.float64)
    dvec = A.sum(axis=1)
    omega = np.ascontiguousarray(setup.omega, dtype=np.float64)
    keys1 = stream_keys(seed, runs, n, Purpose.STAGE1)
    keys2 = stream_keys(seed, runs, n, Purpose.STAGE2)
    floor = underflow_floor(n, setup.kappa)
    grid = rk_grid_for(T, rk_stride) if record_rk else np.zeros(0, dtype=np.int64)
    kind = int(setup.quant.kind)
    delta = float(setup.quant.delta) if setup.quant.kind != QuantizerKind.IDENTITY else 1.0
    mse = np.empty((4, R, T + 1))
    u_sum = np.zeros((T, n, n)) if record_rk else np.zeros((1, 1, 1))
    u_outer = np.zeros((grid.size, n, n, n)) if record_rk else np.zeros((1, 1, 1, 1))
    v_tr = np.zeros((R, T, n)) if record_rk else np.zeros((1, 1, 1))
    args = (A, dvec, omega, float(setup.alpha), kind, delta, int(setup.rule), bool(setup.averaging),
            float(setup.kappa), int(setup.k0), int(setup.t0), int(T), float(setup.eta), int(setup.eta_from), floor,
            bool(setup.stage2),
            keys1, keys2, y, x0, bool(record_rk), grid)
    if backend == "numba":
        res = dict(
            fail_code=np.zeros(R, dtype=np.int8), fail_step=np.full(R, -1, dtype=np.int64),
            fail_node=np.full(R, -1, dtype=np.int64), eta_min=np.empty(R),
            t_eta=np.empty(R, dtype=np.int64), max_qerr=np.empty(R), cU=np.empty(R),
            conservation=np.empty(R), compensation=np.empty(R), xbar_final=np.empty((R, n)),
        )
        _batch_nb(*args, mse, res["fail_code"], res["fail_step"], res["fail_node"], res["eta_min"],
                  res["t_eta"], res["max_qerr"], res["cU"], res["conservation"],
                  res["compensation"], res["xbar_final"], u_sum, u_outer, v_tr)
    else:
        res = {"mse": mse, "u_sum": u_sum, "u_outer_cum": u_outer, "v_trace": v_tr}
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            _batch_numpy(*args, res)
        for k in ("mse", "u_sum", "u_outer_cum", "v_trace"):
            res.pop(k)
    return _result(runs, mse, y, record_rk, u_sum, u_outer, v_tr, grid, res)


def _result(runs, mse, y, record_rk, u_sum, u_outer, v_tr, grid, res):
    r = BatchResult(
        runs=runs, mse_z=mse[0], mse_zbar=mse[1], mse_x=mse[2], mse_xbar=mse[3],
        theta_hat=y.mean(axis=1),
        u_sum=u_sum if record_rk else None,
        u_outer_cum=u_outer if record_rk else None,
        v_trace=v_tr if record_rk else None,
        rk_grid=grid if record_rk else None,
        **res,
    )
    return r
