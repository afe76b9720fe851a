import numpy as np
import pytest

from quorum_ra.errors import DenominatorUnderflow
from quorum_ra.graph import Digraph, laplacian
from quorum_ra.protocol import (
    ProtocolSetup,
    RunStreams,
    Stage1State,
    Stage2State,
    UpdateRule,
    correction_term,
    reference_run,
    stage1_run,
    stage1_step,
    stage2_step,
)
from quorum_ra.quantizer import QuantizerSpec
from quorum_ra.spectral import consensus_matrices

from conftest import inputs

IDENT = QuantizerSpec.from_name("none")


def test_noiseless_stage1_is_matrix_power(default_graph, default_omega):
    n, kappa = 12, 1.15
    P, _ = consensus_matrices(laplacian(default_graph).L, default_omega, 1.0)
    s = Stage1State.initial(n, kappa, 25)
    rng = RunStreams(1, 0)
    Pt = n**kappa * np.eye(n)
    for _ in range(200):
        s = stage1_step(s, default_graph, 1.0, IDENT, rng)
        Pt = P @ Pt
        assert np.max(np.abs(s.Z - Pt)) < 1e-9


def test_noiseless_raw_state_converges(default_graph, default_omega):
    n, kappa = 12, 1.15
    s = Stage1State.initial(n, kappa, 25)
    rng = RunStreams(1, 0)
    for _ in range(400):
        s = stage1_step(s, default_graph, 1.0, IDENT, rng)
    assert np.linalg.norm(s.Z - n**kappa * np.outer(np.ones(n), default_omega)) < 1e-9


def test_stage1_run_average_error_decays_like_one_over_k(default_graph, default_omega):
    est, err = stage1_run(default_graph, 1.0, IDENT, 1.15, 25, 2025, RunStreams(1, 0),
                          default_omega)
    assert est.shape == (2026, 12, 12)
    # without noise, zbar(K) - omega is the transient's mean: exactly O(1/K)
    assert err[1025] * 1000 == pytest.approx(err[2025] * 2000, rel=1e-6)
    with pytest.raises(ValueError):
        stage1_run(default_graph, 1.0, IDENT, 1.15, 25, 10, RunStreams(1, 0), default_omega)


def test_correction_first_round_example():
    # n^(kappa-1) = 1 for kappa = 1: eps = y / zbar - x(t0) = 1/1.25 - 1
    assert correction_term(1.0, 1.25, None, 1.0, 2, True) == pytest.approx(-0.2)
    assert correction_term(1.0, 1.25, None, 1.0, 2, True, x_start=0.5) == pytest.approx(0.3)


def test_correction_later_rounds_telescope():
    z = [1.0, 1.5, 1.2, 1.3]
    y, c = 2.0, 1.0
    total = correction_term(y, z[0], None, 1.0, 3, True, x_start=y)
    for a, b in zip(z, z[1:]):
        total += correction_term(y, b, a, 1.0, 3, False)
    # x(t0) + sum of corrections equals y / zbar(last)
    assert y + total == pytest.approx(c * y / z[-1])


def test_underflow_names_node_and_step():
    with pytest.raises(DenominatorUnderflow, match="node 3, step 40"):
        correction_term(1.0, 1e-12, None, 1.0, 4, True, node=2, step=40)


def test_zero_correction_gives_plain_consensus(default_graph, default_omega):
    P, _ = consensus_matrices(laplacian(default_graph).L, default_omega, 1.0)
    x0 = np.linspace(-1, 3, 12)
    s = Stage2State.initial(x0, np.zeros(12), t0=10**9, kappa=1.0)
    rng = RunStreams(2, 0)
    for _ in range(300):
        s = stage2_step(s, default_graph, 1.0, IDENT, rng, None, None)
        assert np.all(s.eps == 0)
    assert np.allclose(s.x, default_omega @ x0, atol=1e-10)
    assert np.allclose(s.x, np.linalg.matrix_power(P, 300) @ x0, atol=1e-10)


def test_weighted_sum_moves_by_correction(small_setup):
    g, setup = small_setup("prob", 0.5, steps=60)
    y, x0 = inputs(5, 1)
    out = reference_run(setup, y[0], x0[0], seed=4, run=0)
    assert out["conservation"].max() < 1e-10
    assert out["compensation"].max() < 1e-8


@pytest.mark.parametrize("rule", list(UpdateRule))
def test_noiseless_pipeline_reaches_sample_mean(small_setup, rule):
    y, x0 = inputs(5, 1)
    _, raw = small_setup("none", steps=600, rule=rule, averaging=False)
    assert reference_run(raw, y[0], x0[0], seed=1, run=0)["mse_x"][-1] < 1e-24
    _, avg = small_setup("none", steps=600, rule=rule)
    out = reference_run(avg, y[0], x0[0], seed=1, run=0)
    assert out["mse_xbar"][-1] < 1e-3 and out["mse_xbar"][-1] < out["mse_xbar"][100] / 5


def test_kappa_scale_invariance_without_quantization(small_setup):
    y, x0 = inputs(5, 1)
    outs = []
    for kappa in (1.0, 1.15, 2.0):
        _, setup = small_setup("none", steps=120, kappa=kappa)
        outs.append(reference_run(setup, y[0], x0[0], seed=1, run=0))
    for o in outs[1:]:
        for key in ("mse_z", "mse_zbar", "mse_x", "mse_xbar"):
            assert np.allclose(o[key], outs[0][key], rtol=1e-9, atol=1e-14)


def test_running_average_equals_batch_mean(small_setup):
    g, setup = small_setup("prob", 1.0, steps=200)
    y, x0 = inputs(5, 1)
    rng = RunStreams(9, 0)
    s1 = Stage1State.initial(5, setup.kappa, setup.k0)
    s2 = Stage2State.initial(x0[0], y[0], setup.t0, setup.kappa)
    prev, xs = None, []
    for _ in range(setup.steps):
        s1 = stage1_step(s1, g, 1.0, setup.quant, rng)
        feed = np.diag(s1.Zbar if s1.Zbar is not None else s1.Z).copy()
        s2 = stage2_step(s2, g, 1.0, setup.quant, rng, feed, prev)
        prev = feed
        if s2.t > setup.t0:
            xs.append(s2.x)
            K = len(xs)
            assert np.max(np.abs(s2.xbar - np.mean(xs, axis=0))) < 1e-12 * K


def test_setup_validation():
    w = np.array([[0, 1.0], [1.0, 0]])
    base = dict(weights=w, omega=np.array([0.5, 0.5]), alpha=0.5, quant=IDENT)
    with pytest.raises(ValueError, match="t0"):
        ProtocolSetup(**base, k0=30, t0=20).validate()
    with pytest.raises(ValueError, match="steps"):
        ProtocolSetup(**base, k0=5, t0=5, steps=7).validate()
    ProtocolSetup(**base, k0=5, t0=5, steps=8).validate()


def test_total_quantization_underflows_on_coarse_lattice(small_setup):
    # TQ rounds its own z_ii as well, so small diagonal entries can hit zero exactly
    g, setup = small_setup("prob", 4.0, steps=200, rule=UpdateRule.TOTAL, kappa=0.5)
    y, x0 = inputs(5, 20)
    fails = 0
    for r in range(20):
        try:
            reference_run(setup, y[r], x0[r], seed=2, run=r)
        except DenominatorUnderflow:
            fails += 1
    assert fails > 0
