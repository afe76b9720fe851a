import sys

import numpy as np
import pytest

from quorum_ra.graph import build_digraph, laplacian, left_eigenvector, random_strongly_connected
from quorum_ra.protocol import ProtocolSetup
from quorum_ra.quantizer import QuantizerSpec


@pytest.fixture(scope="session")
def default_graph():
    return random_strongly_connected(12, 0.15, 7)


@pytest.fixture(scope="session")
def default_omega(default_graph):
    return left_eigenvector(laplacian(default_graph)).omega


@pytest.fixture
def small_setup():
    """Five-node directed ring with one chord; short horizon for oracle checks."""
    def make(kind="prob", delta=1.0, steps=80, rule=0, averaging=True, kappa=1.15, k0=5, t0=5):
        g = build_digraph(5, [(1, 2, 0.5), (2, 3, 0.5), (3, 4, 0.5), (4, 5, 0.5), (5, 1, 0.5),
                              (1, 3, 0.25)])
        om = left_eigenvector(laplacian(g)).omega
        return g, ProtocolSetup(g.weights, om, 1.0, QuantizerSpec.from_name(kind, delta),
                                kappa=kappa, k0=k0, t0=t0, steps=steps, rule=rule,
                                averaging=averaging, eta_from=10)
    return make


def inputs(n, runs, seed=3):
    rng = np.random.default_rng(seed)
    y = 2 + rng.standard_normal((runs, n))
    return y, y - 1 + 2 * rng.random((runs, n))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(mod.RESULTS):
            terminalreporter.write_line(mod.RESULTS[k])
