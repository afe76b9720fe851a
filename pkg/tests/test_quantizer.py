import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from quorum_ra.errors import NonFiniteInput
from quorum_ra.quantizer import (
    QuantizerKind,
    QuantizerSpec,
    quantize,
    quantize_array,
    quantize_scalar_nb,
    quantize_vector,
    up_probability,
)
from quorum_ra.rng import RandomStream

finite = st.floats(-1e6, 1e6, allow_nan=False)
deltas = st.sampled_from([0.05, 0.2, 0.25, 1.0, 3.0])


def test_spec_validation():
    with pytest.raises(ValueError):
        QuantizerSpec(QuantizerKind.PROBABILISTIC, 0.0)
    with pytest.raises(ValueError):
        QuantizerSpec.from_name("dither")
    assert QuantizerSpec.from_name("none", 0.0).name == "none"


@settings(max_examples=200, deadline=None)
@given(finite, deltas, st.floats(0, 1, exclude_max=True))
def test_probabilistic_lands_on_neighbouring_lattice_point(x, delta, u):
    q = quantize_array(QuantizerKind.PROBABILISTIC, delta, np.array([x]), np.array([u]))[0]
    assert abs(q - x) <= delta * (1 + 1e-12)
    k = q / delta
    assert abs(k - round(k)) < 1e-6 * max(1.0, abs(k))


@settings(max_examples=200, deadline=None)
@given(finite, deltas)
def test_uniform_error_at_most_half_delta(x, delta):
    q = quantize(QuantizerSpec(QuantizerKind.UNIFORM, delta), x, None)
    assert abs(q - x) <= delta / 2 * (1 + 1e-9) + 1e-9


def test_uniform_rounds_half_away_from_zero():
    spec = QuantizerSpec(QuantizerKind.UNIFORM, 1.0)
    assert [quantize(spec, v, None) for v in (0.5, -0.5, 1.49, -2.5, 2.5)] == [1, -1, 1, -3, 3]
    z = quantize(spec, -0.2, None)
    assert z == 0.0 and math.copysign(1, z) == 1.0


def test_lattice_points_are_fixed_and_consume_no_draw():
    spec = QuantizerSpec(QuantizerKind.PROBABILISTIC, 0.5)
    rng = RandomStream(seed=3)
    assert quantize(spec, 1.5, rng) == 1.5
    assert rng.cursor == 0
    quantize(spec, 1.6, rng)
    assert rng.cursor == 1


def test_identity_passes_through():
    spec = QuantizerSpec(QuantizerKind.IDENTITY)
    assert quantize(spec, 0.123, None) == 0.123
    v = np.array([1.0, -2.5])
    assert np.array_equal(quantize_vector(spec, v, RandomStream(1)), v)


def test_non_finite_rejected():
    spec = QuantizerSpec(QuantizerKind.PROBABILISTIC, 1.0)
    with pytest.raises(NonFiniteInput):
        quantize(spec, math.nan, RandomStream(1))
    with pytest.raises(NonFiniteInput):
        quantize_vector(spec, [1.0, math.inf], RandomStream(1))


@pytest.mark.parametrize("x,delta", [(0.3, 1.0), (-0.3, 1.0), (2.05, 0.2), (-7.77, 0.5)])
def test_up_frequency_matches_probability(x, delta):
    # oracle: Q(x) = delta*floor(x/delta) + delta * Bernoulli(p)
    n = 200_000
    rng = RandomStream(seed=17)
    q = quantize_vector(QuantizerSpec(QuantizerKind.PROBABILISTIC, delta), np.full(n, x), rng)
    p = up_probability(x, delta)
    freq = np.mean(q > x)
    assert abs(freq - p) < 5 * math.sqrt(p * (1 - p) / n)
    assert abs(np.mean(q) - x) < 5 * delta * math.sqrt(p * (1 - p) / n)
    assert np.var(q) <= delta**2 / 4 + 1e-3


@settings(max_examples=100, deadline=None)
@given(finite, deltas, st.floats(0, 1, exclude_max=True), st.sampled_from([0, 1, 2]))
def test_scalar_kernel_matches_array_version(x, delta, u, kind):
    a = quantize_array(kind, delta, np.array([x]), np.array([u]))[0]
    assert quantize_scalar_nb(kind, delta, x, u) == a
