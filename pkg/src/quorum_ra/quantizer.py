"""Probabilistic and deterministic uniform quantizers on the lattice {k*delta}."""

import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from ._accel import njit
from .errors import NonFiniteInput


class QuantizerKind(IntEnum):
    PROBABILISTIC = 0
    UNIFORM = 1
    IDENTITY = 2


# config spelling -> kind
KIND_NAMES = {
    "prob": QuantizerKind.PROBABILISTIC,
    "unif": QuantizerKind.UNIFORM,
    "none": QuantizerKind.IDENTITY,
}


@dataclass(frozen=True)
class QuantizerSpec:
    kind: QuantizerKind
    delta: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "kind", QuantizerKind(self.kind))
        if self.kind != QuantizerKind.IDENTITY and not self.delta > 0:
            raise ValueError(f"delta must be > 0 for {self.kind.name}, got {self.delta}")

    @classmethod
    def from_name(cls, name, delta=1.0):
        try:
            kind = KIND_NAMES[name]
        except KeyError:
            raise ValueError(f"unknown quantizer kind {name!r}; expected one of {sorted(KIND_NAMES)}")
        return cls(kind, delta)

    @property
    def name(self):
        return {v: k for k, v in KIND_NAMES.items()}[self.kind]


def _check_finite(x):
    if not np.all(np.isfinite(x)):
        raise NonFiniteInput(f"cannot quantize non-finite input {x!r}")


def round_half_away(v):
    return np.sign(v) * np.floor(np.abs(v) + 0.5) + 0.0


def quantize_array(kind, delta, x, u):
    """Vectorized quantizer. ``u`` holds one uniform per element of ``x``.

    Probabilistic rounding goes up when ``u < p`` with ``p = x/delta - floor(x/delta)``,
    so a lattice point (``p == 0``) never reads its draw.
    """
    if kind == QuantizerKind.IDENTITY:
        return np.array(x, dtype=np.float64, copy=True)
    s = np.asarray(x, dtype=np.float64) / delta
    if kind == QuantizerKind.UNIFORM:
        return round_half_away(s) * delta
    lower = np.floor(s)
    return (lower + (u < (s - lower))) * delta


@njit(cache=True, inline="always")
def quantize_scalar_nb(kind, delta, x, u):
    if kind == 2:
        return x
    s = x / delta
    if kind == 1:
        r = math.floor(abs(s) + 0.5)
        return math.copysign(r, s) * delta if r != 0.0 else 0.0
    lower = math.floor(s)
    if u < s - lower:
        return (lower + 1.0) * delta
    return lower * delta


def up_probability(x, delta):
    """Probability that the probabilistic quantizer rounds ``x`` up."""
    s = x / delta
    return s - math.floor(s)


def quantize(spec, x, rng):
    """Quantize one real. A draw is consumed from ``rng`` only when ``p > 0``."""
    _check_finite(x)
    if spec.kind == QuantizerKind.IDENTITY:
        return float(x)
    if spec.kind == QuantizerKind.UNIFORM:
        return float(round_half_away(x / spec.delta) * spec.delta)
    lower = math.floor(x / spec.delta)
    p = x / spec.delta - lower
    if p == 0.0:
        return lower * spec.delta
    return (lower + 1.0) * spec.delta if rng.uniform() < p else lower * spec.delta


def quantize_vector(spec, v, rng):
    """Quantize component-wise; one stream address per component in index order."""
    v = np.asarray(v, dtype=np.float64)
    _check_finite(v)
    u = rng.uniforms(v.size).reshape(v.shape)
    return quantize_array(spec.kind, spec.delta, v, u)
