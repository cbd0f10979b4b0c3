"""Job-size distributions used to probe (in)sensitivity.

Phase-type sizes (a random number of exponential phases) are drawn as a
gamma variate with integer shape, which is the law of that sum.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class Exponential:
    mean: float = 1.0

    def __post_init__(self):
        if not self.mean > 0:
            raise ValueError("mean must be positive")

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.exponential(self.mean, size)

    def moments(self) -> tuple[float, float]:
        return self.mean, self.mean


@dataclass(frozen=True)
class BimodalPhases:
    """n1 phases with probability p1, else n2 phases, each exponential(phase_mean)."""

    phase_mean: float = 0.2
    n1: int = 25
    n2: int = 1
    p1: float = 1 / 6
    p2: float = 5 / 6

    def __post_init__(self):
        if not (self.phase_mean > 0 and self.n1 >= 1 and self.n2 >= 1):
            raise ValueError("phase mean and phase counts must be positive")
        if min(self.p1, self.p2) < 0 or not math.isclose(self.p1 + self.p2, 1.0):
            raise ValueError("p1 and p2 must be probabilities summing to 1")

    def sample(self, rng, size):
        phases = np.where(rng.random(size) < self.p1, self.n1, self.n2)
        return rng.gamma(phases, self.phase_mean)

    def moments(self):
        e_n = self.p1 * self.n1 + self.p2 * self.n2
        var_n = self.p1 * self.n1 ** 2 + self.p2 * self.n2 ** 2 - e_n ** 2
        return _phase_sum_moments(self.phase_mean, e_n, var_n)


@dataclass(frozen=True)
class Hyperexponential:
    mean1: float = 5.0
    mean2: float = 0.2
    p1: float = 1 / 6
    p2: float = 5 / 6

    def __post_init__(self):
        if not (self.mean1 > 0 and self.mean2 > 0):
            raise ValueError("means must be positive")
        if min(self.p1, self.p2) < 0 or not math.isclose(self.p1 + self.p2, 1.0):
            raise ValueError("p1 and p2 must be probabilities summing to 1")

    def sample(self, rng, size):
        means = np.where(rng.random(size) < self.p1, self.mean1, self.mean2)
        return rng.exponential(1.0, size) * means

    def moments(self):
        mean = self.p1 * self.mean1 + self.p2 * self.mean2
        second = 2 * (self.p1 * self.mean1 ** 2 + self.p2 * self.mean2 ** 2)
        return mean, math.sqrt(second - mean ** 2)


@dataclass(frozen=True)
class ZipfPhases:
    """k phases with probability proportional to k**-alpha on 1..K."""

    phase_mean: float = 1.0
    support: int = 200
    alpha: float = 2.0
    _cdf: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (self.phase_mean > 0 and self.support >= 1 and self.alpha > 0):
            raise ValueError("need phase_mean > 0, support >= 1, alpha > 0")
        w = self._weights()
        cdf = np.cumsum(w)
        cdf /= cdf[-1]
        object.__setattr__(self, "_cdf", cdf)

    def _weights(self) -> np.ndarray:
        return np.arange(1, self.support + 1, dtype=float) ** -self.alpha

    def sample(self, rng, size):
        phases = np.searchsorted(self._cdf, rng.random(size), side="right") + 1
        np.minimum(phases, self.support, out=phases)
        return rng.gamma(phases, self.phase_mean)

    def moments(self):
        k = np.arange(1, self.support + 1, dtype=float)
        p = self._weights() / self._weights().sum()
        e_n = float(np.dot(p, k))
        var_n = float(np.dot(p, k * k)) - e_n ** 2
        return _phase_sum_moments(self.phase_mean, e_n, var_n)


def _phase_sum_moments(phase_mean, e_n, var_n):
    mean = e_n * phase_mean
    var = (e_n + var_n) * phase_mean ** 2
    return mean, math.sqrt(var)


SizeDistribution = Exponential | BimodalPhases | Hyperexponential | ZipfPhases

DISTRIBUTIONS = {
    "exponential": Exponential,
    "bimodal": BimodalPhases,
    "hyperexponential": Hyperexponential,
    "zipf": ZipfPhases,
}


def make_distribution(name: str, **params) -> SizeDistribution:
    """Build a distribution by name; missing parameters take the default values."""
    try:
        cls = DISTRIBUTIONS[name]
    except KeyError:
        raise ValueError(f"unknown distribution {name!r}, expected one of {sorted(DISTRIBUTIONS)}") from None
    return cls(**params)


def distribution_name(dist: SizeDistribution) -> str:
    for name, cls in DISTRIBUTIONS.items():
        if isinstance(dist, cls):
            return name
    raise TypeError(f"not a size distribution: {dist!r}")


def sample_size(dist: SizeDistribution, rng: np.random.Generator) -> float:
    """One job size."""
    return float(dist.sample(rng, 1)[0])


def dist_moments(dist: SizeDistribution) -> tuple[float, float]:
    """Exact (mean, standard deviation)."""
    return dist.moments()
