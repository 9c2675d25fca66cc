"""Expected class diversity of a batch.

With ``K`` equally likely classes and a batch of ``N`` samples, the number of
distinct classes ``M`` has expectation

    E(M|N) = sum_k k * C(N-1, k-1) * C(K, k) / C(N+K-1, K-1)

under the stars-and-bars counting model (every composition of ``N`` into ``K``
ordered parts equally likely).  Everything is evaluated with Python integers
and a single final division.

Note that i.i.d. uniform labels follow a different law,
``K * (1 - (1 - 1/K)**N)``; see :func:`multinomial_diversity`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import _backend

# uniforms drawn per chunk in the Monte Carlo sampler; part of the seeded
# stream definition, so changing it changes results
_MC_CHUNK = 8192


@dataclass(frozen=True)
class DiversityQuery:
    """Class count ``K`` and batch size ``N``."""

    K: int
    N: int

    def __post_init__(self):
        for name in ("K", "N"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise TypeError(f"{name} must be an integer, got {value!r}")
            if value < 1:
                raise ValueError(f"{name} must be >= 1, got {value}")

    def expected(self) -> float:
        return expected_diversity(self.K, self.N)


def binomial(n: int, k: int) -> int:
    """Exact binomial coefficient; zero when ``k > n``."""
    if n < 0 or k < 0:
        raise ValueError("binomial arguments must be nonnegative")
    return math.comb(n, k)


def diversity_distribution(K: int, N: int) -> list[Fraction]:
    """Exact probabilities ``P(M = k)`` for ``k = 1..K``."""
    DiversityQuery(K, N)
    total = binomial(N + K - 1, K - 1)
    return [Fraction(binomial(N - 1, k - 1) * binomial(K, k), total) for k in range(1, K + 1)]


def expected_diversity_exact(K: int, N: int) -> Fraction:
    """E(M|N) as an exact rational, by the summation."""
    DiversityQuery(K, N)
    numerator = sum(k * binomial(N - 1, k - 1) * binomial(K, k) for k in range(1, K + 1))
    return Fraction(numerator, binomial(N + K - 1, K - 1))


def expected_diversity_closed_form(K: int, N: int) -> Fraction:
    """``K*N/(N+K-1)``; equal to the summation (checked in the test suite)."""
    DiversityQuery(K, N)
    return Fraction(K * N, N + K - 1)


def expected_diversity(K: int, N: int, *, method: str = "sum") -> float:
    """Expected number of distinct classes in a batch of ``N`` from ``K``.

    ``method="sum"`` evaluates the combinatorial sum exactly;
    ``method="closed_form"`` uses ``K*N/(N+K-1)``.  Both end in a single
    rational-to-float conversion.
    """
    if method == "sum":
        return float(expected_diversity_exact(K, N))
    if method == "closed_form":
        return float(expected_diversity_closed_form(K, N))
    raise ValueError(f"unknown method {method!r}")


def multinomial_diversity(K: int, N: int) -> float:
    """E(M) when the ``N`` labels are i.i.d. uniform over ``K`` classes."""
    DiversityQuery(K, N)
    return K * (1.0 - (1.0 - 1.0 / K) ** N)


def sample_composition_diversity(K: int, N: int, trials: int, seed: int) -> np.ndarray:
    """Distinct-class counts of ``trials`` uniform random compositions.

    Each composition places ``K-1`` bars uniformly among ``N+K-1`` slots.
    """
    DiversityQuery(K, N)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    n_slots = N + K - 1
    out = np.empty(trials, dtype=np.int64)
    for start in range(0, trials, _MC_CHUNK):
        stop = min(start + _MC_CHUNK, trials)
        u = rng.random((stop - start, K - 1))
        out[start:stop] = _backend.composition_nonempty(u, n_slots)
    return out


def sample_multiset_diversity(K: int, N: int, trials: int, seed: int) -> tuple[float, float]:
    """Monte Carlo estimate of E(M|N): ``(mean, standard error)``."""
    counts = sample_composition_diversity(K, N, trials, seed)
    mean = float(counts.mean())
    if trials < 2:
        return mean, 0.0
    return mean, float(counts.std(ddof=1) / math.sqrt(trials))
