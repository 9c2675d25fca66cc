"""Per-channel moments, the TEMA estimator and source/target mixing.

Variances are population variances (divide by N) throughout, and the
streaming estimator averages variances directly rather than second moments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend

SNAPSHOT_VERSION = 1


@dataclass
class ChannelStats:
    """Mean and variance vectors for one normalization layer."""

    mean: np.ndarray
    variance: np.ndarray

    def __post_init__(self):
        self.mean = np.ascontiguousarray(self.mean, dtype=np.float64)
        self.variance = np.ascontiguousarray(self.variance, dtype=np.float64)
        if self.mean.ndim != 1 or self.mean.shape != self.variance.shape:
            raise ValueError(
                f"mean and variance must be 1-D of equal length, got {self.mean.shape} and {self.variance.shape}"
            )

    @property
    def F(self) -> int:
        return self.mean.shape[0]

    def check(self) -> "ChannelStats":
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.variance))):
            raise ValueError("statistics must be finite")
        if np.any(self.variance < 0):
            raise ValueError("variance entries must be >= 0")
        return self

    def copy(self) -> "ChannelStats":
        return ChannelStats(self.mean.copy(), self.variance.copy())

    def to_dict(self) -> dict:
        """Versioned snapshot document; floats round-trip exactly through JSON."""
        return {
            "format_version": SNAPSHOT_VERSION,
            "F": self.F,
            "mean": self.mean.tolist(),
            "variance": self.variance.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ChannelStats":
        version = data.get("format_version", SNAPSHOT_VERSION)
        if version != SNAPSHOT_VERSION:
            raise ValueError(f"unsupported statistics format_version {version!r}")
        stats = cls(np.array(data["mean"], dtype=np.float64), np.array(data["variance"], dtype=np.float64))
        if "F" in data and data["F"] != stats.F:
            raise ValueError(f"declared F={data['F']} but found {stats.F} channels")
        return stats.check()

    def __eq__(self, other):
        if not isinstance(other, ChannelStats):
            return NotImplemented
        return np.array_equal(self.mean, other.mean) and np.array_equal(self.variance, other.variance)


def _same_width(a: ChannelStats, b: ChannelStats) -> None:
    if a.F != b.F:
        raise ValueError(f"channel count mismatch: {a.F} vs {b.F}")


def batch_moments(features) -> ChannelStats:
    """Per-channel mean and population variance of an ``F x N`` matrix."""
    x = np.ascontiguousarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("features must be an F x N matrix")
    if x.shape[1] == 0:
        raise ValueError("empty batch")
    mean, var = _backend.batch_moments(x)
    return ChannelStats(mean, var)


@dataclass
class TemaState:
    momentum: float
    stats: ChannelStats
    batch_index: int = 0


def _check_momentum(m: float) -> None:
    if not 0.0 < m <= 1.0:
        raise ValueError(f"momentum must lie in (0, 1], got {m}")


def tema_init(m: float, source: ChannelStats) -> TemaState:
    """Start the estimator from a copy of the source statistics."""
    _check_momentum(m)
    return TemaState(float(m), source.copy(), 0)


def tema_update(state: TemaState, batch: ChannelStats) -> TemaState:
    """One EMA step: ``new = m * batch + (1 - m) * old`` for mean and variance."""
    _same_width(state.stats, batch)
    mean, var = _backend.ema_update(
        state.momentum, state.stats.mean, state.stats.variance, batch.mean, batch.variance
    )
    return TemaState(state.momentum, ChannelStats(mean, var), state.batch_index + 1)


def ema_weights(i: int, m: float) -> tuple[float, np.ndarray]:
    """Weights expressing the ``i``-th EMA value as a sum over its inputs.

    ``ema_i = w0 * init + sum_t w[t-1] * batch_t`` with ``w0 = (1-m)**i`` and
    ``w_t = m * (1-m)**(i-t)``.
    """
    if i < 1:
        raise ValueError("i must be >= 1")
    _check_momentum(m)
    keep = 1.0 - m
    lags = np.arange(i - 1, -1, -1, dtype=np.float64)
    return keep**i, m * keep**lags


def mix_statistics(alpha: float, source: ChannelStats, target: ChannelStats) -> ChannelStats:
    """Moments of the mixture ``alpha * source + (1 - alpha) * target``.

    The variance carries the between-component term
    ``alpha * (1 - alpha) * (mu_s - mu_t)**2``.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    _same_width(source, target)
    mean, var = _backend.mix_moments(float(alpha), source.mean, source.variance, target.mean, target.variance)
    return ChannelStats(mean, var)


def normalize_features(features, stats: ChannelStats, scale=None, shift=None, eps: float = 1e-5) -> np.ndarray:
    """``(x - mu) / sqrt(var + eps) * scale + shift`` per channel."""
    x = np.ascontiguousarray(features, dtype=np.float64)
    F = stats.F
    if x.ndim != 2 or x.shape[0] != F:
        raise ValueError(f"features must have {F} rows, got shape {x.shape}")
    scale = np.ones(F) if scale is None else np.ascontiguousarray(scale, dtype=np.float64)
    shift = np.zeros(F) if shift is None else np.ascontiguousarray(shift, dtype=np.float64)
    if scale.shape != (F,) or shift.shape != (F,):
        raise ValueError("scale and shift must have one entry per channel")
    if eps < 0:
        raise ValueError("eps must be >= 0")
    return _backend.normalize(x, stats.mean, stats.variance, scale, shift, float(eps))
