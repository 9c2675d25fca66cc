"""Layer-wise rectification: divergence per layer to mixing coefficient.

Each layer's source and target statistics are treated as diagonal Gaussians.
Their symmetric KL divergences are standardized across layers, clipped to
[-1, 1] and mapped linearly onto [0, gamma].  A slow EMA of these
coefficients (the prior) drives the statistics-measurement pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend
from .stats import ChannelStats

KL_VARIANCE_FLOOR = 1e-12


def gaussian_sym_kl(p: ChannelStats, q: ChannelStats, eps: float = KL_VARIANCE_FLOOR, reduce: str = "mean") -> float:
    """Symmetric KL ``0.5*KL(p||q) + 0.5*KL(q||p)`` averaged (or summed) over channels.

    Variances are floored at ``eps`` first.
    """
    if p.F != q.F:
        raise ValueError(f"channel count mismatch: {p.F} vs {q.F}")
    if reduce not in ("mean", "sum"):
        raise ValueError(f"reduce must be 'mean' or 'sum', got {reduce!r}")
    if eps <= 0:
        raise ValueError("eps must be > 0")
    return _backend.sym_kl(p.mean, p.variance, q.mean, q.variance, float(eps), reduce == "mean")


def kl_gaussian(mu1: float, var1: float, mu2: float, var2: float) -> float:
    """KL(N(mu1, var1) || N(mu2, var2)) for scalars."""
    return 0.5 * np.log(var2 / var1) + (var1 + (mu1 - mu2) ** 2) / (2.0 * var2) - 0.5


def divergence_to_alpha(divergences, gamma: float = 0.5) -> np.ndarray:
    """Map per-layer divergences to mixing coefficients in ``[0, gamma]``.

    z-score across layers (population std), clip to [-1, 1], shift to [0, 1],
    scale by ``gamma``.  Equal divergences give ``gamma / 2`` everywhere.
    """
    d = np.asarray(divergences, dtype=np.float64)
    if d.ndim != 1 or d.size == 0:
        raise ValueError("divergence vector must be 1-D and nonempty")
    if not np.all(np.isfinite(d)):
        raise ValueError("divergences must be finite")
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    mean = d.mean()
    std = d.std()
    # equal entries can leave a rounding-level std behind
    if std <= 8 * np.finfo(np.float64).eps * np.abs(d).max():
        z = np.zeros_like(d)
    else:
        z = np.clip((d - mean) / std, -1.0, 1.0)
    return gamma * (z + 1.0) / 2.0


@dataclass
class RectifierState:
    """Global prior over layer coefficients, one entry per layer."""

    prior: np.ndarray
    gamma: float = 0.5
    tau: float = 0.1
    step: int = 0

    def __post_init__(self):
        self.prior = np.asarray(self.prior, dtype=np.float64)
        if self.prior.ndim != 1 or self.prior.size == 0:
            raise ValueError("prior must be a nonempty vector")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")
        if np.any(self.prior < 0) or np.any(self.prior > self.gamma):
            raise ValueError("prior entries must lie in [0, gamma]")

    @classmethod
    def zeros(cls, n_layers: int, gamma: float = 0.5, tau: float = 0.1) -> "RectifierState":
        return cls(np.zeros(n_layers), gamma, tau, 0)


def update_prior(state: RectifierState, fresh) -> RectifierState:
    """``prior <- tau * fresh + (1 - tau) * prior``."""
    fresh = np.asarray(fresh, dtype=np.float64)
    if fresh.shape != state.prior.shape:
        raise ValueError(f"expected {state.prior.shape[0]} coefficients, got {fresh.shape}")
    prior = state.tau * fresh + (1.0 - state.tau) * state.prior
    np.clip(prior, 0.0, state.gamma, out=prior)
    return RectifierState(prior, state.gamma, state.tau, state.step + 1)
