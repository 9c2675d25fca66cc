"""Effective sample pools and grid-search momentum selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .diversity import expected_diversity_exact

DEFAULT_GRID = (1.0, 0.1, 0.01, 0.001)


@dataclass(frozen=True)
class MomentumConfig:
    grid: tuple[float, ...] = DEFAULT_GRID
    epsilon: float = 0.1
    lam: float = 0.01

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(float(m) for m in self.grid))
        if not self.grid:
            raise ValueError("momentum grid is empty")
        for m in self.grid:
            _check_momentum(m)
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        # lambda = 0 drops the pool-size penalty
        if not self.lam >= 0.0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")


@dataclass(frozen=True)
class MomentumChoice:
    m_star: float
    pool_size: int
    objective_values: dict[float, float] = field(default_factory=dict)


def _check_momentum(m: float) -> None:
    if not (0.0 < m <= 1.0) or math.isnan(m):
        raise ValueError(f"momentum must lie in (0, 1], got {m}")


def effective_batch_count(m: float, epsilon: float) -> int:
    """Number of past batches whose relative EMA weight clears ``epsilon``.

    ``floor(log_{1-m} epsilon)``, i.e. the largest ``c`` with
    ``(1-m)**c >= epsilon``.  ``m = 1`` keeps only the current batch.  Never
    less than 1: the current batch always counts.
    """
    _check_momentum(m)
    if not 0.0 < epsilon < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    if m == 1.0:
        return 1
    decay = 1.0 - m
    count = math.floor(math.log(epsilon) / math.log(decay))
    # log ratio can land a hair off an integer; settle on the power test
    while decay ** (count + 1) >= epsilon:
        count += 1
    while count > 1 and decay**count < epsilon:
        count -= 1
    return max(count, 1)


def effective_pool(m: float, n_target: int, epsilon: float) -> int:
    if n_target < 1:
        raise ValueError("batch size must be >= 1")
    return effective_batch_count(m, epsilon) * n_target


def momentum_objective(
    m: float, n_source: int, n_target: int, n_classes: int, cfg: MomentumConfig | None = None
) -> float:
    """Diversity mismatch plus pool-size penalty for momentum ``m``."""
    cfg = cfg or MomentumConfig()
    pool = effective_pool(m, n_target, cfg.epsilon)
    ratio = expected_diversity_exact(n_classes, n_source) / expected_diversity_exact(n_classes, pool)
    return abs(float(ratio - 1)) + cfg.lam * pool / n_source


def select_momentum(
    n_source: int, n_target: int, n_classes: int, cfg: MomentumConfig | None = None
) -> MomentumChoice:
    """Grid search; ties go to the larger momentum."""
    cfg = cfg or MomentumConfig()
    values = {m: momentum_objective(m, n_source, n_target, n_classes, cfg) for m in cfg.grid}
    best = None
    for m in sorted(values, reverse=True):
        if best is None or values[m] < values[best]:
            best = m
    return MomentumChoice(
        m_star=best,
        pool_size=effective_pool(best, n_target, cfg.epsilon),
        objective_values=values,
    )
