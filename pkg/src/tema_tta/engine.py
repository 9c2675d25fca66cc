"""Per-batch test-time normalization over a stack of normalization layers.

Modes
-----
source_only
    normalize with frozen source statistics (alpha = 1, no target estimate).
tbn
    normalize with the current batch's own statistics (alpha = 0, m = 1).
tema_only
    normalize with the TEMA target estimate (alpha = 0, momentum selected).
fixed_alpha(a)
    mix source and current-batch statistics with a constant ``a`` (m = 1).
full
    two passes per batch.  Pass 1 updates TEMA while normalizing with
    statistics mixed by the prior coefficients; per-layer divergences between
    source and TEMA statistics then give fresh coefficients, which pass 2
    uses for the prediction.  The prior is updated last.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _backend
from .momentum import MomentumConfig, select_momentum
from .rectifier import KL_VARIANCE_FLOOR, RectifierState, divergence_to_alpha, gaussian_sym_kl, update_prior
from .stats import ChannelStats, TemaState, batch_moments, mix_statistics, tema_init, tema_update

MODES = ("source_only", "tbn", "tema_only", "fixed_alpha", "full")

_FIXED_ALPHA = re.compile(r"^fixed_alpha\(\s*([0-9.eE+-]+)\s*\)$")


@dataclass
class LayerModel:
    """One linear map followed by normalization and an affine transform."""

    source_stats: ChannelStats
    scale: np.ndarray
    shift: np.ndarray
    transform: np.ndarray

    def __post_init__(self):
        self.scale = np.ascontiguousarray(self.scale, dtype=np.float64)
        self.shift = np.ascontiguousarray(self.shift, dtype=np.float64)
        self.transform = np.ascontiguousarray(self.transform, dtype=np.float64)
        F = self.source_stats.F
        if self.scale.shape != (F,) or self.shift.shape != (F,):
            raise ValueError("scale and shift must have one entry per channel")
        if self.transform.ndim != 2 or self.transform.shape[0] != F:
            raise ValueError(f"transform must have {F} output rows, got {self.transform.shape}")

    @property
    def F(self) -> int:
        return self.source_stats.F

    @property
    def in_features(self) -> int:
        return self.transform.shape[1]


Provider = Callable[[int, Optional[ChannelStats]], ChannelStats]


def forward_pass(
    layers: Sequence[LayerModel],
    x,
    provider: Provider,
    *,
    relu: bool = False,
    eps: float = 1e-5,
    measure: bool = True,
) -> tuple[list[ChannelStats], np.ndarray]:
    """Push ``x`` (``F0 x N``) through the stack.

    At layer ``l`` the pre-normalization activations are measured (unless
    ``measure`` is false) and ``provider(l, measured)`` returns the statistics
    to normalize with.  With ``relu`` every layer but the last is followed by
    the positive part.
    """
    h = np.ascontiguousarray(x, dtype=np.float64)
    if h.ndim != 2 or h.shape[1] == 0:
        raise ValueError("input must be a nonempty F0 x N matrix")
    measured = []
    last = len(layers) - 1
    for l, layer in enumerate(layers):
        if h.shape[0] != layer.in_features:
            raise ValueError(f"layer {l} expects {layer.in_features} inputs, got {h.shape[0]}")
        z = layer.transform @ h
        bs = batch_moments(z) if measure else None
        if measure:
            measured.append(bs)
        stats = provider(l, bs)
        h = _backend.normalize(z, stats.mean, stats.variance, layer.scale, layer.shift, eps)
        if relu and l < last:
            np.maximum(h, 0.0, out=h)
    return measured, h


def classify(features, anchors) -> np.ndarray:
    """Nearest anchor by Euclidean distance; ties go to the lower index.

    ``features`` is ``F x N``; ``anchors`` is ``K x F``.
    """
    feats = np.asarray(features, dtype=np.float64)
    anchors = np.asarray(anchors, dtype=np.float64)
    if feats.ndim != 2 or anchors.ndim != 2 or anchors.shape[1] != feats.shape[0]:
        raise ValueError(f"anchor width {anchors.shape} does not match features {feats.shape}")
    d2 = (
        (anchors * anchors).sum(axis=1)[:, None]
        - 2.0 * anchors @ feats
        + (feats * feats).sum(axis=0)[None, :]
    )
    return np.argmin(d2, axis=0)


@dataclass(frozen=True)
class EngineConfig:
    mode: str = "full"
    fixed_alpha: float | None = None
    momentum: float | str = "auto"
    gamma: float = 0.5
    tau: float = 0.1
    init: str = "source"
    kl_reduce: str = "mean"
    norm_eps: float = 1e-5
    kl_eps: float = KL_VARIANCE_FLOOR
    relu: bool = False
    source_batch_size: int = 128
    momentum_config: MomentumConfig = field(default_factory=MomentumConfig)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {', '.join(MODES)}")
        if self.mode == "fixed_alpha":
            if self.fixed_alpha is None or not 0.0 <= self.fixed_alpha <= 1.0:
                raise ValueError("fixed_alpha mode needs an alpha in [0, 1]")
        if isinstance(self.momentum, str):
            if self.momentum != "auto":
                raise ValueError(f"momentum must be a number in (0, 1] or 'auto', got {self.momentum!r}")
        elif not 0.0 < self.momentum <= 1.0:
            raise ValueError(f"momentum must lie in (0, 1], got {self.momentum}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError(f"tau must lie in [0, 1], got {self.tau}")
        if self.init not in ("source", "first_batch"):
            raise ValueError(f"init must be 'source' or 'first_batch', got {self.init!r}")
        if self.kl_reduce not in ("mean", "sum"):
            raise ValueError(f"kl_reduce must be 'mean' or 'sum', got {self.kl_reduce!r}")
        if self.norm_eps < 0 or self.kl_eps <= 0:
            raise ValueError("norm_eps must be >= 0 and kl_eps > 0")
        if self.source_batch_size < 1:
            raise ValueError("source_batch_size must be >= 1")

    @classmethod
    def for_mode(cls, mode: str, **kwargs) -> "EngineConfig":
        """Build from a mode label such as ``"full"`` or ``"fixed_alpha(0.5)"``."""
        name, alpha = parse_mode(mode)
        if alpha is not None:
            kwargs["fixed_alpha"] = alpha
        return cls(mode=name, **kwargs)

    @property
    def label(self) -> str:
        return mode_label(self.mode, self.fixed_alpha)


def parse_mode(text: str) -> tuple[str, float | None]:
    text = text.strip()
    match = _FIXED_ALPHA.match(text)
    if match:
        return "fixed_alpha", float(match.group(1))
    if text in MODES and text != "fixed_alpha":
        return text, None
    raise ValueError(f"unknown mode {text!r}; expected one of source_only, tbn, tema_only, full, fixed_alpha(a)")


def mode_label(mode: str, alpha: float | None = None) -> str:
    return f"fixed_alpha({float(alpha)!r})" if mode == "fixed_alpha" else mode


@dataclass
class BatchResult:
    alphas: np.ndarray
    divergences: np.ndarray
    output: np.ndarray
    estimation_error: np.ndarray


@dataclass
class EngineState:
    momentum: float | None
    tema: list[TemaState] | None
    rect: RectifierState
    step: int = 0


def resolve_momentum(cfg: EngineConfig, batch_size: int | None, n_classes: int | None) -> float | None:
    """Momentum actually used by ``cfg.mode`` (``None`` for source_only)."""
    if cfg.mode == "source_only":
        return None
    if cfg.mode in ("tbn", "fixed_alpha"):
        return 1.0
    if cfg.momentum != "auto":
        return float(cfg.momentum)
    if batch_size is None or n_classes is None:
        raise ValueError("momentum='auto' needs the test batch size and class count")
    return select_momentum(cfg.source_batch_size, batch_size, n_classes, cfg.momentum_config).m_star


def _moment_mse(est: ChannelStats, truth: ChannelStats) -> float:
    dm = est.mean - truth.mean
    dv = est.variance - truth.variance
    return float((np.dot(dm, dm) + np.dot(dv, dv)) / (2 * est.F))


class Engine:
    """Stateful stream processor for one engine configuration."""

    def __init__(
        self,
        layers: Sequence[LayerModel],
        config: EngineConfig,
        *,
        batch_size: int | None = None,
        n_classes: int | None = None,
    ):
        if not layers:
            raise ValueError("need at least one layer")
        for l in range(1, len(layers)):
            if layers[l].in_features != layers[l - 1].F:
                raise ValueError(f"layer {l} input width does not match layer {l - 1} output")
        self.layers = list(layers)
        self.config = config
        self.state = self._fresh_state(resolve_momentum(config, batch_size, n_classes))

    def _fresh_state(self, momentum: float | None) -> EngineState:
        tema = None
        if self.config.mode in ("tema_only", "fixed_alpha", "full"):
            tema = [tema_init(momentum, layer.source_stats) for layer in self.layers]
        rect = RectifierState.zeros(len(self.layers), self.config.gamma, self.config.tau)
        return EngineState(momentum, tema, rect, 0)

    @property
    def momentum(self) -> float | None:
        return self.state.momentum

    def _absorb(self, l: int, measured: ChannelStats) -> ChannelStats:
        st = self.state.tema[l]
        if st.batch_index == 0 and self.config.init == "first_batch":
            st = TemaState(st.momentum, measured.copy(), 1)
        else:
            st = tema_update(st, measured)
        self.state.tema[l] = st
        return st.stats

    def process_batch(self, x, truth: Sequence[ChannelStats] | None = None) -> BatchResult:
        """Adapt on one batch and return its prediction features.

        ``truth`` optionally gives the true target statistics per layer, used
        only to report estimation error.
        """
        cfg = self.config
        layers = self.layers
        L = len(layers)
        run = lambda provider, measure=True: forward_pass(  # noqa: E731
            layers, x, provider, relu=cfg.relu, eps=cfg.norm_eps, measure=measure
        )

        if cfg.mode == "source_only":
            _, out = run(lambda l, bs: layers[l].source_stats, measure=False)
            estimates = [layer.source_stats for layer in layers]
            alphas = np.ones(L)
        elif cfg.mode == "tbn":
            measured, out = run(lambda l, bs: bs)
            estimates = measured
            alphas = np.zeros(L)
        elif cfg.mode == "tema_only":
            _, out = run(self._absorb)
            estimates = [st.stats for st in self.state.tema]
            alphas = np.zeros(L)
        elif cfg.mode == "fixed_alpha":
            a = cfg.fixed_alpha
            _, out = run(lambda l, bs: mix_statistics(a, layers[l].source_stats, self._absorb(l, bs)))
            estimates = [st.stats for st in self.state.tema]
            alphas = np.full(L, a)
        else:
            prior = self.state.rect.prior
            run(lambda l, bs: mix_statistics(prior[l], layers[l].source_stats, self._absorb(l, bs)))
            estimates = [st.stats for st in self.state.tema]
            divs = np.array(
                [gaussian_sym_kl(layers[l].source_stats, estimates[l], cfg.kl_eps, cfg.kl_reduce) for l in range(L)]
            )
            alphas = divergence_to_alpha(divs, cfg.gamma)
            _, out = run(
                lambda l, bs: mix_statistics(alphas[l], layers[l].source_stats, estimates[l]), measure=False
            )
            self.state.rect = update_prior(self.state.rect, alphas)

        if cfg.mode != "full":
            divs = np.array(
                [gaussian_sym_kl(layers[l].source_stats, estimates[l], cfg.kl_eps, cfg.kl_reduce) for l in range(L)]
            )
        if truth is None:
            err = np.full(L, np.nan)
        else:
            if len(truth) != L:
                raise ValueError(f"expected {L} truth entries, got {len(truth)}")
            err = np.array([_moment_mse(estimates[l], truth[l]) for l in range(L)])
        self.state.step += 1
        return BatchResult(alphas, divs, out, err)

    # snapshots -------------------------------------------------------------

    def snapshot(self) -> dict:
        st = self.state
        return {
            "mode": self.config.label,
            "momentum": st.momentum,
            "step": st.step,
            "prior": st.rect.prior.tolist(),
            "rect_step": st.rect.step,
            "gamma": st.rect.gamma,
            "tau": st.rect.tau,
            "tema": None
            if st.tema is None
            else [{"batch_index": t.batch_index, **t.stats.to_dict()} for t in st.tema],
        }

    def restore(self, snap: dict) -> None:
        """Resume from :meth:`snapshot` output; the layer stack must match."""
        if snap["mode"] != self.config.label:
            raise ValueError(f"snapshot mode {snap['mode']!r} does not match engine mode {self.config.label!r}")
        tema = None
        if snap["tema"] is not None:
            if len(snap["tema"]) != len(self.layers):
                raise ValueError("snapshot layer count does not match the engine")
            tema = [
                TemaState(snap["momentum"], ChannelStats.from_dict(t), int(t["batch_index"])) for t in snap["tema"]
            ]
        rect = RectifierState(np.array(snap["prior"], dtype=np.float64), snap["gamma"], snap["tau"], snap["rect_step"])
        if rect.prior.shape[0] != len(self.layers):
            raise ValueError("snapshot layer count does not match the engine")
        self.state = EngineState(snap["momentum"], tema, rect, int(snap["step"]))
