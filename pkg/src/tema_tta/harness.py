"""Synthetic domain-shift world, scenarios and stream execution.

The world is a Gaussian class mixture feeding a stack of fixed orthogonal
linear maps, each followed by normalization and an affine transform.  Source
statistics are measured once on a large source sample.  A corruption is a
per-input-channel affine distortion ``x -> scale * x + offset`` whose
magnitude grows linearly with severity (0 is the identity), so the label
given the clean input is unchanged.

All randomness derives from one integer seed, split by component tag.
"""

from __future__ import annotations

import csv
import re
import time
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np

from .diversity import expected_diversity, multinomial_diversity
from .engine import Engine, EngineConfig, LayerModel, classify, forward_pass
from .stats import ChannelStats

ORDERINGS = ("continual", "mixed", "gradual")
GRADUAL_RAMP = (1, 2, 3, 4, 5, 4, 3, 2, 1)

CSV_COLUMNS = (
    "step",
    "batch_size",
    "corruption_id",
    "severity",
    "mode",
    "error_rate",
    "cum_error",
    "mean_alpha",
    "mean_estimation_error",
    "realized_diversity",
)

# component tags for seed splitting
_WORLD, _SOURCE, _REFERENCE, _STREAM, _MIXING = 11, 12, 13, 14, 15

_FIXED_DIVERSITY = re.compile(r"^fixed_diversity\(\s*(\d+)\s*\)$")


def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *tags])


def parse_sampler(text: str) -> tuple[str, int | None]:
    text = text.strip()
    if text in ("iid_uniform", "uniform_multiset"):
        return text, None
    match = _FIXED_DIVERSITY.match(text)
    if match:
        return "fixed_diversity", int(match.group(1))
    raise ValueError(f"unknown sampler {text!r}; expected iid_uniform, uniform_multiset or fixed_diversity(d)")


@dataclass
class SourceGenerator:
    """Gaussian class-conditional source distribution with a label sampler."""

    class_means: np.ndarray
    class_var: np.ndarray
    sampler: str = "iid_uniform"

    def __post_init__(self):
        self.class_means = np.asarray(self.class_means, dtype=np.float64)
        self.class_var = np.asarray(self.class_var, dtype=np.float64)
        if self.class_var.shape != self.class_means.shape:
            raise ValueError("class_var must match class_means in shape")
        if np.any(self.class_var <= 0):
            raise ValueError("class variances must be > 0")
        kind, d = parse_sampler(self.sampler)
        if kind == "fixed_diversity" and not 1 <= d <= self.K:
            raise ValueError(f"fixed_diversity needs 1 <= d <= {self.K}, got {d}")

    @classmethod
    def simplex(cls, n_classes: int, dim: int, separation: float, class_std: float, rng, sampler="iid_uniform"):
        """Class means at the vertices of a randomly rotated regular simplex.

        Every pair of means is exactly ``separation * class_std`` apart.
        """
        if dim < n_classes:
            raise ValueError(f"input width {dim} must be >= class count {n_classes}")
        if separation < 0 or class_std <= 0:
            raise ValueError("separation must be >= 0 and class_std > 0")
        q, _ = np.linalg.qr(rng.standard_normal((dim, n_classes)))
        means = (separation * class_std / np.sqrt(2.0)) * q.T
        means -= means.mean(axis=0)
        var = np.full((n_classes, dim), class_std**2)
        return cls(means, var, sampler)

    @property
    def K(self) -> int:
        return self.class_means.shape[0]

    @property
    def dim(self) -> int:
        return self.class_means.shape[1]

    def labels(self, n: int, rng, sampler: str | None = None) -> np.ndarray:
        kind, d = parse_sampler(sampler or self.sampler)
        K = self.K
        if kind == "iid_uniform":
            return rng.integers(0, K, size=n)
        if kind == "uniform_multiset":
            # uniform composition of n into K parts, then a random order
            bars = np.sort(rng.choice(n + K - 1, size=K - 1, replace=False))
            counts = np.diff(np.concatenate(([-1], bars, [n + K - 1]))) - 1
            return rng.permutation(np.repeat(np.arange(K), counts))
        if n < d:
            raise ValueError(f"fixed_diversity({d}) needs batch size >= {d}, got {n}")
        classes = rng.choice(K, size=d, replace=False)
        labels = np.concatenate((classes, rng.choice(classes, size=n - d)))
        return rng.permutation(labels)

    def draw(self, labels: np.ndarray, rng) -> np.ndarray:
        """Inputs for ``labels`` as a ``dim x N`` matrix."""
        noise = rng.standard_normal((labels.shape[0], self.dim))
        x = self.class_means[labels] + noise * np.sqrt(self.class_var[labels])
        return np.ascontiguousarray(x.T)


@dataclass(frozen=True)
class WorldConfig:
    n_classes: int = 10
    input_dim: int = 32
    n_layers: int = 4
    separation: float = 3.0
    class_std: float = 1.0
    relu: bool = False
    sampler: str = "iid_uniform"
    n_corruptions: int = 15
    max_offset: float = 2.0
    max_scale: float = 0.5
    affine_scale_jitter: float = 0.25
    affine_shift_std: float = 0.25
    source_samples: int = 50_000
    reference_samples: int = 20_000

    def __post_init__(self):
        positive = ("n_classes", "input_dim", "n_layers", "n_corruptions", "source_samples", "reference_samples")
        for name in positive:
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0.0 <= self.max_scale < 1.0:
            raise ValueError("max_scale must lie in [0, 1) so corrupted scales stay positive")
        if not 0.0 <= self.affine_scale_jitter < 1.0:
            raise ValueError("affine_scale_jitter must lie in [0, 1)")
        if self.max_offset < 0 or self.affine_shift_std < 0:
            raise ValueError("max_offset and affine_shift_std must be >= 0")
        parse_sampler(self.sampler)


class World:
    """A seeded instance of the synthetic source model and its corruptions."""

    def __init__(self, config: WorldConfig, seed: int):
        self.config = config
        self.seed = int(seed)
        rng = _rng(seed, _WORLD)
        self.generator = SourceGenerator.simplex(
            config.n_classes, config.input_dim, config.separation, config.class_std, rng, config.sampler
        )
        F = config.input_dim
        self.offset_dirs = rng.uniform(-1.0, 1.0, size=(config.n_corruptions, F))
        self.scale_dirs = rng.uniform(-1.0, 1.0, size=(config.n_corruptions, F))
        transforms, scales, shifts = [], [], []
        for _ in range(config.n_layers):
            q, r = np.linalg.qr(rng.standard_normal((F, F)))
            transforms.append(q * np.sign(np.diag(r)))
            scales.append(1.0 + config.affine_scale_jitter * rng.uniform(-1.0, 1.0, F))
            shifts.append(config.affine_shift_std * rng.standard_normal(F))

        src = _rng(seed, _SOURCE)
        labels = src.integers(0, config.n_classes, size=config.source_samples)
        x = self.generator.draw(labels, src)
        self.layers: list[LayerModel] = []
        h = x
        for W, g, b in zip(transforms, scales, shifts):
            layer = LayerModel(ChannelStats(np.zeros(F), np.ones(F)), g, b, W)
            measured, h = forward_pass([layer], h, lambda l, bs: bs, relu=False)
            layer.source_stats = measured[0]
            self.layers.append(layer)
            if config.relu and len(self.layers) < config.n_layers:
                np.maximum(h, 0.0, out=h)
        self._truth: dict[tuple[int, int], list[ChannelStats]] = {}

    @property
    def n_classes(self) -> int:
        return self.config.n_classes

    @cached_property
    def anchors(self) -> np.ndarray:
        """Class means pushed through the source-normalized stack, ``K x F_L``."""
        _, out = forward_pass(
            self.layers,
            self.generator.class_means.T,
            lambda l, bs: self.layers[l].source_stats,
            relu=self.config.relu,
            measure=False,
        )
        return np.ascontiguousarray(out.T)

    def _check_domain(self, corruption_id: int, severity: int) -> None:
        if not 0 <= corruption_id < self.config.n_corruptions:
            raise ValueError(f"unknown corruption id {corruption_id}")
        if not 0 <= severity <= 5:
            raise ValueError(f"severity must lie in 0..5, got {severity}")

    def corrupt(self, x: np.ndarray, corruption_id: int, severity: int) -> np.ndarray:
        self._check_domain(corruption_id, severity)
        level = severity / 5.0
        scale = 1.0 + level * self.config.max_scale * self.scale_dirs[corruption_id]
        offset = level * self.config.max_offset * self.offset_dirs[corruption_id]
        return np.ascontiguousarray(scale[:, None] * x + offset[:, None])

    def truth(self, corruption_id: int, severity: int) -> list[ChannelStats]:
        """Per-layer statistics of the domain under its own exact normalization.

        Measured on a large seeded reference sample and cached.
        """
        key = (int(corruption_id), int(severity))
        if key not in self._truth:
            self._check_domain(*key)
            rng = _rng(self.seed, _REFERENCE, *key)
            labels = rng.integers(0, self.n_classes, size=self.config.reference_samples)
            x = self.corrupt(self.generator.draw(labels, rng), *key)
            measured, _ = forward_pass(self.layers, x, lambda l, bs: bs, relu=self.config.relu)
            self._truth[key] = measured
        return self._truth[key]

    def snapshot(self) -> dict:
        """Frozen source statistics per layer."""
        return {
            "seed": self.seed,
            "layers": [
                {
                    "source_stats": layer.source_stats.to_dict(),
                    "scale": layer.scale.tolist(),
                    "shift": layer.shift.tolist(),
                }
                for layer in self.layers
            ],
        }


# scenarios -----------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioSpec:
    ordering: str = "continual"
    corruptions: tuple[int, ...] = tuple(range(15))
    severity: int = 5
    samples_per_segment: int = 2600

    def __post_init__(self):
        object.__setattr__(self, "corruptions", tuple(int(c) for c in self.corruptions))
        if self.ordering not in ORDERINGS:
            raise ValueError(f"unknown ordering {self.ordering!r}; expected one of {', '.join(ORDERINGS)}")
        if not self.corruptions:
            raise ValueError("scenario needs at least one corruption")
        if not 0 <= self.severity <= 5:
            raise ValueError(f"severity must lie in 0..5, got {self.severity}")
        if self.samples_per_segment < 1:
            raise ValueError("samples_per_segment must be >= 1")


@dataclass(frozen=True)
class Segment:
    corruption_id: int
    severity: int
    batch_count: int


@dataclass(frozen=True)
class ShiftScenario:
    """Batch schedule.

    ``steps`` are the scenario's domain steps in canonical order; each owns
    one seeded sample block that its batches consume in order.  ``segments``
    is the realized schedule with consecutive same-domain batches merged.
    ``order`` gives the step index of every batch when it is not simply
    step after step (the mixed ordering).
    """

    ordering: str
    segments: tuple[Segment, ...]
    steps: tuple[Segment, ...] = ()
    order: tuple[int, ...] | None = None

    def __post_init__(self):
        if not self.steps:
            object.__setattr__(self, "steps", self.segments)

    @property
    def total_batches(self) -> int:
        return sum(s.batch_count for s in self.segments)

    def batches(self) -> Iterator[tuple[int, int]]:
        for seg in self.segments:
            for _ in range(seg.batch_count):
                yield seg.corruption_id, seg.severity

    def plan(self) -> Iterator[tuple[int, int]]:
        """``(step index, batch index within the step)`` for every batch."""
        if self.order is None:
            for j, step in enumerate(self.steps):
                for k in range(step.batch_count):
                    yield j, k
            return
        taken = [0] * len(self.steps)
        for j in self.order:
            yield j, taken[j]
            taken[j] += 1


def make_scenario(spec: ScenarioSpec, batch_size: int, seed: int, n_corruptions: int = 15) -> ShiftScenario:
    """Lay out the batch schedule for one test batch size.

    Every (corruption, severity) step receives ``samples_per_segment //
    batch_size`` batches (at least one).  ``mixed`` shuffles the continual
    schedule batch by batch; ``gradual`` ramps severity 1..5..1 per corruption.
    """
    if batch_size < 1:
        raise ValueError("batch size must be >= 1")
    for c in spec.corruptions:
        if not 0 <= c < n_corruptions:
            raise ValueError(f"unknown corruption id {c}")
    count = max(1, spec.samples_per_segment // batch_size)
    if spec.ordering == "gradual":
        segments = [Segment(c, s, count) for c in spec.corruptions for s in GRADUAL_RAMP]
        return ShiftScenario("gradual", tuple(segments))
    steps = tuple(Segment(c, spec.severity, count) for c in spec.corruptions)
    if spec.ordering == "continual":
        return ShiftScenario("continual", steps)
    order = _rng(seed, _MIXING).permutation(np.repeat(np.arange(len(steps)), count))
    runs: list[Segment] = []
    for j in order.tolist():
        c = steps[j].corruption_id
        if runs and runs[-1].corruption_id == c:
            runs[-1] = Segment(c, spec.severity, runs[-1].batch_count + 1)
        else:
            runs.append(Segment(c, spec.severity, 1))
    return ShiftScenario("mixed", tuple(runs), steps, tuple(order.tolist()))


# runs ----------------------------------------------------------------------


@dataclass
class RunMetrics:
    mode: str
    batch_size: int
    seed: int
    momentum: float | None
    corruption_id: np.ndarray
    severity: np.ndarray
    errors: np.ndarray
    alphas: np.ndarray
    estimation_error: np.ndarray
    diversity: np.ndarray
    wall_clock: float = 0.0

    @property
    def n_batches(self) -> int:
        return self.errors.shape[0]

    @property
    def error_rate(self) -> np.ndarray:
        return self.errors / self.batch_size

    @property
    def cum_error(self) -> np.ndarray:
        return np.cumsum(self.errors) / (self.batch_size * np.arange(1, self.n_batches + 1))

    @property
    def overall_error(self) -> float:
        return float(self.errors.sum() / (self.batch_size * self.n_batches))

    @property
    def mean_estimation_error(self) -> float:
        return float(self.estimation_error.mean())

    def rows(self) -> Iterator[list]:
        err = self.error_rate
        cum = self.cum_error
        mean_alpha = self.alphas.mean(axis=1)
        mean_est = self.estimation_error.mean(axis=1)
        for i in range(self.n_batches):
            yield [
                i,
                self.batch_size,
                int(self.corruption_id[i]),
                int(self.severity[i]),
                self.mode,
                repr(float(err[i])),
                repr(float(cum[i])),
                repr(float(mean_alpha[i])),
                repr(float(mean_est[i])),
                int(self.diversity[i]),
                *(repr(float(a)) for a in self.alphas[i]),
                *(repr(float(e)) for e in self.estimation_error[i]),
            ]

    def header(self) -> list[str]:
        L = self.alphas.shape[1]
        return [*CSV_COLUMNS, *(f"alpha_{l}" for l in range(L)), *(f"estimation_error_{l}" for l in range(L))]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(self.header())
            writer.writerows(self.rows())


def _step_block(world: World, step: Segment, batch_size: int, seed: int, index: int):
    """Labels and corrupted inputs for every batch of one scenario step.

    i.i.d. labels are drawn for the whole block at once, so any batch size
    dividing the block length sees the same samples in the same order.
    """
    rng = _rng(seed, _STREAM, index)
    gen = world.generator
    n = step.batch_count * batch_size
    if parse_sampler(gen.sampler)[0] == "iid_uniform":
        labels = gen.labels(n, rng)
    else:
        labels = np.concatenate([gen.labels(batch_size, rng) for _ in range(step.batch_count)])
    x = world.corrupt(gen.draw(labels, rng), step.corruption_id, step.severity)
    return labels, x


def run_stream(
    world: World,
    scenario: ShiftScenario,
    config: EngineConfig,
    batch_size: int,
    seed: int,
    total_batches: int | None = None,
) -> RunMetrics:
    """Stream the scenario through one engine, classifying every batch once, in order."""
    if config.relu != world.config.relu:
        config = replace(config, relu=world.config.relu)
    engine = Engine(world.layers, config, batch_size=batch_size, n_classes=world.n_classes)
    n = scenario.total_batches if total_batches is None else min(total_batches, scenario.total_batches)
    L = len(world.layers)
    cids = np.empty(n, dtype=np.int64)
    sevs = np.empty(n, dtype=np.int64)
    errors = np.empty(n, dtype=np.int64)
    alphas = np.empty((n, L))
    est = np.empty((n, L))
    div = np.empty(n, dtype=np.int64)
    anchors = world.anchors
    blocks: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    start = time.perf_counter()
    for i, (j, k) in zip(range(n), scenario.plan()):
        step = scenario.steps[j]
        if j not in blocks:
            blocks[j] = _step_block(world, step, batch_size, seed, j)
        block_labels, block_x = blocks[j]
        lo, hi = k * batch_size, (k + 1) * batch_size
        labels = block_labels[lo:hi]
        if k == step.batch_count - 1:
            del blocks[j]
        c, s = step.corruption_id, step.severity
        res = engine.process_batch(block_x[:, lo:hi], truth=world.truth(c, s))
        pred = classify(res.output, anchors)
        cids[i], sevs[i] = c, s
        errors[i] = np.count_nonzero(pred != labels)
        alphas[i] = res.alphas
        est[i] = res.estimation_error
        div[i] = np.unique(labels).shape[0]
    return RunMetrics(
        mode=config.label,
        batch_size=batch_size,
        seed=int(seed),
        momentum=engine.momentum,
        corruption_id=cids,
        severity=sevs,
        errors=errors,
        alphas=alphas,
        estimation_error=est,
        diversity=div,
        wall_clock=time.perf_counter() - start,
    )


@dataclass
class ComparisonTable:
    modes: list[str]
    batch_sizes: list[int]
    per_seed: dict[tuple[str, int], list[float]] = field(default_factory=dict)

    def cell(self, mode: str, batch_size: int) -> float:
        return float(np.mean(self.per_seed[(mode, batch_size)]))

    def row_average(self, mode: str) -> float:
        return float(np.mean([self.cell(mode, n) for n in self.batch_sizes]))

    def format(self) -> str:
        return format_table(
            self.modes, self.batch_sizes, {k: self.cell(*k) for k in self.per_seed}
        )


def format_table(modes: Sequence[str], batch_sizes: Sequence[int], cells: dict[tuple[str, int], float]) -> str:
    """Mode x batch-size error matrix (percent) with an Avg. column."""
    width = max(len("Mode"), *(len(m) for m in modes))
    head = f"{'Mode':<{width}}" + "".join(f"{n:>9d}" for n in batch_sizes) + f"{'Avg.':>9}"
    lines = [head]
    for m in modes:
        vals = [cells[(m, n)] for n in batch_sizes]
        lines.append(
            f"{m:<{width}}" + "".join(f"{100 * v:9.2f}" for v in vals) + f"{100 * float(np.mean(vals)):9.2f}"
        )
    return "\n".join(lines)


def compare_modes(
    world_config: WorldConfig,
    spec: ScenarioSpec,
    modes: Sequence[str],
    batch_sizes: Sequence[int],
    seeds: Sequence[int] = (0,),
    engine_kwargs: dict | None = None,
    total_batches: int | None = None,
) -> ComparisonTable:
    """Overall error per (mode, batch size), collected per seed."""
    if len(modes) < 1 or len(batch_sizes) < 1:
        raise ValueError("need at least one mode and one batch size")
    engine_kwargs = engine_kwargs or {}
    configs = [EngineConfig.for_mode(m, **engine_kwargs) for m in modes]
    labels = [c.label for c in configs]
    table = ComparisonTable(labels, list(batch_sizes))
    for seed in seeds:
        world = World(world_config, seed)
        for n in batch_sizes:
            scen = make_scenario(spec, n, seed, world_config.n_corruptions)
            for cfg in configs:
                metrics = run_stream(world, scen, cfg, n, seed, total_batches)
                table.per_seed.setdefault((cfg.label, n), []).append(metrics.overall_error)
    return table


@dataclass
class DiversityTrace:
    counts: np.ndarray
    composition_law: float
    multinomial_law: float

    @property
    def mean(self) -> float:
        return float(self.counts.mean())


def diversity_trace(gen: SourceGenerator, batch_size: int, batches: int, seed: int, sampler: str | None = None) -> DiversityTrace:
    """Realized distinct classes per batch under the generator's label sampler."""
    rng = _rng(seed, _STREAM)
    counts = np.empty(batches, dtype=np.int64)
    for i in range(batches):
        counts[i] = np.unique(gen.labels(batch_size, rng, sampler)).shape[0]
    return DiversityTrace(
        counts,
        composition_law=expected_diversity(gen.K, batch_size),
        multinomial_law=multinomial_diversity(gen.K, batch_size),
    )
