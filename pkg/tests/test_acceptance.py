"""Acceptance criteria, one test per criterion, each with its runtime budget.

The terminal summary prints a PASS/FAIL line per criterion.
"""

import time
from fractions import Fraction

import numpy as np
import pytest

from tema_tta.cli import main
from tema_tta.diversity import expected_diversity, expected_diversity_closed_form, expected_diversity_exact, sample_multiset_diversity
from tema_tta.engine import Engine, EngineConfig
from tema_tta.harness import ScenarioSpec, World, WorldConfig, make_scenario, run_stream
from tema_tta.momentum import effective_batch_count, select_momentum
from tema_tta.rectifier import RectifierState, divergence_to_alpha, gaussian_sym_kl, update_prior
from tema_tta.stats import ChannelStats, ema_weights, mix_statistics, tema_init, tema_update


class Timer:
    def __init__(self, budget):
        self.budget = budget

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start
        if exc[0] is None:
            assert self.elapsed < self.budget, f"took {self.elapsed:.1f}s, budget {self.budget}s"


def midpoint_kl(mu1, var1, mu2, var2, n=400_000):
    sd = var1**0.5
    h = 60 * sd / n
    x = mu1 - 30 * sd + h * (np.arange(n) + 0.5)
    log_p = -0.5 * np.log(2 * np.pi * var1) - (x - mu1) ** 2 / (2 * var1)
    log_q = -0.5 * np.log(2 * np.pi * var2) - (x - mu2) ** 2 / (2 * var2)
    return float(np.sum(np.exp(log_p) * (log_p - log_q)) * h)


def test_01_diversity_exactness():
    with Timer(1):
        cases = [(10, 128, Fraction(1280, 137), 9.34), (10, 200, Fraction(2000, 209), 9.57), (10, 2, Fraction(20, 11), 1.82)]
        for K, N, exact, shown in cases:
            assert expected_diversity_exact(K, N) == exact
            assert expected_diversity(K, N) == float(exact)
            assert abs(expected_diversity(K, N) - shown) <= 0.005


def test_02_closed_form_identity():
    with Timer(30):
        for K in range(1, 51):
            for N in range(1, 501):
                assert expected_diversity_exact(K, N) == expected_diversity_closed_form(K, N) == Fraction(K * N, N + K - 1)


def test_03_monte_carlo_concordance():
    pairs = [(K, N) for K in (2, 5, 10, 50) for N in (1, 2, 16, 128, 500)]
    assert len(pairs) == 20
    with Timer(30):
        for K, N in pairs:
            mean, se = sample_multiset_diversity(K, N, 10**5, seed=1000 * K + N)
            if se == 0.0:
                assert mean == expected_diversity(K, N)
            else:
                assert abs(mean - expected_diversity(K, N)) <= 3 * se


def test_04_effective_pools():
    def oracle(m, eps):
        j, w = 0, 1.0
        while (w := w * (1 - m)) > eps:
            j += 1
        return j

    with Timer(1):
        assert effective_batch_count(1.0, 0.1) == 1
        for m, expected in ((0.1, 21), (0.01, 229)):
            assert effective_batch_count(m, 0.1) == oracle(m, 0.1) == expected


def test_05_momentum_regions():
    with Timer(5):
        for n_target, expected in ((200, 1.0), (16, 0.1), (2, 0.01)):
            assert select_momentum(128, n_target, 10).m_star == expected
        picks = [select_momentum(128, n, 10).m_star for n in (1, 2, 4, 16, 64, 200)]
        assert picks == sorted(picks)


def test_06_mixing_correctness():
    r = np.random.default_rng(6)
    with Timer(5):
        for _ in range(1000):
            alpha = r.uniform()
            mu_s, mu_t = r.normal(0, 3, size=2)
            var_s, var_t = r.uniform(0.01, 5, size=2)
            # moments of the two-component mixture via raw second moments
            mean = alpha * mu_s + (1 - alpha) * mu_t
            second = alpha * (var_s + mu_s**2) + (1 - alpha) * (var_t + mu_t**2)
            var = second - mean**2
            got = mix_statistics(alpha, ChannelStats([mu_s], [var_s]), ChannelStats([mu_t], [var_t]))
            assert got.mean[0] == pytest.approx(mean, rel=1e-10, abs=1e-300)
            assert got.variance[0] == pytest.approx(var, rel=1e-10)


def test_07_kl_correctness():
    r = np.random.default_rng(7)
    with Timer(30):
        for _ in range(100):
            mu1, mu2 = r.normal(0, 2, size=2)
            v1, v2 = r.uniform(0.2, 3.0, size=2)
            p, q = ChannelStats([mu1], [v1]), ChannelStats([mu2], [v2])
            expected = 0.5 * midpoint_kl(mu1, v1, mu2, v2) + 0.5 * midpoint_kl(mu2, v2, mu1, v1)
            d = gaussian_sym_kl(p, q)
            assert abs(d - expected) <= 1e-4
            assert d == gaussian_sym_kl(q, p)
            assert d >= 0.0
            assert gaussian_sym_kl(p, p) == 0.0


def test_08_ema_decomposition():
    r = np.random.default_rng(8)
    with Timer(1):
        for m in (1.0, 0.1, 0.01, 0.001):
            init = ChannelStats(r.normal(size=8), r.uniform(0.1, 3, size=8))
            batches = [ChannelStats(r.normal(size=8), r.uniform(0.1, 3, size=8)) for _ in range(50)]
            state = tema_init(m, init)
            for b in batches:
                state = tema_update(state, b)
            w0, w = ema_weights(50, m)
            mean = w0 * init.mean + sum(wt * b.mean for wt, b in zip(w, batches))
            var = w0 * init.variance + sum(wt * b.variance for wt, b in zip(w, batches))
            np.testing.assert_allclose(state.stats.mean, mean, rtol=0, atol=1e-12)
            np.testing.assert_allclose(state.stats.variance, var, rtol=0, atol=1e-12)


def test_09_stabilization():
    spec = ScenarioSpec(corruptions=(0,), samples_per_segment=10_000)
    with Timer(30):
        tema, tbn = [], []
        for seed in range(3):
            world = World(WorldConfig(), seed)
            scen = make_scenario(spec, 2, seed)
            assert scen.total_batches == 5000
            tema.append(run_stream(world, scen, EngineConfig(mode="tema_only", momentum=0.01), 2, seed).mean_estimation_error)
            tbn.append(run_stream(world, scen, EngineConfig(mode="tbn"), 2, seed).mean_estimation_error)
        ratio = np.mean(tbn) / np.mean(tema)
        print(f"TBN / TEMA estimation error ratio: {ratio:.2f}")
        assert ratio >= 5.0


def test_10_minibatch_robustness(default_comparison):
    tab = default_comparison
    assert tab.elapsed < 180
    full_gap = tab.cell("full", 2) - tab.cell("full", 200)
    tbn_gap = tab.cell("tbn", 2) - tab.cell("tbn", 200)
    print(f"full degrades by {full_gap:.4f}, tbn by {tbn_gap:.4f}")
    assert full_gap < 0.05
    assert tbn_gap > 0.15


def test_11_ablation_ordering(default_comparison):
    tab = default_comparison
    assert tab.elapsed < 180
    full, tema, tbn = (tab.cell(m, 2) for m in ("full", "tema_only", "tbn"))
    print(f"N=2 error: full {full:.4f}, tema_only {tema:.4f}, tbn {tbn:.4f}")
    assert tema <= tbn
    assert full <= tema


def test_12_rectifier_bounds():
    world = World(WorldConfig(n_corruptions=3, source_samples=5000, reference_samples=2000), 0)
    with Timer(1):
        engine = Engine(world.layers, EngineConfig(mode="full"), batch_size=2, n_classes=10)
        rng = np.random.default_rng(12)
        gen = world.generator
        for i in range(200):
            x = world.corrupt(gen.draw(gen.labels(2, rng), rng), i % 3, 1 + i % 5)
            res = engine.process_batch(x)
            assert np.all(res.alphas >= 0.0) and np.all(res.alphas <= 0.5)
        for L in (1, 4, 7):
            assert divergence_to_alpha(np.full(L, 0.8)).tolist() == [0.25] * L
        # exact arithmetic case: 0.5 * 0.5
        s = update_prior(RectifierState(np.array([0.0, 0.5]), 0.5, 0.5), [0.5, 0.0])
        assert s.prior.tolist() == [0.25, 0.25]
        r = np.random.default_rng(120)
        for _ in range(500):
            tau = r.uniform()
            prior, fresh = r.uniform(0, 0.5, size=6), r.uniform(0, 0.5, size=6)
            new = update_prior(RectifierState(prior, 0.5, tau), fresh)
            before, after = np.linalg.norm(prior - fresh), np.linalg.norm(new.prior - fresh)
            assert after == pytest.approx((1 - tau) * before, rel=1e-12, abs=1e-16)


def test_13_determinism(tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text(
        "seed = 5\n"
        "[world]\nsource_samples = 10000\nreference_samples = 5000\n"
        "[scenario]\ncorruptions = [0, 1, 2]\nsamples_per_segment = 400\n"
        '[run]\nmodes = ["source_only", "tbn", "tema_only", "fixed_alpha(0.5)", "full"]\nbatch_sizes = [200, 2]\n'
    )
    with Timer(60):
        for name in ("a", "b"):
            assert main(["simulate", str(cfg), "--out-dir", str(tmp_path / name)]) == 0
    names = sorted(p.name for p in (tmp_path / "a").glob("*.csv"))
    assert len(names) == 10
    for name in names:
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
