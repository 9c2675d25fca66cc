"""Compare the compiled kernels with the numpy fallback.

Per-kernel timings run both implementations in this process.  The
end-to-end timing streams the same scenario in two subprocesses, one per
backend, selected with TEMA_TTA_BACKEND.

    python benchmarks/bench_kernels.py
    python benchmarks/bench_kernels.py --batches 4000 --repeat 7
"""

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from tema_tta import _purepy

try:
    from tema_tta import _kernels
except ImportError:
    _kernels = None

E2E = """
import json, time
from tema_tta._backend import BACKEND
from tema_tta.engine import EngineConfig
from tema_tta.harness import ScenarioSpec, World, WorldConfig, make_scenario, run_stream
world = World(WorldConfig(), 0)
scen = make_scenario(ScenarioSpec(), {n}, 0)
out = {{}}
for mode in ("tbn", "full"):
    m = run_stream(world, scen, EngineConfig.for_mode(mode), {n}, 0, total_batches={batches})
    out[mode] = m.wall_clock
print(json.dumps({{"backend": BACKEND, **out}}))
"""


def kernel_cases(F, N, rng):
    x = rng.normal(size=(F, N))
    mu, var = rng.normal(size=F), rng.uniform(0.1, 2, size=F)
    mu2, var2 = rng.normal(size=F), rng.uniform(0.1, 2, size=F)
    scale, shift = np.ones(F), np.zeros(F)
    u = rng.random((2000, 9))
    return {
        "batch_moments": lambda k: k.batch_moments(x),
        "normalize": lambda k: k.normalize(x, mu, var, scale, shift, 1e-5),
        "mix_moments": lambda k: k.mix_moments(0.3, mu, var, mu2, var2),
        "ema_update": lambda k: k.ema_update(0.01, mu, var, mu2, var2),
        "sym_kl": lambda k: k.sym_kl(mu, var, mu2, var2, 1e-12, True),
        "composition_nonempty": lambda k: k.composition_nonempty(u, 11),
    }


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def bench_kernels(shapes, repeat):
    rng = np.random.default_rng(0)
    print(f"{'kernel':<22}{'F x N':>10}{'python us':>12}{'cython us':>12}{'speedup':>9}")
    for F, N in shapes:
        for name, call in kernel_cases(F, N, rng).items():
            number = 2000 if N <= 16 else 200
            t_py = best_of(lambda: call(_purepy), repeat, number)
            if _kernels is None:
                print(f"{name:<22}{f'{F}x{N}':>10}{t_py * 1e6:12.2f}{'n/a':>12}{'':>9}")
                continue
            t_cy = best_of(lambda: call(_kernels), repeat, number)
            print(f"{name:<22}{f'{F}x{N}':>10}{t_py * 1e6:12.2f}{t_cy * 1e6:12.2f}{t_py / t_cy:9.1f}")


def bench_end_to_end(batch_size, batches):
    code = E2E.format(n=batch_size, batches=batches)
    results = {}
    for backend in ("python", "cython"):
        if backend == "cython" and _kernels is None:
            continue
        env = {**os.environ, "TEMA_TTA_BACKEND": backend}
        proc = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        results[backend] = json.loads(proc.stdout)
    print(f"\nend to end: {batches} batches at N={batch_size}, default world")
    print(f"{'mode':<8}" + "".join(f"{b + ' s':>12}" for b in results))
    for mode in ("tbn", "full"):
        print(f"{mode:<8}" + "".join(f"{r[mode]:12.2f}" for r in results.values()))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--batches", type=int, default=2000, help="batches for the end-to-end run")
    parser.add_argument("--batch-size", type=int, default=2)
    parser.add_argument("--skip-e2e", action="store_true")
    args = parser.parse_args()
    bench_kernels([(32, 2), (32, 200), (256, 1024)], args.repeat)
    if not args.skip_e2e:
        bench_end_to_end(args.batch_size, args.batches)


if __name__ == "__main__":
    main()
