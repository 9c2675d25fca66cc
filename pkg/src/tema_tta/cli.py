"""Command-line entry point.

Subcommands: ``diversity``, ``select-momentum``, ``simulate``, ``report``.
Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._backend import BACKEND
from .config import ConfigError, RunConfig, load
from .diversity import DiversityQuery, expected_diversity
from .harness import World, format_table, make_scenario, run_stream
from .momentum import MomentumConfig, effective_batch_count, select_momentum

log = logging.getLogger("tema_tta")

MANIFEST = "manifest.json"


class UsageError(Exception):
    pass


class RunFailure(Exception):
    pass


def _parse_n(text: str) -> list[int]:
    """``128``, ``1,2,4`` or an inclusive range ``1:200``."""
    try:
        if ":" in text:
            lo, hi = (int(p) for p in text.split(":", 1))
            values = list(range(lo, hi + 1))
        else:
            values = [int(p) for p in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid batch size list {text!r}") from None
    if not values:
        raise argparse.ArgumentTypeError(f"empty batch size list {text!r}")
    return values


def _parse_grid(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid momentum grid {text!r}") from None


# diversity / momentum ------------------------------------------------------


def cmd_diversity(args) -> int:
    try:
        rows = [(n, expected_diversity(args.k, n)) for n in args.n]
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    if len(rows) == 1:
        print(f"{rows[0][1]:.4f}")
    else:
        print(f"{'N':>8}  E(M|N)")
        for n, e in rows:
            print(f"{n:>8d}  {e:.4f}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["K", "N", "expected_diversity"])
            writer.writerows([args.k, n, repr(e)] for n, e in rows)
    return 0


def cmd_select_momentum(args) -> int:
    try:
        cfg = MomentumConfig(
            grid=args.grid if args.grid is not None else MomentumConfig().grid,
            epsilon=args.epsilon,
            lam=args.lam,
        )
        DiversityQuery(args.k, args.ns)
        DiversityQuery(args.k, args.nt)
        choice = select_momentum(args.ns, args.nt, args.k, cfg)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    print(f"m* = {choice.m_star!r}  (effective pool {choice.pool_size} samples)")
    print(f"{'m':>8}  {'batches':>8}  {'pool':>8}  objective")
    for m, value in choice.objective_values.items():
        c = effective_batch_count(m, cfg.epsilon)
        mark = "  *" if m == choice.m_star else ""
        print(f"{m:>8g}  {c:>8d}  {c * args.nt:>8d}  {value:.6f}{mark}")
    return 0


# simulate / report ---------------------------------------------------------


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "out_dir", None) is not None:
        cfg = dataclasses.replace(cfg, out_dir=args.out_dir)
    return cfg


def _run_file(mode: str, batch_size: int, seed: int) -> str:
    safe = mode.replace("(", "_").replace(")", "")
    return f"{safe}_n{batch_size}_s{seed}.csv"


def simulate(cfg: RunConfig) -> dict:
    """Execute every (seed, batch size, mode) run and write CSVs plus manifest.

    Files written before a failure are removed.
    """
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    runs = []
    try:
        for seed in cfg.seeds:
            world = World(cfg.world, seed)
            snap = out / f"source_stats_s{seed}.json"
            snap.write_text(json.dumps(world.snapshot()) + "\n")
            written.append(snap)
            for n in cfg.run.batch_sizes:
                scen = make_scenario(cfg.scenario, n, seed, cfg.world.n_corruptions)
                for mode in cfg.run.modes:
                    ecfg = cfg.engine_config(mode)
                    metrics = run_stream(world, scen, ecfg, n, seed, cfg.run.total_batches or None)
                    path = out / _run_file(ecfg.label, n, seed)
                    metrics.write_csv(path)
                    written.append(path)
                    log.info("%s N=%d seed=%d error=%.4f (%.1fs)", ecfg.label, n, seed, metrics.overall_error, metrics.wall_clock)
                    runs.append(
                        {
                            "file": path.name,
                            "mode": ecfg.label,
                            "batch_size": n,
                            "seed": seed,
                            "momentum": metrics.momentum,
                            "n_batches": metrics.n_batches,
                            "overall_error": metrics.overall_error,
                            "wall_clock": metrics.wall_clock,
                        }
                    )
        manifest = {
            "version": __version__,
            "backend": BACKEND,
            "config": cfg.to_dict(),
            "runs": runs,
        }
        path = out / MANIFEST
        path.write_text(json.dumps(manifest, indent=2) + "\n")
        written.append(path)
    except BaseException:
        for p in written:
            p.unlink(missing_ok=True)
        raise
    return manifest


def cmd_simulate(args) -> int:
    path = args.config_path or args.config
    if path is None:
        raise UsageError("simulate needs a config file (positional or --config)")
    cfg = _apply_overrides(load(path), args)
    try:
        manifest = simulate(cfg)
    except Exception as exc:  # noqa: BLE001
        raise RunFailure(f"simulation failed: {exc}") from exc
    print(f"wrote {len(manifest['runs'])} runs to {cfg.out_dir}")
    return 0


def collect_report(run_dir) -> tuple[list[str], list[int], dict[tuple[str, int], float]]:
    """Seed-averaged overall error per (mode, batch size) from a run directory."""
    run_dir = Path(run_dir)
    manifest_path = run_dir / MANIFEST
    if not manifest_path.is_file():
        raise RunFailure(f"no {MANIFEST} in {run_dir}")
    try:
        manifest = json.loads(manifest_path.read_text())
        runs = manifest["runs"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise RunFailure(f"corrupt manifest: {exc}") from None
    if not runs:
        raise RunFailure("manifest lists no runs")
    modes: list[str] = []
    sizes: list[int] = []
    per_cell: dict[tuple[str, int], list[float]] = {}
    for run in runs:
        path = run_dir / run["file"]
        if not path.is_file():
            raise RunFailure(f"missing run file {path.name}")
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if len(rows) != run["n_batches"] or not rows:
            raise RunFailure(f"incomplete run file {path.name}: {len(rows)} of {run['n_batches']} batches")
        try:
            error = float(rows[-1]["cum_error"])
        except (KeyError, ValueError):
            raise RunFailure(f"corrupt run file {path.name}") from None
        mode, n = run["mode"], int(run["batch_size"])
        if mode not in modes:
            modes.append(mode)
        if n not in sizes:
            sizes.append(n)
        per_cell.setdefault((mode, n), []).append(error)
    for m in modes:
        for n in sizes:
            if (m, n) not in per_cell:
                raise RunFailure(f"no run for mode {m} at batch size {n}")
    cells = {k: float(np.mean(v)) for k, v in per_cell.items()}
    return modes, sizes, cells


def cmd_report(args) -> int:
    run_dir = args.run_dir or args.out_dir
    if run_dir is None:
        raise UsageError("report needs a run directory")
    modes, sizes, cells = collect_report(run_dir)
    print("Error rate (%) averaged over the scenario and seeds")
    print(format_table(modes, sizes, cells))
    return 0


# parser --------------------------------------------------------------------


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="top-level seed (overrides the config)")
    parser.add_argument("--out-dir", default=default, help="output directory (overrides the config)")
    parser.add_argument("--config", default=default, help="TOML run configuration")
    parser.add_argument("-v", "--verbose", action="store_true", default=argparse.SUPPRESS if suppress else False)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tema-tta", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({BACKEND} kernels)")
    parser.add_argument("--print-defaults", action="store_true", help="print the default config as TOML and exit")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("diversity", help="expected class diversity E(M|N)")
    _global_flags(p, suppress=True)
    p.add_argument("--k", type=int, required=True, help="number of classes")
    p.add_argument("--n", type=_parse_n, required=True, help="batch size, list (1,2,4) or range (1:200)")
    p.add_argument("--csv", help="also write the table to this CSV file")
    p.set_defaults(func=cmd_diversity)

    p = sub.add_parser("select-momentum", help="grid-search the TEMA momentum")
    _global_flags(p, suppress=True)
    p.add_argument("--ns", type=int, default=128, help="source (training) batch size")
    p.add_argument("--nt", type=int, required=True, help="test batch size")
    p.add_argument("--k", type=int, required=True, help="number of classes")
    p.add_argument("--grid", type=_parse_grid, default=None, help="comma-separated momentum grid")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--lambda", dest="lam", type=float, default=0.01)
    p.set_defaults(func=cmd_select_momentum)

    p = sub.add_parser("simulate", help="run the synthetic domain-shift harness")
    _global_flags(p, suppress=True)
    p.add_argument("config_path", nargs="?", help="TOML run configuration")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="summarize a simulate output directory")
    _global_flags(p, suppress=True)
    p.add_argument("run_dir", nargs="?", help="directory written by simulate")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.print_defaults:
        sys.stdout.write(RunConfig().to_toml())
        return 0
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except RunFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
