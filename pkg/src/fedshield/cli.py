"""Command-line front end.

Subcommands:

* ``run <config> -o <dir>``: one experiment; writes rounds.csv,
  summary.json, manifest.json and (unless --no-plots) plots/convergence.png.
* ``sweep <config> --pmr ... --tsafe ... --aggregator ... -o <dir>``: the
  Cartesian product of overrides, one sub-directory per cell, plus a
  combined comparison.csv and comparison figures.
* ``bench --clients K --model-dim D --last-layer-dim L --repeats R``:
  synthetic-round timing of every aggregation rule; prints a table and
  writes bench.csv (and plots/bench.png).

Exit codes: 0 success, 1 configuration error (the message names the bad
field), 2 runtime failure (the message names the failed round/cell).
``FEDSHIELD_SEED`` overrides ``master_seed`` from the environment.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import aggregation, gshield, report
from .aggregation import ClientUpdate
from .config import config_to_dict, load_config
from .simulator import (
    AGGREGATORS,
    ConfigError,
    FederationConfig,
    RoundFailedError,
    run_experiment,
    validate_config,
)

BENCH_ROWS = ("fedavg", "krum", "median", "tmean", "flamelite", "gshield")


def _apply_env_seed(cfg: FederationConfig) -> FederationConfig:
    raw = os.environ.get("FEDSHIELD_SEED")
    if raw is None:
        return cfg
    try:
        return replace(cfg, master_seed=int(raw))
    except ValueError:
        raise ConfigError("FEDSHIELD_SEED", f"not an integer: {raw!r}") from None


def _run_one(cfg: FederationConfig, out_dir: Path, make_plots: bool, save_weights: bool) -> dict:
    """Execute one experiment and write its artifact set into out_dir."""
    out_dir.mkdir(parents=True, exist_ok=True)
    weights_path = out_dir / "final_weights.npy" if save_weights else None
    records = run_experiment(cfg, weights_out=weights_path)
    outputs = {
        "rounds_csv": "rounds.csv",
        "summary_json": "summary.json",
    }
    report.write_rounds_csv(records, out_dir / "rounds.csv")
    report.write_summary_json(records, cfg, out_dir / "summary.json")
    if save_weights:
        outputs["final_weights"] = "final_weights.npy"
    if make_plots:
        plots_dir = out_dir / "plots"
        plots_dir.mkdir(exist_ok=True)
        report.plot_convergence(records, cfg, plots_dir / "convergence.png")
        outputs["convergence_plot"] = "plots/convergence.png"
    report.write_manifest(config_to_dict(cfg), outputs, out_dir / "manifest.json")
    detection = [r for r in records if r.round > cfg.t_safe]
    return {
        "final_f1": records[-1].f1,
        "final_srecall": records[-1].source_recall,
        "mean_detection_precision": sum(r.detection_precision for r in detection) / len(detection),
        "mean_detection_recall": sum(r.detection_recall for r in detection) / len(detection),
    }


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _apply_env_seed(load_config(args.config))
    validate_config(cfg)
    out_dir = Path(args.output_dir)
    summary = _run_one(cfg, out_dir, make_plots=not args.no_plots, save_weights=args.save_weights)
    print(
        f"run complete: final_f1={summary['final_f1']:.4f} "
        f"final_srecall={summary['final_srecall']:.3f} -> {out_dir}"
    )
    return 0


def _cell_seed(base: int, agg: str, pmr: float, t_safe: int) -> int:
    cell = np.random.SeedSequence(
        entropy=base, spawn_key=(AGGREGATORS.index(agg), int(round(pmr * 10_000)), t_safe)
    )
    return int(cell.generate_state(1)[0])


def cmd_sweep(args: argparse.Namespace) -> int:
    base_cfg = _apply_env_seed(load_config(args.config))
    validate_config(base_cfg)
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows: list[report.SweepRow] = []
    cells: list[dict] = []
    failures = 0
    for agg in args.aggregator:
        for pmr in args.pmr:
            for t_safe in args.tsafe:
                name = f"{agg}_pmr{pmr:g}_tsafe{t_safe}"
                cell_dir = out_dir / name
                cfg = replace(
                    base_cfg,
                    aggregator=agg,
                    pmr=pmr,
                    t_safe=t_safe,
                    master_seed=_cell_seed(base_cfg.master_seed, agg, pmr, t_safe),
                )
                try:
                    validate_config(cfg)
                    summary = _run_one(
                        cfg, cell_dir, make_plots=not args.no_plots, save_weights=False
                    )
                except Exception as exc:  # noqa: BLE001 - cell isolation
                    failures += 1
                    cells.append({"cell": name, "status": f"failed: {exc}"})
                    print(f"cell {name} failed: {exc}", file=sys.stderr)
                    continue
                cells.append({"cell": name, "status": "ok"})
                rows.append(
                    report.SweepRow(
                        aggregator=agg,
                        pmr=pmr,
                        t_safe=t_safe,
                        final_f1=summary["final_f1"],
                        final_srecall=summary["final_srecall"],
                        mean_detection_precision=summary["mean_detection_precision"],
                        mean_detection_recall=summary["mean_detection_recall"],
                    )
                )
    report.write_comparison_csv(rows, out_dir / "comparison.csv")
    plot_paths: list[Path] = []
    if rows and not args.no_plots:
        plots_dir = out_dir / "plots"
        plots_dir.mkdir(exist_ok=True)
        plot_paths = report.plot_sweep_comparison(rows, plots_dir)
    report.write_manifest(
        config_to_dict(base_cfg),
        {"comparison_csv": "comparison.csv", "plots": [str(p.relative_to(out_dir)) for p in plot_paths]},
        out_dir / "manifest.json",
        status="ok" if failures == 0 else f"{failures} cell(s) failed",
        extra={"cells": cells},
    )
    print(f"sweep complete: {len(rows)} cell(s) ok, {failures} failed -> {out_dir}")
    return 0 if failures == 0 else 2


def _bench_gshield(grads: np.ndarray, last_dim: int, counts: list[int], rounds: int, seed: int):
    """Time gshield rounds including the profiling machinery.

    The published selection procedure clusters every round, so the bench
    keeps the profile in its safe phase for a faithful per-round cost; the
    final round exercises the (cheaper) detection path for completeness.
    """
    profile = gshield.BenignProfile.fresh(t_safe=max(1, rounds - 1), z_alpha=2.0)
    times = []
    for t in range(1, rounds + 1):
        updates = [
            ClientUpdate(client_id=i, gradient=grads[t - 1, i], num_samples=counts[i])
            for i in range(grads.shape[1])
        ]
        last = [(i, grads[t - 1, i, -last_dim:].copy()) for i in range(grads.shape[1])]
        result, profile, _ = gshield.gshield_aggregate(updates, last, profile, t, seed=seed + t)
        times.append(result.wall_time)
    return times


def cmd_bench(args: argparse.Namespace) -> int:
    k, dim, last_dim, repeats = args.clients, args.model_dim, args.last_layer_dim, args.repeats
    if k < 4:
        raise ConfigError("--clients", "need at least 4 clients")
    if not dim >= last_dim >= 2:
        raise ConfigError("--model-dim", "need model-dim >= last-layer-dim >= 2")
    if repeats < 3:
        raise ConfigError("--repeats", "need at least 3 repeats")

    rng = np.random.default_rng(args.seed)
    grads = rng.standard_normal((repeats, k, dim))
    counts = rng.integers(10, 100, size=k).tolist()
    krum_f = min(math.ceil(0.25 * k), max(0, (k - 3) // 2))

    def bench_simple(fn) -> list[float]:
        times = []
        for r in range(repeats):
            updates = [
                ClientUpdate(client_id=i, gradient=grads[r, i], num_samples=counts[i])
                for i in range(k)
            ]
            times.append(fn(updates).wall_time)
        return times

    timers = {
        "fedavg": lambda: bench_simple(aggregation.fedavg),
        "krum": lambda: bench_simple(lambda u: aggregation.krum(u, num_malicious=krum_f)),
        "median": lambda: bench_simple(aggregation.coord_median),
        "tmean": lambda: bench_simple(lambda u: aggregation.trimmed_mean(u, 0.2)),
        "flamelite": lambda: bench_simple(lambda u: aggregation.flame_lite(u, 0.0, seed=args.seed)),
        "gshield": lambda: _bench_gshield(grads, last_dim, counts, repeats, args.seed),
    }
    rows = []
    for name in BENCH_ROWS:
        timers[name]()  # warm-up pass: caches, allocator, first-call costs
        times = np.asarray(timers[name]())
        q1, med, q3 = np.percentile(times, [25, 50, 75])
        rows.append(
            {"aggregator": name, "median_s": float(med), "iqr_s": float(q3 - q1), "q1_s": float(q1), "q3_s": float(q3)}
        )

    width = max(len(r["aggregator"]) for r in rows)
    print(f"{'aggregator':<{width}}  median_s    iqr_s")
    for row in rows:
        print(f"{row['aggregator']:<{width}}  {row['median_s']:.6f}  {row['iqr_s']:.6f}")

    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report.write_bench_csv(rows, out_dir / "bench.csv")
    if not args.no_plots:
        plots_dir = out_dir / "plots"
        plots_dir.mkdir(exist_ok=True)
        report.plot_bench(rows, plots_dir / "bench.png")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedshield", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment from a config file")
    p_run.add_argument("config", help="path to a flat key/value config file")
    p_run.add_argument("-o", "--output-dir", required=True, help="directory for results")
    p_run.add_argument("--no-plots", action="store_true", help="skip figure rendering")
    p_run.add_argument("--save-weights", action="store_true", help="save final global weights")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a pmr x t_safe x aggregator grid")
    p_sweep.add_argument("config", help="base config file")
    p_sweep.add_argument("-o", "--output-dir", required=True)
    p_sweep.add_argument("--pmr", type=float, nargs="+", required=True, help="PMR fractions, e.g. 0.05 0.25")
    p_sweep.add_argument("--tsafe", type=int, nargs="+", required=True, help="safe-round counts")
    p_sweep.add_argument(
        "--aggregator", nargs="+", required=True, choices=AGGREGATORS, help="aggregation rules"
    )
    p_sweep.add_argument("--no-plots", action="store_true")
    p_sweep.set_defaults(func=cmd_sweep)

    p_bench = sub.add_parser("bench", help="time each aggregation rule on synthetic rounds")
    p_bench.add_argument("--clients", type=int, default=25)
    p_bench.add_argument("--model-dim", type=int, default=10_000)
    p_bench.add_argument("--last-layer-dim", type=int, default=128)
    p_bench.add_argument("--repeats", type=int, default=11)
    p_bench.add_argument("--seed", type=int, default=0)
    p_bench.add_argument("-o", "--output-dir", default="bench_out")
    p_bench.add_argument("--no-plots", action="store_true")
    p_bench.set_defaults(func=cmd_bench)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except RoundFailedError as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
