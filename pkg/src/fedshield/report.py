"""Results serialization and figure rendering.

``rounds.csv`` is the per-round metrics table (fixed column order, floats
printed with 17 significant digits so values survive a round trip exactly);
``summary.json`` carries final metrics plus the per-round id lists needed to
recompute detection quality offline; ``manifest.json`` snapshots the exact
config. The report path also renders matplotlib figures next to the
delimited files unless plotting is disabled.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from . import __version__
from .simulator import FederationConfig, RoundRecord

ROUNDS_CSV_COLUMNS = [
    "round",
    "f1",
    "source_recall",
    "n_participants",
    "n_malicious_participants",
    "n_selected",
    "n_rejected",
    "detection_precision",
    "detection_recall",
    "agg_wall_time_s",
]

COMPARISON_CSV_COLUMNS = [
    "aggregator",
    "pmr",
    "t_safe",
    "final_f1",
    "final_srecall",
    "mean_detection_precision",
    "mean_detection_recall",
]


def _fmt(value: Any) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def write_rounds_csv(records: Sequence[RoundRecord], path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ROUNDS_CSV_COLUMNS)
        for r in records:
            writer.writerow(
                [
                    r.round,
                    _fmt(r.f1),
                    _fmt(r.source_recall),
                    len(r.participant_ids),
                    len(r.malicious_participant_ids),
                    len(r.selected_ids),
                    len(r.rejected_ids),
                    _fmt(r.detection_precision),
                    _fmt(r.detection_recall),
                    _fmt(r.aggregation_wall_time_seconds),
                ]
            )


def read_rounds_csv(path: Path) -> list[dict[str, float]]:
    """Parse rounds.csv back into numeric row dicts (column name -> value)."""
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for row in reader:
            parsed: dict[str, float] = {}
            for key, value in row.items():
                parsed[key] = int(value) if key.startswith(("round", "n_")) else float(value)
            rows.append(parsed)
    return rows


def write_summary_json(records: Sequence[RoundRecord], cfg: FederationConfig, path: Path) -> None:
    detection_rounds = [r for r in records if r.round > cfg.t_safe]
    final = records[-1]
    summary = {
        "final_round": final.round,
        "final_f1": final.f1,
        "final_source_recall": final.source_recall,
        "mean_detection_precision": (
            sum(r.detection_precision for r in detection_rounds) / len(detection_rounds)
            if detection_rounds
            else None
        ),
        "mean_detection_recall": (
            sum(r.detection_recall for r in detection_rounds) / len(detection_rounds)
            if detection_rounds
            else None
        ),
        "rounds": [
            {
                "round": r.round,
                "participant_ids": r.participant_ids,
                "malicious_participant_ids": r.malicious_participant_ids,
                "selected_ids": r.selected_ids,
                "rejected_ids": r.rejected_ids,
            }
            for r in records
        ],
    }
    path.write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")


def write_manifest(
    config_snapshot: dict[str, Any],
    outputs: dict[str, str],
    path: Path,
    status: str = "ok",
    extra: dict[str, Any] | None = None,
) -> None:
    manifest = {
        "tool": "fedshield",
        "version": __version__,
        "started_utc": datetime.now(timezone.utc).isoformat(),
        "status": status,
        "config": config_snapshot,
        "outputs": outputs,
    }
    if extra:
        manifest.update(extra)
    path.write_text(json.dumps(manifest, indent=2, default=str) + "\n", encoding="utf-8")


@dataclass
class SweepRow:
    aggregator: str
    pmr: float
    t_safe: int
    final_f1: float
    final_srecall: float
    mean_detection_precision: float
    mean_detection_recall: float


def write_comparison_csv(rows: Sequence[SweepRow], path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(COMPARISON_CSV_COLUMNS)
        for row in rows:
            writer.writerow(
                [
                    row.aggregator,
                    _fmt(row.pmr),
                    row.t_safe,
                    _fmt(row.final_f1),
                    _fmt(row.final_srecall),
                    _fmt(row.mean_detection_precision),
                    _fmt(row.mean_detection_recall),
                ]
            )


def write_bench_csv(rows: Sequence[dict[str, Any]], path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["aggregator", "median_s", "iqr_s", "q1_s", "q3_s"])
        for row in rows:
            writer.writerow(
                [row["aggregator"], _fmt(row["median_s"]), _fmt(row["iqr_s"]), _fmt(row["q1_s"]), _fmt(row["q3_s"])]
            )


# ---------------------------------------------------------------------------
# figures
# ---------------------------------------------------------------------------


def plot_convergence(records: Sequence[RoundRecord], cfg: FederationConfig, path: Path) -> None:
    """Two-panel run report: model quality and defense behaviour per round."""
    rounds = [r.round for r in records]
    fig, (ax_top, ax_bot) = plt.subplots(2, 1, figsize=(7, 6), sharex=True)

    ax_top.plot(rounds, [r.f1 for r in records], label="macro F1", color="tab:blue")
    ax_top.plot(
        rounds,
        [r.source_recall / 100.0 for r in records],
        label="source recall",
        color="tab:red",
    )
    if cfg.t_safe > 0:
        ax_top.axvline(cfg.t_safe + 0.5, color="gray", linestyle=":", label="end of safe phase")
    ax_top.set_ylabel("score")
    ax_top.set_ylim(-0.02, 1.02)
    ax_top.legend(loc="lower right", fontsize=8)
    ax_top.set_title(f"{cfg.aggregator}, pmr={cfg.pmr:g}, t_safe={cfg.t_safe}")

    ax_bot.plot(rounds, [len(r.rejected_ids) for r in records], label="rejected clients", color="tab:orange")
    ax_bot.plot(
        rounds,
        [len(r.malicious_participant_ids) for r in records],
        label="malicious participants",
        color="tab:purple",
        linestyle="--",
    )
    ax_bot.set_xlabel("round")
    ax_bot.set_ylabel("clients")
    ax_bot.legend(loc="upper left", fontsize=8)

    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_sweep_comparison(rows: Sequence[SweepRow], out_dir: Path) -> list[Path]:
    """Per-t_safe line charts of final source recall and F1 against PMR."""
    written: list[Path] = []
    t_safes = sorted({row.t_safe for row in rows})
    for metric, attr, ylabel in (
        ("srecall", "final_srecall", "final source recall (%)"),
        ("f1", "final_f1", "final macro F1"),
    ):
        fig, axes = plt.subplots(1, len(t_safes), figsize=(4.5 * len(t_safes), 3.6), squeeze=False)
        for ax, t_safe in zip(axes[0], t_safes):
            subset = [row for row in rows if row.t_safe == t_safe]
            for agg in sorted({row.aggregator for row in subset}):
                series = sorted((r.pmr, getattr(r, attr)) for r in subset if r.aggregator == agg)
                ax.plot([p for p, _ in series], [v for _, v in series], marker="o", label=agg)
            ax.set_title(f"t_safe = {t_safe}")
            ax.set_xlabel("PMR")
            ax.set_ylabel(ylabel)
        axes[0][-1].legend(fontsize=8)
        fig.tight_layout()
        out = out_dir / f"comparison_{metric}.png"
        fig.savefig(out, dpi=120)
        plt.close(fig)
        written.append(out)
    return written


def plot_bench(rows: Sequence[dict[str, Any]], path: Path) -> None:
    """Median aggregation time per rule with IQR whiskers."""
    names = [row["aggregator"] for row in rows]
    medians = [row["median_s"] for row in rows]
    lower = [row["median_s"] - row["q1_s"] for row in rows]
    upper = [row["q3_s"] - row["median_s"] for row in rows]
    fig, ax = plt.subplots(figsize=(6.5, 3.6))
    ax.bar(names, medians, yerr=[lower, upper], capsize=4, color="tab:blue")
    ax.set_ylabel("seconds per round (median, IQR)")
    ax.set_yscale("log")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
