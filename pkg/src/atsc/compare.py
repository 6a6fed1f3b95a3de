"""Cross-run comparison: final-window means and percentage improvements.

Each run is summarised by the mean of its last ``COMPARE_WINDOW_ROWS``
evaluation rows. The first run is the reference: for reward and
throughput the improvement over run *i* is ``100 * (m_1 - m_i) / |m_i|``;
for delay, where lower is better, the sign flips to
``100 * (m_i - m_1) / |m_i|``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

from .harness import COMPARE_WINDOW_ROWS, read_metrics_csv

# metric -> higher_is_better
IMPROVEMENT_METRICS = {"test_reward": True, "throughput": True, "avg_delay": False}
SUMMARY_METRICS = ("test_reward", "throughput", "avg_delay", "cost_total")

# config keys that must match for runs to be comparable
_COMPAT_KEYS = (
    "network_file", "flow_file", "grid_rows", "grid_cols", "grid_intensity",
    "grid_seed", "road_length", "free_speed", "t_green", "t_yellow",
    "saturation_flow", "episode_length", "constraint", "green_time_limit",
    "phase_skip_limit", "green_skip_limit", "total_steps",
)


class CompareError(Exception):
    pass


@dataclass
class RunSummary:
    path: Path
    label: str
    config: dict
    means: dict[str, float]
    n_rows: int


def percentage_improvement(reference: float, other: float,
                           higher_is_better: bool = True) -> float:
    """Improvement of ``reference`` over ``other`` in percent."""
    diff = reference - other if higher_is_better else other - reference
    if other == 0.0:
        return 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
    return 100.0 * diff / abs(other)


def final_window_means(rows: list[dict],
                       window: int = COMPARE_WINDOW_ROWS) -> dict[str, float]:
    if not rows:
        raise CompareError("metrics file contains no evaluation rows")
    tail = rows[-window:]
    return {key: sum(r[key] for r in tail) / len(tail) for key in rows[0]}


def load_run(run_dir: str | Path) -> RunSummary:
    run_dir = Path(run_dir)
    metrics = run_dir / "metrics.csv"
    manifest = run_dir / "run_manifest.json"
    if not metrics.exists():
        raise CompareError(f"{run_dir} has no metrics.csv")
    if not manifest.exists():
        raise CompareError(f"{run_dir} has no run_manifest.json")
    config = json.loads(manifest.read_text())["config"]
    rows = read_metrics_csv(metrics)
    label = f"{config.get('algo', '?')}-{config.get('constraint', '?')}" \
            f"-seed{config.get('seed', '?')}"
    return RunSummary(run_dir, label, config, final_window_means(rows), len(rows))


def check_compatible(runs: list[RunSummary]) -> None:
    ref = runs[0]
    for other in runs[1:]:
        for key in _COMPAT_KEYS:
            if ref.config.get(key) != other.config.get(key):
                raise CompareError(
                    f"runs {ref.path} and {other.path} differ on {key!r}: "
                    f"{ref.config.get(key)!r} vs {other.config.get(key)!r}")


@dataclass
class Comparison:
    runs: list[RunSummary]
    improvements: list[dict[str, float]]  # first run vs each other run

    def table_rows(self) -> list[dict]:
        rows = []
        for summary in self.runs:
            row = {"run": summary.label, "dir": str(summary.path)}
            row.update({m: summary.means[m] for m in SUMMARY_METRICS})
            rows.append(row)
        return rows

    def format_text(self) -> str:
        out = ["Final-window means (last "
               f"{COMPARE_WINDOW_ROWS} evaluations):"]
        header = f"{'run':<32}" + "".join(f"{m:>14}" for m in SUMMARY_METRICS)
        out.append(header)
        for s in self.runs:
            out.append(f"{s.label:<32}" + "".join(
                f"{s.means[m]:>14.3f}" for m in SUMMARY_METRICS))
        out.append("")
        out.append(f"Improvement of {self.runs[0].label} over each run (%):")
        header = f"{'run':<32}" + "".join(
            f"{m:>14}" for m in IMPROVEMENT_METRICS)
        out.append(header)
        for other, imps in zip(self.runs[1:], self.improvements):
            out.append(f"{other.label:<32}" + "".join(
                f"{imps[m]:>14.2f}" for m in IMPROVEMENT_METRICS))
        return "\n".join(out)


def compare(run_dirs: list[str | Path]) -> Comparison:
    if len(run_dirs) < 2:
        raise CompareError("compare needs at least two run directories")
    runs = [load_run(d) for d in run_dirs]
    check_compatible(runs)
    ref = runs[0]
    improvements = []
    for other in runs[1:]:
        improvements.append({
            metric: percentage_improvement(ref.means[metric],
                                           other.means[metric], higher)
            for metric, higher in IMPROVEMENT_METRICS.items()
        })
    return Comparison(runs, improvements)


def write_comparison_csv(comparison: Comparison, path: str | Path) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    cols = (["run", "dir"] + list(SUMMARY_METRICS)
            + [f"improvement_{m}" for m in IMPROVEMENT_METRICS])
    writer.writerow(cols)
    for i, summary in enumerate(comparison.runs):
        imps = ({m: 0.0 for m in IMPROVEMENT_METRICS} if i == 0
                else comparison.improvements[i - 1])
        writer.writerow([summary.label, str(summary.path)]
                        + [repr(summary.means[m]) for m in SUMMARY_METRICS]
                        + [repr(imps[m]) for m in IMPROVEMENT_METRICS])
    Path(path).write_text(buf.getvalue())
