"""Figure rendering for run metrics.

Every figure is written next to the delimited metrics it was computed
from (or into an explicit output directory). Rendering is headless.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .compare import Comparison  # noqa: E402
from .harness import read_metrics_csv  # noqa: E402

_STYLE = {
    "figure.figsize": (7.0, 4.2),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "legend.frameon": False,
    "font.size": 10,
}

COST_COLUMNS = ("cost_greentime", "cost_phaseskip", "cost_greenskip", "cost_total")


def _run_label(run_dir: Path) -> str:
    manifest = run_dir / "run_manifest.json"
    if manifest.exists():
        cfg = json.loads(manifest.read_text())["config"]
        return f"{cfg.get('algo', '?')} seed {cfg.get('seed', '?')}"
    return run_dir.name


def _load_series(run_dir: Path):
    rows = read_metrics_csv(run_dir / "metrics.csv")
    steps = [r["step"] for r in rows]
    return rows, steps


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def render_run_figures(run_dir: str | Path, out_dir: str | Path | None = None
                       ) -> list[Path]:
    """Reward, traffic, cost, and multiplier curves for one run."""
    run_dir = Path(run_dir)
    out = Path(out_dir) if out_dir is not None else run_dir
    out.mkdir(parents=True, exist_ok=True)
    rows, steps = _load_series(run_dir)
    written = []
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.plot(steps, [r["test_reward"] for r in rows], color="tab:blue")
        ax.set_xlabel("environment steps")
        ax.set_ylabel("test reward")
        ax.set_title("Greedy evaluation reward")
        written.append(_save(fig, out / "fig_reward.png"))

        fig, axes = plt.subplots(1, 2, figsize=(9.5, 4.0))
        axes[0].plot(steps, [r["throughput"] for r in rows], color="tab:green")
        axes[0].set_xlabel("environment steps")
        axes[0].set_ylabel("throughput (vehicles)")
        axes[1].plot(steps, [r["avg_delay"] for r in rows], color="tab:red")
        axes[1].set_xlabel("environment steps")
        axes[1].set_ylabel("average delay (s)")
        fig.suptitle("Traffic metrics")
        written.append(_save(fig, out / "fig_traffic.png"))

        fig, ax = plt.subplots()
        for col in COST_COLUMNS:
            ax.plot(steps, [r[col] for r in rows],
                    label=col.removeprefix("cost_"))
        ax.set_xlabel("environment steps")
        ax.set_ylabel("mean per-step cost")
        ax.set_title("Constraint violation cost")
        ax.legend()
        written.append(_save(fig, out / "fig_costs.png"))

        fig, ax = plt.subplots()
        ax.plot(steps, [r["lambda"] for r in rows], color="tab:purple")
        ax.set_xlabel("environment steps")
        ax.set_ylabel("multiplier")
        ax.set_title("Lagrange multiplier")
        written.append(_save(fig, out / "fig_lambda.png"))
    return written


def render_overlay_figures(run_dirs: list[str | Path],
                           out_dir: str | Path) -> list[Path]:
    """Overlay reward/cost/throughput curves of several runs."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    series = [(Path(d), *_load_series(Path(d))) for d in run_dirs]
    written = []
    panels = (("test_reward", "test reward", "fig_reward_overlay.png"),
              ("throughput", "throughput (vehicles)", "fig_throughput_overlay.png"),
              ("avg_delay", "average delay (s)", "fig_delay_overlay.png"),
              ("cost_total", "mean per-step cost", "fig_cost_overlay.png"))
    with plt.rc_context(_STYLE):
        for column, ylabel, filename in panels:
            fig, ax = plt.subplots()
            for run_dir, rows, steps in series:
                ax.plot(steps, [r[column] for r in rows], label=_run_label(run_dir))
            ax.set_xlabel("environment steps")
            ax.set_ylabel(ylabel)
            ax.legend()
            written.append(_save(fig, out / filename))
    return written


def render_comparison_figure(comparison: Comparison, path: str | Path) -> Path:
    """Grouped bars of final-window means per run."""
    metrics = ("test_reward", "throughput", "avg_delay", "cost_total")
    labels = [s.label for s in comparison.runs]
    with plt.rc_context(_STYLE):
        fig, axes = plt.subplots(1, len(metrics), figsize=(3.2 * len(metrics), 4.0))
        for ax, metric in zip(axes, metrics):
            values = [s.means[metric] for s in comparison.runs]
            ax.bar(range(len(values)), values, color="tab:blue")
            ax.set_xticks(range(len(values)))
            ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=7)
            ax.set_title(metric)
        return _save(fig, Path(path))
