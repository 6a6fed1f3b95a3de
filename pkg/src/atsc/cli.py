"""Command line interface.

Subcommands:
    run       train one configuration and write metrics/checkpoint/figures
    gen-grid  emit synthetic network.json and flow.json documents
    compare   summarise completed runs against the first one
    report    render figures from run metrics

Exit codes: 0 success, 1 runtime fault, 2 configuration error.
"""

from __future__ import annotations

import argparse
import sys
import traceback
from pathlib import Path

from .compare import CompareError, compare, write_comparison_csv
from .harness import ConfigError, config_from_sources, run


def _parse_grid(text: str) -> tuple[int, int]:
    try:
        rows, cols = text.lower().split("x")
        return int(rows), int(cols)
    except ValueError as exc:
        raise ConfigError(f"grid spec must look like 2x2, got {text!r}") from exc


def _parse_overrides(pairs: list[str]) -> dict:
    overrides = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override must look like key=value, got {pair!r}")
        key, value = pair.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def _cmd_run(args: argparse.Namespace) -> int:
    overrides = _parse_overrides(args.override)
    if args.grid:
        rows, cols = _parse_grid(args.grid)
        overrides.setdefault("grid_rows", rows)
        overrides.setdefault("grid_cols", cols)
    if args.intensity is not None:
        overrides.setdefault("grid_intensity", args.intensity)
    if args.algo:
        overrides.setdefault("algo", args.algo)
    if args.constraint:
        overrides.setdefault("constraint", args.constraint)
    if args.seed is not None:
        overrides.setdefault("seed", args.seed)
    if args.steps is not None:
        overrides.setdefault("total_steps", args.steps)
    if args.out:
        overrides.setdefault("out_dir", args.out)
    if args.no_figures:
        overrides["render_figures"] = False
    cfg = config_from_sources(args.config, overrides)
    result = run(cfg)
    print(f"run complete: {result.out_dir}")
    print(f"  metrics:    {result.metrics_path}")
    print(f"  checkpoint: {result.checkpoint_path}")
    return 0


def _cmd_gen_grid(args: argparse.Namespace) -> int:
    from .gridgen import write_grid

    if args.rows < 1 or args.cols < 1:
        raise ConfigError("grid dimensions must be >= 1")
    if args.intensity < 0:
        raise ConfigError("intensity must be non-negative")
    network_path, flow_path = write_grid(
        args.out, args.rows, args.cols, args.intensity, args.seed,
        road_length=args.road_length, free_speed=args.free_speed,
        horizon=args.horizon, pattern=args.pattern,
        cross_intensity=args.cross_intensity)
    print(f"wrote {network_path}")
    print(f"wrote {flow_path}")
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    from .report import render_comparison_figure

    comparison = compare(args.run_dirs)
    print(comparison.format_text())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "compare.csv"
    write_comparison_csv(comparison, csv_path)
    fig_path = render_comparison_figure(comparison, out / "compare.png")
    print(f"\nwrote {csv_path}")
    print(f"wrote {fig_path}")
    return 0


def _cmd_report(args: argparse.Namespace) -> int:
    from .report import render_overlay_figures, render_run_figures

    written = []
    if len(args.run_dirs) == 1 and args.out is None:
        written += render_run_figures(args.run_dirs[0])
    else:
        out = args.out or args.run_dirs[0]
        for run_dir in args.run_dirs:
            target = Path(out) if len(args.run_dirs) == 1 else Path(run_dir)
            written += render_run_figures(run_dir, target)
        if len(args.run_dirs) > 1:
            written += render_overlay_figures(args.run_dirs, args.out or ".")
    for path in written:
        print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="atsc",
        description="Constrained multi-agent RL for adaptive traffic signal control")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="train one configuration")
    p_run.add_argument("--config", help="JSON config file mirroring RunConfig")
    p_run.add_argument("--override", action="append", default=[],
                       metavar="KEY=VALUE", help="override a config field")
    p_run.add_argument("--grid", help="synthetic grid spec, e.g. 2x2")
    p_run.add_argument("--intensity", type=float,
                       help="vehicles per minute per entry road")
    p_run.add_argument("--algo", choices=("mappo-lce", "mappo", "ippo"))
    p_run.add_argument("--constraint",
                       choices=("greentime", "phaseskip", "greenskip", "all"))
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--steps", type=int, help="total environment steps")
    p_run.add_argument("--out", help="run output directory")
    p_run.add_argument("--no-figures", action="store_true",
                       help="skip figure rendering")
    p_run.set_defaults(func=_cmd_run)

    p_gen = sub.add_parser("gen-grid", help="generate network/flow documents")
    p_gen.add_argument("rows", type=int)
    p_gen.add_argument("cols", type=int)
    p_gen.add_argument("--intensity", type=float, default=2.0)
    p_gen.add_argument("--seed", type=int, default=0)
    p_gen.add_argument("--out", default=".", help="output directory")
    p_gen.add_argument("--road-length", type=float, default=300.0)
    p_gen.add_argument("--free-speed", type=float, default=10.0)
    p_gen.add_argument("--horizon", type=float, default=3600.0,
                       help="demand horizon in seconds")
    p_gen.add_argument("--pattern", choices=("uniform", "corridor"),
                       default="uniform", help="demand shape")
    p_gen.add_argument("--cross-intensity", type=float, default=None,
                       help="corridor cross-axis vehicles/minute per entry")
    p_gen.set_defaults(func=_cmd_gen_grid)

    p_cmp = sub.add_parser("compare", help="summarise runs against the first")
    p_cmp.add_argument("run_dirs", nargs="+", metavar="DIR")
    p_cmp.add_argument("--out", default="compare-report",
                       help="directory for compare.csv and compare.png")
    p_cmp.set_defaults(func=_cmd_compare)

    p_rep = sub.add_parser("report", help="render figures from run metrics")
    p_rep.add_argument("run_dirs", nargs="+", metavar="DIR")
    p_rep.add_argument("--out", help="directory for overlay figures")
    p_rep.set_defaults(func=_cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CompareError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"fatal: {exc}", file=sys.stderr)
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
