"""Run configuration and the end-to-end experiment driver.

A run binds together an environment source (network/flow files or a
synthetic grid spec), an algorithm, a constraint mode, and the full
hyperparameter set, then trains to a step budget while logging greedy
evaluation episodes. Artifacts written to the run directory:

    metrics.csv        one row per evaluation (schema below)
    checkpoint.bin     flat-parameter checkpoint of every network
    run_manifest.json  verbatim echo of the resolved config + provenance
    fig_*.png          rendered curves (unless disabled)

The metrics schema is fixed: ``step, test_reward, throughput, avg_delay,
cost_greentime, cost_phaseskip, cost_greenskip, cost_total, lambda``.
Runs are deterministic: a fixed config and seed reproduces metrics.csv
byte for byte.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import os
import subprocess
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .constraints import MODES, ConstraintConfig, ConstraintEngine
from .flow import load_flow
from .gridgen import gen_grid
from .network import NetworkError, load_network
from .nn import save_checkpoint
from .simulator import SimConfig, TrafficSimulator
from .trainers import (EpisodeBatch, ReplayBuffer, TrainerConfig,
                       collect_episode, evaluate_episode, make_learner)

ALGORITHMS = ("mappo-lce", "mappo", "ippo")
METRICS_COLUMNS = ("step", "test_reward", "throughput", "avg_delay",
                   "cost_greentime", "cost_phaseskip", "cost_greenskip",
                   "cost_total", "lambda")
# Table-matched learning rates; used when the config leaves lr unset.
DEFAULT_LR = {"mappo-lce": 5e-5, "mappo": 5e-4, "ippo": 5e-5}
COMPARE_WINDOW_ROWS = 10


class ConfigError(Exception):
    """Invalid run configuration; maps to CLI exit code 2."""


@dataclass
class RunConfig:
    """Everything a run needs; defaults follow the reference settings."""

    format_version: int = 1
    algo: str = "mappo-lce"
    constraint: str = "greentime"
    seed: int = 0
    total_steps: int = 500_000
    out_dir: str = ""

    # environment source: either explicit documents or a synthetic grid
    network_file: str | None = None
    flow_file: str | None = None
    grid_rows: int | None = None
    grid_cols: int | None = None
    grid_intensity: float = 2.0
    grid_cross_intensity: float | None = None
    grid_pattern: str = "uniform"
    grid_seed: int = 0
    road_length: float = 300.0
    free_speed: float = 10.0

    # simulator
    t_green: int = 10
    t_yellow: int = 5
    saturation_flow: float = 1.0
    waiting_speed_threshold: float = 0.1
    reward_moving_weight: float = 1.0
    reward_waiting_weight: float = -1.0
    episode_length: int = 360

    # constraint thresholds
    green_time_limit: int = 40
    phase_skip_limit: int = 16
    green_skip_limit: int = 4

    # algorithm hyperparameters
    lr: float | None = None
    gamma: float = 0.985
    gae_lambda: float = 0.95
    eps_clip: float = 0.15
    critic_coef: float = 0.5
    entropy_coef: float = 0.0
    reg_coef: float = 0.01
    mini_epochs: int = 2
    grad_norm_clip: float = 10.0
    hidden_dim: int = 128
    batch_size: int = 8
    buffer_size: int = 8
    epsilon_start: float = 1.0
    epsilon_finish: float = 0.05
    epsilon_anneal_time: int | None = None  # defaults to total_steps
    tau: float = 0.01
    target_update_interval: int = 200
    lambda_init: float = 0.01
    lambda_lr: float = 1e-4
    cost_limit: float = 0.0
    cost_estimator_lr: float = 1e-4
    zeta: float = 0.2
    normalize_advantages: bool = True
    actor_out_scale: float = 0.01

    # evaluation / output
    eval_interval: int = 10
    eval_episodes: int = 1
    render_figures: bool = True

    def resolve(self) -> "RunConfig":
        """Fill derived defaults; returns self for chaining."""
        if self.lr is None:
            if self.algo in DEFAULT_LR:
                self.lr = DEFAULT_LR[self.algo]
        if self.epsilon_anneal_time is None:
            self.epsilon_anneal_time = self.total_steps
        if not self.out_dir:
            self.out_dir = f"{self.algo}-{self.constraint}-seed{self.seed}"
        return self

    def validate(self) -> None:
        if self.algo not in ALGORITHMS:
            raise ConfigError(f"unknown algorithm {self.algo!r}; choose from {ALGORITHMS}")
        if self.constraint not in MODES:
            raise ConfigError(f"unknown constraint mode {self.constraint!r}; "
                              f"choose from {MODES}")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.eps_clip <= 0:
            raise ConfigError(f"eps_clip must be positive, got {self.eps_clip}")
        if not 0.0 < self.tau <= 1.0:
            raise ConfigError(f"tau must be in (0, 1], got {self.tau}")
        if self.total_steps < 1:
            raise ConfigError("total_steps must be positive")
        if self.batch_size < 1 or self.buffer_size < 1:
            raise ConfigError("batch_size and buffer_size must be positive")
        if self.eval_interval < 1:
            raise ConfigError("eval_interval must be positive")
        if self.lr is not None and self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.lambda_lr < 0 or self.cost_estimator_lr <= 0:
            raise ConfigError("lambda_lr must be >= 0 and cost_estimator_lr > 0")
        grid = self.grid_rows is not None or self.grid_cols is not None
        files = self.network_file is not None or self.flow_file is not None
        if grid and files:
            raise ConfigError("specify either a grid or network/flow files, not both")
        if grid:
            if self.grid_rows is None or self.grid_cols is None:
                raise ConfigError("grid needs both grid_rows and grid_cols")
            if self.grid_rows < 1 or self.grid_cols < 1:
                raise ConfigError("grid dimensions must be >= 1")
            if self.grid_pattern not in ("uniform", "corridor"):
                raise ConfigError(
                    f"unknown grid pattern {self.grid_pattern!r}; "
                    f"choose uniform or corridor")
        elif files:
            if self.network_file is None or self.flow_file is None:
                raise ConfigError("need both network_file and flow_file")
            for label, path in (("network file", self.network_file),
                                ("flow file", self.flow_file)):
                if not Path(path).exists():
                    raise ConfigError(f"{label} not found: {path}")
        else:
            raise ConfigError("no environment source: set grid_rows/grid_cols "
                              "or network_file/flow_file")
        try:
            self.sim_config().validate()
            self.constraint_config().validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    # -- sub-config builders -------------------------------------------

    def sim_config(self) -> SimConfig:
        return SimConfig(
            t_green=self.t_green, t_yellow=self.t_yellow,
            saturation_flow=self.saturation_flow,
            waiting_speed_threshold=self.waiting_speed_threshold,
            reward_moving_weight=self.reward_moving_weight,
            reward_waiting_weight=self.reward_waiting_weight,
            episode_length=self.episode_length)

    def constraint_config(self) -> ConstraintConfig:
        return ConstraintConfig(
            green_time_limit=self.green_time_limit,
            phase_skip_limit=self.phase_skip_limit,
            green_skip_limit=self.green_skip_limit,
            mode=self.constraint)

    def trainer_config(self) -> TrainerConfig:
        return TrainerConfig(
            algo=self.algo, lr=self.lr, gamma=self.gamma,
            gae_lambda=self.gae_lambda, eps_clip=self.eps_clip,
            critic_coef=self.critic_coef, entropy_coef=self.entropy_coef,
            mini_epochs=self.mini_epochs, grad_norm_clip=self.grad_norm_clip,
            hidden_dim=self.hidden_dim, batch_size=self.batch_size,
            buffer_size=self.buffer_size, epsilon_start=self.epsilon_start,
            epsilon_finish=self.epsilon_finish,
            epsilon_anneal_time=self.epsilon_anneal_time, tau=self.tau,
            lambda_init=self.lambda_init, lambda_lr=self.lambda_lr,
            cost_limit=self.cost_limit,
            cost_estimator_lr=self.cost_estimator_lr, zeta=self.zeta,
            normalize_advantages=self.normalize_advantages,
            actor_out_scale=self.actor_out_scale,
            target_update_interval=self.target_update_interval,
            reg_coef=self.reg_coef)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


_FIELD_TYPES = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce_value(name: str, raw):
    """Parse an override/file value into the config field's type."""
    if name not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {name!r}")
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if text.lower() in ("null", "none"):
        return None
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def config_from_sources(file_path: str | None = None,
                        overrides: dict | None = None) -> RunConfig:
    """Defaults <- config file <- overrides, then resolve."""
    cfg = RunConfig()
    merged: dict = {}
    if file_path is not None:
        path = Path(file_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {file_path}")
        try:
            merged.update(json.loads(path.read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"cannot parse config file {file_path}: {exc}") from exc
    if overrides:
        merged.update(overrides)
    for key, value in merged.items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, _coerce_value(key, value))
    return cfg.resolve()


def output_root() -> Path:
    """Run directories land under $ATSC_OUT when set, else ./runs."""
    return Path(os.environ.get("ATSC_OUT", "runs"))


def resolve_out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    if not out.is_absolute():
        out = output_root() / out
    return out


def _git_describe() -> str:
    try:
        return subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=10,
            cwd=Path(__file__).parent).stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def build_environment(cfg: RunConfig) -> tuple[TrafficSimulator, ConstraintEngine]:
    if cfg.grid_rows is not None:
        horizon = float(cfg.episode_length * cfg.t_green)
        doc, rules = gen_grid(cfg.grid_rows, cfg.grid_cols, cfg.grid_intensity,
                              cfg.grid_seed, road_length=cfg.road_length,
                              free_speed=cfg.free_speed, horizon=horizon,
                              pattern=cfg.grid_pattern,
                              cross_intensity=cfg.grid_cross_intensity)
        network = load_network(doc)
    else:
        try:
            network = load_network(cfg.network_file)
        except NetworkError as exc:
            raise ConfigError(f"network file {cfg.network_file}: {exc}") from exc
        rules = load_flow(cfg.flow_file, network)
    sim = TrafficSimulator(network, rules, cfg.sim_config())
    engine = ConstraintEngine(network, cfg.constraint_config())
    return sim, engine


def format_metric(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_metrics_csv(path: Path, rows: list[dict]) -> None:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_COLUMNS)
    for row in rows:
        writer.writerow([format_metric(row[c]) for c in METRICS_COLUMNS])
    path.write_text(buf.getvalue())


def read_metrics_csv(path: str | Path) -> list[dict]:
    rows = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append({k: float(v) for k, v in row.items()})
    return rows


@dataclass
class RunResult:
    out_dir: Path
    metrics_path: Path
    checkpoint_path: Path
    manifest_path: Path
    rows: list[dict] = field(default_factory=list)


def train(cfg: RunConfig, progress=None) -> tuple[list[dict], object]:
    """Core training loop; returns (evaluation rows, learner).

    Evaluation runs greedily every ``eval_interval`` training iterations
    (plus once at the end if the cadence missed it) and never writes to
    the replay buffer or advances the exploration schedule.
    """
    sim, engine = build_environment(cfg)
    tcfg = cfg.trainer_config()
    rng = np.random.default_rng(cfg.seed)
    learner = make_learner(tcfg, sim.network.n_agents, rng)
    buffer = ReplayBuffer(tcfg.buffer_size)

    rows: list[dict] = []

    def run_eval(step: int) -> None:
        samples = [evaluate_episode(sim, engine, learner)
                   for _ in range(cfg.eval_episodes)]
        row = {k: float(np.mean([s[k] for s in samples])) for k in samples[0]}
        row["step"] = step
        row["lambda"] = float(getattr(learner, "lam", 0.0))
        rows.append(row)
        if progress is not None:
            progress(row)

    global_step = 0
    iteration = 0
    while global_step < cfg.total_steps:
        transitions = collect_episode(sim, engine, learner, rng, tcfg, global_step)
        global_step += len(transitions)
        buffer.push(EpisodeBatch(transitions))
        learner.update(buffer.sample(rng, tcfg.batch_size))
        if getattr(learner, "lam", 0.0) < 0.0:
            raise AssertionError("multiplier went negative despite the clamp")
        iteration += 1
        if iteration % cfg.eval_interval == 0:
            run_eval(global_step)
    if iteration % cfg.eval_interval != 0 or not rows:
        run_eval(global_step)
    return rows, learner


def run(cfg: RunConfig) -> RunResult:
    """Validate, train, and write all artifacts for one run."""
    cfg.resolve()
    cfg.validate()
    out = resolve_out_dir(cfg)
    out.mkdir(parents=True, exist_ok=True)

    rows, learner = train(cfg)

    metrics_path = out / "metrics.csv"
    write_metrics_csv(metrics_path, rows)

    checkpoint_path = out / "checkpoint.bin"
    save_checkpoint(checkpoint_path, learner.named_nets(), learner.scalars())

    manifest_path = out / "run_manifest.json"
    manifest = {
        "format_version": 1,
        "config": cfg.as_dict(),
        "seed": cfg.seed,
        "git_describe": _git_describe(),
        "package_version": __version__,
        "comparison_window_rows": COMPARE_WINDOW_ROWS,
        "evaluation_protocol": "separate greedy episodes, exploration off",
    }
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")

    if cfg.render_figures:
        from .report import render_run_figures
        render_run_figures(out)

    return RunResult(out, metrics_path, checkpoint_path, manifest_path, rows)
