"""Signal-timing constraint counters and the scalar cost signal.

Three per-intersection counters describe how a controller treats its
lights across environment steps:

* green time: consecutive steps a light has been on; reset to 0 the step
  it goes off.
* phase skips: on every phase change, all phases other than the old and
  the new one are incremented; the new phase resets to 0. The old phase
  is deliberately left untouched.
* green skips: on every phase change, lights red in both the old and the
  new phase are incremented; every other light resets to 0.

Right-turn lights are always on, so they are excluded from the green-time
and green-skip counters (their entries stay 0 forever). A counter is in
violation when it exceeds its limit; the per-constraint cost is the
violating fraction of lights (or phases) averaged over intersections, so
each constraint's cost lies in [0, 1]. The green-time and green-skip
fractions use all 12 lights as the denominator even though right turns
can never violate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .network import N_MOVEMENTS, N_PHASES, RIGHT, RoadNetwork

MODES = ("greentime", "phaseskip", "greenskip", "all")

_NON_RIGHT = tuple(m for m in range(N_MOVEMENTS) if m % 3 != RIGHT)
_IS_RIGHT = tuple(m % 3 == RIGHT for m in range(N_MOVEMENTS))


@dataclass
class ConstraintConfig:
    green_time_limit: int = 40
    phase_skip_limit: int = 16
    green_skip_limit: int = 4
    mode: str = "greentime"

    def validate(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown constraint mode {self.mode!r}; choose from {MODES}")
        for name in ("green_time_limit", "phase_skip_limit", "green_skip_limit"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")


@dataclass(frozen=True)
class CostSample:
    """Per-constraint costs plus their combination for the active mode."""

    greentime: float
    phaseskip: float
    greenskip: float
    total: float


class ConstraintTracker:
    """Counters for a single intersection."""

    __slots__ = ("green_time", "phase_skips", "green_skips")

    def __init__(self):
        self.green_time = [0] * N_MOVEMENTS
        self.phase_skips = [0] * N_PHASES
        self.green_skips = [0] * N_MOVEMENTS

    def update_green_time(self, green: list[bool]) -> None:
        """Tick the on-time counters with the lights currently on."""
        self.green_time = [
            0 if is_right else (count + 1 if on else 0)
            for is_right, count, on in zip(_IS_RIGHT, self.green_time, green)
        ]

    def update_phase_skip(self, old_phase: int, new_phase: int) -> None:
        if old_phase == new_phase:
            raise ValueError("phase-skip update requires an actual phase change")
        ps = self.phase_skips
        self.phase_skips = [
            0 if p == new_phase else (ps[p] if p == old_phase else ps[p] + 1)
            for p in range(N_PHASES)
        ]

    def update_green_skip(self, old_green: list[bool], new_green: list[bool]) -> None:
        # passing one phase's green set for both sides is a same-phase call;
        # distinct phases may legitimately share equal green sets
        if old_green is new_green:
            raise ValueError("green-skip update requires an actual phase change")
        self.green_skips = [
            0 if (is_right or was_on or now_on) else count + 1
            for is_right, count, was_on, now_on in
            zip(_IS_RIGHT, self.green_skips, old_green, new_green)
        ]


def compute_cost(trackers: list[ConstraintTracker],
                 config: ConstraintConfig) -> CostSample:
    """Violation fractions averaged over intersections.

    A light or phase counts as violating when its counter strictly
    exceeds the configured limit. ``total`` sums the constraints active
    under ``config.mode`` (a single value, or all three in "all" mode).
    """
    n = len(trackers)
    gt = sum(sum(1 for c in t.green_time if c > config.green_time_limit)
             for t in trackers) / (N_MOVEMENTS * n)
    ps = sum(sum(1 for c in t.phase_skips if c > config.phase_skip_limit)
             for t in trackers) / (N_PHASES * n)
    gs = sum(sum(1 for c in t.green_skips if c > config.green_skip_limit)
             for t in trackers) / (N_MOVEMENTS * n)
    if config.mode == "greentime":
        total = gt
    elif config.mode == "phaseskip":
        total = ps
    elif config.mode == "greenskip":
        total = gs
    else:
        total = gt + ps + gs
    return CostSample(gt, ps, gs, total)


class ConstraintEngine:
    """Tracks all intersections of one environment instance.

    Drive it once per environment step with the phases before and after
    the step; phase-change counters fire only when they differ, then the
    green-time counters tick with the post-transition green set.
    """

    def __init__(self, network: RoadNetwork, config: ConstraintConfig):
        config.validate()
        self.network = network
        self.config = config
        self._green_tables = [
            [network.green_bools(i, p) for p in range(N_PHASES)]
            for i in range(network.n_agents)
        ]
        self.reset()

    def reset(self) -> None:
        self.trackers = [ConstraintTracker() for _ in self.network.intersections]

    def step(self, prev_phases: list[int], new_phases: list[int]) -> CostSample:
        for i, (old, new) in enumerate(zip(prev_phases, new_phases)):
            tracker = self.trackers[i]
            table = self._green_tables[i]
            if old != new:
                tracker.update_phase_skip(old, new)
                tracker.update_green_skip(table[old], table[new])
            tracker.update_green_time(table[new])
        return self.cost()

    def cost(self) -> CostSample:
        return compute_cost(self.trackers, self.config)
