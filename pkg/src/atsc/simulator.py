"""Queue-based multi-intersection traffic simulator.

Vehicles travel at free-flow speed along their route and stack in a
vertical (point) queue at the stop line of each lane. While a lane's
movement is green, the queue discharges at the saturation rate; a vehicle
that reaches the stop line mid-second may cross without stopping when the
light is green, the queue is empty, and the lane still has discharge
capacity left for that second. There is no car following and no spillback:
queue length never consumes road space.

Time is discrete. One environment step covers ``t_green`` one-second
ticks. When the commanded phase differs from the current one, every
movement that would switch state is held red for the first ``t_yellow``
ticks (the green set is the intersection of old and new), after which the
new phase takes over for the remaining ticks.

The per-agent observation is a fixed 56-vector:

    [0:12]   vehicles moving toward each movement
    [12:24]  vehicles queued for each movement
    [24:32]  current phase one-hot
    [32:44]  total vehicles per incoming lane
    [44:56]  mean lane speed normalised by free speed (0 for empty lanes)

Lanes map one-to-one onto movements (lane index = turn index), so the
count blocks partition the same vehicles in two ways.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .flow import FlowRule, SpawnEvent, build_schedule
from .network import APPROACHES, N_MOVEMENTS, N_PHASES, RoadNetwork, STRAIGHT

OBS_SIZE = 56


@dataclass
class SimConfig:
    """Environment timing, discharge, and reward parameters."""

    t_green: int = 10          # simulated seconds per environment step
    t_yellow: int = 5          # all-red ticks on every phase change
    saturation_flow: float = 1.0   # vehicles per lane per green second (floored)
    waiting_speed_threshold: float = 0.1  # m/s at or below which a vehicle waits
    reward_moving_weight: float = 1.0
    reward_waiting_weight: float = -1.0
    episode_length: int = 360  # environment steps per episode

    def validate(self) -> None:
        if self.t_yellow < 0 or self.t_green <= self.t_yellow:
            raise ValueError(
                f"need t_green > t_yellow >= 0, got {self.t_green}, {self.t_yellow}")
        if self.saturation_flow <= 0:
            raise ValueError("saturation_flow must be positive")
        if self.waiting_speed_threshold < 0:
            raise ValueError("waiting_speed_threshold must be non-negative")
        if self.episode_length < 1:
            raise ValueError("episode_length must be at least 1")


@dataclass
class EpisodeMetrics:
    throughput: int
    average_delay: float
    delay_defined: bool  # False when nothing completed; delay reported as 0


@dataclass
class CompletedTrip:
    spawn_time: int
    completed_time: float
    free_flow_time: float

    @property
    def delay(self) -> float:
        return self.completed_time - self.spawn_time - self.free_flow_time


class Vehicle:
    __slots__ = ("id", "route", "pos", "spawn_time", "offset", "lane",
                 "queued", "free_flow_time")

    def __init__(self, vid: int, route: tuple[str, ...], spawn_time: int,
                 free_flow_time: float):
        self.id = vid
        self.route = route
        self.pos = 0
        self.spawn_time = spawn_time
        self.offset = 0.0
        self.lane = STRAIGHT
        self.queued = False
        self.free_flow_time = free_flow_time

    @property
    def road_id(self) -> str:
        return self.route[self.pos]


@dataclass
class SignalState:
    current_phase: int = 0
    pending_phase: int | None = None
    yellow_remaining: int = 0


class SimulationError(Exception):
    pass


class TrafficSimulator:
    """Deterministic owner of all dynamic traffic state.

    One instance serves one rollout at a time; it holds no global state
    and may be handed to another thread between episodes.
    """

    def __init__(self, network: RoadNetwork, flow: list[FlowRule],
                 config: SimConfig | None = None, validate: bool = False):
        self.network = network
        self.config = config or SimConfig()
        self.config.validate()
        self.flow = flow
        self.schedule: list[SpawnEvent] = build_schedule(flow, network)
        self.validate = validate
        self._lane_for_pos_cache: dict[tuple[tuple[str, ...], int], int] = {}
        self.reset()

    # ------------------------------------------------------------------
    # episode control

    def reset(self, seed: int | None = None) -> np.ndarray:
        """Start a new episode; returns the (n_agents, 56) observations.

        The dynamics are fully determined by the network, the flow
        schedule, and the action sequence; ``seed`` is recorded for
        provenance only.
        """
        self.seed = seed
        self.clock = 0
        self.vehicles: dict[int, Vehicle] = {}
        self._moving: dict[int, Vehicle] = {}
        self.completed: list[CompletedTrip] = []
        self.spawned_total = 0
        self._spawn_ptr = 0
        self._queued_count = 0
        self.queues: dict[tuple[str, int], deque[Vehicle]] = {
            (rid, lane): deque()
            for rid in self.network.road_head
            for lane in range(3)
        }
        self.signals = [SignalState() for _ in self.network.intersections]
        self._spawn_due()
        return self.observations()

    def step(self, joint_action) -> tuple[np.ndarray, float, dict]:
        """Advance ``t_green`` seconds under the commanded phases.

        Returns ``(observations, reward, info)`` where ``info`` carries the
        moving/waiting totals behind the reward plus the phase bookkeeping
        needed by constraint tracking (``prev_phases``, ``phases``).
        """
        cfg = self.config
        actions = [int(a) for a in joint_action]
        if len(actions) != self.network.n_agents:
            raise SimulationError(
                f"expected {self.network.n_agents} actions, got {len(actions)}")
        for i, a in enumerate(actions):
            if not 0 <= a < N_PHASES:
                raise SimulationError(f"agent {i}: invalid phase id {a}")

        prev_phases = [s.current_phase for s in self.signals]
        yellow_green: list[list[bool] | None] = [None] * len(self.signals)
        for i, (sig, a) in enumerate(zip(self.signals, actions)):
            if a != sig.current_phase:
                sig.pending_phase = a
                sig.yellow_remaining = cfg.t_yellow
                old = self.network.intersections[i].phases[sig.current_phase]
                new = self.network.intersections[i].phases[a]
                both = old & new
                yellow_green[i] = [m in both for m in range(N_MOVEMENTS)]
                if cfg.t_yellow == 0:
                    sig.current_phase = a
                    sig.pending_phase = None

        for _ in range(cfg.t_green):
            green = []
            for i, sig in enumerate(self.signals):
                if sig.yellow_remaining > 0:
                    green.append(yellow_green[i])
                else:
                    green.append(self.network.green_bools(i, sig.current_phase))
            self._tick(green)
            for sig in self.signals:
                if sig.yellow_remaining > 0:
                    sig.yellow_remaining -= 1
                    if sig.yellow_remaining == 0:
                        sig.current_phase = sig.pending_phase
                        sig.pending_phase = None
            if self.validate:
                self._check_invariants()

        obs = self.observations()
        r_moving, r_waiting = self._count_moving_waiting()
        reward = (cfg.reward_moving_weight * r_moving
                  + cfg.reward_waiting_weight * r_waiting)
        info = {
            "r_moving": r_moving,
            "r_waiting": r_waiting,
            "prev_phases": prev_phases,
            "phases": [s.current_phase for s in self.signals],
            "active": len(self.vehicles),
            "completed": len(self.completed),
            "spawned": self.spawned_total,
        }
        return obs, float(reward), info

    # ------------------------------------------------------------------
    # one-second dynamics

    def _tick(self, green: list[list[bool]]) -> None:
        cfg = self.config
        self._spawn_due()
        cap = int(math.floor(cfg.saturation_flow))
        used: dict[tuple[str, int], int] = {}
        movers = list(self._moving.values())

        # queued discharge at the saturation rate
        for i, inter in enumerate(self.network.intersections):
            g = green[i]
            for m in range(N_MOVEMENTS):
                if not g[m]:
                    continue
                rid = inter.incoming[APPROACHES[m // 3]]
                key = (rid, m % 3)
                q = self.queues[key]
                n = min(cap, len(q))
                for _ in range(n):
                    v = q.popleft()
                    self._queued_count -= 1
                    v.queued = False
                    self._enter_next_road(v)
                    self._moving[v.id] = v
                if n:
                    used[key] = n

        # free-flow advance; vehicles may cross mid-second if capacity remains
        for v in movers:
            if v.id not in self._moving:  # completed earlier this tick
                continue
            self._advance(v, 1.0, green, used, cap)

        self.clock += 1

    def _spawn_due(self) -> None:
        while (self._spawn_ptr < len(self.schedule)
               and self.schedule[self._spawn_ptr].time <= self.clock):
            ev = self.schedule[self._spawn_ptr]
            self._spawn_ptr += 1
            v = Vehicle(self.spawned_total, ev.route, ev.time, ev.free_flow_time)
            v.lane = self._lane_for(v)
            self.vehicles[v.id] = v
            self._moving[v.id] = v
            self.spawned_total += 1

    def _lane_for(self, v: Vehicle) -> int:
        key = (v.route, v.pos)
        lane = self._lane_for_pos_cache.get(key)
        if lane is None:
            if v.pos + 1 >= len(v.route):
                lane = STRAIGHT
            else:
                lane = self.network.turn_lane[(v.route[v.pos], v.route[v.pos + 1])]
            self._lane_for_pos_cache[key] = lane
        return lane

    def _enter_next_road(self, v: Vehicle) -> None:
        v.pos += 1
        v.offset = 0.0
        v.lane = self._lane_for(v)

    def _advance(self, v: Vehicle, remaining: float, green, used, cap) -> None:
        roads = self.network.roads
        head = self.network.road_head
        while remaining > 1e-12:
            road = roads[v.route[v.pos]]
            dist = road.length - v.offset
            t_need = dist / road.free_speed
            if t_need > remaining:
                v.offset += road.free_speed * remaining
                return
            remaining -= t_need
            v.offset = road.length
            if v.pos + 1 >= len(v.route):
                self._complete(v, self.clock + (1.0 - remaining))
                return
            info = head.get(road.id)
            if info is None:
                raise SimulationError(
                    f"vehicle {v.id} must cross at road {road.id!r} which ends "
                    f"at a boundary")
            i, _a = info
            m = _a * 3 + v.lane
            key = (road.id, v.lane)
            if (green[i][m] and not self.queues[key]
                    and used.get(key, 0) < cap):
                used[key] = used.get(key, 0) + 1
                self._enter_next_road(v)
                continue
            self.queues[key].append(v)
            self._queued_count += 1
            v.queued = True
            del self._moving[v.id]
            return

    def _complete(self, v: Vehicle, when: float) -> None:
        self.completed.append(CompletedTrip(v.spawn_time, when, v.free_flow_time))
        del self._moving[v.id]
        del self.vehicles[v.id]

    # ------------------------------------------------------------------
    # observations, reward counts, metrics

    def observations(self) -> np.ndarray:
        n = self.network.n_agents
        obs = np.zeros((n, OBS_SIZE), dtype=np.float64)
        moving = np.zeros((n, N_MOVEMENTS))
        waiting = np.zeros((n, N_MOVEMENTS))
        head = self.network.road_head
        for v in self._moving.values():
            info = head.get(v.route[v.pos])
            if info is None:
                continue
            i, a = info
            moving[i, a * 3 + v.lane] += 1.0
        for (rid, lane), q in self.queues.items():
            if q:
                i, a = head[rid]
                waiting[i, a * 3 + lane] += len(q)
        counts = moving + waiting
        # moving vehicles run at free speed (normalised 1), queued at 0
        mean_speed = moving / np.maximum(counts, 1.0)
        obs[:, 0:12] = moving
        obs[:, 12:24] = waiting
        for i, sig in enumerate(self.signals):
            obs[i, 24 + sig.current_phase] = 1.0
        obs[:, 32:44] = counts
        obs[:, 44:56] = mean_speed
        return obs

    def _count_moving_waiting(self) -> tuple[int, int]:
        thr = self.config.waiting_speed_threshold
        roads = self.network.roads
        moving = sum(1 for v in self._moving.values()
                     if roads[v.route[v.pos]].free_speed > thr)
        waiting = len(self.vehicles) - moving
        return moving, waiting

    def episode_metrics(self) -> EpisodeMetrics:
        """Throughput and mean delay over completed trips.

        Delay is actual travel time minus the free-flow time of the full
        route; vehicles still en route are excluded. With no completions
        the delay is reported as 0 with ``delay_defined=False``.
        """
        if not self.completed:
            return EpisodeMetrics(0, 0.0, False)
        delays = [trip.delay for trip in self.completed]
        return EpisodeMetrics(len(self.completed),
                              float(sum(delays) / len(delays)), True)

    # ------------------------------------------------------------------
    # diagnostics

    def _check_invariants(self) -> None:
        if self.spawned_total != len(self.vehicles) + len(self.completed):
            raise AssertionError(
                f"conservation violated at t={self.clock}: spawned "
                f"{self.spawned_total} != active {len(self.vehicles)} + "
                f"completed {len(self.completed)}")
        queued = sum(len(q) for q in self.queues.values())
        if queued != self._queued_count:
            raise AssertionError("queued-vehicle counter out of sync")
        if len(self._moving) + queued != len(self.vehicles):
            raise AssertionError("moving/queued partition broken")

    def snapshot(self) -> tuple:
        """Hashable digest of dynamic state, for determinism checks."""
        veh = tuple(sorted(
            (v.id, v.pos, v.lane, v.queued, v.offset)
            for v in self.vehicles.values()))
        sig = tuple((s.current_phase, s.pending_phase, s.yellow_remaining)
                    for s in self.signals)
        return (self.clock, veh, sig, len(self.completed), self.spawned_total)


def global_state(observations: np.ndarray) -> np.ndarray:
    """Concatenate per-agent observations in agent-id order."""
    obs = np.asarray(observations, dtype=np.float64)
    return obs.reshape(-1)
