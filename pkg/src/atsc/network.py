"""Road network model for signalised grid-style intersections.

An intersection joins four approaches (N, E, S, W). Each approach road
carries three lanes, one per turn (left, straight, right), so every
intersection serves exactly 12 movements. A signal phase is a set of
movements that may legally run at the same time; right turns are treated
as permanently green and belong to every phase.

Movement indexing is fixed throughout the package:

    movement = approach_index * 3 + turn_index

with approaches ordered N, E, S, W and turns ordered left, straight,
right. Movements 2, 5, 8, 11 are the right turns.

Networks are loaded from JSON documents (see ``schemas/network.schema.json``)
and validated both structurally and topologically: dangling road endpoints,
missing approaches, and conflicting movements inside a phase are rejected
with the offending element named.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema

APPROACHES = ("N", "E", "S", "W")
TURNS = ("left", "straight", "right")
N_MOVEMENTS = 12
N_PHASES = 8
LANES_PER_APPROACH = 3

LEFT, STRAIGHT, RIGHT = 0, 1, 2
RIGHT_TURN_MOVEMENTS = frozenset(m for m in range(N_MOVEMENTS) if m % 3 == RIGHT)

# Conventional eight-phase plan: paired straights, paired protected lefts,
# then straight+left per single approach. Right turns are appended to every
# green set when the table is materialised.
_A = {d: i for i, d in enumerate(APPROACHES)}


def movement_index(approach: str, turn: str) -> int:
    return _A[approach] * 3 + TURNS.index(turn)


DEFAULT_PHASE_TABLE: tuple[tuple[int, ...], ...] = (
    (movement_index("N", "straight"), movement_index("S", "straight")),
    (movement_index("E", "straight"), movement_index("W", "straight")),
    (movement_index("N", "left"), movement_index("S", "left")),
    (movement_index("E", "left"), movement_index("W", "left")),
    (movement_index("N", "straight"), movement_index("N", "left")),
    (movement_index("S", "straight"), movement_index("S", "left")),
    (movement_index("E", "straight"), movement_index("E", "left")),
    (movement_index("W", "straight"), movement_index("W", "left")),
)


def default_phases() -> list[frozenset[int]]:
    """The standard 8-phase table with right turns always included."""
    return [frozenset(p) | RIGHT_TURN_MOVEMENTS for p in DEFAULT_PHASE_TABLE]


def movements_conflict(m1: int, m2: int) -> bool:
    """Whether two distinct movements may not share a green phase.

    Right turns never conflict. Same-approach movements use separate lanes
    and are compatible; opposing approaches are compatible only for
    matching turns (paired straights or paired protected lefts);
    perpendicular non-right movements always cross.
    """
    if m1 == m2:
        return False
    if m1 % 3 == RIGHT or m2 % 3 == RIGHT:
        return False
    a1, t1 = divmod(m1, 3)
    a2, t2 = divmod(m2, 3)
    if a1 == a2:
        return False
    if (a1 - a2) % 4 == 2:  # opposing approaches
        return t1 != t2
    return True


def exit_direction(approach_idx: int, turn_idx: int) -> int:
    """Compass index of the side a movement leaves the intersection on.

    A vehicle arriving from approach ``a`` heads toward compass ``a+2``;
    a left turn rotates the heading counter-clockwise, a right turn
    clockwise.
    """
    heading = (approach_idx + 2) % 4
    if turn_idx == LEFT:
        return (heading + 3) % 4
    if turn_idx == RIGHT:
        return (heading + 1) % 4
    return heading


class NetworkError(Exception):
    """Base class for network document problems."""


class NetworkFormatError(NetworkError):
    """The document does not match the expected structure."""


class NetworkTopologyError(NetworkError):
    """The document is well formed but describes an invalid network."""


@dataclass(frozen=True)
class Road:
    """A directed road segment with three lanes.

    Endpoints are intersection ids (int) or boundary node names (str).
    """

    id: str
    src: int | str
    dst: int | str
    length: float
    free_speed: float

    @property
    def travel_time(self) -> float:
        return self.length / self.free_speed


@dataclass
class Intersection:
    """One signalised junction: four incoming/outgoing roads, 8 phases."""

    id: int
    incoming: dict[str, str]  # approach direction -> road id
    outgoing: dict[str, str]  # exit direction -> road id
    phases: list[frozenset[int]] = field(default_factory=default_phases)

    def green_set(self, phase_id: int) -> frozenset[int]:
        return self.phases[phase_id]


class RoadNetwork:
    """Validated road network: intersections, roads, and movement wiring."""

    def __init__(self, intersections: list[Intersection], roads: list[Road],
                 grid_shape: tuple[int, int] | None = None):
        self.intersections = intersections
        self.roads: dict[str, Road] = {r.id: r for r in roads}
        self.grid_shape = grid_shape
        self._validate()
        self._wire()

    @property
    def n_agents(self) -> int:
        return len(self.intersections)

    def _validate(self) -> None:
        ids = [i.id for i in self.intersections]
        if ids != list(range(len(ids))):
            raise NetworkTopologyError(
                f"intersection ids must be 0..n-1 in order, got {ids}")
        known = set(range(len(ids)))
        seen_road_ids = set()
        for road in self.roads.values():
            if road.id in seen_road_ids:
                raise NetworkTopologyError(f"duplicate road id {road.id!r}")
            seen_road_ids.add(road.id)
            for end in (road.src, road.dst):
                if isinstance(end, int) and end not in known:
                    raise NetworkTopologyError(
                        f"road {road.id!r} references unknown intersection {end}")
            if road.length <= 0:
                raise NetworkTopologyError(f"road {road.id!r} has non-positive length")
            if road.free_speed <= 0:
                raise NetworkTopologyError(f"road {road.id!r} has non-positive free speed")

        claimed_incoming: dict[str, int] = {}
        for inter in self.intersections:
            for mapping, label in ((inter.incoming, "incoming"), (inter.outgoing, "outgoing")):
                if set(mapping) != set(APPROACHES):
                    raise NetworkTopologyError(
                        f"intersection {inter.id} must list {label} roads for N,E,S,W, "
                        f"got {sorted(mapping)}")
                for d, rid in mapping.items():
                    if rid not in self.roads:
                        raise NetworkTopologyError(
                            f"intersection {inter.id} {label} {d!r} references "
                            f"unknown road {rid!r}")
            for d, rid in inter.incoming.items():
                if self.roads[rid].dst != inter.id:
                    raise NetworkTopologyError(
                        f"road {rid!r} does not end at intersection {inter.id} "
                        f"but is listed as its incoming {d!r}")
                if rid in claimed_incoming:
                    raise NetworkTopologyError(
                        f"road {rid!r} is incoming at both intersections "
                        f"{claimed_incoming[rid]} and {inter.id}")
                claimed_incoming[rid] = inter.id
            for d, rid in inter.outgoing.items():
                if self.roads[rid].src != inter.id:
                    raise NetworkTopologyError(
                        f"road {rid!r} does not start at intersection {inter.id} "
                        f"but is listed as its outgoing {d!r}")
            self._validate_phases(inter)

    @staticmethod
    def _validate_phases(inter: Intersection) -> None:
        if len(inter.phases) != N_PHASES:
            raise NetworkTopologyError(
                f"intersection {inter.id} has {len(inter.phases)} phases, expected {N_PHASES}")
        for pid, green in enumerate(inter.phases):
            bad = [m for m in green if not 0 <= m < N_MOVEMENTS]
            if bad:
                raise NetworkTopologyError(
                    f"intersection {inter.id} phase {pid} lists invalid movements {bad}")
            missing_rights = RIGHT_TURN_MOVEMENTS - green
            if missing_rights:
                raise NetworkTopologyError(
                    f"intersection {inter.id} phase {pid} omits right turns "
                    f"{sorted(missing_rights)}; right turns are always green")
            greens = sorted(green)
            for i, m1 in enumerate(greens):
                for m2 in greens[i + 1:]:
                    if movements_conflict(m1, m2):
                        raise NetworkTopologyError(
                            f"intersection {inter.id} phase {pid} contains conflicting "
                            f"movements {m1} and {m2}")

    def _wire(self) -> None:
        # road id -> (downstream intersection index, approach index), for
        # roads that feed an intersection.
        self.road_head: dict[str, tuple[int, int]] = {}
        # (road id, next road id) -> turn/lane index at the shared junction.
        self.turn_lane: dict[tuple[str, str], int] = {}
        # per intersection: movement -> outgoing road id
        self.movement_exit: list[dict[int, str]] = []
        for inter in self.intersections:
            exits: dict[int, str] = {}
            for d, rid in inter.incoming.items():
                a = _A[d]
                self.road_head[rid] = (inter.id, a)
                for t in range(3):
                    out_dir = APPROACHES[exit_direction(a, t)]
                    out_road = inter.outgoing[out_dir]
                    exits[a * 3 + t] = out_road
                    self.turn_lane[(rid, out_road)] = t
            self.movement_exit.append(exits)

    def green_bools(self, agent: int, phase_id: int) -> list[bool]:
        green = self.intersections[agent].phases[phase_id]
        return [m in green for m in range(N_MOVEMENTS)]


_SCHEMA_CACHE: dict[str, dict] = {}


def _load_schema(name: str) -> dict:
    if name not in _SCHEMA_CACHE:
        path = Path(__file__).parent / "schemas" / name
        _SCHEMA_CACHE[name] = json.loads(path.read_text())
    return _SCHEMA_CACHE[name]


def load_network(document) -> RoadNetwork:
    """Build a validated :class:`RoadNetwork` from a document.

    ``document`` may be a parsed dict, a JSON string, or a path to a JSON
    file. Raises :class:`NetworkFormatError` for malformed documents and
    :class:`NetworkTopologyError` for semantic problems.
    """
    doc = _coerce_document(document, "network")
    try:
        jsonschema.validate(doc, _load_schema("network.schema.json"))
    except jsonschema.ValidationError as exc:
        raise NetworkFormatError(f"network document invalid: {exc.message}") from exc

    shared_phases = doc.get("phases")
    roads = [Road(id=r["id"], src=r["from"], dst=r["to"],
                  length=float(r["length"]), free_speed=float(r["free_speed"]))
             for r in doc["roads"]]
    intersections = []
    for entry in doc["intersections"]:
        table = entry.get("phases", shared_phases)
        phases = ([frozenset(p) for p in table] if table is not None
                  else default_phases())
        intersections.append(Intersection(
            id=entry["id"],
            incoming=dict(entry["incoming"]),
            outgoing=dict(entry["outgoing"]),
            phases=phases,
        ))
    grid_shape = tuple(doc["grid_shape"]) if "grid_shape" in doc else None
    return RoadNetwork(intersections, roads, grid_shape)


def _coerce_document(document, kind: str) -> dict:
    if isinstance(document, (str, Path)):
        path = Path(document)
        if path.suffix == ".json" or path.exists():
            try:
                text = path.read_text()
            except OSError as exc:
                raise NetworkFormatError(f"cannot read {kind} file {path}: {exc}") from exc
        else:
            text = str(document)
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise NetworkFormatError(f"cannot parse {kind} document: {exc}") from exc
    if isinstance(document, dict):
        return document
    if isinstance(document, list):
        return document  # flow documents are top-level arrays
    raise NetworkFormatError(f"unsupported {kind} document type {type(document).__name__}")
