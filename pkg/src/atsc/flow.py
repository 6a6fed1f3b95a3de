"""Vehicle demand: flow documents and spawn schedules.

A flow document (see ``schemas/flow.schema.json``) is a versioned list of
spawn rules. Rule ``{route, start_time, interval, count}`` releases
``count`` vehicles onto the first road of ``route``, the j-th at
``start_time + j*interval`` seconds. Routes must be drivable: consecutive
roads have to meet at an intersection through a left/straight/right
movement (no U-turns).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import jsonschema

from .network import NetworkFormatError, RoadNetwork, _coerce_document, _load_schema


class FlowError(Exception):
    """A flow document is malformed or inconsistent with the network."""


@dataclass(frozen=True)
class FlowRule:
    route: tuple[str, ...]
    start_time: int
    interval: int
    count: int


@dataclass(frozen=True)
class SpawnEvent:
    """One scheduled vehicle release."""

    time: int
    route: tuple[str, ...]
    free_flow_time: float


def load_flow(document, network: RoadNetwork) -> list[FlowRule]:
    """Parse and validate a flow document against ``network``."""
    try:
        doc = _coerce_document(document, "flow")
    except NetworkFormatError as exc:
        raise FlowError(str(exc)) from exc
    try:
        jsonschema.validate(doc, _load_schema("flow.schema.json"))
    except jsonschema.ValidationError as exc:
        raise FlowError(f"flow document invalid: {exc.message}") from exc

    rules = []
    for idx, entry in enumerate(doc["flows"]):
        route = tuple(entry["route"])
        for rid in route:
            if rid not in network.roads:
                raise FlowError(f"flow rule {idx} references unknown road {rid!r}")
        for a, b in zip(route, route[1:]):
            if (a, b) not in network.turn_lane:
                raise FlowError(
                    f"flow rule {idx}: roads {a!r} -> {b!r} are not connected "
                    f"by a movement")
        rules.append(FlowRule(route=route,
                              start_time=int(entry["start_time"]),
                              interval=int(entry["interval"]),
                              count=int(entry["count"])))
    return rules


def build_schedule(rules: list[FlowRule], network: RoadNetwork) -> list[SpawnEvent]:
    """Expand rules into a spawn list sorted by (time, rule order).

    The ordering fixes vehicle ids and therefore the whole simulation,
    so it must stay stable.
    """
    events = []
    for ridx, rule in enumerate(rules):
        fft = sum(network.roads[rid].travel_time for rid in rule.route)
        for j in range(rule.count):
            t = rule.start_time + j * rule.interval
            events.append((t, ridx, j, rule.route, fft))
    events.sort(key=lambda e: (e[0], e[1], e[2]))
    return [SpawnEvent(time=t, route=route, free_flow_time=fft)
            for t, _, _, route, fft in events]


def dump_flow(rules: list[FlowRule]) -> dict:
    """Serialise rules back to the document format."""
    return {
        "format_version": 1,
        "flows": [
            {"route": list(r.route), "start_time": r.start_time,
             "interval": r.interval, "count": r.count}
            for r in rules
        ],
    }


def save_flow(rules: list[FlowRule], path: str | Path) -> None:
    Path(path).write_text(json.dumps(dump_flow(rules), indent=2) + "\n")
