"""Synthetic R x C grid networks with seeded random demand.

Intersections sit on a regular grid (row-major ids); every pair of
neighbours is joined by two directed roads, and each border approach gets
an entry and an exit road to a boundary node. Demand is a Poisson-like
arrival process per entry road: exponential gaps drawn from a seeded
generator, each arrival routed to a random reachable exit along the
fastest path.
"""

from __future__ import annotations

import json
from pathlib import Path

import networkx as nx
import numpy as np

from .flow import FlowRule
from .network import (DEFAULT_PHASE_TABLE, RIGHT_TURN_MOVEMENTS, RoadNetwork,
                      load_network)

_OFFSETS = {"N": (-1, 0), "E": (0, 1), "S": (1, 0), "W": (0, -1)}
_OPPOSITE = {"N": "S", "S": "N", "E": "W", "W": "E"}


def _node_name(rows, cols, r, c):
    if 0 <= r < rows and 0 <= c < cols:
        return r * cols + c
    return f"b_{r}_{c}"  # boundary node just outside the grid


def gen_grid_document(rows: int, cols: int, road_length: float = 300.0,
                      free_speed: float = 10.0) -> dict:
    """Network document for an R x C grid (see the network schema)."""
    if rows < 1 or cols < 1:
        raise ValueError("grid needs at least one row and one column")
    roads = []
    road_ids = set()

    def add_road(src, dst):
        rid = f"r_{src}_{dst}"
        if rid not in road_ids:
            road_ids.add(rid)
            roads.append({"id": rid, "from": src, "to": dst,
                          "length": road_length, "free_speed": free_speed})
        return rid

    intersections = []
    for r in range(rows):
        for c in range(cols):
            me = _node_name(rows, cols, r, c)
            incoming, outgoing = {}, {}
            for d, (dr, dc) in _OFFSETS.items():
                other = _node_name(rows, cols, r + dr, c + dc)
                incoming[d] = add_road(other, me)
                outgoing[d] = add_road(me, other)
            intersections.append({"id": me, "incoming": incoming,
                                  "outgoing": outgoing})
    phases = [sorted(set(p) | RIGHT_TURN_MOVEMENTS) for p in DEFAULT_PHASE_TABLE]
    return {
        "format_version": 1,
        "grid_shape": [rows, cols],
        "phases": phases,
        "intersections": intersections,
        "roads": roads,
    }


def _route_graph(network: RoadNetwork) -> nx.DiGraph:
    # nodes are road ids; edges are legal movements, weighted by the travel
    # time of the downstream road
    g = nx.DiGraph()
    for rid in network.roads:
        g.add_node(rid)
    for (a, b) in network.turn_lane:
        g.add_edge(a, b, weight=network.roads[b].travel_time)
    return g


def gen_grid_flow(network: RoadNetwork, intensity: float, seed: int,
                  horizon: float = 3600.0) -> list[FlowRule]:
    """Seeded random demand: ``intensity`` vehicles/minute per entry road.

    Arrivals follow independent exponential gaps per entry; destinations
    are drawn uniformly over exits reachable from that entry. Returns one
    single-vehicle rule per arrival, sorted by spawn time.
    """
    if intensity < 0:
        raise ValueError("intensity must be non-negative")
    entries = [r.id for r in network.roads.values()
               if isinstance(r.src, str) and isinstance(r.dst, int)]
    exits = [r.id for r in network.roads.values()
             if isinstance(r.dst, str) and isinstance(r.src, int)]
    entries.sort()
    exits.sort()
    if intensity == 0.0 or not entries or not exits:
        return []

    graph = _route_graph(network)
    paths: dict[str, dict[str, list[str]]] = {}
    for e in entries:
        lengths, route_map = nx.single_source_dijkstra(graph, e, weight="weight")
        paths[e] = {x: route_map[x] for x in exits if x in route_map}

    rng = np.random.default_rng(seed)
    rate = intensity / 60.0
    rules = []
    for e in entries:
        reachable = sorted(paths[e])
        if not reachable:
            continue
        t = rng.exponential(1.0 / rate)
        while t < horizon:
            dest = reachable[int(rng.integers(len(reachable)))]
            rules.append(FlowRule(route=tuple(paths[e][dest]),
                                  start_time=int(t), interval=0, count=1))
            t += rng.exponential(1.0 / rate)
    rules.sort(key=lambda r: r.start_time)
    return rules


def gen_corridor_flow(network: RoadNetwork, intensity: float,
                      cross_intensity: float,
                      horizon: float = 3600.0) -> list[FlowRule]:
    """Arterial demand: heavy straight north-south columns, light east-west.

    ``intensity``/``cross_intensity`` are vehicles per minute per entry
    road on the heavy and cross axes. Arrivals are evenly spaced with a
    small per-rule start offset, so the demand is fully deterministic.
    This pattern makes long main-street greens attractive, which is what
    the signal-timing constraints push back against.
    """
    if network.grid_shape is None:
        raise ValueError("corridor demand needs a grid network")
    rows, cols = network.grid_shape
    byid = network.intersections

    def rule(route, offset, per_minute):
        if per_minute <= 0:
            return None
        interval = max(1, round(60.0 / per_minute))
        count = max(1, int(horizon) // interval)
        return FlowRule(tuple(route), offset, interval, count)

    rules = []
    for c in range(cols):
        top, bottom = byid[c], byid[(rows - 1) * cols + c]
        down = [top.incoming["N"]] + \
            [byid[r * cols + c].outgoing["S"] for r in range(rows)]
        up = [bottom.incoming["S"]] + \
            [byid[r * cols + c].outgoing["N"] for r in range(rows - 1, -1, -1)]
        rules.append(rule(down, 0, intensity))
        rules.append(rule(up, 3, intensity))
    for r in range(rows):
        left, right = byid[r * cols], byid[r * cols + cols - 1]
        east = [left.incoming["W"]] + \
            [byid[r * cols + c].outgoing["E"] for c in range(cols)]
        west = [right.incoming["E"]] + \
            [byid[r * cols + c].outgoing["W"] for c in range(cols - 1, -1, -1)]
        rules.append(rule(east, 1, cross_intensity))
        rules.append(rule(west, 4, cross_intensity))
    return [r for r in rules if r is not None]


def gen_grid(rows: int, cols: int, intensity: float, seed: int,
             road_length: float = 300.0, free_speed: float = 10.0,
             horizon: float = 3600.0, pattern: str = "uniform",
             cross_intensity: float | None = None) -> tuple[dict, list[FlowRule]]:
    """Build (network document, flow rules) for a synthetic grid.

    ``pattern`` selects the demand shape: "uniform" draws seeded random
    origin-destination trips, "corridor" lays deterministic north-south
    arterials with light cross traffic.
    """
    doc = gen_grid_document(rows, cols, road_length, free_speed)
    network = load_network(doc)
    if pattern == "uniform":
        rules = gen_grid_flow(network, intensity, seed, horizon)
    elif pattern == "corridor":
        cross = intensity / 15.0 if cross_intensity is None else cross_intensity
        rules = gen_corridor_flow(network, intensity, cross, horizon)
    else:
        raise ValueError(f"unknown demand pattern {pattern!r}")
    return doc, rules


def write_grid(out_dir: str | Path, rows: int, cols: int, intensity: float,
               seed: int, **kwargs) -> tuple[Path, Path]:
    """Write network.json and flow.json under ``out_dir``."""
    from .flow import dump_flow

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc, rules = gen_grid(rows, cols, intensity, seed, **kwargs)
    network_path = out / "network.json"
    flow_path = out / "flow.json"
    network_path.write_text(json.dumps(doc, indent=2) + "\n")
    flow_path.write_text(json.dumps(dump_flow(rules), indent=2) + "\n")
    return network_path, flow_path
