"""Road network graph, regions, OD-pair catalog and shortest-path selection.

The network is a directed graph whose nodes carry coordinates and an optional
region assignment.  OD demand is estimated for every ordered node pair, each
served by one or more minimum-length paths.  Shortest paths are measured by
physical link length in kilometers; when several paths tie, one is sampled
uniformly at random under a caller-supplied seed so runs are reproducible.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import random
from dataclasses import dataclass, field, replace

from .errors import OdflowError

# Relative slack when comparing path lengths for ties.
_TIE_RTOL = 1e-9


class NetworkError(OdflowError):
    pass


class DanglingReference(NetworkError):
    """A link or region refers to a node id that does not exist."""


class DisconnectedGraph(NetworkError):
    """Some ordered node pair has no connecting path."""

    def __init__(self, origin, destination):
        self.pair = (origin, destination)
        super().__init__(f"no path from {origin!r} to {destination!r}")


class NoPath(NetworkError):
    pass


class UnassignedNode(NetworkError):
    """An OD endpoint has no region while a region index was requested."""


@dataclass(frozen=True)
class Node:
    id: str
    lat: float
    lon: float
    region_id: str | None = None

    def __post_init__(self):
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"node {self.id}: latitude {self.lat} outside [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"node {self.id}: longitude {self.lon} outside [-180, 180]")


@dataclass(frozen=True)
class Link:
    id: str
    from_node: str
    to_node: str
    length_km: float
    sensor_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if self.from_node == self.to_node:
            raise ValueError(f"link {self.id}: self-loop at {self.from_node}")
        if self.length_km <= 0:
            raise ValueError(f"link {self.id}: length must be positive, got {self.length_km}")
        object.__setattr__(self, "sensor_ids", tuple(self.sensor_ids))


@dataclass(frozen=True)
class Region:
    id: str
    name: str
    node_ids: frozenset[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "node_ids", frozenset(self.node_ids))


@dataclass(frozen=True)
class Path:
    """Simple directed link sequence; total_length is the sum of link lengths."""

    link_ids: tuple[str, ...]
    total_length: float

    def __post_init__(self):
        if not self.link_ids:
            raise ValueError("path needs at least one link")
        object.__setattr__(self, "link_ids", tuple(self.link_ids))


@dataclass(frozen=True)
class OdPair:
    origin: str
    destination: str
    paths: tuple[Path, ...]

    def __post_init__(self):
        if self.origin == self.destination:
            raise ValueError("OD pair origin equals destination")
        if not self.paths:
            raise ValueError(f"OD pair {self.origin}->{self.destination} has no paths")
        object.__setattr__(self, "paths", tuple(self.paths))


@dataclass(frozen=True)
class TrafficNetwork:
    """Validated road network; immutable after construction."""

    nodes: dict[str, Node]
    links: dict[str, Link]
    regions: dict[str, Region]
    od_pairs: tuple[OdPair, ...] | None = None
    # adjacency: node id -> tuple of (neighbor id, link id, length)
    _out: dict[str, tuple[tuple[str, str, float], ...]] = field(default_factory=dict, repr=False)

    @property
    def node_ids(self) -> tuple[str, ...]:
        return tuple(self.nodes)

    @property
    def link_ids(self) -> tuple[str, ...]:
        return tuple(self.links)

    def out_edges(self, node_id: str) -> tuple[tuple[str, str, float], ...]:
        return self._out.get(node_id, ())

    def with_od_pairs(self, od_pairs) -> "TrafficNetwork":
        return replace(self, od_pairs=tuple(od_pairs))

    def require_od_pairs(self) -> tuple[OdPair, ...]:
        if self.od_pairs is None:
            raise NetworkError("network has no OD-pair catalog; run enumerate_od_pairs first")
        return self.od_pairs

    def path_nodes(self, path: Path) -> list[str]:
        """Node sequence visited by a path, origin first."""
        first = self.links[path.link_ids[0]]
        nodes = [first.from_node]
        for lid in path.link_ids:
            nodes.append(self.links[lid].to_node)
        return nodes


def build_network(nodes, links, regions=()) -> TrafficNetwork:
    """Validate and assemble a TrafficNetwork.

    Node and region cross-references must resolve, node ids must be unique,
    no node may sit in two regions, and the graph must be strongly connected
    (every ordered node pair is an OD candidate).
    """
    node_map: dict[str, Node] = {}
    for node in nodes:
        if node.id in node_map:
            raise NetworkError(f"duplicate node id {node.id!r}")
        node_map[node.id] = node

    link_map: dict[str, Link] = {}
    out: dict[str, list[tuple[str, str, float]]] = {nid: [] for nid in node_map}
    for link in links:
        if link.id in link_map:
            raise NetworkError(f"duplicate link id {link.id!r}")
        for endpoint in (link.from_node, link.to_node):
            if endpoint not in node_map:
                raise DanglingReference(f"link {link.id!r} references unknown node {endpoint!r}")
        link_map[link.id] = link
        out[link.from_node].append((link.to_node, link.id, link.length_km))

    region_map: dict[str, Region] = {}
    assigned: dict[str, str] = {}
    for node in node_map.values():
        if node.region_id is not None:
            assigned[node.id] = node.region_id
    declared = {r.id: r for r in regions}
    for nid, rid in assigned.items():
        name = declared[rid].name if rid in declared else rid
        members = region_map.get(rid)
        if members is None:
            region_map[rid] = Region(id=rid, name=name, node_ids=frozenset({nid}))
        else:
            region_map[rid] = Region(id=rid, name=name, node_ids=members.node_ids | {nid})
    for rid, region in declared.items():
        if rid not in region_map:
            region_map[rid] = region
        for nid in region_map[rid].node_ids:
            if nid not in node_map:
                raise DanglingReference(f"region {rid!r} references unknown node {nid!r}")
    owner: dict[str, str] = {}
    for rid, region in region_map.items():
        for nid in region.node_ids:
            if owner.setdefault(nid, rid) != rid:
                raise NetworkError(
                    f"node {nid!r} appears in regions {owner[nid]!r} and {rid!r}")

    net = TrafficNetwork(
        nodes=node_map,
        links=link_map,
        regions=region_map,
        _out={nid: tuple(edges) for nid, edges in out.items()},
    )
    _check_strongly_connected(net)
    return net


def _check_strongly_connected(net: TrafficNetwork):
    node_ids = list(net.nodes)
    if len(node_ids) < 2:
        return
    for origin in node_ids:
        reached = _reachable(net, origin)
        for target in node_ids:
            if target not in reached:
                raise DisconnectedGraph(origin, target)


def _reachable(net: TrafficNetwork, origin: str) -> set[str]:
    seen = {origin}
    stack = [origin]
    while stack:
        u = stack.pop()
        for v, _lid, _w in net.out_edges(u):
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return seen


def _dijkstra(net: TrafficNetwork, origin: str) -> dict[str, float]:
    """Minimum path length (km) from origin to every reachable node."""
    dist = {origin: 0.0}
    done = set()
    heap = [(0.0, origin)]
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        for v, _lid, w in net.out_edges(u):
            nd = d + w
            if v not in dist or nd < dist[v]:
                dist[v] = nd
                heapq.heappush(heap, (nd, v))
    return dist


def _tied(shorter: float, longer: float) -> bool:
    return abs(shorter - longer) <= _TIE_RTOL * max(1.0, abs(shorter), abs(longer))


def _shortest_dag(net: TrafficNetwork, dist: dict[str, float]):
    """Edges that lie on some shortest path: target -> [(pred, link_id)]."""
    preds: dict[str, list[tuple[str, str]]] = {v: [] for v in dist}
    for u, d in dist.items():
        for v, lid, w in net.out_edges(u):
            if v in dist and _tied(d + w, dist[v]):
                preds[v].append((u, lid))
    return preds


def _count_paths(origin: str, order: list[str], preds) -> dict[str, int]:
    """Number of distinct shortest paths from origin to each node."""
    counts = {origin: 1}
    for v in order:
        if v == origin:
            continue
        counts[v] = sum(counts.get(u, 0) for u, _lid in preds[v])
    return counts


def _origin_dag(net: TrafficNetwork, origin: str):
    """Shortest-path structure from one origin: (dist, predecessors, counts)."""
    dist = _dijkstra(net, origin)
    preds = _shortest_dag(net, dist)
    order = sorted(dist, key=lambda v: (dist[v], v))
    counts = _count_paths(origin, order, preds)
    return dist, preds, counts


def _sample_shortest(net: TrafficNetwork, origin: str, destination: str, rng: random.Random,
                     dag=None) -> Path:
    if dag is None:
        dag = _origin_dag(net, origin)
    dist, preds, counts = dag
    if destination not in dist:
        raise NoPath(f"no path from {origin!r} to {destination!r}")
    # Walk backwards from the destination, choosing each predecessor with
    # probability proportional to its shortest-path count: uniform over ties.
    link_ids: list[str] = []
    v = destination
    while v != origin:
        options = [(u, lid) for u, lid in sorted(preds[v]) if counts.get(u, 0) > 0]
        weights = [counts[u] for u, _lid in options]
        total = sum(weights)
        pick = rng.randrange(total)
        acc = 0
        for (u, lid), w in zip(options, weights):
            acc += w
            if pick < acc:
                link_ids.append(lid)
                v = u
                break
    link_ids.reverse()
    total_length = sum(net.links[lid].length_km for lid in link_ids)
    return Path(link_ids=tuple(link_ids), total_length=total_length)


def shortest_path(net: TrafficNetwork, origin: str, destination: str, tie_break_seed: int = 0) -> Path:
    """One minimum-length path from origin to destination.

    Ties are broken by sampling uniformly over all shortest paths with an RNG
    seeded by (seed, origin, destination), so the choice is stable per pair.
    """
    if origin not in net.nodes or destination not in net.nodes:
        raise NetworkError(f"unknown endpoint in pair ({origin!r}, {destination!r})")
    if origin == destination:
        raise NetworkError("origin equals destination")
    rng = random.Random(f"{tie_break_seed}|{origin}|{destination}")
    return _sample_shortest(net, origin, destination, rng)


def enumerate_od_pairs(net: TrafficNetwork, tie_break_seed: int = 0, k_paths: int = 1) -> list[OdPair]:
    """All ordered node pairs (r, s), r != s, each with its retained paths.

    With ``k_paths`` > 1 up to that many distinct minimum-length paths are
    retained (sampled without repetition among ties); route-choice portions
    then split demand across them.
    """
    pairs: list[OdPair] = []
    for origin in net.nodes:
        dag = _origin_dag(net, origin)
        for destination in net.nodes:
            if destination == origin:
                continue
            rng = random.Random(f"{tie_break_seed}|{origin}|{destination}")
            paths: list[Path] = []
            seen: set[tuple[str, ...]] = set()
            attempts = 0
            while len(paths) < k_paths and attempts < 8 * k_paths:
                cand = _sample_shortest(net, origin, destination, rng, dag)
                attempts += 1
                if cand.link_ids not in seen:
                    seen.add(cand.link_ids)
                    paths.append(cand)
            pairs.append(OdPair(origin=origin, destination=destination, paths=tuple(paths)))
    return pairs


def network_digest(net: TrafficNetwork) -> str:
    """Stable digest of the network structure, including the OD catalog."""
    payload = {
        "nodes": [(n.id, float(n.lat).hex(), float(n.lon).hex(), n.region_id)
                  for n in net.nodes.values()],
        "links": [(l.id, l.from_node, l.to_node, float(l.length_km).hex(),
                   list(l.sensor_ids)) for l in net.links.values()],
        "od": None if net.od_pairs is None else [
            (od.origin, od.destination, [list(p.link_ids) for p in od.paths])
            for od in net.od_pairs
        ],
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def region_flow_index(net: TrafficNetwork) -> dict[tuple[str, str], set[int]]:
    """Map (origin region, destination region) -> indices into the OD catalog."""
    od_pairs = net.require_od_pairs()
    index: dict[tuple[str, str], set[int]] = {}
    for i, od in enumerate(od_pairs):
        r = net.nodes[od.origin].region_id
        s = net.nodes[od.destination].region_id
        if r is None:
            raise UnassignedNode(f"node {od.origin!r} has no region")
        if s is None:
            raise UnassignedNode(f"node {od.destination!r} has no region")
        index.setdefault((r, s), set()).add(i)
    return index
