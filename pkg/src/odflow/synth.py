"""Synthetic ground-truth scenarios and forward simulation.

A scenario carries a network with one mid-link sensor per link, a known
nonnegative demand vector, a speed profile, and arterial sensors placed at
the nodes.  Daily demand follows a base level plus two Gaussian peaks (about
7:00 and 17:00) scaled per OD pair by a seeded random factor.  Forward
simulation pushes the demand through the observation matrix and then inverts
the flow-density relation so that running the ingest path on the synthesized
sensor records reproduces the simulated link flows.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .assignment import RouteChoice, constant_speed_profile
from .grid import TimeGrid
from .ingest import ArterialSensor, LinkFlows, SensorSeries
from .network import Link, Node, Region, TrafficNetwork, build_network, enumerate_od_pairs
from .problem import VariableIndex, assemble_base


def demo_network(n_nodes: int = 4, ring_km: float = 30.0) -> TrafficNetwork:
    """Small two-region ring network for demos and quick starts.

    Nodes sit on a circle of the given circumference; each adjacent pair is
    joined by one link per direction, so the graph is strongly connected.
    """
    if n_nodes < 2:
        raise ValueError("demo network needs at least two nodes")
    base_lat, base_lon = 34.05, -118.25
    radius_deg = (ring_km / (2 * math.pi)) / 111.0  # ~1 deg latitude per 111 km
    nodes = []
    for i in range(n_nodes):
        angle = 2 * math.pi * i / n_nodes
        region = "R1" if i < (n_nodes + 1) // 2 else "R2"
        nodes.append(Node(id=f"n{i}", lat=base_lat + radius_deg * math.sin(angle),
                          lon=base_lon + radius_deg * math.cos(angle), region_id=region))
    seg_km = ring_km / n_nodes
    links = []
    for i in range(n_nodes):
        j = (i + 1) % n_nodes
        links.append(Link(id=f"l{i}f", from_node=f"n{i}", to_node=f"n{j}", length_km=seg_km))
        links.append(Link(id=f"l{i}r", from_node=f"n{j}", to_node=f"n{i}", length_km=seg_km))
    regions = [Region(id="R1", name="demo west"), Region(id="R2", name="demo east")]
    return build_network(nodes, links, regions)


@dataclass(frozen=True)
class ProfileParams:
    """Shape of the generated daily demand curve."""

    base_level: float = 2.0
    am_peak: float = 10.0
    pm_peak: float = 8.0
    peak_width_minutes: float = 90.0
    am_center_minutes: float = 7 * 60.0
    pm_center_minutes: float = 17 * 60.0
    od_scale_sigma: float = 0.25
    symmetric: bool = False
    speed_kmh: float = 60.0
    arterial_factor: float = 0.5


@dataclass(frozen=True)
class Scenario:
    network: TrafficNetwork
    grid: TimeGrid
    ground_truth_q: np.ndarray
    speed_profile: object
    arterial_sensors: tuple[ArterialSensor, ...]
    seed: int
    params: ProfileParams = field(default=ProfileParams())

    def __post_init__(self):
        q = np.asarray(self.ground_truth_q, dtype=np.float64)
        if (q < 0).any():
            raise ValueError("ground truth demand must be nonnegative")
        vi = VariableIndex.for_network(self.network, self.grid)
        if q.shape != (vi.n_q,):
            raise ValueError(f"ground truth length {q.shape} != ({vi.n_q},)")
        object.__setattr__(self, "ground_truth_q", q)

    @property
    def var_index(self) -> VariableIndex:
        return VariableIndex.for_network(self.network, self.grid)


def _ensure_sensors(net: TrafficNetwork) -> TrafficNetwork:
    """Give every sensorless link one synthetic mid-link sensor id."""
    if all(link.sensor_ids for link in net.links.values()):
        return net
    links = [link if link.sensor_ids else dataclasses.replace(link, sensor_ids=(f"s_{link.id}",))
             for link in net.links.values()]
    rebuilt = build_network(net.nodes.values(), links, net.regions.values())
    if net.od_pairs is not None:
        rebuilt = rebuilt.with_od_pairs(net.od_pairs)
    return rebuilt


def _daily_curve(grid: TimeGrid, params: ProfileParams) -> np.ndarray:
    """Demand per within-day interval, evaluated at interval start minutes."""
    minutes = np.arange(grid.intervals_per_day) * grid.interval_minutes
    width2 = 2.0 * params.peak_width_minutes ** 2
    curve = np.full(minutes.shape, params.base_level, dtype=np.float64)
    curve += params.am_peak * np.exp(-((minutes - params.am_center_minutes) ** 2) / width2)
    curve += params.pm_peak * np.exp(-((minutes - params.pm_center_minutes) ** 2) / width2)
    return curve


def generate_scenario(network: TrafficNetwork, grid: TimeGrid,
                      params: ProfileParams = ProfileParams(), seed: int = 0) -> Scenario:
    """Seeded scenario with two-peak daily demand and node arterial sensors.

    In symmetric mode each pair's reversed direction is rescaled day by day so
    the two daily totals match exactly.
    """
    net = _ensure_sensors(network)
    if net.od_pairs is None:
        net = net.with_od_pairs(enumerate_od_pairs(net, tie_break_seed=seed))
    vi = VariableIndex.for_network(net, grid)
    rng = np.random.default_rng(seed)
    curve = _daily_curve(grid, params)
    day_curve = np.tile(curve, grid.n_days)

    od_pairs = net.od_pairs
    q = np.zeros(vi.n_q)
    scales = {od_idx: float(rng.lognormal(0.0, params.od_scale_sigma))
              for od_idx in range(len(od_pairs))}
    for od_idx in range(len(od_pairs)):
        series = scales[od_idx] * day_curve
        for t in range(grid.n_intervals):
            q[vi.q_col(od_idx, 0, t)] = series[t]

    if params.symmetric:
        reverse = {(od.origin, od.destination): i for i, od in enumerate(od_pairs)}
        for i, od in enumerate(od_pairs):
            j = reverse.get((od.destination, od.origin))
            if j is None or j <= i:
                continue
            for d in range(grid.n_days):
                ts = grid.day_intervals(d)
                fwd = sum(q[vi.q_col(i, 0, t)] for t in ts)
                rev = sum(q[vi.q_col(j, 0, t)] for t in ts)
                if rev > 0:
                    factor = fwd / rev
                    for t in ts:
                        q[vi.q_col(j, 0, t)] *= factor
                else:
                    for t in ts:
                        q[vi.q_col(j, 0, t)] = q[vi.q_col(i, 0, t)]

    profile = constant_speed_profile(net, grid, params.speed_kmh)
    arterials = _node_arterials(net, grid, vi, q, params.arterial_factor)
    return Scenario(network=net, grid=grid, ground_truth_q=q, speed_profile=profile,
                    arterial_sensors=arterials, seed=seed, params=params)


def _node_arterials(net: TrafficNetwork, grid: TimeGrid, vi: VariableIndex,
                    q: np.ndarray, factor: float) -> tuple[ArterialSensor, ...]:
    """One arterial sensor per node carrying a share of its start/end demand."""
    totals = {nid: np.zeros(grid.n_intervals) for nid in net.nodes}
    for od_idx, od in enumerate(net.od_pairs):
        for k in range(len(od.paths)):
            cols = [vi.q_col(od_idx, k, t) for t in range(grid.n_intervals)]
            flows = q[cols]
            totals[od.origin] += flows
            totals[od.destination] += flows
    sensors = []
    for nid, node in net.nodes.items():
        sensors.append(ArterialSensor(sensor_id=f"a_{nid}", lat=node.lat, lon=node.lon,
                                      flow=factor * totals[nid]))
    return tuple(sensors)


def forward_simulate(scenario: Scenario, dar, route_choice: RouteChoice,
                     noise_sigma: float = 0.0, noise_seed: int = 0
                     ) -> tuple[LinkFlows, dict[str, SensorSeries]]:
    """Exact link flows A_b q plus sensor records that reproduce them.

    Each link carries one synthetic sensor; its flow is the link flow times
    speed over link length, so the ingest flow-density computation inverts
    back to the simulated value.  With ``noise_sigma`` > 0 sensor flows are
    multiplied by seeded lognormal factors (median one); speeds stay exact.
    """
    net = scenario.network
    grid = scenario.grid
    vi = scenario.var_index
    placeholder = LinkFlows(link_ids=tuple(net.links),
                            values=np.zeros((len(net.links), grid.n_intervals)))
    block = assemble_base(net, dar, route_choice, placeholder, vi)
    x_full = np.concatenate([scenario.ground_truth_q, np.zeros(vi.n_slack)])
    y = np.asarray(block.matrix @ x_full).reshape(grid.n_intervals, len(net.links)).T
    flows = LinkFlows(link_ids=tuple(net.links), values=y)

    rng = np.random.default_rng(noise_seed)
    speeds = scenario.speed_profile
    sensors: dict[str, SensorSeries] = {}
    for i, (lid, link) in enumerate(net.links.items()):
        sid = link.sensor_ids[0]
        v = speeds.speeds_kmh[list(speeds.link_ids).index(lid)]
        f = y[i] * v / link.length_km
        if noise_sigma > 0:
            f = f * rng.lognormal(0.0, noise_sigma, size=f.shape)
        a, b = net.nodes[link.from_node], net.nodes[link.to_node]
        position = ((a.lat + b.lat) / 2.0, (a.lon + b.lon) / 2.0)
        sensors[sid] = SensorSeries(sensor_id=sid, flow=f, speed=v.copy(), position=position)
    return flows, sensors
