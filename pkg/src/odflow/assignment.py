"""Dynamic assignment ratios and route-choice portions.

The dynamic assignment ratio (DAR) for (od pair, path, link, t, t') is the
portion of flow departing within interval t' whose trip reaches the link
during interval t.  It is computed by tracing vehicle trajectories through
the per-interval speed profile: within an interval a vehicle moves at that
interval's link speed, and crossing an interval boundary switches speed.
Departure instants are sampled at stratum midpoints inside t', which makes
the ratio deterministic for a fixed sample count.

Two arrival semantics are supported:

* ``"entry"`` (default): the vehicle is assigned to the interval containing
  its entry onto the link, so over a full trip the ratios for each path link
  sum to exactly one.
* ``"occupancy"``: the vehicle counts toward every interval during which it
  is present on the link; ratios for one link may then sum above one.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import OdflowError
from .grid import TimeGrid
from .network import OdPair, Path, TrafficNetwork

DEFAULT_SAMPLES_PER_INTERVAL = 16


class AssignmentError(OdflowError):
    pass


@dataclass(frozen=True)
class SpeedProfile:
    """Per-link, per-interval speeds in km/h (complete after cleaning)."""

    link_ids: tuple[str, ...]
    speeds_kmh: np.ndarray  # shape (n_links, n_intervals)

    def __post_init__(self):
        object.__setattr__(self, "speeds_kmh", np.asarray(self.speeds_kmh, dtype=np.float64))
        if self.speeds_kmh.shape[0] != len(self.link_ids):
            raise ValueError("link id / speed row mismatch")
        if not (self.speeds_kmh > 0).all():
            raise ValueError("speed profile must be strictly positive everywhere")
        object.__setattr__(self, "_row", {lid: i for i, lid in enumerate(self.link_ids)})

    def speed(self, link_id: str, t: int) -> float:
        return float(self.speeds_kmh[self._row[link_id], t])

    @property
    def n_intervals(self) -> int:
        return self.speeds_kmh.shape[1]


def speed_profile_from_sensors(net: TrafficNetwork, sensors, grid: TimeGrid) -> SpeedProfile:
    """Average cleaned sensor speeds per link; sensorless links get the grid mean."""
    rows = np.zeros((len(net.links), grid.n_intervals))
    have = np.zeros(len(net.links), dtype=bool)
    for i, link in enumerate(net.links.values()):
        series = [sensors[sid].speed for sid in link.sensor_ids if sid in sensors]
        if series:
            rows[i] = np.mean(series, axis=0)
            have[i] = True
    if not have.any():
        raise AssignmentError("no link has speed data")
    fallback = rows[have].mean(axis=0)
    rows[~have] = fallback
    return SpeedProfile(link_ids=tuple(net.links), speeds_kmh=rows)


def constant_speed_profile(net: TrafficNetwork, grid: TimeGrid, speed_kmh: float) -> SpeedProfile:
    rows = np.full((len(net.links), grid.n_intervals), float(speed_kmh))
    return SpeedProfile(link_ids=tuple(net.links), speeds_kmh=rows)


@dataclass(frozen=True)
class Trajectory:
    """Continuous per-link (entry, exit) times in minutes from grid start."""

    spans: tuple[tuple[float, float], ...]
    truncated: bool


def trajectory(path: Path, departure_minutes: float, profile: SpeedProfile,
               grid: TimeGrid, net: TrafficNetwork) -> Trajectory:
    """Trace one vehicle departing at ``departure_minutes`` along the path.

    Beyond the grid end the last interval's speed is reused so exit times stay
    defined; the trajectory is then flagged truncated.
    """
    if not 0.0 <= departure_minutes < grid.total_minutes:
        raise ValueError(f"departure {departure_minutes} outside grid")
    delta = float(grid.interval_minutes)
    end = grid.total_minutes
    tau = float(departure_minutes)
    spans = []
    for lid in path.link_ids:
        remaining = net.links[lid].length_km
        entry = tau
        while remaining > 0:
            interval = min(int(tau // delta), grid.n_intervals - 1)
            v_per_min = profile.speed(lid, interval) / 60.0
            boundary = (interval + 1) * delta
            if tau >= end:
                # past the grid: finish the link at the final interval's speed
                tau += remaining / v_per_min
                remaining = 0.0
                break
            available = (boundary - tau) * v_per_min
            if available >= remaining:
                tau += remaining / v_per_min
                remaining = 0.0
            else:
                remaining -= available
                tau = boundary
        spans.append((entry, tau))
    return Trajectory(spans=tuple(spans), truncated=tau > end)


def _departure_samples(t_prime: int, delta: float, samples: int) -> np.ndarray:
    """Midpoint-stratified departure instants inside interval t'."""
    offsets = (np.arange(samples) + 0.5) / samples
    return (t_prime + offsets) * delta


def _occupied_intervals(entry: float, exit_: float, delta: float, n_intervals: int, mode: str):
    """Grid intervals a link visit [entry, exit) is attributed to."""
    first = int(entry // delta)
    if mode == "entry":
        return [first] if first < n_intervals else []
    last = int(exit_ // delta)
    if exit_ > entry and exit_ == last * delta:
        last -= 1  # [entry, exit) is open at exit
    return [t for t in range(first, last + 1) if t < n_intervals]


def path_arrival_ratios(net: TrafficNetwork, path: Path, t_prime: int,
                        profile: SpeedProfile, grid: TimeGrid,
                        samples_per_interval: int = DEFAULT_SAMPLES_PER_INTERVAL,
                        mode: str = "entry") -> dict[tuple[str, int], float]:
    """All DAR entries for one (path, departure interval): {(link, t): ratio}.

    One trajectory per departure sample covers every link of the path, so
    querying the whole interval row here costs the same as a single ratio.
    """
    if samples_per_interval < 1:
        raise ValueError("samples_per_interval must be >= 1")
    delta = float(grid.interval_minutes)
    hits: dict[tuple[str, int], float] = {}
    weight = 1.0 / samples_per_interval
    for departure in _departure_samples(t_prime, delta, samples_per_interval):
        traj = trajectory(path, departure, profile, grid, net)
        for lid, (entry, exit_) in zip(path.link_ids, traj.spans):
            for t in _occupied_intervals(entry, exit_, delta, grid.n_intervals, mode):
                hits[(lid, t)] = hits.get((lid, t), 0.0) + weight
    return hits


def compute_dar(net: TrafficNetwork, od_pair: OdPair, path: Path, link_id: str,
                t: int, t_prime: int, profile: SpeedProfile, grid: TimeGrid,
                samples_per_interval: int = DEFAULT_SAMPLES_PER_INTERVAL,
                mode: str = "entry") -> float:
    """Portion of flow departing in t' that reaches ``link_id`` during t."""
    if link_id not in path.link_ids:
        return 0.0
    hits = path_arrival_ratios(net, path, t_prime, profile, grid,
                               samples_per_interval, mode)
    return hits.get((link_id, t), 0.0)


@dataclass
class DarTensor:
    """Sparse DAR entries keyed (od index, path index, link id, t, t')."""

    entries: dict[tuple[int, int, str, int, int], float] = field(default_factory=dict)

    def get(self, od: int, k: int, link_id: str, t: int, t_prime: int) -> float:
        return self.entries.get((od, k, link_id, t, t_prime), 0.0)

    def __len__(self) -> int:
        return len(self.entries)

    def items(self):
        return self.entries.items()


def build_dar_tensor(net: TrafficNetwork, od_pairs, profile: SpeedProfile, grid: TimeGrid,
                     samples_per_interval: int = DEFAULT_SAMPLES_PER_INTERVAL,
                     mode: str = "entry") -> DarTensor:
    """DAR for every (od pair, retained path, departure interval)."""
    if mode not in ("entry", "occupancy"):
        raise ValueError(f"unknown DAR mode {mode!r}")
    tensor = DarTensor()
    for od_idx, od in enumerate(od_pairs):
        for k, path in enumerate(od.paths):
            for t_prime in range(grid.n_intervals):
                hits = path_arrival_ratios(net, path, t_prime, profile, grid,
                                           samples_per_interval, mode)
                for (lid, t), ratio in hits.items():
                    tensor.entries[(od_idx, k, lid, t, t_prime)] = ratio
    return tensor


@dataclass(frozen=True)
class RouteChoice:
    """Per-path probabilities, constant over intervals for the supported modes."""

    portions: tuple[tuple[float, ...], ...]  # per od pair

    def portion(self, od: int, k: int, t: int) -> float:
        return self.portions[od][k]


def route_choice_portions(od_pair: OdPair, interval: int, mode: str = "single") -> tuple[float, ...]:
    """Path-selection probabilities for one OD pair at one interval.

    ``single`` puts all demand on the first retained path; ``uniform`` splits
    it equally over the retained shortest paths.
    """
    n = len(od_pair.paths)
    if mode == "single":
        return (1.0,) + (0.0,) * (n - 1)
    if mode == "uniform":
        return (1.0 / n,) * n
    raise ValueError(f"unknown route-choice mode {mode!r}")


def build_route_choice(od_pairs, mode: str = "single") -> RouteChoice:
    return RouteChoice(portions=tuple(route_choice_portions(od, 0, mode) for od in od_pairs))


def dar_cache_key(net: TrafficNetwork, profile: SpeedProfile, grid: TimeGrid,
                  samples_per_interval: int, mode: str) -> str:
    """Digest identifying a DAR computation for cache reuse."""
    payload = {
        "links": [(l.id, l.from_node, l.to_node, float(l.length_km).hex())
                  for l in net.links.values()],
        "od": None if net.od_pairs is None else [
            (od.origin, od.destination, [list(p.link_ids) for p in od.paths])
            for od in net.od_pairs
        ],
        "speeds": hashlib.sha256(np.ascontiguousarray(profile.speeds_kmh).tobytes()).hexdigest(),
        "grid": [grid.interval_minutes, [d.isoformat() for d in grid.day_labels]],
        "samples": samples_per_interval,
        "mode": mode,
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()


def save_dar(tensor: DarTensor, path) -> None:
    """Write sparse triplets ``row_key, col_key, value`` (value as float hex)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("row_key,col_key,value\n")
        for (od, k, lid, t, t_prime), ratio in sorted(tensor.entries.items()):
            fh.write(f"{od}:{k}:{lid}:{t},{t_prime},{ratio.hex()}\n")


def load_dar(path) -> DarTensor:
    tensor = DarTensor()
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if header.strip() != "row_key,col_key,value":
            raise AssignmentError(f"not a DAR cache file: {path}")
        for line in fh:
            row_key, col_key, value = line.rstrip("\n").split(",")
            od, k, lid, t = row_key.split(":")
            tensor.entries[(int(od), int(k), lid, int(t), int(col_key))] = float.fromhex(value)
    return tensor
