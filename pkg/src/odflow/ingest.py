"""Sensor series cleaning, per-link observed flows and local-road lower bounds.

Raw sensor records carry vehicle counts per interval and flow-weighted average
speeds.  Cleaning marks obviously bad values (negative flow, non-positive or
implausibly high speed) as missing and fills every gap by linear interpolation
over the interval index; leading/trailing gaps take the nearest observed value.
Observed link flow is the average flow density of the link's sensors times the
link length.  The local-road lower bound for a node sums arterial sensor flow
within a radius around it, discounted by alpha.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import OdflowError
from .geo import chain_length_km, haversine_km
from .grid import TimeGrid
from .network import Link, TrafficNetwork

log = logging.getLogger(__name__)

DEFAULT_SPEED_CAP_KMH = 160.0
DEFAULT_MAX_GAP_INTERVALS = 12


class IngestError(OdflowError):
    pass


class AllMissing(IngestError):
    """A series has no observed values to interpolate from."""


class NoSensorsOnLink(IngestError):
    pass


class ZeroSpeed(IngestError):
    """A non-positive speed survived cleaning; the input data is bad."""


@dataclass
class SensorSeries:
    """Flow/speed time series for one sensor on the shared grid (NaN = missing)."""

    sensor_id: str
    flow: np.ndarray
    speed: np.ndarray
    position: tuple[float, float] | None = None  # (lat, lon)

    def __post_init__(self):
        self.flow = np.asarray(self.flow, dtype=np.float64)
        self.speed = np.asarray(self.speed, dtype=np.float64)
        if self.flow.shape != self.speed.shape:
            raise ValueError(f"sensor {self.sensor_id}: flow/speed length mismatch")


@dataclass
class ArterialSensor:
    """Local-road sensor feeding the lower-bound term."""

    sensor_id: str
    lat: float
    lon: float
    flow: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.flow = np.asarray(self.flow, dtype=np.float64)


def interpolate_missing(series) -> np.ndarray:
    """Fill NaNs linearly over the index; edges take the nearest observation."""
    values = np.asarray(series, dtype=np.float64)
    present = np.isfinite(values)
    if not present.any():
        raise AllMissing("series has no observed values")
    if present.all():
        return values.copy()
    idx = np.arange(values.size)
    # np.interp is linear between neighbours and constant beyond the ends.
    return np.interp(idx, idx[present], values[present])


def clean_series(series: SensorSeries, speed_cap_kmh: float = DEFAULT_SPEED_CAP_KMH,
                 max_gap: int = DEFAULT_MAX_GAP_INTERVALS) -> SensorSeries:
    """Mark invalid values missing, warn on long gaps, interpolate everything."""
    flow = series.flow.copy()
    speed = series.speed.copy()
    flow[flow < 0] = np.nan
    speed[(speed <= 0) | (speed > speed_cap_kmh)] = np.nan
    for name, arr in (("flow", flow), ("speed", speed)):
        gap = _longest_gap(arr)
        if gap > max_gap:
            log.warning("sensor %s: %s gap of %d intervals exceeds %d, interpolating anyway",
                        series.sensor_id, name, gap, max_gap)
    return SensorSeries(
        sensor_id=series.sensor_id,
        flow=interpolate_missing(flow),
        speed=interpolate_missing(speed),
        position=series.position,
    )


def _longest_gap(values: np.ndarray) -> int:
    longest = run = 0
    for missing in np.isnan(values):
        run = run + 1 if missing else 0
        longest = max(longest, run)
    return longest


def clean_sensors(sensors, speed_cap_kmh: float = DEFAULT_SPEED_CAP_KMH,
                  max_gap: int = DEFAULT_MAX_GAP_INTERVALS) -> dict[str, SensorSeries]:
    return {sid: clean_series(s, speed_cap_kmh, max_gap) for sid, s in sensors.items()}


def effective_link_length_km(link: Link, sensors) -> float:
    """Sensor-spacing chain length for the link, or the link length as fallback.

    The chain is the great-circle polyline through the link's sensors in
    declared order; it needs at least two positioned sensors.
    """
    points = []
    for sid in link.sensor_ids:
        series = sensors.get(sid)
        if series is not None and series.position is not None:
            points.append(series.position)
    if len(points) >= 2:
        return chain_length_km(points)
    return link.length_km


def link_flow(link: Link, sensors, t: int, length_km: float | None = None) -> float:
    """Observed vehicle quantity on the link during interval ``t``.

    Average flow density over the link's sensors times the link length:
    sum over sensors of flow / (n_sensors * speed), scaled by length.
    """
    series = [sensors[sid] for sid in link.sensor_ids if sid in sensors]
    if not series:
        raise NoSensorsOnLink(f"link {link.id!r} has no sensor data")
    if length_km is None:
        length_km = effective_link_length_km(link, sensors)
    n = len(series)
    total = 0.0
    for s in series:
        v = s.speed[t]
        if not v > 0:
            raise ZeroSpeed(f"sensor {s.sensor_id!r} has speed {v} at interval {t}")
        total += s.flow[t] / (n * v)
    return total * length_km


@dataclass(frozen=True)
class LinkFlows:
    """Observed flows y for a set of links over the whole grid."""

    link_ids: tuple[str, ...]
    values: np.ndarray  # shape (n_links, n_intervals)

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        if self.values.shape[0] != len(self.link_ids):
            raise ValueError("link id / value row mismatch")


def link_flows(net: TrafficNetwork, sensors, grid: TimeGrid) -> LinkFlows:
    """Per-interval observed flow for every link that has sensor data."""
    ids = []
    rows = []
    for lid, link in net.links.items():
        if not any(sid in sensors for sid in link.sensor_ids):
            continue
        length = effective_link_length_km(link, sensors)
        rows.append([link_flow(link, sensors, t, length) for t in range(grid.n_intervals)])
        ids.append(lid)
    if not ids:
        raise NoSensorsOnLink("no link has sensor data")
    return LinkFlows(link_ids=tuple(ids), values=np.array(rows, dtype=np.float64))


def local_lower_bound(node, arterial_sensors, t: int, lambda_km: float, alpha: float) -> float:
    """alpha times total arterial flow within ``lambda_km`` of the node at ``t``.

    The radius is a closed ball: a sensor exactly at distance lambda counts.
    An empty neighbourhood contributes zero.
    """
    if lambda_km <= 0:
        raise ValueError(f"lambda_km must be positive, got {lambda_km}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    total = 0.0
    for sensor in arterial_sensors:
        if haversine_km(node.lat, node.lon, sensor.lat, sensor.lon) <= lambda_km:
            total += float(sensor.flow[t])
    return alpha * total


def lower_bounds(net: TrafficNetwork, arterial_sensors, grid: TimeGrid,
                 lambda_km: float = 1.0, alpha: float = 0.5) -> np.ndarray:
    """alpha-discounted lower-bound matrix, shape (n_nodes, n_intervals)."""
    sensors = list(arterial_sensors)
    out = np.zeros((len(net.nodes), grid.n_intervals))
    for i, node in enumerate(net.nodes.values()):
        nearby = [s for s in sensors
                  if haversine_km(node.lat, node.lon, s.lat, s.lon) <= lambda_km]
        if nearby:
            out[i] = alpha * np.sum([s.flow[: grid.n_intervals] for s in nearby], axis=0)
    return out


def rebin_series(series: SensorSeries, factor: int) -> SensorSeries:
    """Coarsen a cleaned series: sum flows, flow-weighted mean speeds."""
    if factor < 1 or series.flow.size % factor != 0:
        raise ValueError(f"cannot rebin {series.flow.size} intervals by {factor}")
    flow = series.flow.reshape(-1, factor)
    speed = series.speed.reshape(-1, factor)
    binned_flow = flow.sum(axis=1)
    weights = np.where(flow.sum(axis=1, keepdims=True) > 0, flow, 1.0)
    binned_speed = (speed * weights).sum(axis=1) / weights.sum(axis=1)
    return SensorSeries(sensor_id=series.sensor_id, flow=binned_flow,
                        speed=binned_speed, position=series.position)
