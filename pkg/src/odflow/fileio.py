"""Readers and writers for the toolkit's file formats.

Formats (all delimited files carry a header row):

* network file (JSON): ``nodes`` (id, lat, lon, region), ``links`` (id, from,
  to, length_km, sensors), ``regions`` (id, name).
* sensor file (CSV): ``sensor_id, timestamp, flow, speed`` with optional
  ``lat, lon`` columns; an empty field is a missing value.  Arterial sensor
  files must carry the position columns.
* income file (CSV): ``zipcode, income, population, district,
  overlap_fraction``.
* estimate file (CSV): per-variable rows ``origin, destination, path,
  interval, value`` followed by a ``#``-prefixed report footer.
* sweep file (CSV): one row per weight combination with the error columns.
* scenario bundle: a directory holding the network, sensor, arterial and
  ground-truth files plus ``scenario.json`` with the grid and parameters.
"""

from __future__ import annotations

import csv
import datetime as _dt
import json
from pathlib import Path as _P

import numpy as np

from .analysis import ZipcodeIncome
from .errors import OdflowError
from .grid import TimeGrid
from .ingest import ArterialSensor, SensorSeries
from .network import Link, Node, Region, TrafficNetwork, build_network
from .problem import VariableIndex
from .solver import ErrorReport, OdEstimate, SweepRow


class FileFormatError(OdflowError):
    pass


def _fmt(value: float) -> str:
    """Shortest decimal that round-trips the float64 exactly."""
    return repr(float(value))


# -- network ------------------------------------------------------------

def write_network(net: TrafficNetwork, path) -> None:
    payload = {
        "nodes": [
            {"id": n.id, "lat": n.lat, "lon": n.lon, "region": n.region_id}
            for n in net.nodes.values()
        ],
        "links": [
            {"id": l.id, "from": l.from_node, "to": l.to_node,
             "length_km": l.length_km, "sensors": list(l.sensor_ids)}
            for l in net.links.values()
        ],
        "regions": [{"id": r.id, "name": r.name} for r in net.regions.values()],
    }
    _P(path).write_text(json.dumps(payload, indent=1, sort_keys=True), encoding="utf-8")


def read_network(path) -> TrafficNetwork:
    try:
        payload = json.loads(_P(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{path}: not valid JSON: {exc}") from exc
    try:
        nodes = [Node(id=str(n["id"]), lat=float(n["lat"]), lon=float(n["lon"]),
                      region_id=None if n.get("region") is None else str(n["region"]))
                 for n in payload["nodes"]]
        links = [Link(id=str(l["id"]), from_node=str(l["from"]), to_node=str(l["to"]),
                      length_km=float(l["length_km"]),
                      sensor_ids=tuple(str(s) for s in l.get("sensors", ())))
                 for l in payload["links"]]
        regions = [Region(id=str(r["id"]), name=str(r.get("name", r["id"])))
                   for r in payload.get("regions", ())]
    except (KeyError, TypeError, ValueError) as exc:
        raise FileFormatError(f"{path}: malformed network file: {exc}") from exc
    return build_network(nodes, links, regions)


# -- sensors ------------------------------------------------------------

def write_sensor_csv(sensors, grid: TimeGrid, path, positions: bool = False) -> None:
    """One row per (sensor, interval); NaN becomes an empty field."""
    header = ["sensor_id", "timestamp", "flow", "speed"]
    if positions:
        header += ["lat", "lon"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for sid in sorted(sensors):
            series = sensors[sid]
            for t in range(grid.n_intervals):
                stamp = grid.timestamp_of(t).isoformat(sep=" ")
                row = [sid, stamp,
                       "" if np.isnan(series.flow[t]) else _fmt(series.flow[t]),
                       "" if np.isnan(series.speed[t]) else _fmt(series.speed[t])]
                if positions:
                    lat, lon = series.position if series.position else ("", "")
                    row += [lat if lat == "" else _fmt(lat), lon if lon == "" else _fmt(lon)]
                writer.writerow(row)


def read_sensor_csv(path, grid: TimeGrid) -> dict[str, SensorSeries]:
    """Sensor series on the grid; records outside the grid days are dropped."""
    flows: dict[str, np.ndarray] = {}
    speeds: dict[str, np.ndarray] = {}
    positions: dict[str, tuple[float, float] | None] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"sensor_id", "timestamp", "flow", "speed"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise FileFormatError(f"{path}: expected columns {sorted(required)}")
        for row in reader:
            sid = row["sensor_id"]
            t = grid.index_of(_parse_timestamp(path, row["timestamp"]))
            if t is None:
                continue
            if sid not in flows:
                flows[sid] = np.full(grid.n_intervals, np.nan)
                speeds[sid] = np.full(grid.n_intervals, np.nan)
                positions[sid] = None
            if row["flow"] != "":
                flows[sid][t] = float(row["flow"])
            if row["speed"] != "":
                speeds[sid][t] = float(row["speed"])
            if row.get("lat") and row.get("lon"):
                positions[sid] = (float(row["lat"]), float(row["lon"]))
    return {sid: SensorSeries(sensor_id=sid, flow=flows[sid], speed=speeds[sid],
                              position=positions[sid])
            for sid in flows}


def _parse_timestamp(path, text: str) -> _dt.datetime:
    try:
        return _dt.datetime.fromisoformat(text.strip())
    except ValueError as exc:
        raise FileFormatError(f"{path}: bad timestamp {text!r}") from exc


def read_arterial_csv(path, grid: TimeGrid) -> list[ArterialSensor]:
    """Arterial sensors need positions; flows are cleaned by the caller."""
    series = read_sensor_csv(path, grid)
    sensors = []
    for sid in sorted(series):
        s = series[sid]
        if s.position is None:
            raise FileFormatError(f"{path}: arterial sensor {sid!r} lacks lat/lon")
        flow = s.flow.copy()
        flow[flow < 0] = np.nan
        sensors.append(ArterialSensor(sensor_id=sid, lat=s.position[0],
                                      lon=s.position[1], flow=flow))
    return sensors


# -- income -------------------------------------------------------------

def read_income_csv(path) -> list[ZipcodeIncome]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        required = {"zipcode", "income", "population", "district", "overlap_fraction"}
        if reader.fieldnames is None or not required <= set(reader.fieldnames):
            raise FileFormatError(f"{path}: expected columns {sorted(required)}")
        for row in reader:
            rows.append(ZipcodeIncome(zipcode=row["zipcode"], income=float(row["income"]),
                                      population=float(row["population"]),
                                      district=row["district"],
                                      overlap_fraction=float(row["overlap_fraction"])))
    return rows


# -- estimates ----------------------------------------------------------

def write_estimate(estimate: OdEstimate, net: TrafficNetwork, path) -> None:
    """Per-variable rows plus the error report as a comment footer."""
    vi = estimate.var_index
    od_pairs = net.require_od_pairs()
    rep = estimate.report
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("origin,destination,path,interval,value\n")
        for col in range(vi.n_q):
            od, k, t = vi.decode_q(col)
            pair = od_pairs[od]
            fh.write(f"{pair.origin},{pair.destination},{k},{t},{_fmt(estimate.x[col])}\n")
        fh.write(f"# eps_b={_fmt(rep.eps_b)}\n")
        fh.write(f"# eps_s={_fmt(rep.eps_s)}\n")
        fh.write(f"# eps_lb={_fmt(rep.eps_lb)}\n")
        fh.write(f"# eps_tau={_fmt(rep.eps_tau)}\n")
        fh.write(f"# total_flow={_fmt(rep.total_flow)}\n")
        fh.write(f"# objective={_fmt(rep.objective)}\n")
        fh.write(f"# epochs_run={rep.epochs_run}\n")
        fh.write(f"# converged={rep.converged}\n")


def read_estimate(path, net: TrafficNetwork, grid: TimeGrid) -> OdEstimate:
    """Rebuild an estimate (q part only; slacks zero) from an estimate file."""
    od_pairs = net.require_od_pairs()
    vi = VariableIndex.for_network(net, grid)
    od_index = {(p.origin, p.destination): i for i, p in enumerate(od_pairs)}
    x = np.zeros(vi.n_cols)
    footer: dict[str, str] = {}
    n_rows = 0
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "origin,destination,path,interval,value":
            raise FileFormatError(f"{path}: unexpected header {header!r}")
        for line in fh:
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition("=")
                footer[key.strip()] = value.strip()
                continue
            origin, dest, k, t, value = line.rstrip("\n").split(",")
            od = od_index.get((origin, dest))
            if od is None:
                raise FileFormatError(f"{path}: unknown OD pair {origin}->{dest}")
            x[vi.q_col(od, int(k), int(t))] = float(value)
            n_rows += 1
    if n_rows != vi.n_q:
        raise FileFormatError(
            f"{path}: estimate covers {n_rows} of {vi.n_q} variables; "
            "it belongs to a different network or grid")
    report = ErrorReport(
        eps_b=float(footer.get("eps_b", "nan")),
        eps_s=float(footer.get("eps_s", "nan")),
        eps_lb=float(footer.get("eps_lb", "nan")),
        eps_tau=float(footer.get("eps_tau", "nan")),
        total_flow=float(footer.get("total_flow", "nan")),
        objective=float(footer.get("objective", "nan")),
        epochs_run=int(footer.get("epochs_run", "0")),
        converged=footer.get("converged", "False") == "True",
    )
    return OdEstimate(x=x, var_index=vi, report=report)


def write_sweep(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("beta,eta,gamma,eps_b,eps_s,eps_lb,total_flow\n")
        for r in rows:
            fh.write(f"{_fmt(r.beta)},{_fmt(r.eta)},{_fmt(r.gamma)},"
                     f"{_fmt(r.eps_b)},{_fmt(r.eps_s)},{_fmt(r.eps_lb)},"
                     f"{_fmt(r.total_flow)}\n")


def read_sweep(path) -> list[SweepRow]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            rows.append(SweepRow(beta=float(row["beta"]), eta=float(row["eta"]),
                                 gamma=float(row["gamma"]), eps_b=float(row["eps_b"]),
                                 eps_s=float(row["eps_s"]), eps_lb=float(row["eps_lb"]),
                                 total_flow=float(row["total_flow"])))
    return rows


# -- analysis outputs ---------------------------------------------------

def write_change_summary(summaries, path) -> None:
    """One row per interval in the year-over-year comparison table layout."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("interval,start_date,total_increased,significant_increased,"
                 "total_decreased,significant_decreased,excluded\n")
        for s in summaries:
            fh.write(f"{s.interval_index},{s.start_date.isoformat()},{s.total_increased},"
                     f"{s.significant_increased},{s.total_decreased},"
                     f"{s.significant_decreased},{s.excluded}\n")


def write_change_records(records, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("origin_region,dest_region,interval,interval_start,mean_ref,mean_new,"
                 "pct_change,t_stat,p_value,classification,min_income,max_income\n")
        for r in records:
            opt = lambda v: "" if v is None else _fmt(v)
            fh.write(f"{r.origin_region},{r.dest_region},{r.interval_index},"
                     f"{r.interval_start.isoformat()},{_fmt(r.mean_ref)},{_fmt(r.mean_new)},"
                     f"{opt(r.pct_change)},{opt(r.t_stat)},{opt(r.p_value)},"
                     f"{r.classification},{opt(r.min_income)},{opt(r.max_income)}\n")


def write_kde_curve(result, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("x,density\n")
        for x, d in zip(result.x, result.density):
            fh.write(f"{_fmt(x)},{_fmt(d)}\n")


# -- grids and scenario bundles ------------------------------------------

def write_grid(grid: TimeGrid, path) -> None:
    payload = {"interval_minutes": grid.interval_minutes,
               "days": [d.isoformat() for d in grid.day_labels]}
    _P(path).write_text(json.dumps(payload, indent=1), encoding="utf-8")


def read_grid(path) -> TimeGrid:
    payload = json.loads(_P(path).read_text(encoding="utf-8"))
    days = tuple(_dt.date.fromisoformat(d) for d in payload["days"])
    return TimeGrid(interval_minutes=int(payload["interval_minutes"]), day_labels=days)


def write_ground_truth(q: np.ndarray, vi: VariableIndex, net: TrafficNetwork, path) -> None:
    od_pairs = net.require_od_pairs()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("origin,destination,path,interval,value\n")
        for col in range(vi.n_q):
            od, k, t = vi.decode_q(col)
            pair = od_pairs[od]
            fh.write(f"{pair.origin},{pair.destination},{k},{t},{_fmt(q[col])}\n")


def read_ground_truth(path, net: TrafficNetwork, grid: TimeGrid) -> np.ndarray:
    est = read_estimate(path, net, grid)
    return est.q
