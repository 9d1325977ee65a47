"""Command-line pipeline: ingest -> assemble -> solve -> analyze.

Commands
--------
* ``estimate``: run the two-stage estimation from a config file; writes the
  base and extended estimate files, an error report, and a demand figure.
* ``sweep``: solve the extended model over a grid of (beta, eta, gamma)
  weights; writes the sweep table and a trend figure.
* ``synth``: generate a synthetic scenario bundle (network, sensors,
  arterial sensors, ground truth, ready-to-run config).
* ``analyze``: compare two estimate runs (reference vs. comparison period):
  interval change summary, per-OD records, optional income join and KDE
  curves with figures.
* ``validate-network``: parse and validate a network file.

Configuration is a JSON file; command-line flags override file values.
All outputs are deterministic for a fixed config and seed.
"""

from __future__ import annotations

import dataclasses
import datetime as _dt
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

import click
import numpy as np

from . import analysis, assignment, fileio, ingest, report, synth
from .errors import OdflowError
from .grid import TimeGrid, make_grid
from .network import enumerate_od_pairs, region_flow_index
from .solver import ProblemInputs, SolverOptions, Weights, two_stage_estimate, weight_sweep

DEFAULT_ALPHA = 0.5
DEFAULT_LAMBDA_KM = 1.0
DEFAULT_ETA = 1.0
DEFAULT_BETA = 10.0
DEFAULT_GAMMA = 1.0
DEFAULT_INTERVAL_MINUTES = 5


@dataclass
class RunConfig:
    """Resolved estimation run configuration (defaults follow the toolkit docs)."""

    network: str = ""
    sensors: str = ""
    arterial_sensors: str | None = None
    income: str | None = None
    output_dir: str = "out"
    interval_minutes: int = DEFAULT_INTERVAL_MINUTES
    days: list[str] = field(default_factory=list)
    rebin_minutes: int | None = None
    alpha: float = DEFAULT_ALPHA
    lambda_km: float = DEFAULT_LAMBDA_KM
    eta: float = DEFAULT_ETA
    beta: float = DEFAULT_BETA
    gamma: float = DEFAULT_GAMMA
    seed: int = 0
    k_paths: int = 1
    route_mode: str = "single"
    samples_per_interval: int = assignment.DEFAULT_SAMPLES_PER_INTERVAL
    dar_mode: str = "entry"
    dar_cache: str | None = None
    figures: bool = True
    emit_cleaned: bool = False
    solver: dict = field(default_factory=dict)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
        grid_spec = raw.pop("grid", {})
        cfg = cls()
        for key, value in raw.items():
            if not hasattr(cfg, key):
                raise click.ClickException(f"unknown config key {key!r}")
            setattr(cfg, key, value)
        if "days" in grid_spec:
            cfg.days = list(grid_spec["days"])
        elif "start_day" in grid_spec:
            cfg.days = [d.isoformat() for d in
                        make_grid(int(grid_spec.get("interval_minutes",
                                                    cfg.interval_minutes)),
                                  grid_spec["start_day"],
                                  int(grid_spec.get("n_days", 1))).day_labels]
        if "interval_minutes" in grid_spec:
            cfg.interval_minutes = int(grid_spec["interval_minutes"])
        return cfg

    def grid(self) -> TimeGrid:
        if not self.days:
            raise click.ClickException("config must declare grid days")
        days = tuple(_dt.date.fromisoformat(d) for d in self.days)
        return TimeGrid(interval_minutes=self.interval_minutes, day_labels=days)

    def solver_options(self) -> SolverOptions:
        try:
            return SolverOptions(seed=self.seed, **self.solver)
        except (TypeError, ValueError) as exc:
            raise click.ClickException(f"bad solver options: {exc}") from exc

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=1, sort_keys=True)


def _apply_overrides(cfg: RunConfig, **overrides):
    for key, value in overrides.items():
        if value is not None:
            setattr(cfg, key, value)


def _prepare_inputs(cfg: RunConfig):
    """Shared ingest/assignment stage used by estimate and sweep."""
    grid = cfg.grid()
    net = fileio.read_network(cfg.network)
    net = net.with_od_pairs(enumerate_od_pairs(net, tie_break_seed=cfg.seed,
                                               k_paths=cfg.k_paths))
    sensors = fileio.read_sensor_csv(cfg.sensors, grid)
    if cfg.rebin_minutes:
        factor = cfg.rebin_minutes // grid.interval_minutes
        if factor * grid.interval_minutes != cfg.rebin_minutes:
            raise click.ClickException("rebin_minutes must be a multiple of interval_minutes")
        grid = TimeGrid(interval_minutes=cfg.rebin_minutes, day_labels=grid.day_labels)
        sensors = {sid: ingest.rebin_series(ingest.clean_series(s), factor)
                   for sid, s in sensors.items()}
    cleaned = ingest.clean_sensors(sensors)
    flows = ingest.link_flows(net, cleaned, grid)
    profile = assignment.speed_profile_from_sensors(net, cleaned, grid)
    if cfg.arterial_sensors:
        arterials = fileio.read_arterial_csv(cfg.arterial_sensors, grid)
        arterials = [dataclasses.replace(a, flow=ingest.interpolate_missing(a.flow))
                     for a in arterials]
    else:
        arterials = []
    bounds = ingest.lower_bounds(net, arterials, grid, cfg.lambda_km, cfg.alpha)
    dar = _dar_with_cache(cfg, net, profile, grid)
    route_choice = assignment.build_route_choice(net.od_pairs, cfg.route_mode)
    inputs = ProblemInputs(network=net, grid=grid, dar=dar, route_choice=route_choice,
                           link_flows=flows, lower_bounds=bounds)
    return inputs, cleaned


def _dar_with_cache(cfg: RunConfig, net, profile, grid):
    if cfg.dar_cache:
        key = assignment.dar_cache_key(net, profile, grid, cfg.samples_per_interval,
                                       cfg.dar_mode)
        cache_path = Path(cfg.dar_cache) / f"dar_{key}.csv"
        if cache_path.exists():
            return assignment.load_dar(cache_path)
        dar = assignment.build_dar_tensor(net, net.od_pairs, profile, grid,
                                          cfg.samples_per_interval, cfg.dar_mode)
        cache_path.parent.mkdir(parents=True, exist_ok=True)
        assignment.save_dar(dar, cache_path)
        return dar
    return assignment.build_dar_tensor(net, net.od_pairs, profile, grid,
                                       cfg.samples_per_interval, cfg.dar_mode)


def run_estimate(cfg: RunConfig) -> Path:
    """Full two-stage pipeline; returns the output directory."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    inputs, cleaned = _prepare_inputs(cfg)
    weights = Weights(eta=cfg.eta, beta=cfg.beta, gamma=cfg.gamma)
    base_est, ext_est = two_stage_estimate(
        inputs.network, inputs.grid, inputs.dar, inputs.route_choice,
        inputs.link_flows, inputs.lower_bounds, weights, cfg.solver_options())
    fileio.write_estimate(base_est, inputs.network, out / "base_estimate.csv")
    fileio.write_estimate(ext_est, inputs.network, out / "extended_estimate.csv")
    fileio.write_grid(inputs.grid, out / "grid.json")
    (out / "run_config.json").write_text(cfg.to_json(), encoding="utf-8")
    with open(out / "error_report.csv", "w", encoding="utf-8") as fh:
        fh.write("stage,eps_b,eps_s,eps_lb,eps_tau,total_flow,objective,"
                 "epochs_run,converged\n")
        for stage, est in (("base", base_est), ("extended", ext_est)):
            r = est.report
            fh.write(f"{stage},{r.eps_b!r},{r.eps_s!r},{r.eps_lb!r},{r.eps_tau!r},"
                     f"{r.total_flow!r},{r.objective!r},{r.epochs_run},{r.converged}\n")
    if cfg.emit_cleaned:
        fileio.write_sensor_csv(cleaned, inputs.grid, out / "cleaned_sensors.csv",
                                positions=True)
    if cfg.figures:
        report.save_demand_profile(ext_est, inputs.grid, out / "demand_profile.png")
    return out


@click.group()
def main():
    """Dynamic origin-destination flow estimation toolkit."""


_config_option = click.option("--config", "-c", type=click.Path(exists=True),
                              required=True, help="JSON run configuration.")


@main.command()
@_config_option
@click.option("--output-dir", "-o", type=click.Path(), default=None)
@click.option("--alpha", type=float, default=None)
@click.option("--beta", type=float, default=None)
@click.option("--eta", type=float, default=None)
@click.option("--gamma", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--figures/--no-figures", default=None)
def estimate(config, output_dir, alpha, beta, eta, gamma, seed, figures):
    """Run the two-stage OD estimation pipeline."""
    cfg = RunConfig.from_file(config)
    _apply_overrides(cfg, output_dir=output_dir, alpha=alpha, beta=beta, eta=eta,
                     gamma=gamma, seed=seed, figures=figures)
    try:
        out = run_estimate(cfg)
    except OdflowError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"estimate written to {out}")


@main.command()
@_config_option
@click.option("--output-dir", "-o", type=click.Path(), default=None)
@click.option("--betas", default="0,1,10", help="Comma-separated beta values.")
@click.option("--etas", default="1", help="Comma-separated eta values.")
@click.option("--gammas", default="1", help="Comma-separated gamma values.")
@click.option("--seed", type=int, default=None)
def sweep(config, output_dir, betas, etas, gammas, seed):
    """Solve the extended model over a grid of regularization weights."""
    cfg = RunConfig.from_file(config)
    _apply_overrides(cfg, output_dir=output_dir, seed=seed)
    try:
        grid_values = [[float(v) for v in text.split(",") if v != ""]
                       for text in (betas, etas, gammas)]
        if any(not axis for axis in grid_values):
            raise click.ClickException("weight grid is empty")
        combos = [(b, e, g) for b in grid_values[0] for e in grid_values[1]
                  for g in grid_values[2]]
        inputs, _ = _prepare_inputs(cfg)
        rows = weight_sweep(inputs, combos, cfg.solver_options())
    except OdflowError as exc:
        raise click.ClickException(str(exc)) from exc
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    fileio.write_sweep(rows, out / "sweep.csv")
    if cfg.figures:
        report.save_sweep_figure(rows, out / "sweep.png")
    click.echo(f"sweep written to {out / 'sweep.csv'}")


@main.command("synth")
@click.option("--network", type=click.Path(exists=True), default=None,
              help="Network file; omit to use a generated demo network.")
@click.option("--demo-nodes", type=int, default=4, show_default=True,
              help="Node count for the demo network when --network is omitted.")
@click.option("--output-dir", "-o", type=click.Path(), required=True)
@click.option("--interval-minutes", type=int, default=60, show_default=True)
@click.option("--start-day", default="2019-03-01", show_default=True)
@click.option("--days", type=int, default=1, show_default=True)
@click.option("--base-level", type=float, default=2.0, show_default=True)
@click.option("--am-peak", type=float, default=10.0, show_default=True)
@click.option("--pm-peak", type=float, default=8.0, show_default=True)
@click.option("--peak-width", type=float, default=90.0, show_default=True)
@click.option("--speed-kmh", type=float, default=60.0, show_default=True)
@click.option("--symmetric/--asymmetric", default=False)
@click.option("--noise-sigma", type=float, default=0.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def synth_cmd(network, demo_nodes, output_dir, interval_minutes, start_day, days,
              base_level, am_peak, pm_peak, peak_width, speed_kmh, symmetric,
              noise_sigma, seed):
    """Generate a synthetic scenario bundle consumable by ``estimate``."""
    try:
        if network is not None:
            net = fileio.read_network(network)
        else:
            net = synth.demo_network(demo_nodes)
        grid = make_grid(interval_minutes, start_day, days)
        params = synth.ProfileParams(base_level=base_level, am_peak=am_peak,
                                     pm_peak=pm_peak, peak_width_minutes=peak_width,
                                     speed_kmh=speed_kmh, symmetric=symmetric)
        scenario = synth.generate_scenario(net, grid, params, seed=seed)
        out = write_scenario_bundle(scenario, Path(output_dir), noise_sigma=noise_sigma)
    except OdflowError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"scenario written to {out}")


def write_scenario_bundle(scenario, out: Path, noise_sigma: float = 0.0) -> Path:
    """Write the scenario directory layout consumed by ``estimate``."""
    out.mkdir(parents=True, exist_ok=True)
    net = scenario.network
    grid = scenario.grid
    dar = assignment.build_dar_tensor(net, net.od_pairs, scenario.speed_profile, grid)
    route_choice = assignment.build_route_choice(net.od_pairs)
    _flows, sensors = synth.forward_simulate(scenario, dar, route_choice,
                                             noise_sigma=noise_sigma,
                                             noise_seed=scenario.seed)
    fileio.write_network(net, out / "network.json")
    fileio.write_sensor_csv(sensors, grid, out / "sensors.csv", positions=True)
    arterials = {a.sensor_id: ingest.SensorSeries(
        sensor_id=a.sensor_id, flow=a.flow,
        speed=np.full(grid.n_intervals, scenario.params.speed_kmh),
        position=(a.lat, a.lon)) for a in scenario.arterial_sensors}
    fileio.write_sensor_csv(arterials, grid, out / "arterial.csv", positions=True)
    fileio.write_ground_truth(scenario.ground_truth_q, scenario.var_index, net,
                              out / "ground_truth.csv")
    fileio.write_grid(grid, out / "grid.json")
    cfg = RunConfig(network=str(out / "network.json"), sensors=str(out / "sensors.csv"),
                    arterial_sensors=str(out / "arterial.csv"),
                    output_dir=str(out / "run"), interval_minutes=grid.interval_minutes,
                    days=[d.isoformat() for d in grid.day_labels], seed=scenario.seed,
                    solver={"max_epochs": 3000, "tolerance": 1e-10})
    (out / "config.json").write_text(cfg.to_json(), encoding="utf-8")
    return out


@main.command()
@click.option("--network", type=click.Path(exists=True), required=True)
@click.option("--run-a", type=click.Path(exists=True), required=True,
              help="Reference-period estimate directory (e.g. 2019).")
@click.option("--run-b", type=click.Path(exists=True), required=True,
              help="Comparison-period estimate directory (e.g. 2020).")
@click.option("--income", type=click.Path(exists=True), default=None)
@click.option("--output-dir", "-o", type=click.Path(), required=True)
@click.option("--intervals", type=int, default=None,
              help="Number of comparison spans (default: one span per run).")
@click.option("--span-days", type=int, default=None)
@click.option("--min-daily-flow", type=float, default=analysis.MIN_DAILY_FLOW,
              show_default=True)
@click.option("--kde-threshold-max", type=float, default=80000.0, show_default=True)
@click.option("--kde-threshold-min", type=float, default=100000.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True,
              help="Tie-break seed used when the runs carry no run_config.json.")
def analyze(network, run_a, run_b, income, output_dir, intervals, span_days,
            min_daily_flow, kde_threshold_max, kde_threshold_min, seed):
    """Compare two estimate runs and classify OD flow changes."""
    try:
        out = _run_analyze(network, Path(run_a), Path(run_b), income, Path(output_dir),
                           intervals, span_days, min_daily_flow,
                           kde_threshold_max, kde_threshold_min, seed)
    except OdflowError as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(f"analysis written to {out}")


def _load_run(net, run_dir: Path):
    grid = fileio.read_grid(run_dir / "grid.json")
    estimate_path = run_dir / "extended_estimate.csv"
    if not estimate_path.exists():
        raise click.ClickException(f"{estimate_path} does not exist")
    return fileio.read_estimate(estimate_path, net, grid), grid


def _run_seed(run_dir: Path, fallback: int) -> tuple[int, int]:
    cfg_path = run_dir / "run_config.json"
    if cfg_path.exists():
        raw = json.loads(cfg_path.read_text(encoding="utf-8"))
        return int(raw.get("seed", fallback)), int(raw.get("k_paths", 1))
    return fallback, 1


def _run_analyze(network, run_a, run_b, income, out, intervals, span_days,
                 min_daily_flow, thr_max, thr_min, seed):
    net = fileio.read_network(network)
    seed_a, k_paths = _run_seed(run_a, seed)
    net = net.with_od_pairs(enumerate_od_pairs(net, tie_break_seed=seed_a,
                                               k_paths=k_paths))
    est_a, grid_a = _load_run(net, run_a)
    est_b, grid_b = _load_run(net, run_b)
    if grid_a.interval_minutes != grid_b.interval_minutes:
        raise click.ClickException("runs use different interval lengths")
    index = region_flow_index(net)
    flows_a = analysis.region_flows(est_a, index, grid_a)
    flows_b = analysis.region_flows(est_b, index, grid_b)
    scheme_a = scheme_b = None
    if intervals is not None:
        span = span_days if span_days is not None else grid_a.n_days // intervals
        scheme_a = analysis.split_intervals(grid_a.day_labels, intervals, span)
        scheme_b = analysis.split_intervals(grid_b.day_labels, intervals, span)
    records, summaries = analysis.classify_changes(
        flows_a, flows_b, min_daily_flow=min_daily_flow,
        scheme_ref=scheme_a, scheme_new=scheme_b)

    out.mkdir(parents=True, exist_ok=True)
    if income is not None:
        incomes = analysis.district_income(fileio.read_income_csv(income))
        records = analysis.attach_incomes(records, incomes)
        _write_kde_outputs(records, out, thr_max, thr_min)
    fileio.write_change_summary(summaries, out / "change_summary.csv")
    fileio.write_change_records(records, out / "change_records.csv")
    return out


def _write_kde_outputs(records, out: Path, thr_max: float, thr_min: float):
    increased = [r for r in records if r.classification in ("increase", "sig_increase")]
    decreased = [r for r in records if r.classification in ("decrease", "sig_decrease")]
    for which, threshold in (("max_income", thr_max), ("min_income", thr_min)):
        kdes = {}
        for label, group in (("increase", increased), ("decrease", decreased)):
            values = [getattr(r, which) for r in group]
            if values:
                kdes[label] = analysis.kde(values, threshold=threshold)
                fileio.write_kde_curve(kdes[label], out / f"kde_{which}_{label}.csv")
        report.save_kde_figure(kdes.get("increase"), kdes.get("decrease"),
                               out / f"kde_{which}.png", xlabel=which.replace("_", " "),
                               threshold=threshold)
        report.save_change_scatter(records, which, out / f"change_scatter_{which}.png")


@main.command("validate-network")
@click.argument("network", type=click.Path(exists=True))
def validate_network(network):
    """Parse and validate a network file; print a summary."""
    try:
        net = fileio.read_network(network)
    except OdflowError as exc:
        raise click.ClickException(str(exc)) from exc
    n = len(net.nodes)
    click.echo(f"nodes: {n}")
    click.echo(f"links: {len(net.links)}")
    click.echo(f"regions: {len(net.regions)}")
    click.echo(f"od pairs: {n * (n - 1)}")


if __name__ == "__main__":
    sys.exit(main())
