"""Statistical post-processing of OD estimates.

Covers the comparison pipeline between two estimation periods: daily
region-to-region flow matrices, calendar interval schemes, paired t-tests on
per-day flows, percentage changes with significance classification, district
income aggregation from zipcode data, and kernel density estimation of flow
changes by income.
"""

from __future__ import annotations

import datetime as _dt
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import betainc, ndtr

from .errors import OdflowError
from .grid import TimeGrid

P_SIGNIFICANT = 0.05
MIN_DAILY_FLOW = 1000.0


class AnalysisError(OdflowError):
    pass


class DegenerateSample(AnalysisError):
    """Paired differences are a nonzero constant; the t statistic is undefined."""


class ZeroBaseline(AnalysisError):
    pass


class MissingIncome(AnalysisError):
    pass


class InsufficientDays(AnalysisError):
    pass


@dataclass(frozen=True)
class RegionFlowMatrix:
    """Daily region-to-region totals: values[(ri, rj)] has one entry per day."""

    days: tuple[_dt.date, ...]
    values: dict[tuple[str, str], np.ndarray]


def region_flows(estimate, region_index, grid: TimeGrid) -> RegionFlowMatrix:
    """Sum estimated flows over member OD pairs, paths and intervals per day."""
    vi = estimate.var_index
    if vi.n_intervals != grid.n_intervals:
        raise AnalysisError("estimate and grid cover different interval counts")
    q = estimate.q
    values: dict[tuple[str, str], np.ndarray] = {}
    for key, od_indices in region_index.items():
        daily = np.zeros(grid.n_days)
        for od in sorted(od_indices):
            for k in range(vi.od_path_counts[od]):
                cols = [vi.q_col(od, k, t) for t in range(grid.n_intervals)]
                series = q[cols].reshape(grid.n_days, grid.intervals_per_day)
                daily += series.sum(axis=1)
        values[key] = daily
    return RegionFlowMatrix(days=grid.day_labels, values=values)


@dataclass(frozen=True)
class IntervalScheme:
    """Ordered, nonoverlapping date spans (start, end inclusive)."""

    spans: tuple[tuple[_dt.date, _dt.date], ...]

    def __post_init__(self):
        for (s, e) in self.spans:
            if e < s:
                raise ValueError(f"span {s}..{e} ends before it starts")
        for (_, e1), (s2, _) in zip(self.spans, self.spans[1:]):
            if s2 <= e1:
                raise ValueError("interval spans overlap or are out of order")

    def positions(self, days) -> list[list[int]]:
        """Per span, indices of the given days falling inside it."""
        return [[i for i, d in enumerate(days) if s <= d <= e] for s, e in self.spans]


def split_intervals(year_dates, count: int, span_days: int) -> IntervalScheme:
    """Cut the ordered day list into ``count`` consecutive spans of ``span_days``."""
    dates = list(year_dates)
    if count < 1 or span_days < 1:
        raise ValueError("count and span_days must be positive")
    if count * span_days > len(dates):
        raise InsufficientDays(
            f"need {count * span_days} days, only {len(dates)} available")
    spans = []
    for i in range(count):
        chunk = dates[i * span_days:(i + 1) * span_days]
        spans.append((chunk[0], chunk[-1]))
    return IntervalScheme(spans=tuple(spans))


def paired_t_test(samples_a, samples_b) -> tuple[float, float]:
    """Two-sided paired t-test; p from the Student-t distribution.

    Identical samples give (0, 1).  A nonzero constant difference has zero
    variance and no finite t statistic, which raises DegenerateSample.
    """
    a = np.asarray(samples_a, dtype=np.float64)
    b = np.asarray(samples_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("samples must be 1-d and equally long")
    n = a.size
    if n < 2:
        raise ValueError("need at least two pairs")
    d = a - b
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0:
        if mean == 0:
            return 0.0, 1.0
        raise DegenerateSample("differences are a nonzero constant")
    t = mean / (sd / math.sqrt(n))
    df = n - 1
    # two-sided p = I_{df/(df+t^2)}(df/2, 1/2), the regularized incomplete beta
    p = float(betainc(df / 2.0, 0.5, df / (df + t * t)))
    return float(t), p


def percentage_change(flow_ref: float, flow_new: float) -> float:
    """(new - ref) / ref, relative to the reference period."""
    if flow_ref <= 0:
        raise ZeroBaseline(f"reference flow must be positive, got {flow_ref}")
    return (flow_new - flow_ref) / flow_ref


@dataclass(frozen=True)
class OdChangeRecord:
    origin_region: str
    dest_region: str
    interval_index: int
    interval_start: _dt.date
    mean_ref: float
    mean_new: float
    pct_change: float | None
    t_stat: float | None
    p_value: float | None
    classification: str  # sig_increase | increase | decrease | sig_decrease | excluded
    min_income: float | None = None
    max_income: float | None = None


@dataclass(frozen=True)
class IntervalSummary:
    interval_index: int
    start_date: _dt.date
    total_increased: int
    significant_increased: int
    total_decreased: int
    significant_decreased: int
    excluded: int


def classify_changes(flows_ref: RegionFlowMatrix, flows_new: RegionFlowMatrix,
                     min_daily_flow: float = MIN_DAILY_FLOW,
                     scheme_ref: IntervalScheme | None = None,
                     scheme_new: IntervalScheme | None = None,
                     p_threshold: float = P_SIGNIFICANT
                     ) -> tuple[list[OdChangeRecord], list[IntervalSummary]]:
    """Classify every region OD pair per interval span.

    Pairs whose reference-period mean daily flow falls below ``min_daily_flow``
    are excluded.  Remaining pairs are increased or decreased by the sign of
    the change (ties count as decreased) and significant when the paired
    t-test on per-day flows has p <= threshold.  A nonzero constant difference
    is treated as maximally significant (p = 0).
    """
    if set(flows_ref.values) != set(flows_new.values):
        raise AnalysisError("flow matrices cover different region pairs")
    if scheme_ref is None:
        scheme_ref = IntervalScheme(spans=((flows_ref.days[0], flows_ref.days[-1]),))
    if scheme_new is None:
        scheme_new = IntervalScheme(spans=((flows_new.days[0], flows_new.days[-1]),))
    if len(scheme_ref.spans) != len(scheme_new.spans):
        raise AnalysisError("interval schemes have different span counts")
    pos_ref = scheme_ref.positions(flows_ref.days)
    pos_new = scheme_new.positions(flows_new.days)

    records: list[OdChangeRecord] = []
    summaries: list[IntervalSummary] = []
    for i, (ir, inw) in enumerate(zip(pos_ref, pos_new)):
        if len(ir) != len(inw) or not ir:
            raise AnalysisError(f"span {i}: day counts differ or span is empty")
        inc = sig_inc = dec = sig_dec = excluded = 0
        start = flows_ref.days[ir[0]]
        for key in sorted(flows_ref.values):
            ref = flows_ref.values[key][ir]
            new = flows_new.values[key][inw]
            mean_ref, mean_new = float(ref.mean()), float(new.mean())
            if mean_ref < min_daily_flow or mean_ref <= 0:
                excluded += 1
                records.append(OdChangeRecord(key[0], key[1], i, start, mean_ref,
                                              mean_new, None, None, None, "excluded"))
                continue
            pct = percentage_change(mean_ref, mean_new)
            if len(ir) < 2:
                t, p = None, None  # one day per span: no test possible
                significant = False
            else:
                try:
                    t, p = paired_t_test(new, ref)
                except DegenerateSample:
                    t, p = math.copysign(math.inf, pct), 0.0
                significant = p <= p_threshold and pct != 0
            if pct > 0:
                inc += 1
                sig_inc += significant
                label = "sig_increase" if significant else "increase"
            else:
                dec += 1
                sig_dec += significant
                label = "sig_decrease" if significant else "decrease"
            records.append(OdChangeRecord(key[0], key[1], i, start, mean_ref,
                                          mean_new, pct, t, p, label))
        summaries.append(IntervalSummary(i, start, inc, sig_inc, dec, sig_dec, excluded))
    return records, summaries


@dataclass(frozen=True)
class ZipcodeIncome:
    zipcode: str
    income: float
    population: float
    district: str
    overlap_fraction: float

    def __post_init__(self):
        if self.income <= 0 or self.population <= 0:
            raise ValueError(f"zipcode {self.zipcode}: income and population must be positive")
        if not 0.0 <= self.overlap_fraction <= 1.0:
            raise ValueError(f"zipcode {self.zipcode}: overlap must lie in [0, 1]")


def district_income(zipcode_rows, normalize: bool = False) -> dict[str, float]:
    """Population- and overlap-weighted average income per district.

    Each zipcode contributes its population share within the district times
    the fraction of its area inside the district times its income.  With
    ``normalize`` the weights are rescaled to sum to one per district.
    """
    by_district: dict[str, list[ZipcodeIncome]] = {}
    for row in zipcode_rows:
        by_district.setdefault(row.district, []).append(row)
    incomes: dict[str, float] = {}
    for district, rows in by_district.items():
        total_pop = sum(r.population for r in rows)
        weights = [(r.population / total_pop) * r.overlap_fraction for r in rows]
        value = sum(w * r.income for w, r in zip(weights, rows))
        if normalize:
            wsum = sum(weights)
            value = value / wsum if wsum > 0 else 0.0
        incomes[district] = value
    return incomes


def od_income_extrema(od_records, district_incomes) -> list[tuple[float, float]]:
    """Per record, (min, max) of the two endpoint district incomes."""
    extrema = []
    for record in od_records:
        for region in (record.origin_region, record.dest_region):
            if region not in district_incomes:
                raise MissingIncome(f"no income for region {region!r}")
        a = district_incomes[record.origin_region]
        b = district_incomes[record.dest_region]
        extrema.append((min(a, b), max(a, b)))
    return extrema


def attach_incomes(records, district_incomes) -> list[OdChangeRecord]:
    """Records with min/max endpoint incomes filled in."""
    extrema = od_income_extrema(records, district_incomes)
    return [replace(r, min_income=lo, max_income=hi)
            for r, (lo, hi) in zip(records, extrema)]


@dataclass(frozen=True)
class KdeResult:
    x: np.ndarray
    density: np.ndarray
    bandwidth: float
    threshold: float | None
    below_threshold: float | None
    above_threshold: float | None


def silverman_bandwidth(values: np.ndarray) -> float:
    """0.9 * min(std, IQR/1.34) * n^(-1/5); falls back to 1 for degenerate data."""
    n = values.size
    sigma = float(values.std(ddof=1)) if n > 1 else 0.0
    q75, q25 = np.percentile(values, [75, 25])
    iqr = float(q75 - q25)
    spread = min(s for s in (sigma, iqr / 1.34) if s > 0) if max(sigma, iqr) > 0 else 0.0
    h = 0.9 * spread * n ** (-0.2)
    return h if h > 0 else 1.0


def kde(values, weights=None, bandwidth: float | str = "silverman",
        grid_points: int = 513, threshold: float | None = None) -> KdeResult:
    """Gaussian kernel density estimate on an evaluation grid.

    Returns the density curve plus, when a threshold is given, the exact
    probability mass of the mixture below/above it.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("need a nonempty 1-d sample")
    if weights is None:
        w = np.full(v.size, 1.0 / v.size)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != v.shape or (w < 0).any() or w.sum() <= 0:
            raise ValueError("weights must be nonnegative and match the sample")
        w = w / w.sum()
    h = silverman_bandwidth(v) if bandwidth == "silverman" else float(bandwidth)
    if h <= 0:
        raise ValueError("bandwidth must be positive")
    # odd point count keeps a grid point at the midpoint of the data range
    x = np.linspace(v.min() - 4 * h, v.max() + 4 * h, grid_points)
    z = (x[:, None] - v[None, :]) / h
    density = (w[None, :] * np.exp(-0.5 * z * z)).sum(axis=1) / (h * math.sqrt(2 * math.pi))
    below = above = None
    if threshold is not None:
        below = float((w * ndtr((threshold - v) / h)).sum())
        above = 1.0 - below
    return KdeResult(x=x, density=density, bandwidth=h, threshold=threshold,
                     below_threshold=below, above_threshold=above)
