import datetime as dt
import math

import numpy as np
import pytest
import scipy.stats

from odflow.analysis import (
    DegenerateSample,
    InsufficientDays,
    IntervalScheme,
    MissingIncome,
    RegionFlowMatrix,
    ZeroBaseline,
    ZipcodeIncome,
    attach_incomes,
    classify_changes,
    district_income,
    kde,
    od_income_extrema,
    paired_t_test,
    percentage_change,
    region_flows,
    split_intervals,
)
from odflow.grid import make_grid
from odflow.network import region_flow_index
from odflow.problem import VariableIndex
from odflow.solver import ErrorReport, OdEstimate

from conftest import complete_network
from odflow.network import enumerate_od_pairs


def make_estimate(x, vi):
    report = ErrorReport(0, 0, 0, 0, float(np.sum(x[: vi.n_q])), 0, 0, True)
    return OdEstimate(x=np.asarray(x, dtype=np.float64), var_index=vi, report=report)


class TestRegionFlows:
    def test_unit_demand_sums_to_interval_count(self, two_node_net_with_ods):
        net = two_node_net_with_ods
        grid = make_grid(5, "2019-03-01", 1)  # 288 intervals
        vi = VariableIndex.for_network(net, grid)
        x = np.zeros(vi.n_cols)
        for t in range(grid.n_intervals):
            x[vi.q_col(0, 0, t)] = 1.0
        matrix = region_flows(make_estimate(x, vi), region_flow_index(net), grid)
        key = (net.nodes[net.od_pairs[0].origin].region_id,
               net.nodes[net.od_pairs[0].destination].region_id)
        assert matrix.values[key].tolist() == [288.0]

    def test_zero_estimate(self, two_node_net_with_ods):
        net = two_node_net_with_ods
        grid = make_grid(60, "2019-03-01", 2)
        vi = VariableIndex.for_network(net, grid)
        matrix = region_flows(make_estimate(np.zeros(vi.n_cols), vi),
                              region_flow_index(net), grid)
        for value in matrix.values.values():
            assert (value == 0).all()

    def test_matches_brute_force_triple_sum(self):
        net = complete_network(4, regions=2)
        net = net.with_od_pairs(enumerate_od_pairs(net))
        grid = make_grid(480, "2019-03-01", 3)
        vi = VariableIndex.for_network(net, grid)
        rng = np.random.default_rng(0)
        x = rng.uniform(0, 10, size=vi.n_cols)
        index = region_flow_index(net)
        matrix = region_flows(make_estimate(x, vi), index, grid)
        for (ri, rj), ods in index.items():
            for d in range(grid.n_days):
                expected = sum(x[vi.q_col(od, k, t)]
                               for od in ods
                               for k in range(len(net.od_pairs[od].paths))
                               for t in grid.day_intervals(d))
                assert matrix.values[(ri, rj)][d] == pytest.approx(expected)


class TestSplitIntervals:
    def test_eight_by_46_from_jan_12(self):
        days = [dt.date(2019, 1, 12) + dt.timedelta(days=i) for i in range(368)]
        scheme = split_intervals(days, 8, 46)
        assert len(scheme.spans) == 8
        assert scheme.spans[0] == (dt.date(2019, 1, 12), dt.date(2019, 2, 26))
        assert scheme.spans[1][0] == dt.date(2019, 2, 27)

    def test_single_day_span(self):
        days = [dt.date(2019, 1, 1)]
        scheme = split_intervals(days, 1, 1)
        assert scheme.spans == ((dt.date(2019, 1, 1), dt.date(2019, 1, 1)),)

    def test_insufficient_days(self):
        days = [dt.date(2019, 1, 1) + dt.timedelta(days=i) for i in range(365)]
        with pytest.raises(InsufficientDays):
            split_intervals(days, 1, 366)

    def test_spans_must_be_ordered(self):
        with pytest.raises(ValueError):
            IntervalScheme(spans=((dt.date(2019, 2, 1), dt.date(2019, 2, 10)),
                                  (dt.date(2019, 2, 5), dt.date(2019, 2, 20))))


class TestPairedTTest:
    def test_identical_samples(self):
        assert paired_t_test([1.0, 2.0, 3.0], [1.0, 2.0, 3.0]) == (0.0, 1.0)

    def test_constant_nonzero_difference(self):
        with pytest.raises(DegenerateSample):
            paired_t_test([2, 3, 4, 5, 6], [1, 2, 3, 4, 5])

    def test_textbook_example(self):
        t, p = paired_t_test([1.0, 2.0, 3.0, 4.0], [2.0, 4.0, 6.0, 8.0])
        ref = scipy.stats.ttest_rel([1.0, 2.0, 3.0, 4.0], [2.0, 4.0, 6.0, 8.0])
        assert t == pytest.approx(ref.statistic, abs=1e-10)
        assert p == pytest.approx(ref.pvalue, abs=1e-10)

    def test_matches_reference_on_random_samples(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            n = int(rng.integers(2, 30))
            a = rng.normal(5, 2, size=n)
            b = a + rng.normal(0.3, 1.0, size=n)
            if np.std(a - b, ddof=1) == 0:
                continue
            t, p = paired_t_test(a, b)
            ref = scipy.stats.ttest_rel(a, b)
            assert t == pytest.approx(ref.statistic, abs=1e-10)
            assert p == pytest.approx(ref.pvalue, abs=1e-10)

    def test_antisymmetric(self):
        rng = np.random.default_rng(2)
        a = rng.normal(0, 1, size=12)
        b = rng.normal(0.5, 1, size=12)
        t_ab, p_ab = paired_t_test(a, b)
        t_ba, p_ba = paired_t_test(b, a)
        assert t_ab == pytest.approx(-t_ba, rel=1e-12)
        assert p_ab == pytest.approx(p_ba, rel=1e-12)


def flow_matrix(days, **pairs):
    return RegionFlowMatrix(days=tuple(days),
                            values={key: np.asarray(v, dtype=np.float64)
                                    for key, v in pairs.items()})


DAYS_A = tuple(dt.date(2019, 3, 1) + dt.timedelta(days=i) for i in range(4))
DAYS_B = tuple(dt.date(2020, 3, 1) + dt.timedelta(days=i) for i in range(4))


class TestClassifyChanges:
    def test_all_below_threshold_excluded(self):
        a = flow_matrix(DAYS_A, **{"R1,R2": [10, 11, 12, 13]})
        a.values[("R1", "R2")] = a.values.pop("R1,R2")
        b = flow_matrix(DAYS_B, **{"R1,R2": [20, 21, 19, 22]})
        b.values[("R1", "R2")] = b.values.pop("R1,R2")
        records, summaries = classify_changes(a, b, min_daily_flow=1000)
        assert [r.classification for r in records] == ["excluded"]
        s = summaries[0]
        assert (s.total_increased, s.significant_increased,
                s.total_decreased, s.significant_decreased) == (0, 0, 0, 0)
        assert s.excluded == 1

    def test_doubled_pair_is_significant_increase(self):
        base = np.array([1500.0, 1600.0, 1450.0, 1700.0])
        a = RegionFlowMatrix(days=DAYS_A, values={("R1", "R2"): base})
        b = RegionFlowMatrix(days=DAYS_B, values={("R1", "R2"): 2 * base})
        records, summaries = classify_changes(a, b)
        record = records[0]
        # verify against the statistic itself
        t, p = paired_t_test(2 * base, base)
        assert p <= 0.05
        assert record.classification == "sig_increase"
        assert summaries[0].significant_increased == 1

    def test_identical_sets_no_significant_changes(self):
        values = {("R1", "R2"): np.array([2000.0, 2100, 1900, 2050]),
                  ("R2", "R1"): np.array([1800.0, 1850, 1900, 1750])}
        a = RegionFlowMatrix(days=DAYS_A, values=values)
        b = RegionFlowMatrix(days=DAYS_B, values={k: v.copy() for k, v in values.items()})
        _records, summaries = classify_changes(a, b)
        assert summaries[0].significant_increased == 0
        assert summaries[0].significant_decreased == 0

    def test_partition_property(self):
        rng = np.random.default_rng(3)
        keys = [(f"R{i}", f"R{j}") for i in range(3) for j in range(3) if i != j]
        a = RegionFlowMatrix(days=DAYS_A, values={
            k: rng.uniform(0, 3000, size=4) for k in keys})
        b = RegionFlowMatrix(days=DAYS_B, values={
            k: rng.uniform(0, 3000, size=4) for k in keys})
        records, summaries = classify_changes(a, b)
        s = summaries[0]
        assert s.total_increased + s.total_decreased + s.excluded == len(keys)
        assert len(records) == len(keys)
        assert s.significant_increased <= s.total_increased
        assert s.significant_decreased <= s.total_decreased

    def test_order_invariance(self):
        rng = np.random.default_rng(4)
        keys = [("R1", "R2"), ("R2", "R1"), ("R1", "R3")]
        values_a = {k: rng.uniform(500, 4000, size=4) for k in keys}
        values_b = {k: rng.uniform(500, 4000, size=4) for k in keys}
        a1 = RegionFlowMatrix(days=DAYS_A, values=dict(values_a))
        b1 = RegionFlowMatrix(days=DAYS_B, values=dict(values_b))
        a2 = RegionFlowMatrix(days=DAYS_A,
                              values=dict(reversed(list(values_a.items()))))
        b2 = RegionFlowMatrix(days=DAYS_B,
                              values=dict(reversed(list(values_b.items()))))
        _r1, s1 = classify_changes(a1, b1)
        _r2, s2 = classify_changes(a2, b2)
        assert s1 == s2

    def test_multi_interval_schemes(self):
        days_a = tuple(dt.date(2019, 1, 1) + dt.timedelta(days=i) for i in range(6))
        days_b = tuple(dt.date(2020, 1, 1) + dt.timedelta(days=i) for i in range(6))
        rng = np.random.default_rng(5)
        a = RegionFlowMatrix(days=days_a, values={("R1", "R2"): rng.uniform(2000, 3000, 6)})
        b = RegionFlowMatrix(days=days_b, values={("R1", "R2"): rng.uniform(2000, 3000, 6)})
        scheme_a = split_intervals(days_a, 2, 3)
        scheme_b = split_intervals(days_b, 2, 3)
        records, summaries = classify_changes(a, b, scheme_ref=scheme_a,
                                              scheme_new=scheme_b)
        assert len(summaries) == 2
        assert len(records) == 2


class TestPercentageChange:
    def test_decrease(self):
        assert percentage_change(100.0, 80.0) == pytest.approx(-0.20)

    def test_equal(self):
        assert percentage_change(55.0, 55.0) == 0.0

    def test_increase(self):
        assert percentage_change(50.0, 75.0) == pytest.approx(0.50)

    def test_zero_baseline(self):
        with pytest.raises(ZeroBaseline):
            percentage_change(0.0, 10.0)


class TestDistrictIncome:
    def test_single_zipcode_full_overlap(self):
        rows = [ZipcodeIncome("z1", 75000.0, 1000.0, "D1", 1.0)]
        assert district_income(rows)["D1"] == pytest.approx(75000.0)

    def test_two_equal_zipcodes(self):
        rows = [ZipcodeIncome("z1", 60000.0, 1000.0, "D1", 1.0),
                ZipcodeIncome("z2", 100000.0, 1000.0, "D1", 1.0)]
        assert district_income(rows)["D1"] == pytest.approx(80000.0)

    def test_zero_overlap_contributes_nothing(self):
        rows = [ZipcodeIncome("z1", 60000.0, 1000.0, "D1", 1.0),
                ZipcodeIncome("z2", 999999.0, 5000.0, "D1", 0.0)]
        # z2 still counts toward the population share denominator
        expected = (1000.0 / 6000.0) * 60000.0
        assert district_income(rows)["D1"] == pytest.approx(expected)

    def test_scale_consistency(self):
        rng = np.random.default_rng(6)
        rows = [ZipcodeIncome(f"z{i}", float(rng.uniform(3e4, 2e5)),
                              float(rng.uniform(100, 5000)), f"D{i % 3}",
                              float(rng.uniform(0.2, 1.0)))
                for i in range(12)]
        base = district_income(rows)
        scaled_rows = [ZipcodeIncome(r.zipcode, 3.0 * r.income, r.population,
                                     r.district, r.overlap_fraction) for r in rows]
        scaled = district_income(scaled_rows)
        for district in base:
            assert scaled[district] == pytest.approx(3.0 * base[district], rel=1e-12)

    def test_normalized_weights(self):
        rows = [ZipcodeIncome("z1", 60000.0, 1000.0, "D1", 0.5)]
        assert district_income(rows)["D1"] == pytest.approx(30000.0)
        assert district_income(rows, normalize=True)["D1"] == pytest.approx(60000.0)


class TestOdIncomeExtrema:
    def _record(self, ri, rj):
        from odflow.analysis import OdChangeRecord
        return OdChangeRecord(ri, rj, 0, dt.date(2019, 1, 1), 0, 0, None, None,
                              None, "excluded")

    def test_min_max(self):
        incomes = {"R1": 50000.0, "R2": 90000.0}
        got = od_income_extrema([self._record("R1", "R2")], incomes)
        assert got == [(50000.0, 90000.0)]

    def test_equal_incomes(self):
        incomes = {"R1": 70000.0, "R2": 70000.0}
        assert od_income_extrema([self._record("R1", "R2")], incomes) == [(70000.0, 70000.0)]

    def test_intra_region_pair(self):
        incomes = {"R1": 64000.0}
        assert od_income_extrema([self._record("R1", "R1")], incomes) == [(64000.0, 64000.0)]

    def test_missing_income(self):
        with pytest.raises(MissingIncome):
            od_income_extrema([self._record("R1", "RX")], {"R1": 1.0})

    def test_attach_incomes(self):
        incomes = {"R1": 50000.0, "R2": 90000.0}
        out = attach_incomes([self._record("R2", "R1")], incomes)
        assert out[0].min_income == 50000.0
        assert out[0].max_income == 90000.0


class TestKde:
    def test_single_value_symmetric_peak(self):
        result = kde([5.0], bandwidth=1.0)
        peak = result.x[np.argmax(result.density)]
        assert peak == pytest.approx(5.0, abs=1e-6)
        mid = len(result.x) // 2
        assert result.density[: mid] == pytest.approx(result.density[-mid:][::-1], rel=1e-9)

    def test_threshold_below_all_mass(self):
        result = kde([10.0, 11.0, 12.0], bandwidth=0.5, threshold=-100.0)
        assert result.below_threshold == pytest.approx(0.0, abs=1e-12)
        assert result.above_threshold == pytest.approx(1.0, abs=1e-12)

    def test_two_point_closed_form(self):
        result = kde([0.0, 10.0], bandwidth=1.0)
        # density at x=5 is the average of two unit gaussians five away
        expected = math.exp(-12.5) / math.sqrt(2 * math.pi)
        idx = np.argmin(np.abs(result.x - 5.0))
        grid_x = result.x[idx]
        expected = 0.5 * (math.exp(-0.5 * grid_x ** 2)
                          + math.exp(-0.5 * (grid_x - 10.0) ** 2)) / math.sqrt(2 * math.pi)
        assert result.density[idx] == pytest.approx(expected, abs=1e-9)

    def test_integrates_to_one(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            values = rng.normal(rng.uniform(-5, 5), rng.uniform(0.5, 3),
                                size=int(rng.integers(2, 200)))
            result = kde(values)
            integral = np.trapezoid(result.density, result.x)
            assert abs(integral - 1.0) <= 1e-3
            assert (result.density >= 0).all()

    def test_silverman_bandwidth_value(self):
        rng = np.random.default_rng(8)
        values = rng.normal(0, 2, size=100)
        result = kde(values)
        sigma = np.std(values, ddof=1)
        iqr = np.subtract(*np.percentile(values, [75, 25]))
        expected = 0.9 * min(sigma, iqr / 1.34) * 100 ** (-0.2)
        assert result.bandwidth == pytest.approx(expected, rel=1e-12)

    def test_weights_shift_mass(self):
        result = kde([0.0, 10.0], weights=[3.0, 1.0], bandwidth=1.0, threshold=5.0)
        assert result.below_threshold == pytest.approx(0.75, abs=1e-6)
