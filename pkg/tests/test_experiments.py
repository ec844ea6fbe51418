import csv
import math

import pytest

from audit_arena.engine import CostModel
from audit_arena.errors import ConfigError
from audit_arena.experiments import (RECORD_BYTES, HarnessResult, PdosLayout, Setup, asdict_rows, calibrate,
                                     curve_flatness, drain_rate, fluid_drop_fraction, fluid_time_to_first_drop,
                                     r_squared, rq1_drop_sweep, rq1_point, rq4_reduction_run, rq5_buffer_sweep,
                                     pdos_trials)


def test_fluid_oracle_closed_form():
    # (10000 - 4000) * 30 - 16384 = 163616 lost out of 300000
    assert fluid_drop_fraction(10_000, 4_000, 30, 16_384) == pytest.approx(163_616 / 300_000)
    assert fluid_drop_fraction(3_000, 4_000, 30, 0) == 0
    assert fluid_time_to_first_drop(10_000, 4_000, 6_000) == 1.0
    assert math.isinf(fluid_time_to_first_drop(4_000, 4_000, 1))
    assert drain_rate(CostModel()) == 4_000
    assert drain_rate(CostModel(), netlink=True) == pytest.approx(1e6 / 254)


def test_sysdig_matches_fluid_example():
    row, _ = rq1_point("sysdig", 10_000.0, 30.0, setup=Setup(capacity=16_384 * RECORD_BYTES), drain=False)
    dropped, frac = row[3], row[4]
    assert dropped == pytest.approx(163_616, rel=0.01)
    assert frac == pytest.approx(0.545, abs=0.01)


def test_under_capacity_drops_nothing():
    for name in ("sysdig", "audit", "lttng", "camflow", "sysdig-integrity", "nodrop"):
        row, _ = rq1_point(name, 3_000.0, 2.0)
        assert row[3] == 0, name


def test_rq1_rows_conserve_and_are_monotone():
    res = rq1_drop_sweep("sysdig", [2_000.0, 6_000.0, 12_000.0, 24_000.0], 2.0,
                         setup=Setup(capacity=1024 * RECORD_BYTES))
    fracs = [r[4] for r in res.rows]
    assert fracs == sorted(fracs) and fracs[0] == 0 and fracs[-1] > 0
    for d in asdict_rows(res):
        assert d["generated"] == d["handled"] + d["dropped"]
        assert d["generated"] == d["consumed"] + d["dropped"] + d["residual"]


def test_nodrop_handles_everything():
    res = rq1_drop_sweep("nodrop", [5_000.0, 40_000.0], 2.0)
    for d in asdict_rows(res):
        assert d["dropped"] == 0 and d["handled"] == d["generated"] == d["consumed"]


@pytest.mark.parametrize("rates", [[], [2.0, 1.0], [1.0, 1.0]])
def test_rq1_rejects_bad_rates(rates):
    with pytest.raises(ConfigError):
        rq1_drop_sweep("sysdig", rates, 1.0)


def test_csv_naming_and_format(tmp_path):
    res = HarnessResult("rq1", "sysdig", 3, ("rate", "drop_fraction"), [(1.0, 0.5), (2, float("inf"))])
    path = res.write_csv(tmp_path)
    assert path.name == "rq1_sysdig_3.csv"
    text = path.read_text(encoding="utf-8")
    assert text == "rate,drop_fraction\n1.000000,0.500000\n2,\n"
    assert list(csv.reader(text.splitlines()))[0] == ["rate", "drop_fraction"]


def test_pdos_is_deterministic_and_flag_is_laxer():
    small = PdosLayout()
    a = pdos_trials("sysdig", 5, seed=4, layout=small)
    b = pdos_trials("sysdig", 5, seed=4, layout=small)
    assert a.rows == b.rows
    lax = pdos_trials("sysdig", 5, seed=4, layout=small, success_any_dropped=True)
    assert lax.summary["successes"] >= a.summary["successes"]
    for o in a.summary["outcomes"]:
        assert o.success == (o.markers_recorded == 0)


def test_pdos_nodrop_never_succeeds():
    res = pdos_trials("nodrop", 5, seed=2)
    assert res.summary["successes"] == 0
    assert all(r[3] == r[2] for r in res.rows)


def test_pdos_rejects_bad_input():
    with pytest.raises(ConfigError):
        pdos_trials("sysdig", 0)
    with pytest.raises(ConfigError):
        pdos_trials("sysdig", 1, scenario="nope")


def test_rq4_same_ratio_per_core():
    # long enough that the initial buffer fill no longer counts
    one = rq4_reduction_run(cores=1, duration=10.0).rows[0]
    four = rq4_reduction_run(cores=4, duration=10.0).rows[0]
    assert four[3] == pytest.approx(one[3], rel=0.1)
    assert four[6] == pytest.approx(0.30, abs=0.01)


def test_rq5_first_drop_time_linear_in_buffer():
    res = rq5_buffer_sweep("sysdig", (1024, 2048, 4096), fill_multiple=4.0)
    ttfd = [r[6] for r in res.rows]
    assert ttfd[1] == pytest.approx(2 * ttfd[0], rel=0.02)
    assert ttfd[2] == pytest.approx(2 * ttfd[1], rel=0.02)
    for r in res.rows:
        assert r[6] == pytest.approx(r[8], rel=0.02)


def test_rq5_rejects_descending_sizes_and_no_consumer():
    with pytest.raises(ConfigError):
        rq5_buffer_sweep("sysdig", (2048, 1024))
    with pytest.raises(ConfigError):
        rq5_buffer_sweep("none")


def test_setup_growth_factor():
    assert Setup(growth_factor=2).arch("lttng", 1000).overflow.max_capacity == 2000
    with pytest.raises(ConfigError):
        Setup(growth_factor=2).arch("sysdig")
    with pytest.raises(ConfigError):
        Setup(growth_factor=0).arch("lttng")
    assert Setup().arch("none") is None


def test_calibrate_identity_and_fit():
    for target in ("lttng-1core", "drop-ordering"):
        cal = calibrate(target)
        assert cal.feasible and cal.delta == {}
        assert cal.snippet().startswith("#")
    fit = calibrate("audit-1pct")
    assert fit.feasible and set(fit.delta) == {("costs", "transport_cost")}
    t = fit.delta[("costs", "transport_cost")]
    assert fluid_drop_fraction(10_000.0, 1e6 / (250 + t), 30, 8192) >= 0.9
    assert fit.snippet().startswith("[costs]\ntransport_cost = ")


def test_calibrate_reports_infeasible():
    cal = calibrate("audit-1pct", CostModel(kernel_record_cost=0.0))
    assert not cal.feasible and cal.delta == {}
    with pytest.raises(ConfigError):
        calibrate("nope")


def test_helpers():
    assert r_squared([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0)
    assert curve_flatness([10, 10, 10]) == 0
    assert curve_flatness([9, 11]) == pytest.approx(0.1)
