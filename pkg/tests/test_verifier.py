import json
import math

import numpy as np
import pytest
from hypothesis import given, settings

from qbalance import testfunctions, verifier
from qbalance.errors import InapplicableAssumption, MissingEstimate
from qbalance.estimators import BatchSums, collect_sums
from qbalance.inputs import BatchLaw, RngStream, ServiceDistribution
from qbalance.kernel import Clock, run
from qbalance.models import BatchStationConfig, PollingConfig, SingleStationConfig

from pathgen import ledger_from, marks_and_times

EXP = ServiceDistribution.exponential


@pytest.fixture(scope="module")
def mm1_run():
    cfg = SingleStationConfig(service=(EXP(1.0),), interarrival=(EXP(0.5),))
    res = run(cfg, Clock(horizon=1e5), RngStream(11))
    return cfg, res, collect_sums(res)


def test_exact_and_statistical_grading():
    ok = verifier.exact_check("x", [1.0, 2.0], [1.0, 2.0 + 5e-10], ["a", "b"])
    assert ok.passed and ok.kind == "exact"
    bad = verifier.exact_check("x", [1.0], [1.0 + 2e-9], ["a"])
    assert not bad.passed
    nan = verifier.exact_check("x", [float("nan")], [0.0], ["a"])
    assert not nan.passed

    sums = BatchSums(grid=np.ones((1, 1)))
    sums.add("T", np.ones(8))
    sums.add("a", np.array([1.0, 1.2, 0.9, 1.1, 1.0, 0.8, 1.0, 1.0]))
    c = verifier.statistical_check("s", sums, lambda S: (S["a"] / S["T"], 1.0), ["p"], k=4)
    assert c.kind == "statistical"
    assert c.tolerance[0] == pytest.approx(4 * c.sigma[0] + verifier.ABS_FLOOR)
    assert c.passed


def test_zero_sigma_uses_floor():
    sums = BatchSums(grid=np.ones((1, 1)))
    sums.add("T", np.ones(4))
    sums.add("a", np.ones(4))
    c = verifier.statistical_check("s", sums, lambda S: (S["a"] / S["T"], 1.0 + 1e-13), ["p"])
    assert c.sigma[0] == 0.0 and c.passed
    c = verifier.statistical_check("s", sums, lambda S: (S["a"] / S["T"], 1.0 + 1e-9), ["p"])
    assert not c.passed


@settings(max_examples=120, deadline=None)
@given(marks_and_times(max_len=60))
def test_telescoping_on_random_paths(path):
    m, x0, times, arrays = path
    led = ledger_from(m, x0, times, arrays)
    check = verifier.check_pathwise_telescoping(led, times=[led.end_time / 2, led.end_time])
    assert check.kind == "exact" and check.atol == 1e-9
    assert check.passed
    assert len(check.points) == 2 * len(testfunctions.LIBRARY)


def test_telescoping_constant_function_is_zero(mm1_run):
    _, res, _ = mm1_run
    lhs, rhs = verifier.telescoping_sides(res.ledger, testfunctions.get("constant"))
    assert lhs == 0.0 and rhs == 0.0
    lhs, rhs = verifier.telescoping_sides(res.ledger, testfunctions.get("first_capped5"))
    assert abs(lhs - rhs) <= 1e-9


def test_stationary_relation_mm1(mm1_run):
    _, _, sums = mm1_run
    check = verifier.check_stationary_relation(sums)
    assert check.passed
    # no routing: the routing increment vanishes identically
    assert np.all(sums.data["f.dZ"] == 0.0)


def test_no_routing_term_is_departure_decrement(mm1_run):
    # with dR = 0, f(X^d + Z) - f(X^d) = 0 at every departure
    _, res, _ = mm1_run
    led = res.ledger
    dep = led.dd.sum(1) > 0
    assert np.all(led.dr[dep] == 0)


def test_burke_indicator(mm1_run):
    _, _, sums = mm1_run
    check = verifier.check_burke(sums)
    assert check.passed
    # f(x) = 1(x >= 1) is 1 - z^x at z = 0
    assert 0.0 in [p[0] for p in check.points]


def test_mm1_oracles(mm1_run):
    cfg, _, sums = mm1_run
    for c in verifier.check_mm1_oracle(sums, cfg.rho):
        assert c.passed, c.name


def test_inapplicable_without_exclusivity(mm1_run):
    _, _, sums = mm1_run
    with pytest.raises(InapplicableAssumption):
        verifier.check_stationary_relation(sums, exclusive=False)


def test_subset_relation_and_partition():
    cfg = PollingConfig(rates=(0.3, 0.4), service=(EXP(1.0), EXP(2.0)),
                        switchover=(EXP(5.0), EXP(5.0)))
    res = run(cfg, Clock(horizon=5e4), RngStream(21))
    checks = {c.name: c for c in verifier.check_subset_relation(collect_sums(res))}
    assert set(checks) == {"subset_relation", "subset_partition", "singleton_reduction"}
    assert all(c.passed for c in checks.values())
    assert checks["subset_partition"].kind == "exact"
    assert checks["subset_relation"].kind == "statistical"


def test_missing_estimates_reported():
    sums = BatchSums(grid=np.ones((1, 1)))
    sums.add("T", np.ones(4))
    cfg = SingleStationConfig(service=(EXP(1.0),), interarrival=(EXP(0.5),))
    with pytest.raises(MissingEstimate):
        verifier.check_pgf_relations(sums, cfg)


def test_batch_service_relation_against_long_run():
    cfg = BatchStationConfig(1.0, BatchLaw.unit(1, 0), (ServiceDistribution.erlang(2, 2.0),),
                             batch_sizes=(2,))
    short = collect_sums(run(cfg, Clock(horizon=2e4), RngStream(51)))
    long = collect_sums(run(cfg, Clock(horizon=2e5), RngStream(52)))
    j = [f.name for f in testfunctions.LIBRARY].index("total_capped10")
    c_short = verifier.check_stationary_relation(short)
    c_long = verifier.check_stationary_relation(long)
    assert c_short.passed and c_long.passed
    # departure-side rate of f(X^d + Y) - f(X^d) agrees with the 10x horizon run
    a, b = c_short.rhs[j], c_long.rhs[j]
    est_sd = verifier.statistical_check(
        "d", short, lambda S: (S["f.dY"][j] / S["T"], 0.0), ["p"]).sigma[0]
    long_sd = verifier.statistical_check(
        "d", long, lambda S: (S["f.dY"][j] / S["T"], 0.0), ["p"]).sigma[0]
    assert abs(a - b) <= 4 * math.hypot(est_sd, long_sd)


def test_traffic_and_rate_checks():
    cfg = PollingConfig(rates=(0.2, 0.1, 0.1), service=(EXP(1.25),) * 3,
                        switchover=(EXP(1 / 0.3),) * 3,
                        routing=np.array([[0, .3, 0], [0, 0, .4], [.2, 0, 0]]))
    t = verifier.check_traffic_equations(cfg)
    assert t.passed and np.max(np.abs(t.residual)) <= 1e-10
    res = run(cfg, Clock(horizon=2e4), RngStream(91))
    r = verifier.check_rate_identity(res.ledger)
    assert r.passed


def test_report_json_is_deterministic(mm1_run):
    _, res, sums = mm1_run
    checks = [verifier.check_pathwise_telescoping(res.ledger), verifier.check_burke(sums)]
    rep = verifier.BalanceReport("mm1", 11, 1e5, checks, {"b": 1, "a": [1, 2]})
    text = rep.to_json()
    assert text == verifier.BalanceReport("mm1", 11, 1e5, checks, {"a": [1, 2], "b": 1}).to_json()
    d = json.loads(text)
    assert d["passed"] is True
    kinds = {c["name"]: c for c in d["checks"]}
    assert "atol" in kinds["pathwise_telescoping"] and "sigma" not in kinds["pathwise_telescoping"]
    assert "sigma" in kinds["burke"] and "atol" not in kinds["burke"]
    assert "PASS" in rep.summary()
