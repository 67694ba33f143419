"""Acceptance gate: every criterion at its stated tolerance.

The shipped corpus is simulated once per session; criteria then read the
reports.  Runtime and determinism criteria run their own simulations.
"""
import time

import numpy as np
import pytest

from qbalance import analytic, testfunctions, verifier
from qbalance.estimators import default_grid
from qbalance.inputs import BatchLaw
from qbalance.runner import run_scenario, simulate
from qbalance.scenarios import list_scenarios, load_scenario

CORPUS = [sid for sid, _ in list_scenarios()]
POLLING = ["polling_exhaustive_fcfs", "polling_exhaustive_lcfs",
           "polling_gated_fcfs", "polling_gated_lcfs"]


@pytest.fixture(scope="session")
def reports():
    return {sid: run_scenario(load_scenario(sid)) for sid in CORPUS}


def checks_of(report):
    return {c.name: c for c in report.checks}


def assert_passed(check):
    assert check.passed, (f"{check.name}: worst |residual|/tolerance = {check.worst:.3g}")


def test_corpus_size():
    assert len(CORPUS) >= 8


# 1 ---------------------------------------------------------------------------------

def test_criterion_01_telescoping_every_scenario(reports):
    for sid, rep in reports.items():
        c = checks_of(rep)["pathwise_telescoping"]
        assert c.kind == "exact" and c.atol == 1e-9
        n_rep = len(rep.metadata["replications"])
        assert len(c.points) == 2 * len(testfunctions.LIBRARY) * n_rep
        assert np.max(np.abs(c.residual)) <= 1e-9, sid


@pytest.mark.parametrize("sid", CORPUS)
def test_criterion_01_telescoping_more_seeds(sid):
    sc = load_scenario(sid)
    for seed in (1, 2, 3):
        s = sc.with_run(seed=seed, events=20000, clear=("horizon",))
        res = simulate(s, 0)
        c = verifier.check_pathwise_telescoping(res.ledger)
        assert np.max(np.abs(c.residual)) <= 1e-9, (sid, seed)


@pytest.mark.parametrize("sid", CORPUS)
def test_criterion_01_runtime_at_one_million_events(sid):
    sc = load_scenario(sid).with_run(events=10**6, clear=("horizon",))
    t0 = time.perf_counter()
    res = simulate(sc, 0)
    c = verifier.check_pathwise_telescoping(res.ledger)
    elapsed = time.perf_counter() - t0
    assert res.n_events == 10**6
    assert np.max(np.abs(c.residual)) <= 1e-9
    assert elapsed < 10.0, f"{sid}: {elapsed:.2f} s"


# 2 ---------------------------------------------------------------------------------

def test_criterion_02_burke_mm1(reports):
    rep = reports["mm1"]
    cs = checks_of(rep)
    assert cs["burke"].kind == "statistical" and cs["burke"].k == 4.0
    assert len(cs["burke"].points) == 6
    for name in ("burke", "mm1_oracle_arrival", "mm1_oracle_departure"):
        assert_passed(cs[name])
    assert analytic.mm1_pgf(0.5, 0.5) == pytest.approx(2 / 3, abs=1e-15)


# 3 ---------------------------------------------------------------------------------

def test_criterion_03_pasta(reports):
    seen = 0
    for sid, rep in reports.items():
        if not getattr(load_scenario(sid).model, "poisson_input", False):
            continue
        assert_passed(checks_of(rep)["pasta"])
        seen += 1
    assert seen >= 8


# 4 ---------------------------------------------------------------------------------

@pytest.mark.parametrize("sid", POLLING)
def test_criterion_04_polling_balance(reports, sid):
    sc = load_scenario(sid)
    assert sc.model.rates == (0.3, 0.4) and sc.model.rho == pytest.approx(0.5)
    c = checks_of(reports[sid])["polling_balance"]
    assert len(c.points) == len(default_grid(2)) and not c.excluded
    assert_passed(c)


# 5 ---------------------------------------------------------------------------------

CHAIN = ("visit_service_balance", "service_transfer", "switchover_transfer",
         "during_service", "during_switchover")


@pytest.mark.parametrize("sid", POLLING)
def test_criterion_05_polling_chain(reports, sid):
    cs = checks_of(reports[sid])
    for link in CHAIN:
        for i in range(2):
            assert_passed(cs[f"{link}_q{i}"])
    assert_passed(cs["mean_value_decomposition"])
    assert_passed(cs["visit_formula"])


# 6 ---------------------------------------------------------------------------------

def test_criterion_06_batch_arrivals(reports):
    sc = load_scenario("batch_arrivals")
    law = sc.model.batch_law
    assert law == BatchLaw.from_pairs([((1, 0), 0.5), ((0, 2), 0.5)])
    assert law.pgf([0.5, 0.5]) == pytest.approx(0.375, abs=1e-15)
    assert_passed(checks_of(reports["batch_arrivals"])["batch_arrival_balance"])


# 7 ---------------------------------------------------------------------------------

def test_criterion_07_batch_service(reports):
    sc = load_scenario("batch_service")
    assert sc.model.batch_sizes == (2,) and sc.model.m == 1
    assert sc.run.horizon == 1e6
    cs = checks_of(reports["batch_service"])
    assert_passed(cs["batch_service_balance"])
    meta = reports["batch_service"].metadata["replications"][0]
    assert meta["end_time"] == 1e6
    rate = cs["rate_identity"]
    # departed customers per unit time = K times the departure-epoch rate
    assert abs(rate.lhs[0] - rate.rhs[0]) <= 0.01 * rate.rhs[0]


def test_criterion_07_rate_identity_from_epochs():
    sc = load_scenario("batch_service")
    res = simulate(sc, 0)
    led = res.ledger
    lam_d = led.n_departure_epochs / res.end_time
    lam_e = led.cum_e.sum() / res.end_time
    assert res.end_time == 1e6
    assert abs(2 * lam_d - lam_e) <= 0.01 * lam_e


# 8 ---------------------------------------------------------------------------------

def test_criterion_08_priority(reports):
    cs = checks_of(reports["priority_two_class"])
    for name in ("priority_balance", "priority_display_class1", "priority_display_class2"):
        assert_passed(cs[name])


# 9 ---------------------------------------------------------------------------------

@pytest.mark.parametrize("sid", ["longer_queue_symmetric", "longer_queue_asymmetric"])
def test_criterion_09_longer_queue(reports, sid):
    cs = checks_of(reports[sid])
    for name in ("longer_queue_display_q1", "longer_queue_display_q2",
                 "longer_queue_region_partition"):
        assert_passed(cs[name])
    if sid == "longer_queue_symmetric":
        assert_passed(cs["longer_queue_symmetry_departures"])
        assert_passed(cs["longer_queue_symmetry_time_average"])


# 10 --------------------------------------------------------------------------------

def test_criterion_10_roving_network(reports):
    sc = load_scenario("roving_feedback")
    assert sc.model.m == 3 and np.any(np.asarray(sc.model.routing) > 0)
    cs = checks_of(reports["roving_feedback"])
    traffic = cs["traffic_equations"]
    assert np.max(np.abs(traffic.residual)) <= 1e-10
    c = cs["roving_network_balance"]
    assert len(c.points) == len(default_grid(3)) and not c.excluded
    assert_passed(c)


# 11 --------------------------------------------------------------------------------

def test_criterion_11_cesaro(reports):
    for sid, rep in reports.items():
        c = checks_of(rep)["cesaro_convergence"]
        assert c.k == 4.0
        assert_passed(c)


# 12 --------------------------------------------------------------------------------

def test_criterion_12_determinism():
    sc = load_scenario("mm1")
    one = run_scenario(sc, workers=1).to_json()
    two = run_scenario(sc, workers=2).to_json()
    assert one.encode() == two.encode()
