import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qbalance.errors import QBalanceError, SimultaneityViolation
from qbalance.estimators import state_at, transient_functionals_all
from qbalance.inputs import RngStream, ServiceDistribution
from qbalance.kernel import (SERVICE_BEGIN, VISIT_BEGIN, VISIT_COMPLETE, Clock,
                             TimeAverageAccumulator, rate_estimates, run, unique_rows)
from qbalance.models import NetworkConfig, PollingConfig, SingleStationConfig
from qbalance.state import CountingLedger, read_jump_log

EXP = ServiceDistribution.exponential
DET = ServiceDistribution.deterministic


def mm1(lam=0.5, mu=1.0):
    return SingleStationConfig(service=(EXP(mu),), interarrival=(EXP(lam),))


def test_md1_noncommensurate_has_no_ties():
    cfg = SingleStationConfig(service=(DET(1.0),), interarrival=(DET(math.sqrt(2.0)),))
    res = run(cfg, Clock(max_events=10**5), RngStream(1), tie_policy="reject")
    assert res.n_events == 10**5
    assert res.n_jittered == 0
    assert res.ledger.check_exclusivity()


def test_empty_model_keeps_initial_state():
    cfg = SingleStationConfig(service=(EXP(1.0),), interarrival=(None,), x0=(0,))
    res = run(cfg, Clock(horizon=100.0), RngStream(1))
    led = res.ledger
    assert led.n_records == 0
    assert led.cum_e.tolist() == [0] and led.cum_d.tolist() == [0]
    assert led.x_final.tolist() == [0]
    assert state_at(led, 50.0).tolist() == [0]
    assert res.end_time == 100.0


def test_mm1_arrival_rate():
    res = run(mm1(1.0, 2.0), Clock(horizon=1e6), RngStream(4))
    r = rate_estimates(res.ledger, 1e6)
    assert abs(r["lambda_e"] - 1.0) <= 0.003


def test_rate_estimates_definition():
    led = CountingLedger(m=1, x0=(0,))
    times = np.linspace(1.0, 999.0, 500)
    led.absorb(times, np.arange(500)[:, None], np.ones((500, 1)), np.zeros((500, 1)),
               np.zeros((500, 1)))
    led.end_time = 1000.0
    r = rate_estimates(led, 1000.0)
    assert r["lambda_e"] == 0.5
    assert r["lambda_d"] == 0.0
    assert r["lambda_d_A"] == {}
    with pytest.raises(QBalanceError):
        rate_estimates(led, 0.0)


def test_two_queue_rates():
    cfg = NetworkConfig(interarrival=(EXP(1.0), EXP(2.0)), service=(EXP(10.0), EXP(10.0)))
    res = run(cfg, Clock(horizon=1e5), RngStream(6))
    r = rate_estimates(res.ledger, 1e5)
    assert abs(r["lambda_e_k"][0] - 1.0) <= 0.01
    assert abs(r["lambda_e_k"][1] - 2.0) <= 0.014
    # a partial-horizon estimate uses the trace
    r_half = rate_estimates(res.ledger, 5e4)
    assert abs(r_half["lambda_e"] - 3.0) <= 4 * math.sqrt(3.0 / 5e4)


def test_deterministic_ties_reject_and_jitter():
    cfg = SingleStationConfig(service=(DET(2.0),), interarrival=(DET(1.0),), servers=3)
    with pytest.raises(SimultaneityViolation) as exc:
        run(cfg, Clock(horizon=100.0), RngStream(1), tie_policy="reject")
    assert exc.value.time is not None
    res = run(cfg, Clock(horizon=100.0), RngStream(1), tie_policy="jitter")
    assert res.n_jittered > 0
    assert res.ledger.check_exclusivity()
    assert res.ledger.check_conservation()


def test_unknown_tie_policy():
    with pytest.raises(QBalanceError):
        run(mm1(), Clock(horizon=10.0), RngStream(1), tie_policy="ignore")


def test_clock_validation():
    with pytest.raises(QBalanceError):
        Clock()
    with pytest.raises(QBalanceError):
        Clock(horizon=math.inf)


def test_event_budget_stops_run():
    res = run(mm1(), Clock(max_events=1234), RngStream(2))
    assert res.ledger.n_records == 1234
    assert res.end_time == res.ledger.times[-1]


def test_same_seed_same_path():
    a = run(mm1(), Clock(horizon=2e4), RngStream(5))
    b = run(mm1(), Clock(horizon=2e4), RngStream(5))
    c = run(mm1(), Clock(horizon=2e4), RngStream(6))
    assert np.array_equal(a.ledger.times, b.ledger.times)
    assert np.array_equal(a.ledger.pre, b.ledger.pre)
    assert not np.array_equal(a.ledger.times[:50], c.ledger.times[:50])


def test_replayed_log_is_bit_exact(tmp_path):
    cfg = PollingConfig(rates=(0.3, 0.4), service=(EXP(1.0), EXP(2.0)),
                        switchover=(EXP(5.0), EXP(5.0)), routing=np.array([[0, .3], [.2, 0]]))
    path = tmp_path / "run.log"
    live = run(cfg, Clock(horizon=5e3), RngStream(3), jump_log_path=path)
    back = read_jump_log(path)
    assert back.end_time == live.end_time
    for name in ("times", "pre", "de", "dd", "dr"):
        assert np.array_equal(getattr(back, name), getattr(live.ledger, name))
    for t in (live.end_time / 3, live.end_time):
        a = transient_functionals_all(live.ledger, t)
        b = transient_functionals_all(back, t)
        for key in a:
            assert np.array_equal(a[key], b[key])


def test_bounded_memory_mode_keeps_counts():
    full = run(mm1(), Clock(horizon=5e3), RngStream(9))
    small = run(mm1(), Clock(horizon=5e3), RngStream(9), max_records=100)
    assert len(small.ledger.times) == 100
    assert small.ledger.n_records == full.ledger.n_records
    assert np.array_equal(small.ledger.x_final, full.ledger.x_final)
    assert small.ledger.check_conservation()


def test_time_average_matches_path():
    res = run(mm1(), Clock(horizon=2e3), RngStream(12))
    led = res.ledger
    edges = np.concatenate([[0.0], led.times, [res.end_time]])
    states = np.concatenate([[led.x0[0]], led.post_states()[:, 0]])
    direct = math.fsum((np.diff(edges) * states).tolist()) / res.end_time
    assert res.time_average.total_time == pytest.approx(res.end_time, rel=1e-14)
    assert res.time_average.mean()[0] == pytest.approx(direct, rel=1e-12)


def test_time_average_accumulator_pgf():
    acc = TimeAverageAccumulator(1)
    acc.add_intervals(np.array([1.0, 3.0]), np.array([[0], [2]]))
    assert acc.distribution() == {(0,): 0.25, (2,): 0.75}
    assert acc.pgf([[0.5]])[0] == pytest.approx(0.25 + 0.75 * 0.25)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.lists(st.integers(0, 40), min_size=3, max_size=3), min_size=1,
                max_size=60))
def test_unique_rows_matches_numpy(rows):
    a = np.array(rows, dtype=np.int64)
    uniq, inv = unique_rows(a)
    assert np.array_equal(uniq[inv], a)
    assert len(uniq) == len(np.unique(a, axis=0))


# -- server tags -------------------------------------------------------------

def polling(discipline, limits=None, order="fcfs", switch=0.2):
    return PollingConfig(rates=(0.3, 0.4), service=(EXP(1.0), EXP(2.0)),
                         switchover=(EXP(1 / switch), EXP(1 / switch)),
                         discipline=discipline, limits=limits, order=order)


@pytest.mark.parametrize("discipline", ["exhaustive", "gated", "k-limited"])
def test_tag_states_agree_with_path(discipline):
    res = run(polling(discipline), Clock(horizon=3e3), RngStream(7))
    tags = res.tags
    assert len(tags.times) > 0
    assert np.all(np.diff(tags.times) >= 0)
    for n in range(0, len(tags.times), 37):
        assert np.array_equal(tags.states[n], state_at(res.ledger, tags.times[n]))
    for i in range(2):
        _, sb = tags.select(SERVICE_BEGIN, i)
        assert np.all(sb[:, i] >= 1)
        nb = len(tags.select(VISIT_BEGIN, i)[0])
        nc = len(tags.select(VISIT_COMPLETE, i)[0])
        assert nb - nc in (0, 1)


def test_exhaustive_visits_end_empty():
    res = run(polling("exhaustive"), Clock(horizon=3e3), RngStream(8))
    for i in range(2):
        _, vc = res.tags.select(VISIT_COMPLETE, i)
        assert np.all(vc[:, i] == 0)
