import math

import numpy as np
import pytest

from qbalance.errors import InvalidParameter, NonConvergent
from qbalance.estimators import collect_sums, jackknife, state_path
from qbalance.inputs import BatchLaw, RngStream, ServiceDistribution, uniform_source
from qbalance.kernel import SERVICE_BEGIN, VISIT_BEGIN, VISIT_COMPLETE, Clock, run
from qbalance.models import (BatchStationConfig, LongerQueueConfig, NetworkConfig,
                             PollingConfig, PriorityConfig)
from qbalance.models.routing import (MarkovRouter, ShorterQueueRouter, route_departure,
                                     routing_pgf, solve_traffic)

EXP = ServiceDistribution.exponential
DET = ServiceDistribution.deterministic


# -- routing -------------------------------------------------------------------

def test_traffic_without_feedback():
    lam = [0.3, 0.2, 0.1]
    assert np.allclose(solve_traffic(lam, np.zeros((3, 3))), lam, atol=0, rtol=0)


def test_traffic_examples():
    assert solve_traffic([1.0, 0.0], [[0, 0.5], [0, 0]]) == pytest.approx([1.0, 0.5], abs=1e-15)
    assert solve_traffic([1.0, 0.0], [[0, 1.0], [0.5, 0]]) == pytest.approx([2.0, 2.0], abs=1e-14)


def test_traffic_residual_small():
    p = np.array([[0, .3, 0], [0, 0, .4], [.2, 0, 0]])
    lam = np.array([.2, .1, .1])
    big = solve_traffic(lam, p)
    assert np.max(np.abs(big - lam - p.T @ big)) <= 1e-10


def test_traffic_closed_loop_fails():
    with pytest.raises(NonConvergent):
        solve_traffic([1.0, 0.0], [[0, 1.0], [1.0, 0]])
    with pytest.raises(InvalidParameter):
        solve_traffic([1.0, 0.0], [[0, 0.8], [0.7, 0.6]])


def test_route_exit_and_fixed_target():
    leave = MarkovRouter([[0.0, 0.0], [0.0, 0.0]])
    always = MarkovRouter([[0.0, 1.0], [0.0, 0.0]])
    for u in np.linspace(0, 0.999, 50):
        assert route_departure(leave, 0, (1, 0), u).tolist() == [0, 0]
        assert route_departure(always, 0, (1, 0), u).tolist() == [0, 1]


def test_routing_fraction():
    router = MarkovRouter([[0.0, 0.3], [0.0, 0.0]])
    u = uniform_source(RngStream(31))
    n = 10**5
    hits = sum(router(0, (1, 0), u()) == 1 for _ in range(n))
    assert abs(hits / n - 0.3) <= 0.0044


def test_routing_pgf():
    p = np.array([[0, .3, 0], [0, 0, .4], [.2, 0, 0]])
    z = np.array([0.5, 0.25, 0.1])
    assert routing_pgf(p, 0, z) == pytest.approx(0.7 + 0.3 * 0.25)
    assert routing_pgf(p, 1, np.ones(3)) == pytest.approx(1.0)


def test_shorter_queue_router_ties():
    r = ShorterQueueRouter({0: (1, 2)})
    assert r(0, (5, 3, 1), 0.9) == 2
    assert r(0, (5, 2, 2), 0.1) == 1 and r(0, (5, 2, 2), 0.9) == 2
    assert r(1, (5, 2, 2), 0.5) == -1


# -- polling server ----------------------------------------------------------------

def polling(discipline, limits=None, rates=(0.3, 0.4)):
    return PollingConfig(rates=rates, service=(EXP(1.0), EXP(2.0)),
                         switchover=(EXP(5.0), EXP(5.0)), discipline=discipline,
                         limits=limits)


def visits(tags, i):
    """``(state at visit begin, services started)`` for each completed visit at ``i``."""
    out, cur, served = [], None, 0
    for kind, q, x in zip(tags.kinds.tolist(), tags.queues.tolist(), tags.states):
        if q != i:
            continue
        if kind == VISIT_BEGIN:
            cur, served = x, 0
        elif kind == SERVICE_BEGIN:
            served += 1
        elif kind == VISIT_COMPLETE and cur is not None:
            out.append((cur, served))
            cur = None
    return out


def test_gated_serves_exactly_the_gated_customers():
    res = run(polling("gated"), Clock(horizon=2e4), RngStream(2))
    for i in range(2):
        v = visits(res.tags, i)
        assert len(v) > 1000
        assert all(served == x[i] for x, served in v)


def test_limited_serves_at_most_one():
    res = run(polling("k-limited", limits=(1, 1), rates=(0.2, 0.2)),
              Clock(horizon=2e4), RngStream(3))
    for i in range(2):
        v = visits(res.tags, i)
        assert all(served == min(1, x[i]) for x, served in v)


def test_exhaustive_empty_visit_completes_immediately():
    res = run(polling("exhaustive"), Clock(horizon=2e4), RngStream(4))
    tags = res.tags
    idx = np.flatnonzero((tags.kinds == VISIT_BEGIN) & (tags.states[np.arange(len(tags.kinds)),
                                                                     tags.queues] == 0))
    assert len(idx) > 100
    assert np.all(tags.kinds[idx + 1] == VISIT_COMPLETE)
    assert np.all(tags.times[idx + 1] == tags.times[idx])
    assert np.all(tags.queues[idx + 1] == tags.queues[idx])
    for i in range(2):
        v = visits(tags, i)
        assert all(served >= x[i] for x, served in v)


def test_polling_time_split():
    cfg = polling("exhaustive")
    res = run(cfg, Clock(horizon=1e5), RngStream(5))
    sums = collect_sums(res, grid=np.ones((1, 2)))
    serving = [f"T.p{2 * i}" for i in range(2)]

    def frac(S):
        return sum(S[k] for k in serving) / S["T"]

    val, sig = jackknife(sums, frac)
    assert abs(val - cfg.rho) <= 4 * sig


def test_cycle_constants():
    cfg = polling("gated")
    assert cfg.mean_cycle == pytest.approx(cfg.total_switchover / (1 - cfg.rho), abs=1e-12)
    assert np.allclose(cfg.gamma * cfg.throughputs * cfg.mean_cycle, 1.0, atol=1e-12, rtol=0)


def test_polling_validation():
    with pytest.raises(InvalidParameter):
        polling("exhaustive", rates=(0.6, 0.9))
    with pytest.raises(InvalidParameter):
        polling("round-robin")
    with pytest.raises(InvalidParameter):
        PollingConfig(rates=(0.3, 0.4), service=(EXP(1.0),), switchover=(EXP(5.0), EXP(5.0)))
    # k-limited stability needs rho + lambda_i s / k < 1
    with pytest.raises(InvalidParameter):
        PollingConfig(rates=(0.3, 0.3), service=(EXP(1.0), EXP(1.0)),
                      switchover=(DET(1.0), DET(1.0)), discipline="k-limited", limits=(1, 1))


def test_lcfs_and_fcfs_share_arrivals():
    a = run(PollingConfig((0.3, 0.4), (EXP(1.0), EXP(2.0)), (EXP(5.0), EXP(5.0))),
            Clock(horizon=2e3), RngStream(9))
    b = run(PollingConfig((0.3, 0.4), (EXP(1.0), EXP(2.0)), (EXP(5.0), EXP(5.0)), order="lcfs"),
            Clock(horizon=2e3), RngStream(9))
    ta = a.ledger.times[a.ledger.de.sum(1) > 0]
    tb = b.ledger.times[b.ledger.de.sum(1) > 0]
    assert np.array_equal(ta, tb)


# -- priority ----------------------------------------------------------------------

def time_average_means(res, t0, batches=32):
    edges = np.linspace(t0, res.end_time, batches + 1)
    starts, ends, states = state_path(res.ledger, edges)
    dur = np.clip(np.minimum(ends, res.end_time) - np.maximum(starts, t0), 0, None)
    lab = np.clip(np.searchsorted(edges, starts, side="right") - 1, 0, batches - 1)
    w = np.zeros((batches, states.shape[1]))
    np.add.at(w, lab, dur[:, None] * states)
    bm = w / np.diff(edges)[:, None]
    return bm.mean(axis=0), bm.std(axis=0, ddof=1) / math.sqrt(batches)


def test_priority_class_means_match_cobham():
    lam = (0.2, 0.3)
    svc = (EXP(1 / 0.8), EXP(1 / 1.2))
    cfg = PriorityConfig(lam, svc)
    res = run(cfg, Clock(horizon=3e5), RngStream(61))
    mean, se = time_average_means(res, 3e4)
    # residual work, then waiting times by class for non-preemptive priority
    r = sum(l * d.second_moment for l, d in zip(lam, svc)) / 2
    rho1 = lam[0] * svc[0].mean
    w1 = r / (1 - rho1)
    w2 = r / ((1 - rho1) * (1 - cfg.rho))
    expected = np.array([lam[0] * (w1 + svc[0].mean), lam[1] * (w2 + svc[1].mean)])
    assert np.all(np.abs(mean - expected) <= 4 * se)


def test_priority_high_class_unaffected_by_low_class_absence():
    # the low class only changes class-0 delay through residual service
    lam, svc = (0.2, 0.3), (EXP(1 / 0.8), EXP(1 / 1.2))
    alone = run(PriorityConfig((0.2, 0.0), svc), Clock(horizon=2e5), RngStream(5))
    mean, se = time_average_means(alone, 2e4)
    rho1 = lam[0] * svc[0].mean
    # class 0 alone is M/M/1
    assert abs(mean[0] - rho1 / (1 - rho1)) <= 4 * se[0]
    assert mean[1] == 0


# -- longer queue and networks ------------------------------------------------------

def test_longer_queue_serves_longer_queue():
    cfg = LongerQueueConfig(rates=(0.3, 0.5), service=(EXP(1.0), EXP(1.0)))
    res = run(cfg, Clock(horizon=2e4), RngStream(81))
    led = res.ledger
    dep = np.flatnonzero(led.dd.sum(1) > 0)
    queue = np.argmax(led.dd[dep], axis=1)
    xd = led.pre[dep] - led.dd[dep]
    decided = (xd[:-1, 0] != xd[:-1, 1])
    nxt = queue[1:][decided]
    assert np.array_equal(nxt, np.argmax(xd[:-1][decided], axis=1))


def test_longer_queue_validation():
    with pytest.raises(InvalidParameter):
        LongerQueueConfig(rates=(0.3, 0.5, 0.1), service=(EXP(1.0),) * 3)
    with pytest.raises(InvalidParameter):
        LongerQueueConfig(rates=(0.3, 0.5), service=(EXP(1.0),) * 2, alpha=(0.7, 0.7))


def test_shorter_queue_routing_joins_shorter():
    cfg = NetworkConfig(interarrival=(EXP(0.6), None, None),
                        service=(EXP(1.0), EXP(1.0), EXP(1.0)),
                        shorter_queue_targets={0: (1, 2)})
    res = run(cfg, Clock(horizon=2e4), RngStream(101))
    led = res.ledger
    sel = led.dd[:, 0] > 0
    xd = led.pre[sel] - led.dd[sel]
    dest = np.argmax(led.dr[sel], axis=1)
    assert np.all(led.dr[sel].sum(1) == 1)
    other = np.where(dest == 1, 2, 1)
    assert np.all(xd[np.arange(len(xd)), dest] <= xd[np.arange(len(xd)), other])


def test_shorter_queue_cycle_rejected():
    with pytest.raises(InvalidParameter):
        NetworkConfig(interarrival=(EXP(0.1), None), service=(EXP(1.0), EXP(1.0)),
                      shorter_queue_targets={0: (1,), 1: (0,)})


def test_batch_service_departs_in_groups():
    cfg = BatchStationConfig(1.0, BatchLaw.unit(1, 0), (ServiceDistribution.erlang(2, 2.0),),
                             batch_sizes=(2,))
    res = run(cfg, Clock(horizon=1e4), RngStream(51))
    led = res.ledger
    dep = led.dd.sum(1) > 0
    assert np.all(led.dd[dep] == 2)
    assert set(led.departure_epochs_by_subset) == {frozenset({0})}


def test_batch_arrivals_follow_law():
    law = BatchLaw.from_pairs([((1, 0), 0.5), ((0, 2), 0.5)])
    cfg = BatchStationConfig(0.5, law, (EXP(1.0), EXP(2.0)))
    res = run(cfg, Clock(horizon=2e4), RngStream(41))
    de = res.ledger.de[res.ledger.de.sum(1) > 0]
    rows = {tuple(r) for r in de.tolist()}
    assert rows == {(1, 0), (0, 2)}
    frac = np.mean(de[:, 0] == 1)
    assert abs(frac - 0.5) <= 4 * math.sqrt(0.25 / len(de))
