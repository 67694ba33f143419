import numpy as np
import pytest
from hypothesis import given, settings

from qbalance.errors import NegativeState, QBalanceError, SimultaneityViolation
from qbalance.state import (CountingLedger, JumpMark, StateVector, apply_jump,
                            classify_departure_subset, code_to_subset, read_jump_log,
                            subset_codes, write_jump_log)

from pathgen import ledger_from, marks_and_times


def test_routing_mark_applies_departure_first():
    x_d, x_post = apply_jump(StateVector((2, 1)), JumpMark((0, 0), (1, 0), (0, 1)))
    assert x_d.x_d == (1, 1)
    assert x_post.counts == (1, 2)


def test_pure_batch_arrival():
    x_d, x_post = apply_jump(StateVector((0, 0)), JumpMark.arrival((2, 1)))
    assert x_d.x_d == (2, 1)
    assert x_post.counts == (2, 1)


def test_departure_leaving_system():
    x_d, x_post = apply_jump(StateVector((1, 0)), JumpMark.departure((1, 0)))
    assert x_d.x_d == (0, 0)
    assert x_post.counts == (0, 0)


def test_departure_larger_than_queue_raises():
    with pytest.raises(NegativeState):
        apply_jump(StateVector((0, 1)), JumpMark.departure((1, 0)))


def test_negative_state_rejected():
    with pytest.raises(NegativeState):
        StateVector((1, -1))


def test_mark_with_arrival_and_departure_rejected():
    with pytest.raises(SimultaneityViolation):
        JumpMark((1, 0), (0, 1), (0, 0))


def test_mark_length_mismatch():
    with pytest.raises(QBalanceError):
        JumpMark((1, 0), (0,), (0, 0))
    with pytest.raises(QBalanceError):
        apply_jump(StateVector((1, 0, 0)), JumpMark.arrival((1, 0)))


@pytest.mark.parametrize("dd, expected", [
    ((1, 0, 2), frozenset({0, 2})),
    ((0, 1, 0), frozenset({1})),
    ((0, 0, 0), None),
])
def test_classify_departure_subset(dd, expected):
    assert classify_departure_subset(JumpMark.departure(dd)) == expected


def test_subset_codes_roundtrip():
    dd = np.array([[1, 0, 2], [0, 1, 0], [3, 3, 3]])
    codes = subset_codes(dd)
    assert codes.tolist() == [5, 2, 7]
    assert [code_to_subset(c) for c in codes.tolist()] == [
        frozenset({0, 2}), frozenset({1}), frozenset({0, 1, 2})]


@settings(max_examples=150, deadline=None)
@given(marks_and_times())
def test_conservation_and_exclusivity(path):
    m, x0, times, arrays = path
    led = ledger_from(m, x0, times, arrays)
    assert led.check_conservation()
    assert led.check_exclusivity()
    # independent fold of apply_jump over the marks
    x = StateVector(x0)
    for _, mark in led.marks():
        _, x = apply_jump(x, mark)
    assert x.counts == tuple(int(v) for v in led.x_final)


@settings(max_examples=100, deadline=None)
@given(marks_and_times())
def test_subset_counters_partition_departures(path):
    m, x0, times, arrays = path
    led = ledger_from(m, x0, times, arrays)
    assert sum(led.departure_epochs_by_subset.values()) == led.n_departure_epochs
    if len(times):
        t = float(times[len(times) // 2])
        c = led.simple_counts(t)
        assert sum(c["d_A"].values()) == c["d"]


@settings(max_examples=60, deadline=None)
@given(marks_and_times())
def test_jump_log_roundtrip(tmp_path_factory, path):
    m, x0, times, arrays = path
    led = ledger_from(m, x0, times, arrays)
    p = tmp_path_factory.mktemp("log") / "path.log"
    write_jump_log(p, led)
    back = read_jump_log(p)
    assert back.x0 == led.x0
    assert back.end_time == led.end_time
    assert np.array_equal(back.times, led.times)
    for a, b in ((back.pre, led.pre), (back.de, led.de), (back.dd, led.dd), (back.dr, led.dr)):
        assert np.array_equal(a, b)


def test_bounded_ledger_keeps_totals():
    led = CountingLedger(m=1, x0=(0,), max_records=3)
    times = np.arange(1.0, 9.0)
    de = np.array([[1], [1], [0], [1], [0], [1], [0], [0]])
    dd = np.array([[0], [0], [1], [0], [1], [0], [1], [1]])
    pre = np.cumsum(np.vstack([[0], de - dd]), axis=0)[:-1]
    led.absorb(times, pre, de, dd, np.zeros_like(de))
    assert len(led.times) == 3 and led.offset == 5
    assert led.n_arrival_epochs == 4 and led.n_departure_epochs == 4
    assert led.x_final.tolist() == [0]
    assert led.check_conservation()


def test_time_order_enforced():
    led = CountingLedger(m=1, x0=(0,))
    led.absorb([2.0], [[0]], [[1]], [[0]], [[0]])
    with pytest.raises(QBalanceError):
        led.absorb([1.0], [[1]], [[1]], [[0]], [[0]])
