"""Hypothesis strategies for random but valid sample paths."""
import numpy as np
from hypothesis import strategies as st

from qbalance.state import CountingLedger


@st.composite
def marks_and_times(draw, max_m=3, max_len=40):
    """``(m, x0, times, rows)`` with rows ``(pre, de, dd, dr)`` that respect
    departure-first dynamics and never drive a queue negative."""
    m = draw(st.integers(1, max_m))
    x0 = draw(st.lists(st.integers(0, 4), min_size=m, max_size=m))
    n = draw(st.integers(0, max_len))
    gaps = draw(st.lists(st.floats(0.01, 3.0, allow_nan=False), min_size=n, max_size=n))
    times = np.cumsum(gaps) if n else np.zeros(0)
    x = np.array(x0, dtype=np.int64)
    pre, de, dd, dr = [], [], [], []
    for _ in range(n):
        zero = np.zeros(m, dtype=np.int64)
        if x.sum() > 0 and draw(st.booleans()):
            d = np.array([draw(st.integers(0, int(v))) for v in x], dtype=np.int64)
            if d.sum() == 0:
                d[int(np.argmax(x))] = 1
            r = np.array(draw(st.lists(st.integers(0, 2), min_size=m, max_size=m)),
                         dtype=np.int64)
            rows = (x.copy(), zero, d, r)
        else:
            e = np.array(draw(st.lists(st.integers(0, 3), min_size=m, max_size=m)),
                         dtype=np.int64)
            if e.sum() == 0:
                e[draw(st.integers(0, m - 1))] = 1
            rows = (x.copy(), e, zero, zero)
        for acc, v in zip((pre, de, dd, dr), rows):
            acc.append(v)
        x = rows[0] + rows[1] - rows[2] + rows[3]
    shape = (n, m)
    arrays = [np.array(a, dtype=np.int64).reshape(shape) for a in (pre, de, dd, dr)]
    return m, tuple(x0), times, arrays


def ledger_from(m, x0, times, arrays, end=None):
    led = CountingLedger(m=m, x0=x0)
    led.absorb(times, *arrays)
    led.end_time = float(end if end is not None else (times[-1] + 1.0 if len(times) else 1.0))
    return led
