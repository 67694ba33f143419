"""Discrete-event engine.

The engine owns the future-event set, the queue-length vector and the
recorders.  Models never touch ``x`` directly; they report epochs through
:meth:`Simulator.arrive` / :meth:`Simulator.depart` (and the batch variants),
which build one jump mark per epoch with departures applied before routing.

Events at equal time are ordered by (priority class, insertion sequence):
service completion < internal arrival < external arrival < switchover end.
"""
from __future__ import annotations

import gc
import heapq
import itertools
import math
from array import array
from dataclasses import dataclass, field
from typing import Any, Callable, NamedTuple, Optional

import numpy as np

from .errors import NegativeState, QBalanceError, SimultaneityViolation
from .state import CountingLedger, JumpLogWriter

SERVICE_COMPLETION = 0
INTERNAL_ARRIVAL = 1
EXTERNAL_ARRIVAL = 2
SWITCHOVER_END = 3

JITTER = 1e-9
TIE_POLICIES = ("reject", "jitter")

# tag kinds recorded for polling-type models
VISIT_BEGIN = 0
VISIT_COMPLETE = 1
SERVICE_BEGIN = 2
EMPTY_VISIT = 3    # recorded only: a visit begin and completion at the same epoch
TAG_NAMES = {VISIT_BEGIN: "visit_begin", VISIT_COMPLETE: "visit_complete",
             SERVICE_BEGIN: "service_begin"}

_MAX_QUEUE = 2**62


class Event(NamedTuple):
    time: float
    priority: int
    seq: int
    handler: Callable
    payload: Any = None


@dataclass
class Clock:
    horizon: Optional[float] = None
    max_events: Optional[int] = None

    def __post_init__(self):
        if self.horizon is None and self.max_events is None:
            raise QBalanceError("a clock needs a horizon or an event budget")
        if self.horizon is not None and not (0 < self.horizon < math.inf):
            raise QBalanceError("horizon must be positive and finite")
        if self.max_events is not None and self.max_events < 0:
            raise QBalanceError("event budget must be nonnegative")


def unique_rows(rows: np.ndarray):
    """Unique rows of a nonnegative integer matrix and the inverse index."""
    n, m = rows.shape
    if n == 0:
        return rows[:0], np.zeros(0, dtype=np.int64)
    base = int(rows.max()) + 1
    if m == 1 or base ** m < 2**62:
        radix = base ** np.arange(m, dtype=np.int64)
        keys, inv = np.unique(rows @ radix, return_inverse=True)
        inv = inv.reshape(-1)
        first = np.full(len(keys), n, dtype=np.int64)
        np.minimum.at(first, inv, np.arange(n))
        return rows[first], inv
    uniq, inv = np.unique(rows, axis=0, return_inverse=True)
    return uniq, inv.reshape(-1)


class TimeAverageAccumulator:
    """Time-weighted occupancy of each visited state.

    Per-state weights use Neumaier compensated summation so long horizons
    do not drift.
    """

    def __init__(self, m: int):
        self.m = m
        self._w: dict = {}
        self._total = [0.0, 0.0]

    @staticmethod
    def _add(acc, v):
        s, c = acc
        t = s + v
        if abs(s) >= abs(v):
            c += (s - t) + v
        else:
            c += (v - t) + s
        acc[0], acc[1] = t, c

    def add_intervals(self, durations: np.ndarray, states: np.ndarray):
        durations = np.asarray(durations, dtype=float)
        if durations.size == 0:
            return
        uniq, inv = unique_rows(np.asarray(states, dtype=np.int64).reshape(-1, self.m))
        parts = np.bincount(inv, weights=durations, minlength=len(uniq))
        for key, part in zip(map(tuple, uniq.tolist()), parts.tolist()):
            acc = self._w.get(key)
            if acc is None:
                acc = self._w[key] = [0.0, 0.0]
            self._add(acc, part)
        self._add(self._total, math.fsum(parts.tolist()))

    @property
    def total_time(self) -> float:
        return self._total[0] + self._total[1]

    def weights(self) -> dict:
        return {k: v[0] + v[1] for k, v in self._w.items()}

    def distribution(self) -> dict:
        tot = self.total_time
        return {k: w / tot for k, w in self.weights().items()} if tot > 0 else {}

    def pgf(self, grid) -> np.ndarray:
        grid = np.atleast_2d(np.asarray(grid, dtype=float))
        w = self.weights()
        if not w:
            return np.full(len(grid), np.nan)
        states = np.array(list(w.keys()))
        wt = np.array(list(w.values()))
        table = np.prod(grid[None, :, :] ** states[:, None, :], axis=2)
        return wt @ table / self.total_time

    def mean(self) -> np.ndarray:
        w = self.weights()
        states = np.array(list(w.keys()), dtype=float)
        wt = np.array(list(w.values()))
        return wt @ states / self.total_time


@dataclass
class TagLog:
    """Non-jump epochs (visit/service beginnings) with the state at that epoch."""

    times: np.ndarray
    kinds: np.ndarray
    queues: np.ndarray
    states: np.ndarray

    def select(self, kind: int, queue: Optional[int] = None):
        mask = self.kinds == kind
        if queue is not None:
            mask &= self.queues == queue
        return self.times[mask], self.states[mask]


@dataclass
class SimulationResult:
    m: int
    x0: tuple
    end_time: float
    ledger: CountingLedger
    tags: TagLog
    phase_times: np.ndarray
    phase_values: np.ndarray
    initial_phase: int
    time_average: TimeAverageAccumulator
    n_jittered: int = 0
    n_events: int = 0
    info: dict = field(default_factory=dict)


class Simulator:
    """Single-replication event engine.

    Epoch records are buffered as compact integer codes and decoded into
    ``(dE, dD, dR)`` rows chunk by chunk: ``0 <= c < m`` is a single arrival
    at ``c``; ``c >= m`` encodes a single departure from ``i`` routed to ``k``
    as ``m + i (m + 1) + (k + 1)``; ``c < 0`` points into the batch side table.
    """

    def __init__(self, m: int, x0=None, tie_policy: str = "reject",
                 chunk_size: int = 1 << 16, max_records: Optional[int] = None,
                 jump_log_path=None, initial_phase: int = -1,
                 horizon: float = math.inf):
        if tie_policy not in TIE_POLICIES:
            raise QBalanceError(f"tie policy must be one of {TIE_POLICIES}")
        self.m = m
        self.x0 = tuple(int(v) for v in (x0 if x0 is not None else (0,) * m))
        if len(self.x0) != m or min(self.x0, default=0) < 0:
            raise NegativeState("initial state must be a nonnegative length-m vector")
        self.x = list(self.x0)
        self.now = 0.0
        self.horizon = horizon  # models may fast-forward internal epochs up to here
        self.tie_policy = tie_policy
        self._initial_phase = initial_phase
        self._heap: list = []
        self._seq = itertools.count()
        self.schedule = self._make_schedule()
        self._last_dep = [-1.0]   # one-slot cells shared with the run loop
        self._last_arr = [-1.0]
        self.n_jittered = 0
        self._flushed = 0
        self._chunk_size = chunk_size
        self._dep_base = [m + i * (m + 1) + 1 for i in range(m)]
        self._batch_ids: dict = {}     # distinct batch marks, kept for the whole run
        self._batch_rows: list = []
        self.ledger = CountingLedger(m, self.x0, max_records=max_records)
        self.time_average = TimeAverageAccumulator(m)
        self._writer = JumpLogWriter(jump_log_path, m, self.x0) if jump_log_path else None
        self._acc_time = 0.0
        self._acc_state = np.array(self.x0, dtype=np.int64)
        self._reset_buffers()
        self._tag_t = array("d")
        self._tag_c = array("q")   # kind * m + queue
        self._tag_x: list = []     # resolved tag states, one array per flush
        self._tag_done = 0

    def _reset_buffers(self):
        self._t = array("d")
        self._pre = array("q")
        self._code = array("q")

    @property
    def n_events(self) -> int:
        return self._flushed + len(self._t)

    # -- scheduling ------------------------------------------------------------
    def _make_schedule(self):
        # a closure over the heap skips attribute lookups on the hot path
        heap, seq, push = self._heap, self._seq, heapq.heappush

        def schedule(time: float, priority: int, handler: Callable, payload=None):
            push(heap, (time, priority, next(seq), handler, payload))
        return schedule

    # -- epochs ------------------------------------------------------------------
    def arrive(self, k: int):
        """Single external arrival at queue ``k``."""
        self._t.append(self.now)
        self._pre.extend(self.x)
        self._code.append(k)
        self.x[k] += 1
        self._last_arr[0] = self.now

    def arrive_batch(self, delta_e):
        self._record_batch(tuple(delta_e), None, None)
        for i, v in enumerate(delta_e):
            self.x[i] += v
        self._last_arr[0] = self.now

    def depart(self, i: int, route: int = -1):
        """Single departure from queue ``i``, routed to ``route`` (-1: leaves)."""
        x = self.x
        if x[i] < 1:
            raise NegativeState(f"departure from empty queue {i} at t={self.now}")
        self._t.append(self.now)
        self._pre.extend(x)
        self._code.append(self._dep_base[i] + route)
        x[i] -= 1
        if route >= 0:
            x[route] += 1
        self._last_dep[0] = self.now

    def depart_batch(self, delta_d, delta_r=None):
        x = self.x
        if any(v < d for v, d in zip(x, delta_d)):
            raise NegativeState(f"departure {delta_d} exceeds {x} at t={self.now}")
        self._record_batch(None, tuple(delta_d), None if delta_r is None else tuple(delta_r))
        if delta_r is None:
            for i, d in enumerate(delta_d):
                x[i] -= d
        else:
            for i, (d, r) in enumerate(zip(delta_d, delta_r)):
                x[i] += r - d
        self._last_dep[0] = self.now

    def _record_batch(self, de, dd, dr):
        self._t.append(self.now)
        self._pre.extend(self.x)
        key = (de, dd, dr)
        b = self._batch_ids.get(key)
        if b is None:
            b = self._batch_ids[key] = len(self._batch_rows)
            zero = (0,) * self.m
            self._batch_rows.append([v if v is not None else zero for v in key])
        self._code.append(-b - 1)

    def tag(self, kind: int, queue: int):
        """Record a non-jump epoch; its state is filled in at the next flush.

        A tag sees the state after every jump at or before its epoch, so a
        model must tag an epoch only once all jumps at that epoch have been
        recorded.  Hot loops may append to ``tag_times``/``tag_codes``
        directly with codes from :meth:`tag_code`.
        """
        self._tag_t.append(self.now)
        self._tag_c.append(kind * self.m + queue)

    def tag_code(self, kind: int, queue: int) -> int:
        return kind * self.m + queue

    @property
    def tag_times(self):
        return self._tag_t

    @property
    def tag_codes(self):
        return self._tag_c

    def _resolve_tags(self, times: np.ndarray, post: np.ndarray, before: np.ndarray):
        """States for pending tags from one chunk of records (``times``,
        post-states ``post``) and the state ``before`` that chunk."""
        n = len(self._tag_t)
        if n == self._tag_done:
            return
        tt = np.frombuffer(self._tag_t, dtype=float)[self._tag_done:n]
        idx = np.searchsorted(times, tt, side="right") - 1
        states = np.where(idx[:, None] >= 0, post[np.maximum(idx, 0)], before[None, :])
        self._tag_x.append(states)
        self._tag_done = n

    # -- bookkeeping -------------------------------------------------------------
    def _decode(self, codes: np.ndarray):
        m, n = self.m, len(codes)
        de = np.zeros((n, m), dtype=np.int64)
        dd = np.zeros((n, m), dtype=np.int64)
        dr = np.zeros((n, m), dtype=np.int64)
        rows = np.arange(n)
        arr = (codes >= 0) & (codes < m)
        de[rows[arr], codes[arr]] = 1
        dep = codes >= m
        j = codes[dep] - m
        src, dst = j // (m + 1), j % (m + 1) - 1
        dd[rows[dep], src] = 1
        routed = dst >= 0
        dr[rows[dep][routed], dst[routed]] = 1
        neg = codes < 0
        if neg.any():
            tab = np.asarray(self._batch_rows, dtype=np.int64)   # (B, 3, m)
            idx = -codes[neg] - 1
            de[neg], dd[neg], dr[neg] = tab[idx, 0], tab[idx, 1], tab[idx, 2]
        return de, dd, dr

    def _flush(self):
        n = len(self._t)
        if n == 0:
            return
        m = self.m
        times = np.frombuffer(self._t, dtype=float).copy()
        pre = np.frombuffer(self._pre, dtype=np.int64).reshape(n, m).copy()
        de, dd, dr = self._decode(np.frombuffer(self._code, dtype=np.int64))
        self._reset_buffers()
        self._flushed += n
        post = pre + de - dd + dr
        if post.max(initial=0) > _MAX_QUEUE:
            raise QBalanceError("queue length overflow: the model is unstable")
        # interval ending at each record carries the state before it
        starts = np.concatenate([[self._acc_time], times[:-1]])
        self.time_average.add_intervals(times - starts, pre)
        self._resolve_tags(times, post, self._acc_state)
        self._acc_time = float(times[-1])
        self._acc_state = post[-1]
        if self._writer is not None:
            self._writer.write(times, de, dd, dr)
        self.ledger.absorb(times, pre, de, dd, dr)

    def _events(self, horizon: float, budget: float) -> bool:
        """Process events until the heap empties, the horizon passes or the
        record budget is used up; True in the last case."""
        heap = self._heap
        pop = heapq.heappop
        counted = budget < math.inf
        jitter = self.tie_policy == "jitter"
        exhausted = False
        stopped = False
        last_dep = self._last_dep
        last_arr = self._last_arr
        # every event writes at most one record, so a round of events sized
        # by the free chunk space cannot overshoot the budget or the chunk
        while heap and not stopped:
            if len(self._t) >= self._chunk_size:
                self._flush()
            todo = self._chunk_size - len(self._t)
            if counted:
                todo = min(todo, int(budget - self.n_events))
                if todo <= 0:
                    exhausted = True
                    break
            for _ in range(todo):
                if not heap:
                    break
                ev = pop(heap)
                time = ev[0]
                if time > horizon:
                    heapq.heappush(heap, ev)
                    stopped = True
                    break
                prio = ev[1]
                if prio == EXTERNAL_ARRIVAL and time == last_dep[0]:
                    if jitter:
                        self.n_jittered += 1
                        self.schedule(time + JITTER, prio, ev[3], ev[4])
                        continue
                    raise SimultaneityViolation(
                        f"external arrival coincides with a departure at t={time!r}",
                        time=time)
                if prio == SERVICE_COMPLETION and time == last_arr[0]:
                    raise SimultaneityViolation(
                        f"service completion coincides with an arrival at t={time!r}",
                        time=time)
                self.now = time
                ev[3](ev[4])
        return exhausted

    def run(self, stop: Clock, info: Optional[dict] = None) -> SimulationResult:
        horizon = stop.horizon if stop.horizon is not None else math.inf
        self.horizon = min(self.horizon, horizon)
        budget = stop.max_events if stop.max_events is not None else math.inf
        # the loop allocates millions of short-lived tuples and no cycles
        paused = gc.isenabled()
        gc.disable()
        try:
            exhausted = self._events(horizon, budget)
        finally:
            if paused:
                gc.enable()
        end = self.now if exhausted or stop.horizon is None else horizon
        self._flush()
        self._resolve_tags(np.zeros(0), np.zeros((0, self.m), dtype=np.int64),
                           np.asarray(self._acc_state, dtype=np.int64))
        self.time_average.add_intervals(np.array([end - self._acc_time]),
                                        self._acc_state[None, :])
        self.ledger.end_time = end
        if self._writer is not None:
            self._writer.close(end)
        m = self.m
        codes = np.frombuffer(self._tag_c, dtype=np.int64)
        kinds, queues = codes // m, codes % m
        times = np.frombuffer(self._tag_t, dtype=float)
        states = (np.concatenate(self._tag_x) if self._tag_x
                  else np.zeros((0, m), dtype=np.int64))
        # expand empty visits into a begin followed by a completion
        rep = np.where(kinds == EMPTY_VISIT, 2, 1)
        first = np.cumsum(rep) - rep
        kinds = np.repeat(kinds, rep)
        kinds[first[rep == 2]] = VISIT_BEGIN
        kinds[first[rep == 2] + 1] = VISIT_COMPLETE
        tags = TagLog(times=np.repeat(times, rep), kinds=kinds,
                      queues=np.repeat(queues, rep), states=np.repeat(states, rep, axis=0))
        # server phase: 2i while serving queue i, 2i + 1 while switching away
        visit = (tags.kinds == VISIT_BEGIN) | (tags.kinds == VISIT_COMPLETE)
        phase = 2 * tags.queues + (tags.kinds == VISIT_COMPLETE)
        return SimulationResult(
            m=m, x0=self.x0, end_time=end, ledger=self.ledger, tags=tags,
            phase_times=tags.times[visit], phase_values=phase[visit],
            initial_phase=self._initial_phase, time_average=self.time_average,
            n_jittered=self.n_jittered, n_events=self.n_events, info=dict(info or {}),
        )


def run(model, stop: Clock, stream, tie_policy: str = "reject",
        max_records: Optional[int] = None, jump_log_path=None) -> SimulationResult:
    """Simulate one replication of ``model`` (a model-zoo config) until ``stop``."""
    sim = Simulator(model.m, getattr(model, "x0", None), tie_policy=tie_policy,
                    max_records=max_records, jump_log_path=jump_log_path,
                    initial_phase=getattr(model, "initial_phase", -1),
                    horizon=stop.horizon if stop.horizon is not None else math.inf)
    model.instantiate(sim, stream)
    return sim.run(stop, info={"model": model.kind})


def rate_estimates(ledger: CountingLedger, t: Optional[float] = None) -> dict:
    """Empirical rates of the simple counting processes up to time ``t``."""
    if t is None:
        t = ledger.end_time
    if t <= 0:
        raise QBalanceError("rates need t > 0")
    if t >= ledger.end_time:
        c = {"e": ledger.n_arrival_epochs, "d": ledger.n_departure_epochs,
             "e_k": ledger.arrival_epochs_by_queue,
             "d_i": ledger.departure_epochs_by_queue,
             "d_A": ledger.departure_epochs_by_subset}
    else:
        c = ledger.simple_counts(t)
    return {
        "lambda_e": c["e"] / t,
        "lambda_d": c["d"] / t,
        "lambda_e_k": np.asarray(c["e_k"]) / t,
        "lambda_d_i": np.asarray(c["d_i"]) / t,
        "lambda_d_A": {A: n / t for A, n in c["d_A"].items()},
    }
