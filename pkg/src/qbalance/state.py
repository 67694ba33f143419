"""System state, jump marks and the counting ledger.

The state ``X(t)`` is a vector of queue lengths (customers in service
included).  Every change of state happens at an *epoch* described by a
:class:`JumpMark` carrying the external-arrival, departure and routing
increments ``(dE, dD, dR)``.  Departures are applied before routing:

    X^d = X(t-) + dE - dD,      X(t) = X^d + dR.

The :class:`CountingLedger` keeps the cumulative counts and the time-ordered
jump log, from which every embedded sample can be replayed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import NegativeState, QBalanceError, SimultaneityViolation

JUMPLOG_MAGIC = "# qbalance jump log v1"


def _as_tuple(v: Iterable[int]) -> tuple:
    return tuple(int(a) for a in v)


@dataclass(frozen=True)
class StateVector:
    counts: tuple
    station_of: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "counts", _as_tuple(self.counts))
        if any(c < 0 for c in self.counts):
            raise NegativeState(f"negative queue length in {self.counts}")
        if self.station_of is not None:
            object.__setattr__(self, "station_of", _as_tuple(self.station_of))
            if len(self.station_of) != len(self.counts):
                raise QBalanceError("station_of must have one entry per queue")

    @property
    def m(self) -> int:
        return len(self.counts)


@dataclass(frozen=True)
class IntermediateState:
    """``X^d``: after departures, before routed customers land."""

    x_d: tuple


@dataclass(frozen=True)
class JumpMark:
    delta_e: tuple
    delta_d: tuple
    delta_r: tuple

    def __post_init__(self):
        for name in ("delta_e", "delta_d", "delta_r"):
            object.__setattr__(self, name, _as_tuple(getattr(self, name)))
        m = len(self.delta_e)
        if len(self.delta_d) != m or len(self.delta_r) != m:
            raise QBalanceError("mark components must share one length")
        if min(self.delta_e + self.delta_d + self.delta_r, default=0) < 0:
            raise QBalanceError("mark components must be nonnegative")
        if sum(self.delta_e) > 0 and sum(self.delta_d) > 0:
            raise SimultaneityViolation(
                "external arrival and departure in one mark")

    @classmethod
    def arrival(cls, delta_e: Sequence[int]) -> "JumpMark":
        z = (0,) * len(delta_e)
        return cls(tuple(delta_e), z, z)

    @classmethod
    def departure(cls, delta_d: Sequence[int],
                  delta_r: Optional[Sequence[int]] = None) -> "JumpMark":
        z = (0,) * len(delta_d)
        return cls(z, tuple(delta_d), z if delta_r is None else tuple(delta_r))

    @property
    def is_arrival(self) -> bool:
        return sum(self.delta_e) > 0

    @property
    def is_departure(self) -> bool:
        return sum(self.delta_d) > 0


def apply_jump(x_pre: StateVector, mark: JumpMark):
    """Apply one epoch; returns ``(IntermediateState, StateVector)``."""
    if len(mark.delta_e) != x_pre.m:
        raise QBalanceError("mark length does not match state length")
    x_d = tuple(x + e - d for x, e, d in
                zip(x_pre.counts, mark.delta_e, mark.delta_d))
    if min(x_d, default=0) < 0:
        raise NegativeState(
            f"departure {mark.delta_d} exceeds queue content {x_pre.counts}")
    x_post = tuple(x + r for x, r in zip(x_d, mark.delta_r))
    return IntermediateState(x_d), StateVector(x_post, x_pre.station_of)


def classify_departure_subset(mark: JumpMark) -> Optional[frozenset]:
    """Support of ``delta_d`` as a 0-based index set, ``None`` if empty."""
    support = frozenset(i for i, d in enumerate(mark.delta_d) if d > 0)
    return support or None


def subset_codes(dd: np.ndarray) -> np.ndarray:
    """Bitmask of the departure support for each row of ``dd``."""
    dd = np.asarray(dd)
    if dd.size == 0:
        return np.zeros(len(dd), dtype=np.int64)
    weights = 1 << np.arange(dd.shape[1], dtype=np.int64)
    return (dd > 0).astype(np.int64) @ weights


def code_to_subset(code: int) -> frozenset:
    return frozenset(i for i in range(code.bit_length()) if code >> i & 1)


@dataclass
class CountingLedger:
    """Cumulative counts ``N^e, N^d, N^r`` plus the retained jump log.

    In full-trace mode the jump log covers the whole path.  Otherwise only the
    most recent ``max_records`` records are retained; ``offset`` is the index
    of the first retained record and ``x_log_start`` the state just before it.
    """

    m: int
    x0: tuple
    max_records: Optional[int] = None
    times: np.ndarray = field(default=None, repr=False)
    pre: np.ndarray = field(default=None, repr=False)
    de: np.ndarray = field(default=None, repr=False)
    dd: np.ndarray = field(default=None, repr=False)
    dr: np.ndarray = field(default=None, repr=False)
    offset: int = 0
    end_time: float = 0.0

    def __post_init__(self):
        self.x0 = _as_tuple(self.x0)
        m = self.m
        empty = np.zeros((0, m), dtype=np.int64)
        if self.times is None:
            self.times = np.zeros(0)
            self.pre, self.de, self.dd, self.dr = (empty.copy() for _ in range(4))
        self.x_log_start = np.array(self.x0, dtype=np.int64)
        self.cum_e = np.zeros(m, dtype=np.int64)
        self.cum_d = np.zeros(m, dtype=np.int64)
        self.cum_r = np.zeros(m, dtype=np.int64)
        self.n_arrival_epochs = 0
        self.n_departure_epochs = 0
        self.arrival_epochs_by_queue = np.zeros(m, dtype=np.int64)
        self.departure_epochs_by_queue = np.zeros(m, dtype=np.int64)
        self.departure_epochs_by_subset: dict = {}
        if len(self.times):
            arrays = (self.times, self.pre, self.de, self.dd, self.dr)
            self.times = np.zeros(0)
            self.pre, self.de, self.dd, self.dr = (empty.copy() for _ in range(4))
            self.absorb(*arrays)

    @property
    def full_trace(self) -> bool:
        return self.offset == 0

    @property
    def n_records(self) -> int:
        return self.offset + len(self.times)

    def absorb(self, times, pre, de, dd, dr):
        """Fold one chunk of records into the totals and the retained log."""
        times = np.asarray(times, dtype=float)
        pre, de, dd, dr = (np.asarray(a, dtype=np.int64).reshape(-1, self.m)
                           for a in (pre, de, dd, dr))
        if len(times) == 0:
            return
        if len(self.times) and times[0] < self.times[-1]:
            raise QBalanceError("jump log must be time ordered")
        self.cum_e += de.sum(0)
        self.cum_d += dd.sum(0)
        self.cum_r += dr.sum(0)
        is_arr = de.sum(1) > 0
        is_dep = dd.sum(1) > 0
        self.n_arrival_epochs += int(is_arr.sum())
        self.n_departure_epochs += int(is_dep.sum())
        self.arrival_epochs_by_queue += (de > 0).sum(0)
        self.departure_epochs_by_queue += (dd > 0).sum(0)
        codes, counts = np.unique(subset_codes(dd[is_dep]), return_counts=True)
        for c, k in zip(codes.tolist(), counts.tolist()):
            key = code_to_subset(c)
            self.departure_epochs_by_subset[key] = (
                self.departure_epochs_by_subset.get(key, 0) + k)
        self.times = np.concatenate([self.times, times])
        self.pre = np.concatenate([self.pre, pre])
        self.de = np.concatenate([self.de, de])
        self.dd = np.concatenate([self.dd, dd])
        self.dr = np.concatenate([self.dr, dr])
        self.end_time = max(self.end_time, float(times[-1]))
        if self.max_records is not None and len(self.times) > self.max_records:
            drop = len(self.times) - self.max_records
            self.x_log_start = (self.pre[drop - 1] + self.de[drop - 1]
                                - self.dd[drop - 1] + self.dr[drop - 1])
            self.offset += drop
            self.times = self.times[drop:]
            self.pre, self.de, self.dd, self.dr = (
                a[drop:] for a in (self.pre, self.de, self.dd, self.dr))

    # -- derived quantities -------------------------------------------------
    @property
    def x_final(self) -> np.ndarray:
        return np.array(self.x0) + self.cum_e - self.cum_d + self.cum_r

    def post_states(self) -> np.ndarray:
        """``X(t)`` just after each retained record."""
        return self.pre + self.de - self.dd + self.dr

    def replay_states(self) -> np.ndarray:
        """Rebuild ``X(t)`` after each record from ``x_log_start`` and marks only."""
        inc = self.de - self.dd + self.dr
        return self.x_log_start[None, :] + np.cumsum(inc, axis=0)

    def check_conservation(self) -> bool:
        """``X(t) = X(0) + N^e - N^d + N^r`` along the retained log, exactly."""
        if len(self.times) == 0:
            return True
        if not np.array_equal(self.replay_states(), self.post_states()):
            return False
        if self.full_trace and not np.array_equal(self.pre[0], np.array(self.x0)):
            return False
        return bool(np.array_equal(self.post_states()[-1], self.x_final))

    def check_exclusivity(self) -> bool:
        return not bool(np.any((self.de.sum(1) > 0) & (self.dd.sum(1) > 0)))

    def simple_counts(self, t: Optional[float] = None) -> dict:
        """Simple point-process counts up to time ``t`` (inclusive)."""
        if t is None:
            sl = slice(None)
        else:
            if not self.full_trace:
                raise QBalanceError("time-indexed counts need a full trace")
            sl = slice(0, int(np.searchsorted(self.times, t, side="right")))
        de, dd = self.de[sl], self.dd[sl]
        is_dep = dd.sum(1) > 0
        subsets: dict = {}
        codes, counts = np.unique(subset_codes(dd[is_dep]), return_counts=True)
        for c, k in zip(codes.tolist(), counts.tolist()):
            subsets[code_to_subset(c)] = k
        return {
            "e": int((de.sum(1) > 0).sum()),
            "d": int(is_dep.sum()),
            "e_k": (de > 0).sum(0),
            "d_i": (dd > 0).sum(0),
            "d_A": subsets,
        }

    def marks(self):
        for i in range(len(self.times)):
            yield float(self.times[i]), JumpMark(self.de[i], self.dd[i], self.dr[i])


# -- jump-log file format ----------------------------------------------------

def _format_record(t: float, row) -> str:
    return repr(float(t)) + " " + " ".join(str(int(v)) for v in row)


class JumpLogWriter:
    """Streams jump-log records to a text file, one record per line."""

    def __init__(self, path, m: int, x0: Sequence[int]):
        self.m = m
        self._fh = open(path, "w", encoding="ascii")
        self._fh.write(JUMPLOG_MAGIC + "\n")
        self._fh.write(f"# m {m}\n")
        self._fh.write("# x0 " + " ".join(str(int(v)) for v in x0) + "\n")

    def write(self, times, de, dd, dr):
        rows = np.hstack([np.asarray(de), np.asarray(dd), np.asarray(dr)])
        self._fh.write("".join(_format_record(t, r) + "\n"
                               for t, r in zip(np.asarray(times).tolist(), rows)))

    def close(self, end_time: Optional[float] = None):
        if end_time is not None:
            self._fh.write(f"# end {float(end_time)!r}\n")
        self._fh.close()


def write_jump_log(path, ledger: CountingLedger) -> None:
    if not ledger.full_trace:
        raise QBalanceError("writing a jump log requires a full trace")
    w = JumpLogWriter(path, ledger.m, ledger.x0)
    w.write(ledger.times, ledger.de, ledger.dd, ledger.dr)
    w.close(ledger.end_time)


def read_jump_log(path) -> CountingLedger:
    m = x0 = None
    end = None
    times, rows = [], []
    with open(path, encoding="ascii") as fh:
        first = fh.readline().rstrip("\n")
        if first != JUMPLOG_MAGIC:
            raise QBalanceError(f"{path}: not a qbalance jump log")
        for line in fh:
            if line.startswith("#"):
                parts = line[1:].split()
                if parts[0] == "m":
                    m = int(parts[1])
                elif parts[0] == "x0":
                    x0 = tuple(int(v) for v in parts[1:])
                elif parts[0] == "end":
                    end = float(parts[1])
                continue
            parts = line.split()
            if not parts:
                continue
            times.append(float(parts[0]))
            rows.append([int(v) for v in parts[1:]])
    if m is None or x0 is None:
        raise QBalanceError(f"{path}: missing header")
    marks = np.array(rows, dtype=np.int64).reshape(-1, 3 * m)
    de, dd, dr = marks[:, :m], marks[:, m:2 * m], marks[:, 2 * m:]
    inc = de - dd + dr
    post = np.array(x0, dtype=np.int64)[None, :] + np.cumsum(inc, axis=0)
    pre = post - inc
    ledger = CountingLedger(m, x0)
    ledger.absorb(np.array(times), pre, de, dd, dr)
    if end is not None:
        ledger.end_time = end
    return ledger
