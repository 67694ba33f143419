"""Empirical Palm laws, generating functions and batch statistics.

Everything here is post-processing over a finished :class:`SimulationResult`.

Stationary quantities are estimated from the window ``[w, T]`` where the
warm-up ``w`` is a fraction of the horizon.  The window is cut into equal
time batches.  For each batch we keep *sufficient sums* (sums of ``z^X`` over
epochs, epoch counts, time integrals of ``z^X``), so any smooth function of
pooled sums (ratios, products of ratios) can be evaluated on the pooled data
and its standard error obtained by leaving one batch out at a time
(jackknife).  Left- and right-hand sides of an identity share the same
batches, so their covariance is accounted for automatically.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional

import numpy as np

from . import testfunctions
from .errors import EmptyLog, MissingEstimate, QBalanceError
from .kernel import (SERVICE_BEGIN, VISIT_BEGIN, VISIT_COMPLETE, SimulationResult,
                     unique_rows)
from .state import CountingLedger, subset_codes

SCHEMA_VERSION = "1"
GRID_LEVELS = (0.0, 0.25, 0.5, 0.75, 0.9, 1.0)
GRID_CAP = 500
GRID_SEED = 20170404


def default_grid(m: int, cap: int = GRID_CAP, seed: int = GRID_SEED) -> np.ndarray:
    """Tensor grid over ``GRID_LEVELS``; subsampled to ``cap`` points when larger.

    The all-ones point is always kept.
    """
    levels = np.asarray(GRID_LEVELS)
    n = len(levels) ** m
    if n <= cap:
        mesh = np.meshgrid(*([levels] * m), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)
    rng = np.random.default_rng(seed)
    picks = np.sort(rng.choice(n - 1, size=cap - 1, replace=False))
    idx = np.append(picks, n - 1)
    digits = np.stack([(idx // len(levels) ** (m - 1 - j)) % len(levels)
                       for j in range(m)], axis=1)
    return levels[digits]


def power_table(states: np.ndarray, grid: np.ndarray):
    """Return ``(inv, table)`` with ``z^x = table[inv[n], g]``."""
    states = np.asarray(states, dtype=np.int64)
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    if len(states) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros((0, len(grid)))
    uniq, inv = unique_rows(states)
    table = np.ones((len(uniq), len(grid)))
    for j in range(states.shape[1]):
        table *= grid[None, :, j] ** uniq[:, j, None]
    return inv, table


def grouped_pgf_sums(states, groups, n_groups: int, grid, weights=None) -> np.ndarray:
    """``(n_groups, G)`` sums of ``w * z^X`` per group label."""
    inv, table = power_table(states, grid)
    if len(inv) == 0:
        return np.zeros((n_groups, np.atleast_2d(grid).shape[0]))
    u = table.shape[0]
    counts = np.bincount(np.asarray(groups) * u + inv, weights=weights,
                         minlength=n_groups * u).reshape(n_groups, u)
    return counts @ table


# --------------------------------------------------------------------------
# generating-function estimates

@dataclass
class PgfEstimate:
    grid: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    n: int

    def to_dict(self) -> dict:
        return {"schema": SCHEMA_VERSION, "grid": self.grid.tolist(),
                "values": self.values.tolist(), "stderr": self.stderr.tolist(),
                "n": int(self.n)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def write_csv(self, path) -> None:
        m = self.grid.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"z{j + 1}" for j in range(m)] + ["value", "stderr"])
            for z, v, s in zip(self.grid.tolist(), self.values.tolist(),
                               self.stderr.tolist()):
                w.writerow([repr(c) for c in z] + [repr(v), repr(s)])


def _batch_means_stderr(batch_sums, batch_n):
    nb = len(batch_n)
    means = batch_sums / batch_n[:, None]
    return means.std(axis=0, ddof=1) / math.sqrt(nb)


def empirical_pgf(samples, grid, batches: Optional[int] = None) -> PgfEstimate:
    """Mean of ``z^X`` over the samples at each grid point.

    ``batches=None`` gives the i.i.d. standard error; an integer uses that
    many contiguous batch means, which is appropriate for correlated series.
    """
    x = np.atleast_2d(np.asarray(samples, dtype=np.int64))
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    n = len(x) if np.asarray(samples).size else 0
    if n == 0:
        raise EmptyLog("empirical PGF needs at least one sample")
    inv, table = power_table(x, grid)
    vals = table[inv]
    mean = vals.mean(axis=0)
    ones = np.all(grid == 1.0, axis=1)
    mean[ones] = 1.0
    if batches is None or batches < 2 or n < 2 * batches:
        se = vals.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(len(grid))
    else:
        labels = (np.arange(n) * batches) // n
        sums = np.zeros((batches, len(grid)))
        np.add.at(sums, labels, vals)
        se = _batch_means_stderr(sums, np.bincount(labels, minlength=batches))
    se[ones] = 0.0
    return PgfEstimate(grid=grid, values=mean, stderr=np.maximum(se, 0.0), n=n)


# --------------------------------------------------------------------------
# embedded sample logs

@dataclass
class EmbeddedSampleLog:
    """States seen at arrival and departure epochs, plus server tags.

    Arrival samples are ``(X(t-), dE)``; departure samples are
    ``(X^d(t), dD, dR)`` with ``X^d`` taken after the departure but before
    any internal arrival.
    """

    m: int
    arrival_times: np.ndarray
    arrival_states: np.ndarray
    arrival_marks: np.ndarray
    departure_times: np.ndarray
    departure_states: np.ndarray
    departure_marks: np.ndarray
    departure_routes: np.ndarray
    tags: Optional[object] = None
    t0: float = 0.0
    t1: float = math.inf

    @classmethod
    def from_ledger(cls, ledger: CountingLedger, tags=None, t0: float = 0.0,
                    t1: Optional[float] = None) -> "EmbeddedSampleLog":
        if not ledger.full_trace:
            raise QBalanceError("sample logs need the full jump trace")
        t1 = ledger.end_time if t1 is None else t1
        keep = (ledger.times >= t0) & (ledger.times <= t1)
        arr = keep & (ledger.de.sum(axis=1) > 0)
        dep = keep & (ledger.dd.sum(axis=1) > 0)
        log = cls(
            m=ledger.m,
            arrival_times=ledger.times[arr], arrival_states=ledger.pre[arr],
            arrival_marks=ledger.de[arr],
            departure_times=ledger.times[dep],
            departure_states=ledger.pre[dep] - ledger.dd[dep],
            departure_marks=ledger.dd[dep], departure_routes=ledger.dr[dep],
            tags=tags, t0=t0, t1=t1,
        )
        return log

    @classmethod
    def from_result(cls, result: SimulationResult, t0: float = 0.0,
                    t1: Optional[float] = None) -> "EmbeddedSampleLog":
        return cls.from_ledger(result.ledger, result.tags, t0, t1)

    @property
    def n_arrivals(self) -> int:
        return len(self.arrival_times)

    @property
    def n_departures(self) -> int:
        return len(self.departure_times)

    @property
    def span(self) -> float:
        return self.t1 - self.t0

    def arrival_pgf(self, grid, batches=None) -> PgfEstimate:
        return empirical_pgf(self.arrival_states, grid, batches)

    def departure_pgf(self, grid, batches=None) -> PgfEstimate:
        return empirical_pgf(self.departure_states, grid, batches)


@dataclass
class SubLog:
    """One cell of a Palm split: the sample states and its epoch rate."""

    key: object
    states: np.ndarray
    marks: np.ndarray
    routes: Optional[np.ndarray]
    weight: float

    @property
    def n(self) -> int:
        return len(self.states)

    def pgf(self, grid, batches=None) -> PgfEstimate:
        return empirical_pgf(self.states, grid, batches)


PALM_MODES = ("by_arrival_class", "by_departure_queue", "by_departure_subset",
              "by_route_pair")


def palm_split(log: EmbeddedSampleLog, mode: str) -> Dict[object, SubLog]:
    """Partition embedded samples; weights are epoch counts over the span.

    ``by_arrival_class`` keys on ``k`` (an epoch belongs to every class in its
    batch); ``by_departure_queue`` keys on ``i`` for single-queue departures;
    ``by_departure_subset`` keys on the frozenset of departing queues;
    ``by_route_pair`` keys on ``(i, j)`` with ``j = -1`` for leaving.
    """
    if mode not in PALM_MODES:
        raise QBalanceError(f"mode must be one of {PALM_MODES}")
    span = log.span if math.isfinite(log.span) and log.span > 0 else 1.0
    out = {}
    if mode == "by_arrival_class":
        for k in range(log.m):
            sel = log.arrival_marks[:, k] > 0
            if sel.any():
                out[k] = SubLog(k, log.arrival_states[sel], log.arrival_marks[sel],
                                None, sel.sum() / span)
        return out
    codes = subset_codes(log.departure_marks)
    if mode == "by_departure_subset":
        for c in np.unique(codes).tolist():
            sel = codes == c
            key = frozenset(j for j in range(log.m) if c >> j & 1)
            out[key] = SubLog(key, log.departure_states[sel], log.departure_marks[sel],
                              log.departure_routes[sel], sel.sum() / span)
        return out
    single = (codes & (codes - 1)) == 0
    queue = np.where(single, np.log2(np.maximum(codes, 1)).astype(np.int64), -1)
    if mode == "by_departure_queue":
        for i in range(log.m):
            sel = queue == i
            if sel.any():
                out[i] = SubLog(i, log.departure_states[sel], log.departure_marks[sel],
                                log.departure_routes[sel], sel.sum() / span)
        return out
    routed = log.departure_routes.sum(axis=1)
    dest = np.where(routed > 0, np.argmax(log.departure_routes, axis=1), -1)
    for i in range(log.m):
        for j in range(-1, log.m):
            sel = (queue == i) & (dest == j)
            if sel.any():
                out[(i, j)] = SubLog((i, j), log.departure_states[sel],
                                     log.departure_marks[sel],
                                     log.departure_routes[sel], sel.sum() / span)
    return out


# --------------------------------------------------------------------------
# time averages

def state_path(ledger: CountingLedger, extra_breaks=()):
    """Piecewise-constant path on ``[0, end]``: segment starts, ends, states.

    ``extra_breaks`` are cut points (batch edges, phase changes) inserted
    without changing the state.
    """
    if not ledger.full_trace:
        raise QBalanceError("time averages need the full jump trace")
    times = ledger.times
    post = ledger.post_states()
    x0 = np.asarray(ledger.x0, dtype=np.int64)
    cuts = np.concatenate([[0.0], times, np.asarray(extra_breaks, dtype=float),
                           [ledger.end_time]])
    cuts = np.sort(cuts[(cuts >= 0) & (cuts <= ledger.end_time)], kind="stable")
    starts, ends = cuts[:-1], cuts[1:]
    # the state on [s, e) is the post-state of the last record at or before s
    idx = np.searchsorted(times, starts, side="right") - 1
    states = np.where(idx[:, None] >= 0, post[np.maximum(idx, 0)], x0[None, :])
    return starts, ends, states


def phase_at(result: SimulationResult, t: np.ndarray) -> np.ndarray:
    idx = np.searchsorted(result.phase_times, t, side="right") - 1
    vals = np.where(idx >= 0, result.phase_values[np.maximum(idx, 0)],
                    result.initial_phase)
    return vals


def time_average_pgf(result: SimulationResult, grid, t0: float = 0.0,
                     t1: Optional[float] = None, phase: Optional[int] = None,
                     batches: int = 32) -> PgfEstimate:
    """Time-average of ``z^X`` over ``[t0, t1]`` (optionally one server phase)."""
    t1 = result.end_time if t1 is None else t1
    grid = np.atleast_2d(np.asarray(grid, dtype=float))
    edges = np.linspace(t0, t1, batches + 1)
    breaks = list(edges) + (result.phase_times.tolist() if phase is not None else [])
    starts, ends, states = state_path(result.ledger, breaks)
    lo, hi = np.maximum(starts, t0), np.minimum(ends, t1)
    dur = np.clip(hi - lo, 0.0, None)
    if phase is not None:
        dur = dur * (phase_at(result, starts) == phase)
    label = np.clip(np.searchsorted(edges, starts, side="right") - 1, 0, batches - 1)
    sums = grouped_pgf_sums(states, label, batches, grid, weights=dur)
    w = np.bincount(label, weights=dur, minlength=batches)
    total = w.sum()
    if total <= 0:
        raise EmptyLog("no time spent in the requested window")
    values = sums.sum(axis=0) / total
    ok = w > 0
    if ok.sum() >= 2:
        means = sums[ok] / w[ok, None]
        se = means.std(axis=0, ddof=1) / math.sqrt(ok.sum())
    else:
        se = np.zeros(len(grid))
    ones = np.all(grid == 1.0, axis=1)
    values[ones], se[ones] = 1.0, 0.0
    return PgfEstimate(grid=grid, values=values, stderr=se, n=int(ok.sum()))


# --------------------------------------------------------------------------
# transient functionals

def _epoch_arrays(ledger: CountingLedger, t: float):
    keep = ledger.times <= t
    pre, de, dd, dr = ledger.pre[keep], ledger.de[keep], ledger.dd[keep], ledger.dr[keep]
    arr = de.sum(axis=1) > 0
    dep = dd.sum(axis=1) > 0
    return pre[arr], de[arr], pre[dep] - dd[dep], dd[dep], dr[dep]


def transient_functionals(ledger: CountingLedger, t: float, f) -> dict:
    """Finite-sample averages of ``f`` over the epochs in ``(0, t]``.

    ``g_plus`` evaluates ``f(x + y)`` at arrivals; at departures ``h_minus``
    evaluates ``f(x + y)`` and ``h_plus`` evaluates ``f(x + z)``.  Averages
    over an empty epoch set are 0.
    """
    if t <= 0:
        raise QBalanceError("transient functionals need t > 0")
    if not ledger.full_trace:
        raise QBalanceError("transient functionals need the full jump trace")
    xa, ya, xd, yd, zd = _epoch_arrays(ledger, t)
    ne, nd = len(xa), len(xd)

    def avg(v):
        return math.fsum(v.tolist()) / len(v) if len(v) else 0.0

    out = {
        "lambda_e": ne / t, "lambda_d": nd / t, "n_e": ne, "n_d": nd,
        "R_e_g": avg(f(xa)) if ne else 0.0,
        "R_e_g_plus": avg(f(xa + ya)) if ne else 0.0,
        "R_d_h": avg(f(xd)) if nd else 0.0,
        "R_d_h_minus": avg(f(xd + yd)) if nd else 0.0,
        "R_d_h_plus": avg(f(xd + zd)) if nd else 0.0,
    }
    return out


def _state_counts(x: np.ndarray):
    """Distinct rows of a nonnegative integer matrix and their counts."""
    m = x.shape[1]
    base = int(x.max()) + 1
    if base ** m >= 2**62:
        uniq, counts = np.unique(x, axis=0, return_counts=True)
        return uniq, counts.astype(float)
    radix = base ** np.arange(m, dtype=np.int64)
    keys, counts = np.unique(x @ radix, return_counts=True)
    return (keys[:, None] // radix) % base, counts.astype(float)


def transient_functionals_all(ledger: CountingLedger, t: float, functions=None) -> dict:
    """:func:`transient_functionals` for several functions at once.

    The averages are arrays with one entry per function (default: the whole
    test-function library).
    """
    if t <= 0:
        raise QBalanceError("transient functionals need t > 0")
    if not ledger.full_trace:
        raise QBalanceError("transient functionals need the full jump trace")
    xa, ya, xd, yd, zd = _epoch_arrays(ledger, t)
    ne, nd = len(xa), len(xd)
    if functions is None:
        ev = testfunctions.evaluate_all
        F = len(testfunctions.LIBRARY)
    else:
        F = len(functions)

        def ev(x):
            return np.column_stack([f(x) for f in functions]) if len(x) else np.zeros((0, F))

    def avg(x, n):
        # states repeat heavily: evaluate each distinct state once
        if not n:
            return np.zeros(F)
        uniq, counts = _state_counts(x)
        return counts @ ev(uniq) / n

    return {
        "lambda_e": ne / t, "lambda_d": nd / t, "n_e": ne, "n_d": nd,
        "R_e_g": avg(xa, ne), "R_e_g_plus": avg(xa + ya, ne),
        "R_d_h": avg(xd, nd), "R_d_h_minus": avg(xd + yd, nd),
        "R_d_h_plus": avg(xd + zd, nd),
    }


def state_at(ledger: CountingLedger, t: float) -> np.ndarray:
    """``X(t)`` from the trace (right-continuous)."""
    idx = int(np.searchsorted(ledger.times, t, side="right")) - 1
    if idx < 0:
        return np.asarray(ledger.x0, dtype=np.int64)
    return ledger.pre[idx] + ledger.de[idx] - ledger.dd[idx] + ledger.dr[idx]


# --------------------------------------------------------------------------
# batch sufficient statistics

@dataclass
class BatchSums:
    """Per-batch sums; every array has the batch index as leading axis."""

    grid: np.ndarray
    data: Dict[str, np.ndarray] = field(default_factory=dict)
    _total_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def _totals(self, key):
        if key not in self._total_cache:
            self._total_cache[key] = self.data[key].sum(axis=0)
        return self._total_cache[key]

    @property
    def n_batches(self) -> int:
        return len(self.data["T"]) if "T" in self.data else 0

    def add(self, key: str, value) -> None:
        self.data[key] = np.asarray(value, dtype=float)
        self._total_cache.pop(key, None)

    def __contains__(self, key) -> bool:
        return key in self.data

    def keys(self):
        return self.data.keys()

    @classmethod
    def concat(cls, parts) -> "BatchSums":
        parts = list(parts)
        if not parts:
            raise EmptyLog("no batch sums to merge")
        keys = sorted(set().union(*(p.data.keys() for p in parts)))
        out = cls(grid=parts[0].grid)
        for k in keys:
            shape = next(p.data[k].shape[1:] for p in parts if k in p.data)
            out.data[k] = np.concatenate([
                p.data[k] if k in p.data else np.zeros((p.n_batches,) + shape)
                for p in parts])
        return out

    def pooled(self, exclude: Optional[int] = None) -> "Pooled":
        return Pooled(self, exclude)


class Pooled:
    """Pooled sums over all batches, optionally leaving one batch out."""

    def __init__(self, sums: BatchSums, exclude: Optional[int] = None):
        self._sums = sums
        self._exclude = exclude
        self._cache: dict = {}
        self.grid = sums.grid

    def __contains__(self, key) -> bool:
        return key in self._sums.data

    def __getitem__(self, key):
        if key not in self._cache:
            arr = self._sums.data.get(key)
            if arr is None:
                raise MissingEstimate(f"estimate '{key}' was not collected")
            tot = self._sums._totals(key)
            self._cache[key] = tot if self._exclude is None else tot - arr[self._exclude]
        return self._cache[key]

    def get(self, key, default=0.0):
        return self[key] if key in self else default

    def ratio(self, num: str, den: str):
        d = self[den]
        with np.errstate(invalid="ignore", divide="ignore"):
            return self[num] / d


def jackknife(sums: BatchSums, fn: Callable):
    """Pooled value of ``fn`` and its leave-one-batch-out standard error."""
    full = np.asarray(fn(sums.pooled()), dtype=float)
    b = sums.n_batches
    if b < 2:
        return full, np.full(full.shape, np.inf)
    loo = np.stack([np.asarray(fn(sums.pooled(k)), dtype=float) for k in range(b)])
    with np.errstate(invalid="ignore"):
        dev = loo - loo.mean(axis=0)
        sigma = np.sqrt((b - 1) / b * np.sum(dev * dev, axis=0))
    return full, sigma


def _batch_labels(t: np.ndarray, t0: float, t1: float, n: int) -> np.ndarray:
    width = (t1 - t0) / n
    return np.clip(((t - t0) / width).astype(np.int64), 0, n - 1)


def route_destination(dr: np.ndarray) -> np.ndarray:
    routed = dr.sum(axis=1) > 0
    return np.where(routed, np.argmax(dr, axis=1), -1)


def collect_sums(result: SimulationResult, grid=None, n_batches: int = 32,
                 warmup: float = 0.1, regions: Optional[dict] = None) -> BatchSums:
    """Per-batch sufficient sums over ``[warmup * T, T]``.

    Keys (``G`` = grid size, ``F`` = test-function count):

    ``T``                      batch length
    ``n_e``, ``n_e.k``         arrival epochs (all, containing class ``k``)
    ``cust_e``, ``cust_d``     customers arrived / departed
    ``e.X``, ``e.X.k``         sum of ``z^X(t-)`` at arrivals (all, class k)
    ``e.XY``, ``e.Y``          sums of ``z^(X+Y)`` and ``z^Y`` at arrivals
    ``n_d``, ``d.X``           departure epochs and sum of ``z^(X^d)``
    ``n_d.A{c}``, ``d.X.A{c}`` the same for departure subset code ``c``
    ``n_d.i``, ``d.X.i``       single-queue departures from ``i``
    ``n_d.i>j``, ``d.X.i>j``   departures from ``i`` routed to ``j`` (``x`` = exit)
    ``d.XY``, ``d.XZ``         sums of ``z^(X^d+Y)`` and ``z^(X^d+Z)``
    ``L``                      time integral of ``z^X``
    ``L.p{p}``, ``T.p{p}``     the same restricted to server phase ``p``
    ``vb.i``/``vc.i``/``sb.i`` tag sums with counts ``n_vb.i`` etc.
    ``f.e``, ``f.dZ``, ``f.dY`` test-function increments (``F`` columns)
    ``f.dZ.A{c}``, ``f.dY.A{c}`` the same per departure subset
    ``d.R.name``               departure sums restricted to a named region
    """
    ledger = result.ledger
    m = result.m
    grid = default_grid(m) if grid is None else np.atleast_2d(np.asarray(grid, float))
    t1 = result.end_time
    t0 = warmup * t1
    if not t1 > t0:
        raise EmptyLog("empty estimation window")
    B = n_batches
    out = BatchSums(grid=grid)
    out.add("T", np.full(B, (t1 - t0) / B))

    times = ledger.times
    keep = times >= t0
    pre, de, dd, dr = ledger.pre[keep], ledger.de[keep], ledger.dd[keep], ledger.dr[keep]
    lab_all = _batch_labels(times[keep], t0, t1, B)

    def cnt(mask, lab):
        return np.bincount(lab[mask], minlength=B).astype(float)

    # arrivals
    arr = de.sum(axis=1) > 0
    xa, ya, la = pre[arr], de[arr], lab_all[arr]
    out.add("n_e", np.bincount(la, minlength=B))
    out.add("cust_e", np.bincount(la, weights=ya.sum(axis=1), minlength=B))
    out.add("e.X", grouped_pgf_sums(xa, la, B, grid))
    out.add("e.XY", grouped_pgf_sums(xa + ya, la, B, grid))
    out.add("e.Y", grouped_pgf_sums(ya, la, B, grid))
    for k in range(m):
        sel = ya[:, k] > 0
        out.add(f"n_e.{k}", cnt(sel, la))
        out.add(f"e.X.{k}", grouped_pgf_sums(xa[sel], la[sel], B, grid))

    # departures
    dep = dd.sum(axis=1) > 0
    yd, zd, ld = dd[dep], dr[dep], lab_all[dep]
    xd = pre[dep] - yd
    out.add("n_d", np.bincount(ld, minlength=B))
    out.add("cust_d", np.bincount(ld, weights=yd.sum(axis=1), minlength=B))
    out.add("d.X", grouped_pgf_sums(xd, ld, B, grid))
    out.add("d.XY", grouped_pgf_sums(xd + yd, ld, B, grid))
    out.add("d.XZ", grouped_pgf_sums(xd + zd, ld, B, grid))
    codes = subset_codes(yd)
    dest = route_destination(zd)
    for c in np.unique(codes).tolist():
        sel = codes == c
        out.add(f"n_d.A{c}", cnt(sel, ld))
        out.add(f"d.X.A{c}", grouped_pgf_sums(xd[sel], ld[sel], B, grid))
    for i in range(m):
        sel = codes == (1 << i)
        out.add(f"n_d.{i}", cnt(sel, ld))
        out.add(f"d.X.{i}", grouped_pgf_sums(xd[sel], ld[sel], B, grid))
        for j in range(-1, m):
            pair = sel & (dest == j)
            if pair.any():
                key = f"{i}>{'x' if j < 0 else j}"
                out.add(f"n_d.{key}", cnt(pair, ld))
                out.add(f"d.X.{key}", grouped_pgf_sums(xd[pair], ld[pair], B, grid))
    for name, pred in (regions or {}).items():
        sel = pred(xd)
        out.add(f"n_d.R.{name}", cnt(sel, ld))
        out.add(f"d.R.{name}", grouped_pgf_sums(xd[sel], ld[sel], B, grid))
        for i in range(m):
            both = sel & (codes == (1 << i))
            out.add(f"d.R.{name}.{i}", grouped_pgf_sums(xd[both], ld[both], B, grid))

    # test-function increments
    F = len(testfunctions.LIBRARY)

    def fsum(values, lab):
        s = np.zeros((B, F))
        np.add.at(s, lab, values)
        return s

    if len(xa):
        out.add("f.e", fsum(testfunctions.evaluate_all(xa + ya)
                            - testfunctions.evaluate_all(xa), la))
    else:
        out.add("f.e", np.zeros((B, F)))
    f_xd = testfunctions.evaluate_all(xd) if len(xd) else np.zeros((0, F))
    dz = testfunctions.evaluate_all(xd + zd) - f_xd if len(xd) else f_xd
    dy = testfunctions.evaluate_all(xd + yd) - f_xd if len(xd) else f_xd
    out.add("f.dZ", fsum(dz, ld))
    out.add("f.dY", fsum(dy, ld))
    for c in np.unique(codes).tolist():
        sel = codes == c
        out.add(f"f.dZ.A{c}", fsum(dz[sel], ld[sel]))
        out.add(f"f.dY.A{c}", fsum(dy[sel], ld[sel]))

    # time integrals, by phase when the model reports phases
    edges = t0 + (t1 - t0) * np.arange(B + 1) / B
    has_phase = len(result.phase_times) > 0
    breaks = np.concatenate([edges, result.phase_times]) if has_phase else edges
    starts, ends, states = state_path(ledger, breaks)
    dur = np.clip(np.minimum(ends, t1) - np.maximum(starts, t0), 0.0, None)
    live = dur > 0
    starts, states, dur = starts[live], states[live], dur[live]
    lab = _batch_labels(starts, t0, t1, B)
    inv, table = power_table(states, grid)
    u = table.shape[0]

    def tint(mask):
        w = np.bincount(lab[mask] * u + inv[mask], weights=dur[mask],
                        minlength=B * u).reshape(B, u)
        return w @ table

    out.add("L", tint(np.ones(len(dur), dtype=bool)))
    if has_phase:
        ph = phase_at(result, starts)
        for p in np.unique(ph).tolist():
            sel = ph == p
            out.add(f"L.p{p}", tint(sel))
            out.add(f"T.p{p}", np.bincount(lab[sel], weights=dur[sel], minlength=B))

    # server tags
    tags = result.tags
    if tags is not None and len(tags.times):
        tk = tags.times >= t0
        tt, kinds, queues, tx = tags.times[tk], tags.kinds[tk], tags.queues[tk], tags.states[tk]
        tl = _batch_labels(tt, t0, t1, B)
        for kind, name in ((VISIT_BEGIN, "vb"), (VISIT_COMPLETE, "vc"),
                           (SERVICE_BEGIN, "sb")):
            for i in range(m):
                sel = (kinds == kind) & (queues == i)
                out.add(f"n_{name}.{i}", cnt(sel, tl))
                out.add(f"{name}.{i}", grouped_pgf_sums(tx[sel], tl[sel], B, grid))
    return out


def pgf_from_sums(sums: BatchSums, num: str, den: str) -> PgfEstimate:
    """A ratio estimate (e.g. ``e.X`` over ``n_e``) with jackknife stderr."""
    vals, se = jackknife(sums, lambda S: S.ratio(num, den))
    n = int(sums.data[den].sum()) if sums.data[den].ndim == 1 else sums.n_batches
    return PgfEstimate(grid=sums.grid, values=vals, stderr=se, n=n)


# --------------------------------------------------------------------------
# Cesaro convergence of running Palm averages

def cesaro_statistics(values: np.ndarray, n_batches: int = 32):
    """Compare the running average at ``n`` with that at ``2n``.

    ``values`` holds ``2n`` consecutive per-epoch values (rows) for several
    functions (columns).  Returns ``(avg_n, avg_2n, sigma)`` where ``sigma``
    is the batch-means standard error of the difference, using
    ``n_batches`` batches in each half.
    """
    values = np.asarray(values, dtype=float)
    n = len(values) // 2
    if n < n_batches:
        raise EmptyLog("too few epochs for the Cesaro comparison")
    first, second = values[:n], values[n:2 * n]
    a_n = first.mean(axis=0)
    a_2n = values[:2 * n].mean(axis=0)
    size = n // n_batches

    def var_of_mean(part):
        bm = part[:size * n_batches].reshape(n_batches, size, -1).mean(axis=1)
        return bm.var(axis=0, ddof=1) / n_batches

    sigma = 0.5 * np.sqrt(var_of_mean(first) + var_of_mean(second))
    return a_n, a_2n, sigma
