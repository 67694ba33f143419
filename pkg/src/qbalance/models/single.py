"""Multiclass single-station queues.

Covers M/G/c-type FCFS queues, batch-Poisson arrivals, fixed-size batch
service and non-preemptive priorities.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..errors import InvalidParameter
from ..inputs import BatchLaw, ServiceDistribution, make_sampler, uniform_source
from ..kernel import EXTERNAL_ARRIVAL, SERVICE_COMPLETION
from .base import ARRIVALS, BATCH, SERVICE, arrival_rate


@dataclass(frozen=True)
class SingleStationConfig:
    """One station with ``servers`` identical servers and ``m`` classes.

    Arrivals are either independent renewal streams per class
    (``interarrival[k]``, ``None`` for a class with no external input) or a
    batch-Poisson stream (``batch_rate`` epochs per time unit, batch vector
    drawn from ``batch_law``).  Class ``i`` is served in groups of exactly
    ``batch_sizes[i]`` customers; a group starts only once that many are
    waiting.  ``order`` is ``"fcfs"`` over waiting customers or
    ``"priority"`` (non-preemptive, class 0 highest).
    """

    service: tuple
    interarrival: Optional[tuple] = None
    batch_rate: Optional[float] = None
    batch_law: Optional[BatchLaw] = None
    batch_sizes: Optional[tuple] = None
    servers: int = 1
    order: str = "fcfs"
    x0: Optional[tuple] = None
    kind: str = field(default="single_station")

    def __post_init__(self):
        m = len(self.service)
        if m < 1:
            raise InvalidParameter("at least one class is required")
        if (self.interarrival is None) == (self.batch_law is None):
            raise InvalidParameter("give either per-class interarrivals or a batch law")
        if self.interarrival is not None and len(self.interarrival) != m:
            raise InvalidParameter("one interarrival law per class")
        if self.batch_law is not None:
            if self.batch_law.m != m:
                raise InvalidParameter("batch law dimension must equal the class count")
            if not self.batch_rate or self.batch_rate <= 0:
                raise InvalidParameter("batch arrivals need a positive batch_rate")
        if self.batch_sizes is None:
            object.__setattr__(self, "batch_sizes", (1,) * m)
        if len(self.batch_sizes) != m or min(self.batch_sizes) < 1:
            raise InvalidParameter("batch sizes must be integers >= 1, one per class")
        if self.servers < 1:
            raise InvalidParameter("at least one server is required")
        if self.order not in ("fcfs", "priority"):
            raise InvalidParameter("order must be 'fcfs' or 'priority'")
        if self.rho >= 1.0:
            raise InvalidParameter(f"unstable configuration: rho = {self.rho:.4f} >= 1")

    @property
    def m(self) -> int:
        return len(self.service)

    @property
    def station_of(self) -> tuple:
        return (0,) * self.m

    @property
    def arrival_rates(self) -> np.ndarray:
        """Customer arrival rate per class."""
        if self.batch_law is not None:
            return self.batch_rate * self.batch_law.mean
        return np.array([arrival_rate(d) for d in self.interarrival])

    @property
    def rho(self) -> float:
        b = np.array([d.mean for d in self.service])
        k = np.asarray(self.batch_sizes, dtype=float)
        return float(np.sum(self.arrival_rates * b / k) / self.servers)

    @property
    def poisson_input(self) -> bool:
        if self.batch_law is not None:
            return True
        return all(d is None or d.is_exponential for d in self.interarrival)

    @property
    def single_arrivals(self) -> bool:
        if self.batch_law is not None:
            return all(sum(g) == 1 for g in self.batch_law.support)
        return True

    @property
    def single_departures(self) -> bool:
        return all(k == 1 for k in self.batch_sizes)

    routing = None

    def instantiate(self, sim, stream):
        _SingleStation(self, sim, stream)


def PriorityConfig(rates: Sequence[float], service: Sequence[ServiceDistribution], **kw):
    """Non-preemptive priority M/G/1; class 0 has the highest priority."""
    inter = tuple(ServiceDistribution.exponential(r) if r > 0 else None for r in rates)
    return SingleStationConfig(service=tuple(service), interarrival=inter,
                               order="priority", kind="priority", **kw)


def BatchStationConfig(batch_rate: float, batch_law: BatchLaw,
                       service: Sequence[ServiceDistribution],
                       batch_sizes: Optional[Sequence[int]] = None, **kw):
    return SingleStationConfig(service=tuple(service), batch_rate=batch_rate,
                               batch_law=batch_law,
                               batch_sizes=None if batch_sizes is None else tuple(batch_sizes),
                               kind="batch_station", **kw)


class _SingleStation:
    def __init__(self, cfg: SingleStationConfig, sim, stream):
        self.cfg = cfg
        self.sim = sim
        m = cfg.m
        self.K = cfg.batch_sizes
        self.unit_groups = all(k == 1 for k in self.K)
        self.group_marks = [tuple(k if j == i else 0 for j in range(m))
                            for i, k in enumerate(self.K)]
        self.waiting = [0] * m          # customers not in service, per class
        self.use_fifo = cfg.order == "fcfs"
        self.fifo: deque = deque()       # class labels of waiting customers (fcfs)
        self.idle = cfg.servers
        self.service = [make_sampler(d, stream.split(SERVICE).split(i))
                        for i, d in enumerate(cfg.service)]
        for i, v in enumerate(sim.x):
            self.waiting[i] += v
            if self.use_fifo:
                self.fifo.extend([i] * v)
        if cfg.batch_law is not None:
            self.batch_gap = make_sampler(ServiceDistribution.exponential(cfg.batch_rate),
                                     stream.split(ARRIVALS).split(0))
            self.batch_u = uniform_source(stream.split(BATCH))
            self.single_arrival = {g: (g.index(1) if sum(g) == 1 else -1)
                                   for g in cfg.batch_law.support}
            sim.schedule(self.batch_gap(), EXTERNAL_ARRIVAL, self._batch_arrival)
        else:
            # renewal arrivals, handled inline as they dominate the event count
            self.gap = [make_sampler(d, stream.split(ARRIVALS).split(k)) if d is not None
                        else None for k, d in enumerate(cfg.interarrival)]
            for k, draw in enumerate(self.gap):
                if draw is not None:
                    sim.schedule(draw(), EXTERNAL_ARRIVAL, self._arrival, k)
        self._try_start()

    def _batch_arrival(self, _payload):
        sim = self.sim
        g = self.cfg.batch_law.draw(self.batch_u())
        k = self.single_arrival[g]
        if k >= 0:
            # a group of one customer is recorded as a plain arrival
            sim.arrive(k)
            self.waiting[k] += 1
            if self.use_fifo:
                self.fifo.append(k)
        else:
            sim.arrive_batch(g)
            for k, v in enumerate(g):
                if v:
                    self.waiting[k] += v
                    if self.use_fifo:
                        self.fifo.extend([k] * v)
        sim.schedule(sim.now + self.batch_gap(), EXTERNAL_ARRIVAL, self._batch_arrival)
        self._try_start()

    def _arrival(self, k):
        sim = self.sim
        sim.arrive(k)
        sim.schedule(sim.now + self.gap[k](), EXTERNAL_ARRIVAL, self._arrival, k)
        self.waiting[k] += 1
        if self.use_fifo:
            self.fifo.append(k)
        if self.idle:
            self._try_start()

    def _pick(self) -> int:
        w = self.waiting
        if self.cfg.order == "priority":
            for i, k in enumerate(self.K):
                if w[i] >= k:
                    return i
            return -1
        if self.unit_groups:
            return self.fifo[0] if self.fifo else -1
        seen = set()
        for c in self.fifo:
            if c not in seen:
                if w[c] >= self.K[c]:
                    return c
                seen.add(c)
        return -1

    def _try_start(self):
        sim = self.sim
        while self.idle:
            i = self._pick()
            if i < 0:
                return
            k = self.K[i]
            self.waiting[i] -= k
            if self.use_fifo:
                if self.unit_groups:
                    self.fifo.popleft()
                else:
                    self._remove_from_fifo(i, k)
            self.idle -= 1
            sim.schedule(sim.now + self.service[i](), SERVICE_COMPLETION, self._complete, i)

    def _remove_from_fifo(self, cls: int, count: int):
        kept = deque()
        for c in self.fifo:
            if c == cls and count:
                count -= 1
            else:
                kept.append(c)
        self.fifo = kept

    def _complete(self, i):
        k = self.K[i]
        if k == 1:
            self.sim.depart(i)
        else:
            self.sim.depart_batch(self.group_marks[i])
        self.idle += 1
        self._try_start()
