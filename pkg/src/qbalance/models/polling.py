"""Cyclic polling systems, optionally with Markovian customer routing.

A single server visits ``Q_0, ..., Q_{m-1}`` in cyclic order and incurs a
switchover ``S_i`` when moving from ``Q_i`` to ``Q_{i+1}``.  With a routing
matrix the model becomes a queueing network with a roving server.

Service requirements are drawn when a customer joins a queue, so FCFS and
LCFS produce different sample paths with the same queue-length law.

Visit beginnings, visit completions and service beginnings are tagged in the
sample log.  A k-limited visit is tagged complete at the epoch the server
decides to leave (limit reached or queue empty).
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import InvalidParameter
from ..inputs import ServiceDistribution, make_sampler, uniform_source
from ..kernel import (EMPTY_VISIT, EXTERNAL_ARRIVAL, SERVICE_BEGIN, SERVICE_COMPLETION,
                      SWITCHOVER_END, VISIT_BEGIN, VISIT_COMPLETE)
from .base import ARRIVALS, ROUTING, SERVICE, SWITCHOVER
from .routing import (MarkovRouter, exit_probabilities, solve_traffic,
                      validate_routing)

DISCIPLINES = ("exhaustive", "gated", "k-limited")
EXHAUSTIVE, GATED, LIMITED = range(3)


def serving_phase(i: int) -> int:
    return 2 * i


def switching_phase(i: int) -> int:
    return 2 * i + 1


@dataclass(frozen=True)
class PollingConfig:
    rates: tuple
    service: tuple
    switchover: tuple
    discipline: tuple = None
    limits: Optional[tuple] = None
    order: str = "fcfs"
    routing: Optional[np.ndarray] = field(default=None, compare=False)
    x0: Optional[tuple] = None
    kind: str = "polling"

    def __post_init__(self):
        m = len(self.rates)
        if m < 1 or len(self.service) != m or len(self.switchover) != m:
            raise InvalidParameter("rates, service and switchover need one entry per queue")
        if min(self.rates) < 0 or sum(self.rates) <= 0:
            raise InvalidParameter("arrival rates must be nonnegative, not all zero")
        disc = self.discipline or ("exhaustive",) * m
        if isinstance(disc, str):
            disc = (disc,) * m
        disc = tuple(disc)
        if len(disc) != m or any(d not in DISCIPLINES for d in disc):
            raise InvalidParameter(f"discipline must be one of {DISCIPLINES} per queue")
        object.__setattr__(self, "discipline", disc)
        limits = self.limits or tuple(1 for _ in range(m))
        if len(limits) != m or min(limits) < 1:
            raise InvalidParameter("k-limited limits must be integers >= 1")
        object.__setattr__(self, "limits", tuple(int(k) for k in limits))
        if self.order not in ("fcfs", "lcfs"):
            raise InvalidParameter("order must be 'fcfs' or 'lcfs'")
        if self.routing is not None:
            object.__setattr__(self, "routing", validate_routing(self.routing, m))
            object.__setattr__(self, "kind", "roving")
        if self.rho >= 1.0:
            raise InvalidParameter(f"unstable configuration: rho = {self.rho:.4f} >= 1")
        for i, d in enumerate(disc):
            if d == "k-limited":
                load = self.rho + self.throughputs[i] * self.total_switchover / self.limits[i]
                if load >= 1.0:
                    raise InvalidParameter(f"k-limited queue {i} is unstable")

    @property
    def m(self) -> int:
        return len(self.rates)

    @property
    def station_of(self) -> tuple:
        return (0,) * self.m

    @property
    def throughputs(self) -> np.ndarray:
        lam = np.asarray(self.rates, dtype=float)
        if self.routing is None:
            return lam
        return solve_traffic(lam, self.routing)

    @property
    def b(self) -> np.ndarray:
        return np.array([d.mean for d in self.service])

    @property
    def s(self) -> np.ndarray:
        return np.array([d.mean for d in self.switchover])

    @property
    def total_switchover(self) -> float:
        return float(self.s.sum())

    @property
    def rho_i(self) -> np.ndarray:
        return self.throughputs * self.b

    @property
    def rho(self) -> float:
        return float(self.rho_i.sum())

    @property
    def mean_cycle(self) -> float:
        return self.total_switchover / (1.0 - self.rho)

    @property
    def gamma(self) -> np.ndarray:
        """Visit beginnings per service beginning at each queue."""
        with np.errstate(divide="ignore"):
            return 1.0 / (self.throughputs * self.mean_cycle)

    @property
    def exit_probabilities(self) -> Optional[np.ndarray]:
        return None if self.routing is None else exit_probabilities(self.routing)

    poisson_input = True
    single_arrivals = True
    single_departures = True
    initial_phase = -1

    def instantiate(self, sim, stream):
        _Polling(self, sim, stream)


class _Polling:
    def __init__(self, cfg: PollingConfig, sim, stream):
        self.cfg = cfg
        self.sim = sim
        m = cfg.m
        self.m = m
        self.lifo = cfg.order == "lcfs"
        self.kind = [DISCIPLINES.index(d) for d in cfg.discipline]
        self.service = [make_sampler(d, stream.split(SERVICE).split(i))
                        for i, d in enumerate(cfg.service)]
        self.switch = [make_sampler(d, stream.split(SWITCHOVER).split(i))
                       for i, d in enumerate(cfg.switchover)]
        self.waiting = [deque() for _ in range(m)]
        self.gated = [deque() for _ in range(m)]
        for i, v in enumerate(sim.x):
            self.waiting[i].extend(self.service[i]() for _ in range(v))
        if cfg.routing is not None:
            self.router = MarkovRouter(cfg.routing)
            self.route_u = uniform_source(stream.split(ROUTING))
        else:
            self.router = None
        # Poisson arrivals, handled inline as they dominate the event count
        self.gap = [make_sampler(ServiceDistribution.exponential(lam),
                                 stream.split(ARRIVALS).split(k)) if lam > 0 else None
                    for k, lam in enumerate(cfg.rates)]
        for k, draw in enumerate(self.gap):
            if draw is not None:
                sim.schedule(draw(), EXTERNAL_ARRIVAL, self._arrival, k)
        self.code_vb = [sim.tag_code(VISIT_BEGIN, i) for i in range(m)]
        self.code_vc = [sim.tag_code(VISIT_COMPLETE, i) for i in range(m)]
        self.code_sb = [sim.tag_code(SERVICE_BEGIN, i) for i in range(m)]
        self.code_empty = [sim.tag_code(EMPTY_VISIT, i) for i in range(m)]
        self.tag_t, self.tag_c = sim.tag_times.append, sim.tag_codes.append
        self.pos = 0
        self.remaining = 0
        self._visit_begin(None)

    def _arrival(self, k):
        sim = self.sim
        sim.arrive(k)
        sim.schedule(sim.now + self.gap[k](), EXTERNAL_ARRIVAL, self._arrival, k)
        self.waiting[k].append(self.service[k]())

    def _visit_begin(self, _payload):
        self._cycle(self.pos, self.sim.now, False)

    def _cycle(self, i, now, leaving):
        """Run the server from ``now`` at queue ``i`` (starting with the
        switchover away from it when ``leaving``) until a service begins or
        a switchover ends after the next pending event."""
        sim = self.sim
        heap = sim._heap
        tag_t, tag_c = self.tag_t, self.tag_c
        waiting, switch, code_empty = self.waiting, self.switch, self.code_empty
        m = self.m
        # no other event can fire while the server passes empty queues, so
        # the next heap epoch stays fixed until a service begins
        stop = min(heap[0][0], math.nextafter(sim.horizon, math.inf)) if heap \
            else math.nextafter(sim.horizon, math.inf)
        while True:
            if leaving:
                leaving = False
            elif not waiting[i]:
                # nothing to serve (a gated buffer is always empty here)
                tag_t(now)
                tag_c(code_empty[i])
            else:
                sim.now = now
                tag_t(now)
                tag_c(self.code_vb[i])
                kind = self.kind[i]
                if kind == GATED:
                    self.gated[i], waiting[i] = waiting[i], deque()
                elif kind == LIMITED:
                    self.remaining = self.cfg.limits[i]
                if self._serve_next(i):
                    self.pos = i
                    return
                tag_t(now)
                tag_c(self.code_vc[i])
            end = now + switch[i]()
            i += 1
            if i == m:
                i = 0
            if end >= stop:
                sim.now = now
                self.pos = i
                sim.schedule(end, SWITCHOVER_END, self._visit_begin)
                return
            now = end

    def _serve_next(self, i) -> bool:
        """Start the next service at queue ``i``; False when the visit ends."""
        kind = self.kind[i]
        if kind == GATED:
            src = self.gated[i]
        elif kind == LIMITED:
            if self.remaining <= 0:
                return False
            src = self.waiting[i]
            if src:
                self.remaining -= 1
        else:
            src = self.waiting[i]
        if not src:
            return False
        duration = src.pop() if self.lifo else src.popleft()
        sim = self.sim
        self.tag_t(sim.now)
        self.tag_c(self.code_sb[i])
        sim.schedule(sim.now + duration, SERVICE_COMPLETION, self._complete, i)
        return True

    def _complete(self, i):
        sim = self.sim
        router = self.router
        if router is not None:
            k = router(i, None, self.route_u())
            sim.depart(i, k)
            if k >= 0:
                self.waiting[k].append(self.service[k]())
        else:
            sim.depart(i)
        now = sim.now
        # fast path of _serve_next for the common exhaustive case
        src = self.waiting[i]
        if src and self.kind[i] == EXHAUSTIVE:
            self.tag_t(now)
            self.tag_c(self.code_sb[i])
            sim.schedule(now + (src.pop() if self.lifo else src.popleft()),
                         SERVICE_COMPLETION, self._complete, i)
            return
        if self._serve_next(i):
            return
        self.tag_t(now)
        self.tag_c(self.code_vc[i])
        self._cycle(i, now, True)
