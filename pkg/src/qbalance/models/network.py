"""Open networks of multiserver FCFS stations, one queue per station."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import InvalidParameter
from ..inputs import make_sampler, uniform_source
from ..kernel import SERVICE_COMPLETION
from .base import ARRIVALS, ROUTING, SERVICE, RenewalSource, arrival_rate
from .routing import (MarkovRouter, ShorterQueueRouter, solve_traffic,
                      validate_routing)


@dataclass(frozen=True)
class NetworkConfig:
    """``interarrival[i]`` is the external renewal input to queue ``i`` (or
    ``None``).  Routing is either a Markov matrix (``routing``) or the
    state-dependent shorter-queue rule (``shorter_queue_targets``)."""

    interarrival: tuple
    service: tuple
    servers: Optional[tuple] = None
    routing: Optional[np.ndarray] = field(default=None, compare=False)
    shorter_queue_targets: Optional[dict] = field(default=None, compare=False)
    x0: Optional[tuple] = None
    kind: str = "network"

    def __post_init__(self):
        m = len(self.service)
        if len(self.interarrival) != m:
            raise InvalidParameter("one interarrival entry per queue")
        if self.servers is None:
            object.__setattr__(self, "servers", (1,) * m)
        if len(self.servers) != m or min(self.servers) < 1:
            raise InvalidParameter("server counts must be >= 1")
        if self.routing is not None and self.shorter_queue_targets is not None:
            raise InvalidParameter("choose Markov routing or the shorter-queue rule, not both")
        if self.routing is not None:
            object.__setattr__(self, "routing", validate_routing(self.routing, m))
        if self.shorter_queue_targets is not None:
            for i, ts in self.shorter_queue_targets.items():
                if not 0 <= int(i) < m or any(not 0 <= int(t) < m or int(t) == int(i) for t in ts):
                    raise InvalidParameter("shorter-queue targets must be other queues")
            self._check_acyclic()
        util = self.utilisation_bound
        if np.any(util >= 1.0):
            raise InvalidParameter(f"unstable station(s): load {util}")

    def _check_acyclic(self):
        graph = {int(k): [int(v) for v in vs] for k, vs in self.shorter_queue_targets.items()}
        seen, stack = set(), set()

        def visit(u):
            if u in stack:
                raise InvalidParameter("shorter-queue routing must not contain cycles")
            if u in seen:
                return
            stack.add(u)
            for v in graph.get(u, []):
                visit(v)
            stack.discard(u)
            seen.add(u)

        for u in graph:
            visit(u)

    @property
    def m(self) -> int:
        return len(self.service)

    @property
    def station_of(self) -> tuple:
        return tuple(range(self.m))

    @property
    def external_rates(self) -> np.ndarray:
        return np.array([arrival_rate(d) for d in self.interarrival])

    @property
    def utilisation_bound(self) -> np.ndarray:
        """Per-station load; for the shorter-queue rule every target is charged
        the full upstream flow (a conservative bound)."""
        lam = self.external_rates
        b = np.array([d.mean for d in self.service])
        c = np.asarray(self.servers, dtype=float)
        if self.routing is not None:
            flow = solve_traffic(lam, self.routing)
        elif self.shorter_queue_targets:
            flow = lam.copy()
            for _ in range(self.m):
                nxt = lam.copy()
                for i, ts in self.shorter_queue_targets.items():
                    for t in ts:
                        nxt[int(t)] += flow[int(i)]
                flow = nxt
        else:
            flow = lam
        return flow * b / c

    @property
    def poisson_input(self) -> bool:
        return all(d is None or d.is_exponential for d in self.interarrival)

    single_arrivals = True
    single_departures = True

    def instantiate(self, sim, stream):
        _Network(self, sim, stream)


class _Network:
    def __init__(self, cfg: NetworkConfig, sim, stream):
        self.cfg = cfg
        self.sim = sim
        m = cfg.m
        self.idle = list(cfg.servers)
        self.waiting = [max(0, v - c) for v, c in zip(sim.x, cfg.servers)]
        self.service = [make_sampler(d, stream.split(SERVICE).split(i))
                        for i, d in enumerate(cfg.service)]
        if cfg.routing is not None:
            self.router = MarkovRouter(cfg.routing)
            self.state_dependent = False
        elif cfg.shorter_queue_targets:
            self.router = ShorterQueueRouter(cfg.shorter_queue_targets)
            self.state_dependent = True
        else:
            self.router = None
        self.route_u = uniform_source(stream.split(ROUTING))
        for i, v in enumerate(sim.x):
            for _ in range(min(v, cfg.servers[i])):
                self._start(i)
        for k, d in enumerate(cfg.interarrival):
            if d is not None:
                RenewalSource(sim, k, d, stream.split(ARRIVALS).split(k), self._joined)

    def _start(self, i):
        self.idle[i] -= 1
        self.sim.schedule(self.sim.now + self.service[i](), SERVICE_COMPLETION,
                          self._complete, i)

    def _joined(self, k):
        if self.idle[k]:
            self._start(k)
        else:
            self.waiting[k] += 1

    def _complete(self, i):
        sim = self.sim
        k = -1
        if self.router is not None:
            if self.state_dependent:
                xd = list(sim.x)
                xd[i] -= 1
                k = self.router(i, xd, self.route_u())
            else:
                k = self.router(i, None, self.route_u())
        sim.depart(i, k)
        if self.waiting[i]:
            self.waiting[i] -= 1
            self.idle[i] += 1
            self._start(i)
        else:
            self.idle[i] += 1
        if k >= 0:
            self._joined(k)
