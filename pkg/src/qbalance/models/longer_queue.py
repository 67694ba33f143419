"""Single server, two queues, priority for the longer queue."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..errors import InvalidParameter
from ..inputs import ServiceDistribution, make_sampler, uniform_source
from ..kernel import SERVICE_COMPLETION
from .base import ARRIVALS, CHOICE, SERVICE, RenewalSource


@dataclass(frozen=True)
class LongerQueueConfig:
    """After each completion the server takes a customer from the strictly
    longer queue; on a tie (both nonempty) it picks ``Q_i`` with probability
    ``alpha[i]``.  An arrival to an empty system is served immediately."""

    rates: tuple
    service: tuple
    alpha: tuple = (0.5, 0.5)
    x0: Optional[tuple] = None
    kind: str = "longer_queue"

    def __post_init__(self):
        if len(self.rates) != 2 or len(self.service) != 2 or len(self.alpha) != 2:
            raise InvalidParameter("the longer-queue model has exactly two queues")
        if min(self.rates) <= 0:
            raise InvalidParameter("arrival rates must be positive")
        if min(self.alpha) < 0 or abs(sum(self.alpha) - 1.0) > 1e-12:
            raise InvalidParameter("tie probabilities must be nonnegative and sum to 1")
        if self.rho >= 1.0:
            raise InvalidParameter(f"unstable configuration: rho = {self.rho:.4f} >= 1")

    m = 2
    station_of = (0, 0)
    routing = None
    poisson_input = True
    single_arrivals = True
    single_departures = True

    @property
    def arrival_rates(self) -> np.ndarray:
        return np.asarray(self.rates, dtype=float)

    @property
    def rho(self) -> float:
        return float(sum(l * d.mean for l, d in zip(self.rates, self.service)))

    @property
    def symmetric(self) -> bool:
        return (self.rates[0] == self.rates[1] and self.service[0] == self.service[1]
                and self.alpha[0] == self.alpha[1])

    def instantiate(self, sim, stream):
        _LongerQueue(self, sim, stream)


class _LongerQueue:
    def __init__(self, cfg: LongerQueueConfig, sim, stream):
        self.cfg = cfg
        self.sim = sim
        self.busy = False
        self.service = [make_sampler(d, stream.split(SERVICE).split(i))
                        for i, d in enumerate(cfg.service)]
        self.tie = uniform_source(stream.split(CHOICE))
        for k, lam in enumerate(cfg.rates):
            RenewalSource(sim, k, ServiceDistribution.exponential(lam),
                          stream.split(ARRIVALS).split(k), self._joined)
        self._start()

    def _joined(self, k):
        if not self.busy:
            self._start()

    def _start(self):
        x = self.sim.x
        if x[0] > x[1]:
            i = 0
        elif x[1] > x[0]:
            i = 1
        elif x[0] == 0:
            self.busy = False
            return
        else:
            i = 0 if self.tie() < self.cfg.alpha[0] else 1
        self.busy = True
        self.sim.schedule(self.sim.now + self.service[i](), SERVICE_COMPLETION,
                          self._complete, i)

    def _complete(self, i):
        self.sim.depart(i)
        self._start()
