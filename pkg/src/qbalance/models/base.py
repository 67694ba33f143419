"""Shared pieces of the model plug-ins."""
from __future__ import annotations

from ..inputs import ServiceDistribution, make_sampler
from ..kernel import EXTERNAL_ARRIVAL

# stream lineage: (replication root).split(PURPOSE).split(index)
ARRIVALS = 0
SERVICE = 1
SWITCHOVER = 2
ROUTING = 3
CHOICE = 4
BATCH = 5


class RenewalSource:
    """Independent renewal arrival stream feeding one queue."""

    def __init__(self, sim, k: int, interarrival: ServiceDistribution, stream, on_arrival):
        self.sim = sim
        self.k = k
        self.draw = make_sampler(interarrival, stream)
        self.on_arrival = on_arrival
        sim.schedule(self.draw(), EXTERNAL_ARRIVAL, self.fire)

    def fire(self, _payload):
        sim = self.sim
        sim.arrive(self.k)
        sim.schedule(sim.now + self.draw(), EXTERNAL_ARRIVAL, self.fire)
        self.on_arrival(self.k)


def arrival_rate(dist) -> float:
    return 0.0 if dist is None else 1.0 / dist.mean
