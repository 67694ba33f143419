"""Model zoo: concrete queueing systems as kernel plug-ins."""
from .longer_queue import LongerQueueConfig
from .network import NetworkConfig
from .polling import PollingConfig
from .routing import (MarkovRouter, ShorterQueueRouter, route_departure,
                      routing_pgf, solve_traffic)
from .single import BatchStationConfig, PriorityConfig, SingleStationConfig

__all__ = [
    "BatchStationConfig", "LongerQueueConfig", "MarkovRouter", "NetworkConfig",
    "PollingConfig", "PriorityConfig", "ShorterQueueRouter", "SingleStationConfig",
    "route_departure", "routing_pgf", "solve_traffic",
]
