"""Traffic equations and departure routing rules."""
from __future__ import annotations

from bisect import bisect_right
from typing import Optional, Sequence

import numpy as np

from ..errors import InvalidParameter, NonConvergent


def validate_routing(p, m: int) -> np.ndarray:
    """Check a substochastic ``m x m`` routing matrix; exit mass is the remainder."""
    p = np.asarray(p, dtype=float)
    if p.shape != (m, m):
        raise InvalidParameter(f"routing matrix must be {m}x{m}")
    if np.any(p < 0):
        raise InvalidParameter("routing probabilities must be nonnegative")
    exits = 1.0 - p.sum(axis=1)
    if np.any(exits < -1e-12):
        raise InvalidParameter("routing rows must sum to at most one")
    return p


def exit_probabilities(p) -> np.ndarray:
    return np.clip(1.0 - np.asarray(p, dtype=float).sum(axis=1), 0.0, 1.0)


def solve_traffic(lam: Sequence[float], p) -> np.ndarray:
    """Throughputs ``L`` solving ``L_i = lam_i + sum_k L_k p_ki``."""
    lam = np.asarray(lam, dtype=float)
    p = validate_routing(p, len(lam))
    radius = max(abs(np.linalg.eigvals(p))) if len(lam) else 0.0
    if radius >= 1.0 - 1e-12:
        raise NonConvergent(f"routing matrix spectral radius {radius:.6g} >= 1")
    a = np.eye(len(lam)) - p.T
    sol = np.linalg.solve(a, lam)
    # one step of iterative refinement keeps the residual at rounding level
    sol = sol + np.linalg.solve(a, lam - a @ sol)
    if np.max(np.abs(a @ sol - lam), initial=0.0) > 1e-10:
        raise NonConvergent("traffic equations residual above 1e-10")
    return sol


def routing_pgf(p, i: int, z) -> np.ndarray:
    """``P_i(z) = p_i0 + sum_k p_ik z_k`` for a point or a grid of points."""
    p = np.asarray(p, dtype=float)
    z = np.asarray(z, dtype=float)
    return exit_probabilities(p)[i] + z @ p[i]


class MarkovRouter:
    """Routes a departure from ``i`` to ``k`` with probability ``p_ik``."""

    def __init__(self, p):
        p = np.asarray(p, dtype=float)
        self.m = len(p)
        self._cum = [np.cumsum(row).tolist() for row in p]

    def __call__(self, i: int, x, u: float) -> int:
        cum = self._cum[i]
        k = bisect_right(cum, u)
        return k if k < self.m else -1


class ShorterQueueRouter:
    """State-dependent rule: join the shortest of ``targets[i]`` (ties uniform).

    Queues without targets send their departures out of the network.
    """

    def __init__(self, targets: dict):
        self.targets = {int(k): tuple(int(v) for v in vs) for k, vs in targets.items()}

    def __call__(self, i: int, x, u: float) -> int:
        cands = self.targets.get(i)
        if not cands:
            return -1
        best = min(x[k] for k in cands)
        ties = [k for k in cands if x[k] == best]
        return ties[min(int(u * len(ties)), len(ties) - 1)]


def route_departure(router, i: int, x, u: float, m: Optional[int] = None) -> np.ndarray:
    """Routing increment vector for one departure from queue ``i``."""
    m = len(x) if m is None else m
    out = np.zeros(m, dtype=np.int64)
    k = router(i, x, u)
    if k >= 0:
        out[k] = 1
    return out
