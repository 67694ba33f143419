"""Closed-form transforms used by the balance checks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .errors import InvalidParameter, SingularPoint
from .inputs import BatchLaw, ServiceDistribution
from .models.routing import routing_pgf, solve_traffic, validate_routing

SINGULAR_TOL = 1e-8
LIMIT_STEP = 1e-4


@dataclass(frozen=True)
class TransformContext:
    """Inputs for the analytic quantities; derived constants are recomputed on access."""

    rates: tuple
    service: tuple = ()
    switchover: tuple = ()
    batch_law: Optional[BatchLaw] = None
    batch_rate: Optional[float] = None
    routing: Optional[np.ndarray] = None
    batch_sizes: Optional[tuple] = None

    def __post_init__(self):
        if self.routing is not None:
            object.__setattr__(self, "routing", validate_routing(self.routing, self.m))

    @classmethod
    def from_config(cls, cfg) -> "TransformContext":
        """Build from any model config exposing the usual attributes."""
        rates = getattr(cfg, "rates", None)
        if rates is None:
            rates = tuple(np.asarray(cfg.arrival_rates, dtype=float).tolist())
        return cls(rates=tuple(float(r) for r in rates),
                   service=tuple(getattr(cfg, "service", ()) or ()),
                   switchover=tuple(getattr(cfg, "switchover", ()) or ()),
                   batch_law=getattr(cfg, "batch_law", None),
                   batch_rate=getattr(cfg, "batch_rate", None),
                   routing=getattr(cfg, "routing", None),
                   batch_sizes=getattr(cfg, "batch_sizes", None))

    @property
    def m(self) -> int:
        return len(self.rates)

    @property
    def lam(self) -> np.ndarray:
        return np.asarray(self.rates, dtype=float)

    @property
    def throughputs(self) -> np.ndarray:
        if self.routing is None:
            return self.lam
        return solve_traffic(self.lam, self.routing)

    @property
    def b(self) -> np.ndarray:
        return np.array([d.mean for d in self.service])

    @property
    def s(self) -> np.ndarray:
        return np.array([d.mean for d in self.switchover])

    @property
    def rho(self) -> float:
        return float(np.dot(self.throughputs, self.b))

    @property
    def mean_cycle(self) -> float:
        if not self.switchover:
            raise InvalidParameter("mean cycle time needs switchover laws")
        return float(self.s.sum()) / (1.0 - self.rho)

    @property
    def gamma(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return 1.0 / (self.throughputs * self.mean_cycle)


def _grid(z) -> np.ndarray:
    return np.atleast_2d(np.asarray(z, dtype=float))


def sigma(ctx: TransformContext, z) -> np.ndarray:
    """``sum_j lambda_j (1 - z_j)`` for each row of ``z``."""
    return (1.0 - _grid(z)) @ ctx.lam


def beta(ctx: TransformContext, i: int, z) -> np.ndarray:
    """PGF of Poisson arrivals (all queues) during one service at queue ``i``."""
    return ctx.service[i].lst(sigma(ctx, z))


def switch_factor(ctx: TransformContext, i: int, z) -> np.ndarray:
    return ctx.switchover[i].lst(sigma(ctx, z))


def service_past(ctx: TransformContext, i: int, z) -> np.ndarray:
    return ctx.service[i].lst_past(sigma(ctx, z))


def switch_past(ctx: TransformContext, i: int, z) -> np.ndarray:
    return ctx.switchover[i].lst_past(sigma(ctx, z))


def batch_pgf(ctx: TransformContext, z) -> np.ndarray:
    if ctx.batch_law is None:
        raise InvalidParameter("context has no batch law")
    return ctx.batch_law.pgf(_grid(z))


def routing_factor(ctx: TransformContext, i: int, z) -> np.ndarray:
    """``P_i(z) = p_i0 + sum_k p_ik z_k``."""
    if ctx.routing is None:
        return np.ones(len(_grid(z)))
    return np.array([routing_pgf(ctx.routing, i, row) for row in _grid(z)])


def visit_formula_terms(ctx: TransformContext, vb: np.ndarray, vc: np.ndarray, z: np.ndarray):
    """Visit-based formula for ``L`` at points away from its singularities."""
    m = ctx.m
    sig = sigma(ctx, z)
    total = np.zeros(len(z))
    for i in range(m):
        bt = ctx.service[i].lst(sig)
        nxt = (i + 1) % m
        total += ((vb[:, i] - vc[:, i]) * z[:, i] * (1.0 - bt) / (z[:, i] - bt)
                  + (vc[:, i] - vb[:, nxt]))
    return total / (ctx.mean_cycle * sig)


def singular_mask(ctx: TransformContext, z, tol: float = SINGULAR_TOL) -> np.ndarray:
    """Grid points within ``tol`` of a removable singularity of the formula."""
    z = _grid(z)
    sig = sigma(ctx, z)
    near = np.abs(sig) < tol
    for i in range(ctx.m):
        near |= np.abs(z[:, i] - ctx.service[i].lst(sig)) < tol
    return near


def polling_L_formula(ctx: TransformContext, vb: Callable, vc: Callable, z,
                      limit: bool = True, step: float = LIMIT_STEP) -> np.ndarray:
    """Queue-length PGF from visit-beginning and visit-completion PGFs.

    ``vb`` and ``vc`` map an ``(n, m)`` grid to ``(n, m)`` arrays whose column
    ``i`` is the PGF for queue ``i``.  At ``z`` = all-ones the value is 1 by
    normalisation.  Near other removable singularities the value is the
    symmetric average at ``z +/- step * u`` (second-order accurate, ``u``
    along the diagonal); with ``limit=False`` such points raise
    :class:`SingularPoint`.
    """
    z = _grid(z)
    out = np.empty(len(z))
    near = singular_mask(ctx, z)
    ok = ~near
    if ok.any():
        out[ok] = visit_formula_terms(ctx, vb(z[ok]), vc(z[ok]), z[ok])
    for n in np.flatnonzero(near).tolist():
        if np.all(z[n] == 1.0):
            out[n] = 1.0
            continue
        if not limit:
            raise SingularPoint(f"removable singularity at z={z[n].tolist()}")
        u = np.ones(ctx.m)
        pts = np.stack([z[n] + step * u, z[n] - step * u])
        out[n] = visit_formula_terms(ctx, vb(pts), vc(pts), pts).mean()
    return out


def mm1_pgf(rho: float, z) -> np.ndarray:
    """Queue-length PGF of the stable M/M/1 queue, ``(1 - rho) / (1 - rho z)``."""
    z = np.asarray(z, dtype=float)
    return (1.0 - rho) / (1.0 - rho * z)


def is_exponential(d: Optional[ServiceDistribution]) -> bool:
    return d is not None and d.is_exponential
