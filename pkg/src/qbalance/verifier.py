"""Balance-identity checks with pass/fail verdicts.

Two kinds of checks exist and are never mixed:

* ``exact``: sample-path identities and bookkeeping facts; pass iff
  ``|lhs - rhs| <= atol`` at every point.
* ``statistical``: stationary relations estimated from batch sums; pass iff
  ``|lhs - rhs| <= k * sigma + floor`` at every point, with ``sigma`` the
  jackknife standard error of the residual over batches.  The small absolute
  floor only matters where both sides are deterministic (e.g. ``z`` = all
  ones) and ``sigma`` is exactly zero.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import analytic, testfunctions
from .errors import InapplicableAssumption, MissingEstimate
from .estimators import (BatchSums, jackknife, state_at, transient_functionals,
                         transient_functionals_all)
from .models.routing import solve_traffic
from .state import CountingLedger

K_SIGMA = 4.0
ABS_FLOOR = 1e-12
EXACT_ATOL = 1e-9
REPORT_SCHEMA = "1"


def _clean(v):
    """JSON-safe float (None for non-finite)."""
    v = float(v)
    return v if math.isfinite(v) else None


@dataclass
class IdentityCheck:
    name: str
    kind: str                    # "exact" or "statistical"
    points: list                 # grid points or labels
    lhs: np.ndarray
    rhs: np.ndarray
    residual: np.ndarray
    tolerance: np.ndarray
    sigma: Optional[np.ndarray] = None
    k: Optional[float] = None
    atol: Optional[float] = None
    excluded: list = field(default_factory=list)
    note: str = ""

    @property
    def passed(self) -> bool:
        res = np.abs(np.asarray(self.residual, dtype=float))
        tol = np.asarray(self.tolerance, dtype=float)
        return bool(np.all(np.isfinite(res)) and np.all(res <= tol))

    @property
    def worst(self) -> float:
        """Largest ``|residual| / tolerance`` (0 when there are no points)."""
        res = np.abs(np.asarray(self.residual, dtype=float))
        if res.size == 0:
            return 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(res == 0, 0.0, res / np.asarray(self.tolerance, dtype=float))
        return float(np.nanmax(np.where(np.isfinite(r), r, np.inf)))

    def to_dict(self) -> dict:
        d = {
            "name": self.name, "kind": self.kind, "passed": self.passed,
            "points": [p if isinstance(p, str) else [float(c) for c in p]
                       for p in self.points],
            "lhs": [_clean(v) for v in np.ravel(self.lhs)],
            "rhs": [_clean(v) for v in np.ravel(self.rhs)],
            "residual": [_clean(v) for v in np.ravel(self.residual)],
            "tolerance": [_clean(v) for v in np.ravel(self.tolerance)],
            "worst_ratio": _clean(self.worst) if math.isfinite(self.worst) else None,
            "note": self.note,
        }
        if self.kind == "statistical":
            d["sigma"] = [_clean(v) for v in np.ravel(self.sigma)]
            d["k"] = self.k
        else:
            d["atol"] = self.atol
        if self.excluded:
            d["excluded"] = [[float(c) for c in p] for p in self.excluded]
        return d


@dataclass
class BalanceReport:
    scenario: str
    seed: int
    horizon: Optional[float]
    checks: List[IdentityCheck]
    metadata: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list:
        return [c.name for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {"schema": REPORT_SCHEMA, "scenario": self.scenario, "seed": self.seed,
                "horizon": self.horizon, "passed": self.passed,
                "checks": [c.to_dict() for c in self.checks],
                "metadata": self.metadata}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    def summary(self) -> str:
        lines = [f"scenario {self.scenario} (seed {self.seed}): "
                 f"{'PASS' if self.passed else 'FAIL'}"]
        for c in self.checks:
            lines.append(f"  {'pass' if c.passed else 'FAIL'}  {c.kind:<11s} {c.name}"
                         f"  worst |res|/tol = {c.worst:.3g}")
        return "\n".join(lines)


# --------------------------------------------------------------------------
# check builders

def statistical_check(name: str, sums: BatchSums, fn: Callable, points=None,
                      k: float = K_SIGMA, keep: Optional[np.ndarray] = None,
                      note: str = "") -> IdentityCheck:
    """``fn(S) -> (lhs, rhs)`` evaluated on pooled sums ``S``."""
    full = sums.pooled()
    lhs, rhs = (np.atleast_1d(np.asarray(v, dtype=float)) for v in fn(full))
    lhs, rhs = np.broadcast_arrays(lhs, rhs)
    res, sig = jackknife(sums, lambda S: np.subtract(*fn(S)))
    res = np.broadcast_to(np.atleast_1d(res), lhs.shape)
    sig = np.broadcast_to(np.atleast_1d(sig), lhs.shape)
    pts = [list(p) for p in sums.grid] if points is None else list(points)
    excluded = []
    if keep is not None:
        excluded = [pts[n] for n in np.flatnonzero(~keep)]
        pts = [pts[n] for n in np.flatnonzero(keep)]
        lhs, rhs, res, sig = lhs[keep], rhs[keep], res[keep], sig[keep]
    return IdentityCheck(name=name, kind="statistical", points=pts, lhs=lhs, rhs=rhs,
                         residual=np.asarray(res, dtype=float),
                         tolerance=k * np.asarray(sig) + ABS_FLOOR,
                         sigma=np.asarray(sig, dtype=float), k=k,
                         excluded=excluded, note=note)


def exact_check(name: str, lhs, rhs, points, atol=EXACT_ATOL, note: str = "") -> IdentityCheck:
    lhs = np.atleast_1d(np.asarray(lhs, dtype=float))
    rhs = np.atleast_1d(np.asarray(rhs, dtype=float))
    tol = np.broadcast_to(np.asarray(atol, dtype=float), lhs.shape).copy()
    return IdentityCheck(name=name, kind="exact", points=list(points), lhs=lhs, rhs=rhs,
                         residual=lhs - rhs, tolerance=tol,
                         atol=float(np.max(tol)) if tol.size else float(atol), note=note)


# --------------------------------------------------------------------------
# sample-path identity

def telescoping_sides(ledger: CountingLedger, f, t: Optional[float] = None):
    """Both sides of the per-path telescoping identity for ``f`` up to ``t``."""
    t = ledger.end_time if t is None else t
    r = transient_functionals(ledger, t, f)
    lhs = (r["lambda_e"] * (r["R_e_g_plus"] - r["R_e_g"])
           + r["lambda_d"] * (r["R_d_h_plus"] - r["R_d_h"])
           - r["lambda_d"] * (r["R_d_h_minus"] - r["R_d_h"]))
    x_t = state_at(ledger, t)[None, :]
    x_0 = np.asarray(ledger.x0, dtype=np.int64)[None, :]
    rhs = (float(f(x_t)[0]) - float(f(x_0)[0])) / t
    return lhs, rhs


def check_pathwise_telescoping(ledger: CountingLedger, functions=None, times=None,
                               label: str = "") -> IdentityCheck:
    """Exact per-path identity for each test function (and each time ``t``)."""
    lib = functions is None
    functions = testfunctions.LIBRARY if lib else list(functions)
    times = [ledger.end_time] if times is None else list(times)
    x_0 = np.asarray(ledger.x0, dtype=np.int64)[None, :]
    lhs, rhs, pts = [], [], []
    for t in times:
        r = transient_functionals_all(ledger, t, None if lib else functions)
        lhs.append(r["lambda_e"] * (r["R_e_g_plus"] - r["R_e_g"])
                   + r["lambda_d"] * (r["R_d_h_plus"] - r["R_d_h"])
                   - r["lambda_d"] * (r["R_d_h_minus"] - r["R_d_h"]))
        x_t = state_at(ledger, t)[None, :]
        rhs.append(np.array([(float(f(x_t)[0]) - float(f(x_0)[0])) / t for f in functions]))
        pts.extend(f"{label}{f.name}@t={t!r}" for f in functions)
    return exact_check("pathwise_telescoping", np.concatenate(lhs), np.concatenate(rhs), pts)


# --------------------------------------------------------------------------
# stationary relations over test functions

def _fn_labels():
    return [f.name for f in testfunctions.LIBRARY]


def check_stationary_relation(sums: BatchSums, exclusive: bool = True,
                              k: float = K_SIGMA) -> IdentityCheck:
    """Arrival, routing and departure increments of each ``f`` balance."""
    if not exclusive:
        raise InapplicableAssumption("the run recorded a simultaneous arrival and departure")

    def fn(S):
        return (S["f.e"] + S["f.dZ"]) / S["T"], S["f.dY"] / S["T"]

    return statistical_check("stationary_relation", sums, fn, _fn_labels(), k)


def subset_codes_in(sums: BatchSums) -> list:
    return sorted(int(key[len("n_d.A"):]) for key in sums.keys() if key.startswith("n_d.A"))


def check_subset_relation(sums: BatchSums, k: float = K_SIGMA) -> list:
    """The stationary relation split over departure subsets, plus the
    partition and singleton-reduction facts."""
    codes = subset_codes_in(sums)

    def fn(S):
        dz = sum(S[f"f.dZ.A{c}"] for c in codes)
        dy = sum(S[f"f.dY.A{c}"] for c in codes)
        return (S["f.e"] + dz) / S["T"], dy / S["T"]

    checks = [statistical_check("subset_relation", sums, fn, _fn_labels(), k)]
    full = sums.pooled()
    part_lhs = [sum(full[f"n_d.A{c}"] for c in codes)] + list(
        sum(full[f"f.dZ.A{c}"] - full[f"f.dY.A{c}"] for c in codes))
    part_rhs = [full["n_d"]] + list(full["f.dZ"] - full["f.dY"])
    scale = 1.0 + np.abs(np.asarray(part_rhs))
    checks.append(exact_check("subset_partition", part_lhs, part_rhs,
                              ["epochs"] + _fn_labels(), atol=EXACT_ATOL * scale))
    multi = [c for c in codes if c & (c - 1)]
    checks.append(exact_check(
        "singleton_reduction", [sum(float(full[f"n_d.A{c}"]) for c in multi)], [0.0],
        ["non-singleton departure epochs"],
        note="departures from different queues never coincide"))
    return checks


# --------------------------------------------------------------------------
# generating-function relations

def external_rates(cfg) -> np.ndarray:
    for attr in ("rates", "external_rates", "arrival_rates"):
        v = getattr(cfg, attr, None)
        if v is not None:
            return np.asarray(v, dtype=float)
    raise MissingEstimate("model exposes no arrival rates")


def context(cfg) -> analytic.TransformContext:
    rates = tuple(external_rates(cfg).tolist())
    service = getattr(cfg, "service", ())
    if service and not isinstance(service, tuple):
        service = tuple(service)
    return analytic.TransformContext(
        rates=rates, service=tuple(service or ()),
        switchover=tuple(getattr(cfg, "switchover", ()) or ()),
        batch_law=getattr(cfg, "batch_law", None),
        batch_rate=getattr(cfg, "batch_rate", None),
        routing=getattr(cfg, "routing", None),
        batch_sizes=getattr(cfg, "batch_sizes", None))


def _ones_mask(grid) -> np.ndarray:
    return np.all(np.asarray(grid) == 1.0, axis=1)


def check_pasta(sums: BatchSums, k: float = K_SIGMA) -> IdentityCheck:
    return statistical_check("pasta", sums,
                             lambda S: (S.ratio("e.X", "n_e"), S.ratio("L", "T")), k=k)


def check_burke(sums: BatchSums, k: float = K_SIGMA) -> IdentityCheck:
    return statistical_check("burke", sums,
                             lambda S: (S.ratio("e.X", "n_e"), S.ratio("d.X", "n_d")), k=k)


def check_mm1_oracle(sums: BatchSums, rho: float, k: float = K_SIGMA) -> list:
    z = sums.grid[:, 0]
    exact = analytic.mm1_pgf(rho, z)
    out = []
    for name, num, den in (("mm1_oracle_arrival", "e.X", "n_e"),
                           ("mm1_oracle_departure", "d.X", "n_d"),
                           ("mm1_oracle_time_average", "L", "T")):
        out.append(statistical_check(name, sums, lambda S, a=num, b=den: (S.ratio(a, b), exact),
                                     k=k))
    return out


def arrival_factor(cfg, grid) -> np.ndarray:
    """Rate of arrival epochs times ``1 - E z^G``."""
    law = getattr(cfg, "batch_law", None)
    if law is not None:
        return cfg.batch_rate * (1.0 - law.pgf(grid))
    return (1.0 - grid) @ external_rates(cfg)


def customer_rates(cfg) -> np.ndarray:
    law = getattr(cfg, "batch_law", None)
    if law is not None:
        return cfg.batch_rate * law.mean
    return external_rates(cfg)


def check_poisson_balance(sums: BatchSums, cfg, name: str, k: float = K_SIGMA) -> IdentityCheck:
    """``A(z) L(z) = sum_i lam_i (1 - z_i^K_i) / K_i S^c_i(z)``.

    With unit batches and ``K = 1`` this is the polling/multiclass balance;
    a batch law gives the batch-arrival form and ``K > 1`` the batch-service
    form.
    """
    grid = sums.grid
    m = grid.shape[1]
    lam = customer_rates(cfg)
    K = np.asarray(getattr(cfg, "batch_sizes", None) or (1,) * m, dtype=float)
    af = arrival_factor(cfg, grid)
    weights = lam / K * (1.0 - grid ** K)

    def fn(S):
        rhs = sum(weights[:, i] * S.ratio(f"d.X.{i}", f"n_d.{i}")
                  for i in range(m) if lam[i] > 0)
        return af * S.ratio("L", "T"), rhs

    return statistical_check(name, sums, fn, k=k)


def check_roving_balance(sums: BatchSums, cfg, k: float = K_SIGMA) -> IdentityCheck:
    ctx = context(cfg)
    grid = sums.grid
    lam_tot = ctx.throughputs
    m = ctx.m
    P = np.column_stack([analytic.routing_factor(ctx, i, grid) for i in range(m)])
    sig = analytic.sigma(ctx, grid)

    def fn(S):
        rhs = sum(lam_tot[i] * (P[:, i] - grid[:, i]) * S.ratio(f"d.X.{i}", f"n_d.{i}")
                  for i in range(m))
        return sig * S.ratio("L", "T"), rhs

    return statistical_check("roving_network_balance", sums, fn, k=k)


def check_embedded_relations(sums: BatchSums, cfg, k: float = K_SIGMA) -> list:
    """Generating-function forms with empirical rates and routing splits."""
    grid = sums.grid
    m = grid.shape[1]
    out = []
    pairs = [(i, j) for i in range(m) for j in range(m) if f"d.X.{i}>{j}" in sums]

    def routed(S):
        return sum((1.0 - grid[:, j]) * S[f"d.X.{i}>{j}"] for i, j in pairs) / S["T"] \
            if pairs else 0.0

    def departures(S):
        return sum((1.0 - grid[:, i]) * S[f"d.X.{i}"] for i in range(m)) / S["T"]

    if getattr(cfg, "single_departures", False):
        def rel3(S):
            arr = S["n_e"] / S["T"] * (1.0 - S.ratio("e.Y", "n_e")) * S.ratio("e.X", "n_e")
            return arr + routed(S), departures(S)
        out.append(statistical_check("batch_pgf_relation", sums, rel3, k=k))
        if getattr(cfg, "single_arrivals", False):
            def rel4(S):
                arr = sum((1.0 - grid[:, q]) * S[f"e.X.{q}"] for q in range(m)) / S["T"]
                return arr + routed(S), departures(S)
            out.append(statistical_check("class_pgf_relation", sums, rel4, k=k,
                                         note="routing split estimated from the run"))
            p = getattr(cfg, "routing", None)
            if p is not None:
                exit_w = (1.0 - grid) @ np.asarray(p).T      # (G, m): sum_j p_ij (1 - z_j)

                def rel5(S):
                    arr = sum((1.0 - grid[:, q]) * S[f"e.X.{q}"] for q in range(m)) / S["T"]
                    mid = sum(exit_w[:, i] * S[f"d.X.{i}"] for i in range(m)) / S["T"]
                    return arr + mid, departures(S)
                out.append(statistical_check("markov_routing_pgf_relation", sums, rel5, k=k))
    return out


def check_pgf_relations(sums: BatchSums, cfg, k: float = K_SIGMA) -> list:
    """All generating-function relations applicable to the model."""
    kind = cfg.kind
    routing = getattr(cfg, "routing", None)
    out = []
    needed = ["L", "T", "e.X", "n_e"]
    for key in needed:
        if key not in sums:
            raise MissingEstimate(f"estimate '{key}' was not collected")
    if getattr(cfg, "poisson_input", False):
        out.append(check_pasta(sums, k))
        if kind == "roving":
            out.append(check_roving_balance(sums, cfg, k))
        elif routing is None and getattr(cfg, "shorter_queue_targets", None) is None:
            K = getattr(cfg, "batch_sizes", None) or (1,)
            if kind == "polling":
                name = "polling_balance"
            elif max(K) > 1:
                name = "batch_service_balance"
            elif getattr(cfg, "batch_law", None) is not None:
                name = "batch_arrival_balance"
            elif kind == "priority":
                name = "priority_balance"
            else:
                name = "multiclass_balance"
            out.append(check_poisson_balance(sums, cfg, name, k))
    if sums.grid.shape[1] == 1 and cfg.single_arrivals and cfg.single_departures \
            and routing is None:
        out.append(check_burke(sums, k))
    out.extend(check_embedded_relations(sums, cfg, k))
    if kind == "priority" and cfg.m == 2:
        out.extend(check_priority_displays(sums, cfg, k))
    return out


# --------------------------------------------------------------------------
# consecutive-departure displays (priority, longer queue)

PRIORITY_REGIONS = {
    "first_empty": lambda x: x[:, 0] == 0,
    "empty": lambda x: x.sum(axis=1) == 0,
}

LONGER_QUEUE_REGIONS = {
    "first_longer": lambda x: x[:, 0] > x[:, 1],
    "second_longer": lambda x: x[:, 0] < x[:, 1],
    "equal_busy": lambda x: (x[:, 0] == x[:, 1]) & (x[:, 0] > 0),
    "empty": lambda x: x.sum(axis=1) == 0,
}


def regions_for(cfg) -> dict:
    if cfg.kind == "priority" and cfg.m == 2:
        return PRIORITY_REGIONS
    if cfg.kind == "longer_queue":
        return LONGER_QUEUE_REGIONS
    return {}


def check_priority_displays(sums: BatchSums, cfg, k: float = K_SIGMA) -> list:
    """Departure-epoch displays for two non-preemptive priority classes.

    Both sides are multiplied by ``z_i`` to avoid dividing by zero on the grid.
    """
    ctx = context(cfg)
    grid = sums.grid
    lam = ctx.lam
    share = lam / lam.sum()
    b1, b2 = analytic.beta(ctx, 0, grid), analytic.beta(ctx, 1, grid)
    z1, z2 = grid[:, 0], grid[:, 1]

    def pieces(S):
        n = S["n_d"]
        return (S["d.X"] / n, S["d.R.first_empty"] / n, S["n_d.R.empty"] / n)

    def first(S):
        pi, pi0z, p00 = pieces(S)
        return z1 * S["d.X.0"] / S["n_d"], (pi - pi0z) * b1 + z1 * p00 * share[0] * b1

    def second(S):
        pi, pi0z, p00 = pieces(S)
        return z2 * S["d.X.1"] / S["n_d"], (pi0z - p00) * b2 + z2 * p00 * share[1] * b2

    return [statistical_check("priority_display_class1", sums, first, k=k),
            statistical_check("priority_display_class2", sums, second, k=k)]


def _swap_index(grid: np.ndarray) -> Optional[np.ndarray]:
    lookup = {tuple(r): n for n, r in enumerate(grid.tolist())}
    idx = [lookup.get(tuple(r[::-1])) for r in grid.tolist()]
    return None if any(v is None for v in idx) else np.asarray(idx)


def check_longer_queue_decomposition(sums: BatchSums, cfg, k: float = K_SIGMA) -> list:
    """Departure-epoch displays for the longer-queue model and its symmetry."""
    for key in ("d.R.first_longer", "d.R.second_longer", "d.R.equal_busy", "n_d.R.empty"):
        if key not in sums:
            raise MissingEstimate(f"region estimate '{key}' was not collected")
    ctx = context(cfg)
    grid = sums.grid
    share = ctx.lam / ctx.lam.sum()
    a1, a2 = cfg.alpha
    b1, b2 = analytic.beta(ctx, 0, grid), analytic.beta(ctx, 1, grid)
    z1, z2 = grid[:, 0], grid[:, 1]

    def first(S):
        n = S["n_d"]
        rhs = (S["d.R.first_longer"] + a1 * S["d.R.equal_busy"]) / n * b1 \
            + z1 * S["n_d.R.empty"] / n * share[0] * b1
        return z1 * S["d.X.0"] / n, rhs

    def second(S):
        n = S["n_d"]
        rhs = (S["d.R.second_longer"] + a2 * S["d.R.equal_busy"]) / n * b2 \
            + z2 * S["n_d.R.empty"] / n * share[1] * b2
        return z2 * S["d.X.1"] / n, rhs

    def regions_total(S):
        n = S["n_d"]
        tot = (S["d.R.first_longer"] + S["d.R.second_longer"] + S["d.R.equal_busy"]) / n \
            + S["n_d.R.empty"] / n
        return tot, S["d.X"] / n

    out = [statistical_check("longer_queue_display_q1", sums, first, k=k),
           statistical_check("longer_queue_display_q2", sums, second, k=k)]
    full = sums.pooled()
    lhs, rhs = regions_total(full)
    out.append(exact_check("longer_queue_region_partition", lhs, rhs,
                           [list(p) for p in grid], atol=1e-12,
                           note="region PGFs add up to the departure PGF"))
    if getattr(cfg, "symmetric", False):
        swap = _swap_index(grid)
        if swap is not None:
            out.append(statistical_check(
                "longer_queue_symmetry_departures", sums,
                lambda S: (S["d.X.0"] / S["n_d"], (S["d.X.1"] / S["n_d"])[swap]), k=k))
            out.append(statistical_check(
                "longer_queue_symmetry_time_average", sums,
                lambda S: (S.ratio("L", "T"), S.ratio("L", "T")[swap]), k=k))
    return out


# --------------------------------------------------------------------------
# polling chain

def check_polling_chain(sums: BatchSums, cfg, k: float = K_SIGMA) -> list:
    """Visit/service epoch relations and the assembled queue-length formula."""
    for i in range(cfg.m):
        for key in (f"vb.{i}", f"vc.{i}", f"sb.{i}", f"L.p{2 * i}", f"L.p{2 * i + 1}"):
            if key not in sums:
                raise MissingEstimate(f"polling estimate '{key}' was not collected")
    ctx = context(cfg)
    grid = sums.grid
    m = ctx.m
    roving = cfg.kind == "roving"
    lam_tot = ctx.throughputs
    ec = ctx.mean_cycle
    gamma = ctx.gamma
    bt = [analytic.beta(ctx, i, grid) for i in range(m)]
    st = [analytic.switch_factor(ctx, i, grid) for i in range(m)]
    bpast = [analytic.service_past(ctx, i, grid) for i in range(m)]
    spast = [analytic.switch_past(ctx, i, grid) for i in range(m)]
    P = [analytic.routing_factor(ctx, i, grid) for i in range(m)]
    out = []

    def V(S, kind, i):
        return S.ratio(f"{kind}.{i}", f"n_{kind}.{i}")

    def Sc(S, i):
        return S.ratio(f"d.X.{i}", f"n_d.{i}")

    for i in range(m):
        if roving:
            out.append(statistical_check(
                f"roving_visit_balance_q{i}", sums,
                lambda S, i=i: ((V(S, "vb", i) - V(S, "vc", i)) / (lam_tot[i] * ec),
                                V(S, "sb", i) - Sc(S, i) * P[i]), k=k))
        else:
            out.append(statistical_check(
                f"visit_service_balance_q{i}", sums,
                lambda S, i=i: (gamma[i] * V(S, "vb", i) + Sc(S, i),
                                V(S, "sb", i) + gamma[i] * V(S, "vc", i)), k=k))
        out.append(statistical_check(
            f"service_transfer_q{i}", sums,
            lambda S, i=i: (grid[:, i] * Sc(S, i), V(S, "sb", i) * bt[i]), k=k))
        nxt = (i + 1) % m
        out.append(statistical_check(
            f"switchover_transfer_q{i}", sums,
            lambda S, i=i, nxt=nxt: (V(S, "vb", nxt), V(S, "vc", i) * st[i]), k=k))
        out.append(statistical_check(
            f"during_service_q{i}", sums,
            lambda S, i=i: (S.ratio(f"L.p{2 * i}", f"T.p{2 * i}"), V(S, "sb", i) * bpast[i]),
            k=k))
        out.append(statistical_check(
            f"during_switchover_q{i}", sums,
            lambda S, i=i: (S.ratio(f"L.p{2 * i + 1}", f"T.p{2 * i + 1}"),
                            V(S, "vc", i) * spast[i]), k=k))

    rho_i = lam_tot * ctx.b
    s = ctx.s

    def mean_value(S):
        rhs = sum(rho_i[i] * S.ratio(f"L.p{2 * i}", f"T.p{2 * i}")
                  + s[i] / ec * S.ratio(f"L.p{2 * i + 1}", f"T.p{2 * i + 1}")
                  for i in range(m))
        return S.ratio("L", "T"), rhs

    out.append(statistical_check("mean_value_decomposition", sums, mean_value, k=k))

    if not roving:
        near = analytic.singular_mask(ctx, grid)
        keep = ~near | _ones_mask(grid)
        def formula(S):
            vb = np.column_stack([V(S, "vb", i) for i in range(m)])
            vc = np.column_stack([V(S, "vc", i) for i in range(m)])
            val = np.ones(len(grid))
            ok = ~near
            val[ok] = analytic.visit_formula_terms(ctx, vb[ok], vc[ok], grid[ok])
            return S.ratio("L", "T"), val

        out.append(statistical_check(
            "visit_formula", sums, formula, keep=keep, k=k,
            note="points near a removable singularity other than z = 1 are excluded"
            if (~keep).any() else ""))
    return out


# --------------------------------------------------------------------------
# rates, convergence

def check_traffic_equations(cfg, atol: float = 1e-10) -> IdentityCheck:
    """Solved throughputs satisfy ``L_i = lam_i + sum_k L_k p_ki``."""
    lam = external_rates(cfg)
    p = np.asarray(cfg.routing, dtype=float)
    big = solve_traffic(lam, p)
    return exact_check("traffic_equations", big - p.T @ big, lam,
                       [f"queue {i}" for i in range(len(lam))], atol=atol)


def check_rate_identity(ledger: CountingLedger, rel: float = 0.01) -> IdentityCheck:
    """Customers leaving the network per unit time equal customers arriving."""
    t = ledger.end_time
    arrived = float(ledger.cum_e.sum()) / t
    left = float(ledger.cum_d.sum() - ledger.cum_r.sum()) / t
    return exact_check("rate_identity", [left], [arrived], ["customers per unit time"],
                       atol=rel * arrived, note=f"relative tolerance {rel}")


def check_cesaro(stats: Sequence, k: float = K_SIGMA) -> IdentityCheck:
    """Running Palm averages at ``n`` and ``2n`` epochs agree.

    ``stats`` holds ``(label, avg_n, avg_2n, sigma)`` tuples with one entry
    per function.
    """
    pts, lhs, rhs, sig = [], [], [], []
    for label, a_n, a_2n, s in stats:
        for f, a, b, sd in zip(_fn_labels(), np.ravel(a_n), np.ravel(a_2n), np.ravel(s)):
            pts.append(f"{label}:{f}")
            lhs.append(a)
            rhs.append(b)
            sig.append(sd)
    lhs, rhs, sig = (np.asarray(v, dtype=float) for v in (lhs, rhs, sig))
    return IdentityCheck(name="cesaro_convergence", kind="statistical", points=pts,
                         lhs=lhs, rhs=rhs, residual=lhs - rhs,
                         tolerance=k * sig + ABS_FLOOR, sigma=sig, k=k)
