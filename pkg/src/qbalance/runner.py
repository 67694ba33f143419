"""Replicated runs of a scenario and assembly of the balance report."""
from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import estimators, testfunctions, verifier
from .errors import EmptyLog, InapplicableAssumption, MissingEstimate
from .inputs import RngStream
from .kernel import Clock, SimulationResult, TagLog, TimeAverageAccumulator, run
from .scenarios import Scenario
from .state import CountingLedger, read_jump_log

from . import __version__ as LIBRARY_VERSION  # noqa: E402


@dataclass
class ReplicationOutput:
    """Everything the report needs from one replication."""

    index: int
    sums: estimators.BatchSums
    telescoping: verifier.IdentityCheck
    rate: tuple                     # (departed per unit time, arrived per unit time)
    exclusive: bool
    conserved: bool
    cesaro: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)


def _cesaro_values(ledger: CountingLedger, t0: float):
    keep = ledger.times >= t0
    pre, de, dd = ledger.pre[keep], ledger.de[keep], ledger.dd[keep]
    arr = de.sum(axis=1) > 0
    dep = dd.sum(axis=1) > 0
    return {"arrival": testfunctions.evaluate_all(pre[arr]),
            "departure": testfunctions.evaluate_all(pre[dep] - dd[dep])}


def analyse(scenario: Scenario, result: SimulationResult, index: int = 0) -> ReplicationOutput:
    """Reduce one simulated (or replayed) path to sufficient statistics."""
    cfg = scenario.model
    rc = scenario.run
    ledger = result.ledger
    T = result.end_time
    sums = estimators.collect_sums(result, n_batches=rc.batches, warmup=rc.warmup,
                                   regions=verifier.regions_for(cfg))
    tele = verifier.check_pathwise_telescoping(ledger, times=[T / 2, T], label=f"rep{index}:")
    rate = verifier.check_rate_identity(ledger)
    cesaro = []
    for label, vals in _cesaro_values(ledger, rc.warmup * T).items():
        try:
            a_n, a_2n, s = estimators.cesaro_statistics(vals, rc.batches)
        except EmptyLog:
            continue
        cesaro.append((f"rep{index}:{label}", a_n, a_2n, s))
    meta = {"replication": index, "end_time": T, "n_events": int(result.n_events),
            "n_records": int(ledger.n_records), "n_jittered": int(result.n_jittered),
            "x_final": [int(v) for v in ledger.x_final]}
    return ReplicationOutput(index=index, sums=sums, telescoping=tele,
                             rate=(float(rate.lhs[0]), float(rate.rhs[0])),
                             exclusive=bool(ledger.check_exclusivity()),
                             conserved=bool(ledger.check_conservation()),
                             cesaro=cesaro, meta=meta)


def replication_stream(scenario: Scenario, index: int) -> RngStream:
    return RngStream(scenario.run.seed).split(index)


def simulate(scenario: Scenario, index: int = 0, jump_log_path=None) -> SimulationResult:
    rc = scenario.run
    return run(scenario.model, Clock(horizon=rc.horizon, max_events=rc.events),
               replication_stream(scenario, index), tie_policy=rc.tie_policy,
               jump_log_path=jump_log_path)


def run_replication(scenario: Scenario, index: int, jump_log_dir=None) -> ReplicationOutput:
    path = None
    if jump_log_dir is not None:
        path = Path(jump_log_dir) / f"{scenario.id}-rep{index}.log"
    return analyse(scenario, simulate(scenario, index, path), index)


def _applicable(scenario: Scenario, outputs: list, replayed: bool = False) -> list:
    cfg = scenario.model
    k = scenario.run.k_sigma
    sums = estimators.BatchSums.concat([o.sums for o in outputs])
    exclusive = all(o.exclusive for o in outputs)
    groups = set(scenario.checks)
    checks = []

    if "telescoping" in groups:
        tele = [o.telescoping for o in outputs]
        checks.append(verifier.IdentityCheck(
            name="pathwise_telescoping", kind="exact",
            points=[p for c in tele for p in c.points],
            lhs=np.concatenate([c.lhs for c in tele]),
            rhs=np.concatenate([c.rhs for c in tele]),
            residual=np.concatenate([c.residual for c in tele]),
            tolerance=np.concatenate([c.tolerance for c in tele]),
            atol=verifier.EXACT_ATOL))
        checks.append(verifier.exact_check(
            "path_consistency", [float(all(o.conserved for o in outputs))], [1.0],
            ["replayed final state equals simulated state"]))
    if "rate_identity" in groups:
        left = float(np.mean([o.rate[0] for o in outputs]))
        arrived = float(np.mean([o.rate[1] for o in outputs]))
        checks.append(verifier.exact_check(
            "rate_identity", [left], [arrived], ["customers per unit time"],
            atol=0.01 * arrived, note="relative tolerance 0.01"))
    if "stationary" in groups and exclusive:
        checks.append(verifier.check_stationary_relation(sums, True, k))
    if "subset" in groups:
        checks.extend(verifier.check_subset_relation(sums, k))
    if "pgf" in groups and getattr(cfg, "routing", None) is not None:
        checks.append(verifier.check_traffic_equations(cfg))
    if "pgf" in groups and exclusive:
        checks.extend(verifier.check_pgf_relations(sums, cfg, k))
    if "longer_queue" in groups and cfg.kind == "longer_queue":
        checks.extend(verifier.check_longer_queue_decomposition(sums, cfg, k))
    if "polling_chain" in groups and cfg.kind in ("polling", "roving") and not replayed:
        checks.extend(verifier.check_polling_chain(sums, cfg, k))
    if "oracle" in groups and _is_mm1(cfg):
        checks.extend(verifier.check_mm1_oracle(sums, float(cfg.rho), k))
    if "cesaro" in groups:
        stats = [s for o in outputs for s in o.cesaro]
        if stats:
            checks.append(verifier.check_cesaro(stats, k))
    return checks


def _is_mm1(cfg) -> bool:
    if cfg.kind != "single_station" or cfg.m != 1 or cfg.servers != 1:
        return False
    if cfg.interarrival is None or cfg.interarrival[0] is None:
        return False
    return (cfg.interarrival[0].is_exponential and cfg.service[0].is_exponential
            and tuple(cfg.batch_sizes) == (1,))


def build_report(scenario: Scenario, outputs: list, replayed: bool = False) -> verifier.BalanceReport:
    outputs = sorted(outputs, key=lambda o: o.index)
    try:
        checks = _applicable(scenario, outputs, replayed)
    except (MissingEstimate, InapplicableAssumption) as exc:
        raise type(exc)(f"scenario {scenario.id}: {exc}") from exc
    rc = scenario.run
    meta = {
        "library_version": LIBRARY_VERSION,
        "test_function_library": testfunctions.LIBRARY_VERSION,
        "estimator_schema": estimators.SCHEMA_VERSION,
        "model": scenario.raw.get("model", {}),
        "replications": [o.meta for o in outputs],
        "warmup_fraction": rc.warmup, "batches_per_replication": rc.batches,
        "k_sigma": rc.k_sigma, "tie_policy": rc.tie_policy, "events": rc.events,
        "grid_points": int(outputs[0].sums.grid.shape[0]),
        "exclusive_marks": all(o.exclusive for o in outputs),
        "replayed": replayed,
    }
    horizon = rc.horizon if rc.horizon is not None else float(
        np.mean([o.meta["end_time"] for o in outputs]))
    return verifier.BalanceReport(scenario=scenario.id, seed=rc.seed, horizon=horizon,
                                  checks=checks, metadata=meta)


def run_scenario(scenario: Scenario, workers: int = 1, jump_log_dir=None) -> verifier.BalanceReport:
    """Simulate every replication, then verify all applicable identities.

    The report is identical for any ``workers``: each replication has its own
    random stream and results are ordered by replication index.
    """
    n = scenario.run.replications
    if jump_log_dir is not None:
        Path(jump_log_dir).mkdir(parents=True, exist_ok=True)
    if workers <= 1 or n == 1:
        outputs = [run_replication(scenario, r, jump_log_dir) for r in range(n)]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, n)) as pool:
            outputs = list(pool.map(run_replication, [scenario] * n, range(n),
                                    [jump_log_dir] * n))
    return build_report(scenario, outputs)


def result_from_ledger(ledger: CountingLedger) -> SimulationResult:
    """Wrap a stored path as a result without server tags or phases."""
    m = ledger.m
    empty = TagLog(times=np.zeros(0), kinds=np.zeros(0, dtype=np.int64),
                   queues=np.zeros(0, dtype=np.int64), states=np.zeros((0, m), dtype=np.int64))
    return SimulationResult(m=m, x0=tuple(int(v) for v in ledger.x0), end_time=ledger.end_time,
                            ledger=ledger, tags=empty, phase_times=np.zeros(0),
                            phase_values=np.zeros(0, dtype=np.int64), initial_phase=-1,
                            time_average=TimeAverageAccumulator(m),
                            n_events=int(ledger.n_records))


def replay(scenario: Scenario, jump_logs) -> verifier.BalanceReport:
    """Re-verify a scenario from stored jump logs (one per replication).

    Checks that need server tags (the polling chain) are not applicable.
    """
    outputs = [analyse(scenario, result_from_ledger(read_jump_log(p)), r)
               for r, p in enumerate(jump_logs)]
    return build_report(scenario, outputs, replayed=True)


def write_plotdata(report: verifier.BalanceReport, directory) -> list:
    """One CSV per identity with points, both sides, residual and sigma."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = []
    for c in report.checks:
        p = d / f"{report.scenario}-{c.name}.csv"
        sig = c.sigma if c.sigma is not None else np.zeros(len(c.lhs))
        with p.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["point", "lhs", "rhs", "residual", "sigma", "tolerance"])
            for pt, a, b, r, s, t in zip(c.points, c.lhs, c.rhs, c.residual, sig, c.tolerance):
                label = " ".join(f"{v:g}" for v in pt) if isinstance(pt, (list, tuple)) else pt
                w.writerow([label, repr(float(a)), repr(float(b)), repr(float(r)),
                            repr(float(s)), repr(float(t))])
        paths.append(p)
    return paths
