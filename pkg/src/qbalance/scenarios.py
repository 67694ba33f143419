"""Scenario files: schema validation and the shipped corpus.

A scenario is a TOML document with the tables ``model``, ``run`` and
optionally ``checks`` and ``output``.  Unknown keys are rejected with a
:class:`ConfigError` naming the key.
"""
from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, InvalidParameter
from .inputs import BatchLaw, ServiceDistribution
from .kernel import TIE_POLICIES
from .models import (BatchStationConfig, LongerQueueConfig, NetworkConfig,
                     PollingConfig, PriorityConfig, SingleStationConfig)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

CORPUS_DIR = Path(__file__).parent / "scenarios"

CHECK_GROUPS = ("telescoping", "stationary", "subset", "pgf", "polling_chain",
                "longer_queue", "oracle", "cesaro", "rate_identity")

TOP_KEYS = {"id", "description", "model", "run", "checks", "output"}
RUN_KEYS = {"horizon", "events", "replications", "seed", "warmup", "batches",
            "tie_policy", "k_sigma"}
CHECK_KEYS = {"select"}
OUTPUT_KEYS = {"report", "plotdata", "jump_log"}
MODEL_KEYS = {
    "single_station": {"kind", "service", "interarrival", "servers", "order", "x0"},
    "batch_station": {"kind", "batch_rate", "batch_law", "service", "batch_sizes",
                      "servers", "x0"},
    "priority": {"kind", "rates", "service"},
    "polling": {"kind", "rates", "service", "switchover", "discipline", "limits",
                "order", "x0"},
    "roving": {"kind", "rates", "service", "switchover", "discipline", "limits",
               "order", "routing", "x0"},
    "longer_queue": {"kind", "rates", "service", "alpha"},
    "network": {"kind", "interarrival", "service", "servers", "routing",
                "shorter_queue_targets", "x0"},
}


@dataclass(frozen=True)
class RunControls:
    horizon: Optional[float] = None
    events: Optional[int] = None
    replications: int = 1
    seed: int = 1
    warmup: float = 0.1
    batches: int = 32
    tie_policy: str = "reject"
    k_sigma: float = 4.0


@dataclass
class Scenario:
    id: str
    description: str
    model: object
    run: RunControls
    checks: tuple
    output: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict, repr=False)
    source: Optional[str] = None

    def with_run(self, clear=(), **overrides) -> "Scenario":
        """Copy with run controls overridden; ``None`` values are ignored and
        keys in ``clear`` are reset to ``None``."""
        vals = asdict(self.run)
        vals.update({k: v for k, v in overrides.items() if v is not None})
        vals.update({k: None for k in clear})
        run = _validate_run(vals, "run")
        return Scenario(self.id, self.description, self.model, run, self.checks,
                        dict(self.output), self.raw, self.source)


def _unknown(d: dict, allowed: set, where: str):
    extra = sorted(set(d) - allowed)
    if extra:
        raise ConfigError(f"unknown key '{where}.{extra[0]}'", key=f"{where}.{extra[0]}")


def _need(d: dict, key: str, where: str):
    if key not in d:
        raise ConfigError(f"missing key '{where}.{key}'", key=f"{where}.{key}")
    return d[key]


def _dist(entry, where: str) -> Optional[ServiceDistribution]:
    if entry == "none":
        return None
    if not isinstance(entry, dict):
        raise ConfigError(f"'{where}' must be a distribution table", key=where)
    try:
        return ServiceDistribution.from_dict(entry)
    except InvalidParameter as exc:
        raise ConfigError(f"'{where}': {exc}", key=where) from exc


def _dists(d: dict, key: str, where: str, optional_entries=False) -> tuple:
    specs = _need(d, key, where)
    if not isinstance(specs, list) or not specs:
        raise ConfigError(f"'{where}.{key}' must be a nonempty list", key=f"{where}.{key}")
    out = tuple(_dist(s, f"{where}.{key}[{n}]") for n, s in enumerate(specs))
    if not optional_entries and any(v is None for v in out):
        raise ConfigError(f"'{where}.{key}' entries must be distributions", key=f"{where}.{key}")
    return out


def _tuple(d, key, default=None):
    v = d.get(key, default)
    return tuple(v) if isinstance(v, list) else v


def _build_model(d: dict):
    where = "model"
    if not isinstance(d, dict):
        raise ConfigError("'model' must be a table", key="model")
    kind = _need(d, "kind", where)
    if kind not in MODEL_KEYS:
        raise ConfigError(f"unknown model kind {kind!r}", key="model.kind")
    _unknown(d, MODEL_KEYS[kind], where)
    try:
        if kind == "single_station":
            return SingleStationConfig(
                service=_dists(d, "service", where),
                interarrival=_dists(d, "interarrival", where, optional_entries=True),
                servers=int(d.get("servers", 1)), order=d.get("order", "fcfs"),
                x0=_tuple(d, "x0"))
        if kind == "batch_station":
            law_entries = _need(d, "batch_law", where)
            try:
                law = BatchLaw.from_pairs([(tuple(e["batch"]), float(e["p"]))
                                           for e in law_entries])
            except (KeyError, TypeError) as exc:
                raise ConfigError("'model.batch_law' entries need 'batch' and 'p'",
                                  key="model.batch_law") from exc
            return BatchStationConfig(float(_need(d, "batch_rate", where)), law,
                                      _dists(d, "service", where),
                                      batch_sizes=_tuple(d, "batch_sizes"),
                                      servers=int(d.get("servers", 1)), x0=_tuple(d, "x0"))
        if kind == "priority":
            return PriorityConfig(_tuple(d, "rates"), _dists(d, "service", where))
        if kind in ("polling", "roving"):
            routing = d.get("routing")
            if kind == "roving" and routing is None:
                raise ConfigError("missing key 'model.routing'", key="model.routing")
            return PollingConfig(
                rates=tuple(float(r) for r in _need(d, "rates", where)),
                service=_dists(d, "service", where),
                switchover=_dists(d, "switchover", where),
                discipline=_tuple(d, "discipline"), limits=_tuple(d, "limits"),
                order=d.get("order", "fcfs"),
                routing=None if routing is None else np.asarray(routing, dtype=float),
                x0=_tuple(d, "x0"))
        if kind == "longer_queue":
            return LongerQueueConfig(rates=tuple(float(r) for r in _need(d, "rates", where)),
                                     service=_dists(d, "service", where),
                                     alpha=_tuple(d, "alpha", (0.5, 0.5)))
        targets = d.get("shorter_queue_targets")
        if targets is not None:
            targets = {int(k): tuple(int(v) for v in vs) for k, vs in targets.items()}
        routing = d.get("routing")
        return NetworkConfig(
            interarrival=_dists(d, "interarrival", where, optional_entries=True),
            service=_dists(d, "service", where), servers=_tuple(d, "servers"),
            routing=None if routing is None else np.asarray(routing, dtype=float),
            shorter_queue_targets=targets, x0=_tuple(d, "x0"))
    except InvalidParameter as exc:
        raise ConfigError(f"invalid model: {exc}", key="model") from exc
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid model: {exc}", key="model") from exc


def _validate_run(d: dict, where: str) -> RunControls:
    if not isinstance(d, dict):
        raise ConfigError("'run' must be a table", key="run")
    _unknown(d, RUN_KEYS, where)
    if d.get("horizon") is None and d.get("events") is None:
        raise ConfigError("'run' needs 'horizon' or 'events'", key="run.horizon")
    checks = {
        "horizon": lambda v: v is None or (isinstance(v, (int, float)) and 0 < v < float("inf")),
        "events": lambda v: v is None or (isinstance(v, int) and v > 0),
        "replications": lambda v: isinstance(v, int) and v >= 1,
        "seed": lambda v: isinstance(v, int) and v >= 0,
        "warmup": lambda v: isinstance(v, (int, float)) and 0 <= v < 1,
        "batches": lambda v: isinstance(v, int) and v >= 2,
        "tie_policy": lambda v: v in TIE_POLICIES,
        "k_sigma": lambda v: isinstance(v, (int, float)) and v > 0,
    }
    for key, ok in checks.items():
        if key in d and not ok(d[key]):
            raise ConfigError(f"invalid value for '{where}.{key}': {d[key]!r}",
                              key=f"{where}.{key}")
    vals = dict(d)
    if vals.get("horizon") is not None:
        vals["horizon"] = float(vals["horizon"])
    return RunControls(**vals)


def parse_scenario(doc: dict, source: Optional[str] = None) -> Scenario:
    if not isinstance(doc, dict):
        raise ConfigError("scenario must be a table", key="")
    _unknown(doc, TOP_KEYS, "scenario")
    sid = _need(doc, "id", "scenario")
    if not isinstance(sid, str) or not sid:
        raise ConfigError("'scenario.id' must be a nonempty string", key="scenario.id")
    model = _build_model(_need(doc, "model", "scenario"))
    run = _validate_run(_need(doc, "run", "scenario"), "run")
    checks_t = doc.get("checks", {})
    _unknown(checks_t, CHECK_KEYS, "checks")
    select = checks_t.get("select", ["all"])
    if not isinstance(select, list) or any(s not in CHECK_GROUPS + ("all",) for s in select):
        raise ConfigError(f"'checks.select' entries must be among {CHECK_GROUPS} or 'all'",
                          key="checks.select")
    groups = CHECK_GROUPS if "all" in select else tuple(s for s in CHECK_GROUPS if s in select)
    output = doc.get("output", {})
    _unknown(output, OUTPUT_KEYS, "output")
    return Scenario(id=sid, description=str(doc.get("description", "")), model=model,
                    run=run, checks=groups, output=dict(output), raw=doc, source=source)


def load_scenario(path_or_id) -> Scenario:
    """Load a scenario from a TOML path or a shipped scenario id."""
    p = Path(path_or_id)
    if not p.exists():
        shipped = CORPUS_DIR / f"{path_or_id}.toml"
        if not shipped.exists():
            raise ConfigError(f"no scenario file or shipped scenario named {path_or_id!r}",
                              key="path")
        p = shipped
    try:
        doc = tomllib.loads(p.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{p}: not valid TOML ({exc})", key="path") from exc
    return parse_scenario(doc, source=str(p))


def list_scenarios() -> list:
    """``(id, description)`` for every shipped scenario, sorted by id."""
    out = []
    for p in sorted(CORPUS_DIR.glob("*.toml")):
        sc = load_scenario(p)
        out.append((sc.id, sc.description))
    return out
