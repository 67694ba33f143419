"""Distribution catalog, batch laws and reproducible random streams.

Every random process of a replication (each arrival stream, each service
law, each routing decision source) draws from its own :class:`RngStream`.
Streams are Philox counter-based generators keyed by ``(seed, lineage)``,
so the same key reproduces the same sequence regardless of which other
streams exist or how replications are scheduled across workers.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidParameter

KINDS = ("exponential", "erlang", "deterministic", "uniform", "hyperexponential")
_BLOCK = 4096


@dataclass(frozen=True)
class RngStream:
    seed: int
    lineage: tuple = ()

    def __post_init__(self):
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidParameter("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "lineage", tuple(int(i) for i in self.lineage))

    def split(self, index: int) -> "RngStream":
        return RngStream(self.seed, self.lineage + (int(index),))

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=self.lineage)
        return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class ServiceDistribution:
    """A positive random duration.

    ``params`` by kind: exponential ``(rate,)``, erlang ``(shape, rate)``,
    deterministic ``(value,)``, uniform ``(lo, hi)``, hyperexponential
    ``(weights, rates)``.
    """

    kind: str
    params: tuple

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidParameter(f"unknown distribution kind {self.kind!r}")
        p = self.params
        if self.kind == "hyperexponential":
            w, r = (tuple(float(v) for v in a) for a in p)
            if len(w) != len(r) or not w:
                raise InvalidParameter("hyperexponential needs matching weights/rates")
            if min(r) <= 0 or min(w) < 0 or abs(sum(w) - 1.0) > 1e-12:
                raise InvalidParameter("hyperexponential weights/rates invalid")
            object.__setattr__(self, "params", (w, r))
            return
        p = tuple(float(v) for v in p)
        object.__setattr__(self, "params", p)
        if self.kind == "exponential" and not (len(p) == 1 and p[0] > 0):
            raise InvalidParameter("exponential rate must be positive")
        if self.kind == "erlang":
            if len(p) != 2 or p[1] <= 0 or p[0] < 1 or p[0] != int(p[0]):
                raise InvalidParameter("erlang needs integer shape >= 1 and positive rate")
        if self.kind == "deterministic" and not (len(p) == 1 and p[0] > 0):
            raise InvalidParameter("deterministic value must be positive")
        if self.kind == "uniform" and not (len(p) == 2 and 0 <= p[0] < p[1]):
            raise InvalidParameter("uniform needs 0 <= lo < hi")

    # constructors
    @classmethod
    def exponential(cls, rate):
        return cls("exponential", (rate,))

    @classmethod
    def erlang(cls, shape, rate):
        return cls("erlang", (shape, rate))

    @classmethod
    def deterministic(cls, value):
        return cls("deterministic", (value,))

    @classmethod
    def uniform(cls, lo, hi):
        return cls("uniform", (lo, hi))

    @classmethod
    def hyperexponential(cls, weights, rates):
        return cls("hyperexponential", (tuple(weights), tuple(rates)))

    @classmethod
    def from_dict(cls, d: dict) -> "ServiceDistribution":
        d = dict(d)
        kind = d.pop("kind", None)
        names = {
            "exponential": ("rate",), "erlang": ("shape", "rate"),
            "deterministic": ("value",), "uniform": ("lo", "hi"),
            "hyperexponential": ("weights", "rates"),
        }
        if kind not in names:
            raise InvalidParameter(f"unknown distribution kind {kind!r}")
        extra = set(d) - set(names[kind])
        if kind == "exponential" and "mean" in d and "rate" not in d:
            extra.discard("mean")
            d["rate"] = 1.0 / float(d.pop("mean"))
        if extra:
            raise InvalidParameter(f"unexpected parameter(s) {sorted(extra)} for {kind}")
        missing = [n for n in names[kind] if n not in d]
        if missing:
            raise InvalidParameter(f"missing parameter(s) {missing} for {kind}")
        return cls(kind, tuple(d[n] for n in names[kind]))

    def to_dict(self) -> dict:
        names = {
            "exponential": ("rate",), "erlang": ("shape", "rate"),
            "deterministic": ("value",), "uniform": ("lo", "hi"),
            "hyperexponential": ("weights", "rates"),
        }[self.kind]
        out = {"kind": self.kind}
        for n, v in zip(names, self.params):
            out[n] = list(v) if isinstance(v, tuple) else v
        return out

    # moments
    @property
    def mean(self) -> float:
        k, p = self.kind, self.params
        if k == "exponential":
            return 1.0 / p[0]
        if k == "erlang":
            return p[0] / p[1]
        if k == "deterministic":
            return p[0]
        if k == "uniform":
            return 0.5 * (p[0] + p[1])
        return sum(w / r for w, r in zip(*p))

    @property
    def second_moment(self) -> float:
        k, p = self.kind, self.params
        if k == "exponential":
            return 2.0 / p[0] ** 2
        if k == "erlang":
            return p[0] * (p[0] + 1) / p[1] ** 2
        if k == "deterministic":
            return p[0] ** 2
        if k == "uniform":
            lo, hi = p
            return (lo * lo + lo * hi + hi * hi) / 3.0
        return sum(2.0 * w / r ** 2 for w, r in zip(*p))

    @property
    def variance(self) -> float:
        return self.second_moment - self.mean ** 2

    @property
    def is_exponential(self) -> bool:
        return self.kind == "exponential"

    # transforms
    def lst(self, s):
        """Laplace-Stieltjes transform ``E exp(-s B)``; vectorised over ``s``."""
        s = np.asarray(s, dtype=float)
        k, p = self.kind, self.params
        if k == "exponential":
            out = p[0] / (p[0] + s)
        elif k == "erlang":
            out = (p[1] / (p[1] + s)) ** p[0]
        elif k == "deterministic":
            out = np.exp(-s * p[0])
        elif k == "uniform":
            lo, hi = p
            w = hi - lo
            sw = s * w
            with np.errstate(invalid="ignore", divide="ignore"):
                ratio = np.where(sw > 0, -np.expm1(-sw) / np.where(sw > 0, sw, 1.0), 1.0)
            out = np.exp(-s * lo) * ratio
        else:
            out = sum(w * r / (r + s) for w, r in zip(*p))
        return out if out.ndim else float(out)

    def lst_past(self, s):
        """Transform of the elapsed part, ``(1 - lst(s)) / (mean s)``; 1 at ``s=0``."""
        s = np.asarray(s, dtype=float)
        k, p = self.kind, self.params
        b = self.mean
        if k == "exponential":
            out = p[0] / (p[0] + s)
        else:
            if k == "deterministic":
                x = s * p[0]
                num = -np.expm1(-x)
            elif k == "erlang":
                num = -np.expm1(-p[0] * np.log1p(s / p[1]))
            else:
                num = 1.0 - self.lst(s)
            small = s * b < 1e-6
            with np.errstate(invalid="ignore", divide="ignore"):
                direct = num / (b * np.where(small, 1.0, s))
            series = 1.0 - s * self.second_moment / (2.0 * b)
            out = np.where(small, series, direct)
        return out if np.ndim(out) else float(out)

    # sampling
    def sample_block(self, gen: np.random.Generator, size: int) -> np.ndarray:
        k, p = self.kind, self.params
        if k == "exponential":
            return gen.exponential(1.0 / p[0], size)
        if k == "erlang":
            return gen.gamma(p[0], 1.0 / p[1], size)
        if k == "deterministic":
            return np.full(size, p[0])
        if k == "uniform":
            return gen.uniform(p[0], p[1], size)
        w, r = p
        idx = gen.choice(len(w), size=size, p=np.asarray(w))
        return gen.exponential(1.0, size) / np.asarray(r)[idx]

    def sampler(self, stream: RngStream) -> Callable[[], float]:
        return make_sampler(self, stream)


def _blocks(draw_block):
    while True:
        yield from draw_block(_BLOCK).tolist()


def make_sampler(dist: ServiceDistribution, stream: RngStream) -> Callable[[], float]:
    """Zero-argument callable returning successive draws of ``dist``.

    Draws are produced in blocks; the sequence depends only on the stream key.
    """
    gen = stream.generator()
    return partial(next, _blocks(partial(dist.sample_block, gen)))


def uniform_source(stream: RngStream) -> Callable[[], float]:
    """Buffered U(0,1) draws from one stream (routing and tie decisions)."""
    return partial(next, _blocks(stream.generator().random))


def sample(dist: ServiceDistribution, stream: RngStream, size: Optional[int] = None):
    """Draw from ``dist`` using a fresh generator for ``stream``."""
    gen = stream.generator()
    if size is None:
        return float(dist.sample_block(gen, 1)[0])
    return dist.sample_block(gen, size)


def lst(dist: ServiceDistribution, s):
    if np.any(np.asarray(s) < 0):
        raise InvalidParameter("transform argument must be nonnegative")
    return dist.lst(s)


def lst_past(dist: ServiceDistribution, s):
    return dist.lst_past(s)


@dataclass(frozen=True)
class BatchLaw:
    """Finite-support law of a batch vector ``G`` in ``Z_+^m``."""

    support: tuple
    probs: tuple
    _cum: tuple = field(default=(), repr=False, compare=False)

    def __post_init__(self):
        sup = tuple(tuple(int(v) for v in g) for g in self.support)
        pr = tuple(float(p) for p in self.probs)
        if not sup or len(sup) != len(pr):
            raise InvalidParameter("batch law needs matching support and probabilities")
        m = len(sup[0])
        if any(len(g) != m for g in sup):
            raise InvalidParameter("batch vectors must share one length")
        if any(min(g) < 0 for g in sup) or any(sum(g) == 0 for g in sup):
            raise InvalidParameter("batch vectors must be nonnegative and nonzero")
        if min(pr) < 0 or abs(math.fsum(pr) - 1.0) > 1e-12:
            raise InvalidParameter("batch probabilities must sum to one")
        object.__setattr__(self, "support", sup)
        object.__setattr__(self, "probs", pr)
        object.__setattr__(self, "_cum", tuple(np.cumsum(pr).tolist()))

    @classmethod
    def from_pairs(cls, pairs: Sequence) -> "BatchLaw":
        return cls(tuple(g for g, _ in pairs), tuple(p for _, p in pairs))

    @classmethod
    def unit(cls, m: int, k: int) -> "BatchLaw":
        g = [0] * m
        g[k] = 1
        return cls((tuple(g),), (1.0,))

    @property
    def m(self) -> int:
        return len(self.support[0])

    @property
    def mean(self) -> np.ndarray:
        return np.asarray(self.probs) @ np.asarray(self.support, dtype=float)

    @property
    def single_class(self) -> bool:
        return all(sum(1 for v in g if v) == 1 for g in self.support)

    def pgf(self, z) -> np.ndarray:
        """``E z^G`` for one point (shape ``(m,)``) or a grid ``(n, m)``."""
        z = np.asarray(z, dtype=float)
        sup = np.asarray(self.support)
        pts = np.atleast_2d(z)
        vals = np.prod(pts[:, None, :] ** sup[None, :, :], axis=2) @ np.asarray(self.probs)
        return vals if z.ndim == 2 else float(vals[0])

    def marginal_pgf(self, k: int, zk):
        """``E z_k^{G_k}``."""
        zk = np.asarray(zk, dtype=float)
        sup = np.asarray(self.support)[:, k]
        return np.asarray(self.probs) @ (zk[..., None] ** sup).T if zk.ndim else \
            float(np.asarray(self.probs) @ (zk ** sup))

    def draw(self, u: float) -> tuple:
        cum = self._cum
        for idx, c in enumerate(cum):
            if u < c:
                return self.support[idx]
        return self.support[-1]


def batch_pgf(law: BatchLaw, z):
    return law.pgf(z)
