"""Versioned library of bounded test functions.

Every function maps an ``(n, m)`` integer array of states to ``n`` floats and
is bounded on the whole nonnegative orthant.  The library is frozen per
version so reports from different releases stay comparable.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

LIBRARY_VERSION = "1"


@dataclass(frozen=True)
class TestFunction:
    name: str
    fn: Callable
    bound: float

    __test__ = False  # not a pytest class

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.int64))
        return np.asarray(self.fn(x), dtype=float)


def _mixed_z(m: int) -> np.ndarray:
    return 0.3 + 0.5 * np.arange(m) / max(m - 1, 1)


def _mixed(x):
    return np.prod(_mixed_z(x.shape[1]) ** x, axis=1)


LIBRARY = (
    TestFunction("constant", lambda x: np.ones(len(x)), 1.0),
    TestFunction("first_capped5", lambda x: np.minimum(x[:, 0], 5), 5.0),
    TestFunction("total_capped10", lambda x: np.minimum(x.sum(axis=1), 10), 10.0),
    TestFunction("empty", lambda x: (x.sum(axis=1) == 0).astype(float), 1.0),
    TestFunction("first_busy", lambda x: (x[:, 0] >= 1).astype(float), 1.0),
    TestFunction("last_capped5", lambda x: np.minimum(x[:, -1], 5), 5.0),
    TestFunction("first_last_product3",
                 lambda x: np.minimum(x[:, 0], 3) * np.minimum(x[:, -1], 3), 9.0),
    TestFunction("geometric_half", lambda x: 0.5 ** x.sum(axis=1), 1.0),
    TestFunction("geometric_09", lambda x: 0.9 ** x.sum(axis=1), 1.0),
    TestFunction("mixed_monomial", _mixed, 1.0),
    TestFunction("first_exceeds_last", lambda x: (x[:, 0] > x[:, -1]).astype(float), 1.0),
    TestFunction("max_capped8", lambda x: np.minimum(x.max(axis=1), 8), 8.0),
)

BY_NAME = {f.name: f for f in LIBRARY}


def get(name: str) -> TestFunction:
    return BY_NAME[name]


def evaluate_all(x) -> np.ndarray:
    """``(n, 12)`` matrix of every library function at each state."""
    x = np.atleast_2d(np.asarray(x, dtype=np.int64))
    if len(x) == 0:
        return np.zeros((0, len(LIBRARY)))
    # built function-major, returned as a transposed view
    return np.array([f(x) for f in LIBRARY], dtype=float).T
