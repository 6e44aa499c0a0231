"""
Geometrically graded mesh on the fixed domain [0, 1].

Spacing shrinks by a constant factor toward y = 1, where the front-fixed
solution is steep, so the finest cell sits against the moving boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class NoBracketError(ValueError):
    """No expanding mesh exists for the requested (n_nodes, dy_min)."""


@dataclass(frozen=True)
class MeshSpec:
    n_nodes: int = 1001
    dy_min: float = 1e-6

    def __post_init__(self):
        if int(self.n_nodes) != self.n_nodes or self.n_nodes < 3:
            raise ValueError(f"n_nodes must be an integer >= 3, got {self.n_nodes!r}")
        if not (self.dy_min > 0.0 and math.isfinite(self.dy_min)):
            raise ValueError(f"dy_min must be positive and finite, got {self.dy_min!r}")


@dataclass(frozen=True)
class Mesh:
    nodes: np.ndarray = field(repr=False)
    ratio: float

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    @property
    def spacings(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def dy_min(self) -> float:
        return float(self.nodes[-1] - self.nodes[-2])

    @property
    def dy_max(self) -> float:
        return float(self.nodes[1] - self.nodes[0])


def _closure(r: float, n_nodes: int, dy_min: float) -> float:
    # g(r) = dy_min * (r^(N-1) - 1)/(r - 1) - 1, with the r -> 1 limit taken analytically
    m = n_nodes - 1
    if r == 1.0:
        return m * dy_min - 1.0
    x = r - 1.0
    e = m * math.log1p(x)
    if e > 700.0:
        return math.inf
    return dy_min * math.expm1(e) / x - 1.0


def _is_uniform(spec: MeshSpec) -> bool:
    return abs(spec.dy_min * (spec.n_nodes - 1) - 1.0) <= 1e-12


def solve_expansion_ratio(spec: MeshSpec) -> float:
    """Geometric expansion factor r with dy_min * sum(r^k, k < N-1) = 1.

    Bisection on [1 + 1e-12, 2], doubling the upper end until it brackets.
    The uniform request dy_min = 1/(N-1) returns exactly 1.
    """
    if _is_uniform(spec):
        return 1.0
    if spec.dy_min * (spec.n_nodes - 1) > 1.0:
        raise NoBracketError(
            f"dy_min={spec.dy_min:g} >= 1/(n_nodes-1)={1.0 / (spec.n_nodes - 1):g}: "
            "no expanding mesh fits in [0, 1]"
        )

    def g(r):
        return _closure(r, spec.n_nodes, spec.dy_min)

    lo, hi = 1.0 + 1e-12, 2.0
    if g(lo) > 0.0:
        raise NoBracketError("closure is positive at the lower bracket; mesh is effectively uniform")
    # r^(N-2) < 1/dy_min, so the ratio never exceeds 1/dy_min
    cap = 2.0 / spec.dy_min + 2.0
    while g(hi) < 0.0:
        lo, hi = hi, 2.0 * hi
        if hi > cap:
            raise NoBracketError("could not bracket the expansion ratio")

    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if g(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    # pick the bracket end with the smaller closure defect
    return lo if abs(g(lo)) <= abs(g(hi)) else hi


def build_mesh(spec: MeshSpec) -> Mesh:
    r = solve_expansion_ratio(spec)
    n = spec.n_nodes
    # node y[N-1-k] sits at 1 - T_k, where T_k is the sum of the last k spacings
    # dy_min * (r^k - 1)/(r - 1); each node comes from its own closed form so
    # no rounding accumulates, and dividing by T_{N-1} absorbs the closure defect
    k = np.arange(n, dtype=float)
    if r == 1.0:
        tail = k
    else:
        tail = np.expm1(k * math.log(r)) / (r - 1.0)
    tail /= tail[-1]
    nodes = (1.0 - tail)[::-1].copy()
    nodes[0] = 0.0
    nodes[-1] = 1.0
    nodes.setflags(write=False)
    return Mesh(nodes=nodes, ratio=r)
