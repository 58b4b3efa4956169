"""Finite metric spaces, Gromov products, hyperbolicity constants and visual metrics.

Exact spaces keep their distances as an integer matrix ``units`` together with a
common denominator ``scale``, so ``d(x, y) == Fraction(units[x, y], scale)``.
Float-valued spaces (visual metrics) use ``scale == 1`` and compare with
``FLOAT_TOL`` slack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import reduce
from typing import Hashable, Sequence

import numpy as np
from scipy.sparse.csgraph import floyd_warshall

FLOAT_TOL = 1e-9
SQRT2 = math.sqrt(2.0)


class MetricError(ValueError):
    pass


class AdmissibilityError(MetricError):
    """Raised when exp(eps * delta) exceeds sqrt(2)."""


def as_fraction(value) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(value).limit_denominator(10**12)
    return Fraction(value)


def common_scale(values) -> int:
    return reduce(math.lcm, (as_fraction(v).denominator for v in values), 1)


@dataclass(frozen=True, eq=False)
class FiniteMetricSpace:
    points: tuple
    units: np.ndarray
    scale: int = 1
    _index: dict = field(init=False, repr=False)

    def __post_init__(self):
        units = np.asarray(self.units)
        if units.shape != (len(self.points), len(self.points)):
            raise MetricError("distance table shape does not match point count")
        units.setflags(write=False)
        object.__setattr__(self, "units", units)
        index = {p: i for i, p in enumerate(self.points)}
        if len(index) != len(self.points):
            raise MetricError("duplicate point ids")
        object.__setattr__(self, "_index", index)

    @classmethod
    def from_table(cls, points: Sequence[Hashable], table, check: bool = True):
        """Build from a nested table of rationals (Fractions, ints or "p/q" strings)."""
        fr = [[as_fraction(v) for v in row] for row in table]
        scale = common_scale(v for row in fr for v in row)
        units = np.array([[int(v * scale) for v in row] for row in fr], dtype=np.int64)
        space = cls(tuple(points), units.reshape(len(points), len(points)), scale)
        if check:
            space.validate()
        return space

    @classmethod
    def from_float_table(cls, points, table, check: bool = True):
        space = cls(tuple(points), np.asarray(table, dtype=np.float64), 1)
        if check:
            space.validate()
        return space

    @property
    def exact(self) -> bool:
        return np.issubdtype(self.units.dtype, np.integer)

    def __len__(self):
        return len(self.points)

    def index(self, p) -> int:
        try:
            return self._index[p]
        except KeyError:
            raise MetricError(f"unknown point id {p!r}") from None

    def d(self, x, y):
        v = self.units[self.index(x), self.index(y)]
        return Fraction(int(v), self.scale) if self.exact else float(v)

    def value(self, units):
        """Convert a length in internal units to a Fraction (or float)."""
        return Fraction(int(units), self.scale) if self.exact else float(units)

    def to_units(self, length):
        return as_fraction(length) * self.scale if self.exact else float(length)

    def diameter(self):
        return self.value(self.units.max()) if len(self) else self.value(0)

    def min_distance(self):
        if len(self) < 2:
            return None
        off = self.units[~np.eye(len(self), dtype=bool)]
        return self.value(off.min())

    def validate(self, sample_above: int = 1000, samples: int = 200_000):
        D = self.units
        n = len(self)
        if n == 0:
            return
        tol = 0 if self.exact else FLOAT_TOL
        if np.any(np.abs(np.diag(D)) > tol):
            raise MetricError("nonzero self-distance")
        if np.any(np.abs(D - D.T) > tol):
            raise MetricError("distance table is not symmetric")
        off = ~np.eye(n, dtype=bool)
        if np.any(D[off] <= 0):
            raise MetricError("distinct points at distance 0")
        if n <= sample_above:
            for k in range(n):
                # d(i, j) <= d(i, k) + d(k, j) for all i, j
                if np.any(D > D[:, k][:, None] + D[k, :][None, :] + tol):
                    raise MetricError("triangle inequality violated")
        else:
            rng = np.random.default_rng(0)
            i, j, k = rng.integers(0, n, size=(3, samples))
            if np.any(D[i, j] > D[i, k] + D[k, j] + tol):
                raise MetricError("triangle inequality violated")

    def subspace(self, indices):
        idx = list(indices)
        return FiniteMetricSpace(tuple(self.points[i] for i in idx),
                                 self.units[np.ix_(idx, idx)].copy(), self.scale)

    def le_threshold(self, r):
        """t with (d <= r) == (units <= t)."""
        if self.exact:
            return math.floor(as_fraction(r) * self.scale)
        return float(r) + FLOAT_TOL

    def ge_threshold(self, r):
        """t with (d >= r) == (units >= t)."""
        if self.exact:
            return math.ceil(as_fraction(r) * self.scale)
        return float(r) - FLOAT_TOL

    # boolean masks against a radius; exact spaces compare on integer units
    def mask_le(self, r, rows=None):
        D = self.units if rows is None else self.units[rows]
        if self.exact:
            return D <= math.floor(as_fraction(r) * self.scale)
        return D <= float(r) + FLOAT_TOL

    def mask_lt(self, r, rows=None):
        D = self.units if rows is None else self.units[rows]
        if self.exact:
            return D < math.ceil(as_fraction(r) * self.scale)
        return D < float(r) - FLOAT_TOL

    def mask_ge(self, r, rows=None):
        return ~self.mask_lt(r, rows)

    def mask_gt(self, r, rows=None):
        return ~self.mask_le(r, rows)

    def to_json(self):
        if self.exact:
            dist = [[str(Fraction(int(v), self.scale)) for v in row] for row in self.units]
        else:
            dist = [[repr(float(v)) for v in row] for row in self.units]
        return {"points": list(self.points), "dist": dist}

    @classmethod
    def from_json(cls, data):
        dist = data["dist"]
        points = [p if not isinstance(p, list) else tuple(p) for p in data["points"]]
        if any("." in s or "e" in s for row in dist for s in row):
            return cls.from_float_table(points, [[float(s) for s in row] for row in dist])
        return cls.from_table(points, dist)


def gromov_product(x, y, o, space: FiniteMetricSpace):
    """(x, y)_o = (d(x, o) + d(y, o) - d(x, y)) / 2, exactly."""
    i, j, k = space.index(x), space.index(y), space.index(o)
    D = space.units
    twice = D[i, k] + D[j, k] - D[i, j]
    if space.exact:
        return Fraction(int(twice), 2 * space.scale)
    return float(twice) / 2


def gromov_twice_units(D: np.ndarray, o: int) -> np.ndarray:
    """Matrix of 2 * (x, y)_o in the units of ``D`` (exact for integer D)."""
    row = D[o]
    return row[:, None] + row[None, :] - D


@dataclass(frozen=True)
class GromovProductTable:
    basepoint: Hashable
    points: tuple
    values: np.ndarray  # float matrix of (x, y)_o
    twice_units: np.ndarray | None = None
    scale: int = 1

    def product(self, i: int, j: int):
        if self.twice_units is not None:
            return Fraction(int(self.twice_units[i, j]), 2 * self.scale)
        return float(self.values[i, j])


def gromov_table(space: FiniteMetricSpace, o) -> GromovProductTable:
    twice = gromov_twice_units(space.units, space.index(o))
    values = twice / (2.0 * space.scale)
    if space.exact:
        return GromovProductTable(o, space.points, values, twice, space.scale)
    return GromovProductTable(o, space.points, values)


def delta_four_point(space: FiniteMetricSpace, basepoint) -> Fraction | float:
    """Least delta with (x,y)_o >= min((x,z)_o, (y,z)_o) - delta over all triples."""
    n = len(space)
    if n <= 2:
        return space.value(0)
    G = gromov_twice_units(space.units, space.index(basepoint))
    best = G.dtype.type(0)
    for z in range(n):
        m = np.minimum(G[:, z][:, None], G[z, :][None, :]) - G
        best = max(best, m.max())
    if space.exact:
        return Fraction(int(best), 2 * space.scale)
    return float(best) / 2


@dataclass(frozen=True)
class VisualParams:
    epsilon: float
    delta: float
    epsilon_prime: float

    @property
    def lower_factor(self) -> float:
        """Factor in front of exp(-eps (x,y)) in the lower sandwich bound."""
        return self.epsilon_prime


def check_epsilon_admissible(epsilon, delta) -> VisualParams:
    epsilon = float(epsilon)
    delta = float(delta)
    if epsilon <= 0:
        raise AdmissibilityError("epsilon must be positive")
    lhs = math.exp(epsilon * delta)
    if lhs > SQRT2 + FLOAT_TOL:
        raise AdmissibilityError(
            f"exp(eps*delta) = exp({epsilon}*{delta}) = {lhs:.12g} > sqrt(2)")
    return VisualParams(epsilon, delta, min(lhs, SQRT2) - 1.0)


def auto_epsilon(delta, default: float = 1.0) -> float:
    """Largest admissible epsilon, exp(eps*delta) = sqrt(2); ``default`` when delta = 0."""
    delta = float(delta)
    if delta == 0:
        return default
    return math.log(SQRT2) / delta


def visual_metric(products: GromovProductTable, params: VisualParams, support=None):
    """Chain-infimum metric over ``support`` with step cost exp(-eps (x,y)_o).

    Returns ``(support_indices, table)``.  The table is the all-pairs shortest
    path over the complete graph on the support; diagonal is 0.
    """
    if params.epsilon <= 0:
        raise AdmissibilityError("non-admissible params")
    idx = list(range(len(products.points))) if support is None else list(support)
    P = products.values[np.ix_(idx, idx)]
    W = np.exp(-params.epsilon * P)
    np.fill_diagonal(W, 0.0)
    if len(idx) <= 1:
        return idx, W
    table = floyd_warshall(W, directed=False)
    np.fill_diagonal(table, 0.0)
    return idx, table


def sandwich_violations(products: GromovProductTable, params: VisualParams, idx, table,
                        tol: float = FLOAT_TOL):
    """Pairs where eps' exp(-eps(x,y)) <= d_eps <= exp(-eps(x,y)) fails."""
    P = products.values[np.ix_(idx, idx)]
    upper = np.exp(-params.epsilon * P)
    lower = params.lower_factor * upper
    bad = (table > upper + tol) | (table < lower - tol)
    np.fill_diagonal(bad, False)
    return [(idx[a], idx[b]) for a, b in zip(*np.nonzero(np.triu(bad)))]


def compute_beta(q, params: VisualParams) -> float:
    """Bound on |d(o,[a,b]) - d(o,[c,d])| when the visual distances differ by a factor <= q.

    For delta = 0 the sandwich is an identity (eps' is replaced by 1) and the
    distance to a double ray equals the Gromov product, so beta = ln(q)/eps.
    """
    q = float(q)
    if q < 1:
        raise MetricError("q must be >= 1")
    if params.delta == 0:
        return math.log(q) / params.epsilon
    if params.epsilon_prime <= 0:
        raise MetricError("eps' = 0 with delta > 0")
    return math.log(q / params.epsilon_prime) / params.epsilon + 4 * params.delta
