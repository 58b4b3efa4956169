"""Packing numbers, doubling constants, separated nets and colored ball covers."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .metric_core import FiniteMetricSpace, MetricError

EXACT_PACKING_LIMIT = 40


class CoverBoundError(MetricError):
    """A multiplicity bound of the colored cover failed; usually N is too small."""

    def __init__(self, message, witness=None, bound=None, observed=None):
        super().__init__(message)
        self.witness = witness
        self.bound = bound
        self.observed = observed


def packing_number(space: FiniteMetricSpace, alpha, beta, exact_limit=EXACT_PACKING_LIMIT):
    """Largest subset whose pairwise distances all lie in [alpha, beta].

    Exact (branch and bound over cliques of the compatibility graph) up to
    ``exact_limit`` points, greedy lower bound above.  Returns (count, exact).
    """
    if alpha > beta:
        raise MetricError("alpha must not exceed beta")
    n = len(space)
    if n == 0:
        return 0, True
    ok = space.mask_ge(alpha) & space.mask_le(beta)
    np.fill_diagonal(ok, False)
    nbr = [sum(1 << int(j) for j in np.nonzero(ok[i])[0]) for i in range(n)]
    if n <= exact_limit:
        return _max_clique(nbr, n), True
    return _greedy_clique(nbr, n), False


def _greedy_clique(nbr, n):
    best = 0
    for start in range(n):
        cand = nbr[start]
        size = 1
        while cand:
            v = (cand & -cand).bit_length() - 1
            size += 1
            cand &= nbr[v]
        best = max(best, size)
    return best


def _max_clique(nbr, n):
    best = [_greedy_clique(nbr, n)]

    def color_bound(cand):
        # greedy coloring of the candidate set; number of colors bounds the clique
        colors = 0
        rest = cand
        while rest:
            colors += 1
            avail = rest
            while avail:
                v = (avail & -avail).bit_length() - 1
                rest &= ~(1 << v)
                avail &= ~(1 << v) & ~nbr[v]
        return colors

    def expand(size, cand):
        if not cand:
            best[0] = max(best[0], size)
            return
        if size + color_bound(cand) <= best[0]:
            return
        while cand:
            if size + bin(cand).count("1") <= best[0]:
                return
            v = (cand & -cand).bit_length() - 1
            expand(size + 1, cand & nbr[v])
            cand &= ~(1 << v)

    expand(0, (1 << n) - 1)
    return best[0]


def greedy_cover_count(space: FiniteMetricSpace, ball: np.ndarray, radius, reach=None) -> int:
    """Number of closed ``radius``-balls picked by greedy set cover of ``ball`` (bool mask)."""
    members = np.nonzero(ball)[0]
    if len(members) == 0:
        return 0
    if reach is None:
        reach = space.mask_le(radius)
    reach = reach[:, members]  # candidate center x member
    uncovered = np.ones(len(members), dtype=bool)
    count = 0
    while uncovered.any():
        gain = reach[:, uncovered].sum(axis=1)
        c = int(np.argmax(gain))
        uncovered &= ~reach[c]
        count += 1
    return count


@dataclass(frozen=True)
class DoublingEstimate:
    kappa: float
    N: int
    witness: tuple | None  # (center id, radius, count)


def doubling_constant(space: FiniteMetricSpace) -> DoublingEstimate:
    """Greedy estimate of the doubling constant over every center and realized radius."""
    n = len(space)
    if n <= 1:
        return DoublingEstimate(0.0, 1, None)
    seen = set()
    reach_cache = {}
    worst, witness = 1, None
    for x in range(n):
        row = space.units[x]
        for r_units in np.unique(row[row > 0]):
            ball = row <= r_units
            key = ball.tobytes()
            if key in seen:
                continue
            seen.add(key)
            r = space.value(r_units)
            half = r / 2 if space.exact else r / 2.0
            if half not in reach_cache:
                reach_cache[half] = space.mask_le(half)
            c = greedy_cover_count(space, ball, half, reach_cache[half])
            if c > worst:
                worst, witness = c, (space.points[x], r, c)
    kappa = math.log2(worst)
    return DoublingEstimate(kappa, 2 ** math.ceil(kappa - 1e-12), witness)


def separated_net(space: FiniteMetricSpace, r, seed=(), inclusive: bool = False) -> list[int]:
    """Maximal r-separated index set containing ``seed``, grown in point order.

    Separation is d > r (or d >= r with ``inclusive``).  Maximality means every
    point lies within r (strictly within r when inclusive) of a chosen point.
    """
    far = space.mask_ge(r) if inclusive else space.mask_gt(r)
    chosen = list(dict.fromkeys(int(s) for s in seed))
    for a in range(len(chosen)):
        for b in range(a + 1, len(chosen)):
            if not far[chosen[a], chosen[b]]:
                raise MetricError(
                    f"seed not {r}-separated: {space.points[chosen[a]]!r}, {space.points[chosen[b]]!r}")
    ok = np.ones(len(space), dtype=bool)
    for c in chosen:
        ok &= far[c]
    for p in range(len(space)):
        if ok[p]:
            chosen.append(p)
            ok &= far[p]
    return chosen


def meets_matrix(space: FiniteMetricSpace, r, members: np.ndarray) -> np.ndarray:
    """meets[x, m]: the closed r-ball around x intersects member m (members: point x member bool)."""
    ball = space.mask_le(r).astype(np.float32)
    return (ball @ members.astype(np.float32)) > 0


@dataclass(frozen=True)
class MultiplicityProfile:
    radius: object
    family_multiplicity: int  # max over points of members met by the closed r-ball
    overlap_multiplicity: int  # max over points of members containing it
    per_center_3r: tuple  # for each center, members met by its closed 3r-ball


@dataclass
class CoverFamily:
    space: FiniteMetricSpace
    radius: object
    centers: list
    members: np.ndarray  # point x center bool
    color_classes: list = field(default_factory=list)  # lists of center positions

    def multiplicity(self, r, points=None) -> np.ndarray:
        m = meets_matrix(self.space, r, self.members)
        counts = m.sum(axis=1)
        return counts if points is None else counts[list(points)]

    def profile(self) -> MultiplicityProfile:
        fam = int(self.multiplicity(self.radius).max())
        overlap = int(self.members.sum(axis=1).max())
        per = self.multiplicity(3 * self.radius, self.centers)
        return MultiplicityProfile(self.radius, fam, overlap, tuple(int(v) for v in per))

    def distance_to_member(self, x: int, m: int):
        """Distance (units) from point x to member m."""
        return self.space.units[x][self.members[:, m]].min()

    def to_json(self):
        prof = self.profile()
        pts = self.space.points
        return {
            "radius": str(self.radius),
            "centers": [pts[c] for c in self.centers],
            "members": [[pts[p] for p in np.nonzero(self.members[:, m])[0]]
                        for m in range(len(self.centers))],
            "color_classes": [[pts[self.centers[m]] for m in cls] for cls in self.color_classes],
            "multiplicity": {
                "family_r": prof.family_multiplicity,
                "overlap": prof.overlap_multiplicity,
                "per_center_3r": list(prof.per_center_3r),
            },
        }


def ls23_cover(space: FiniteMetricSpace, r, seed, N: int, check: bool = True) -> CoverFamily:
    """Cover by closed r-balls around a maximal r-separated net containing ``seed``,
    split into color classes of r-multiplicity at most one.

    Raises CoverBoundError when the family r-multiplicity, some center's
    3r-multiplicity, or the number of classes exceeds N**2.
    """
    centers = separated_net(space, r, seed)
    members = space.mask_le(r)[:, centers]
    meets = meets_matrix(space, r, members)
    # two members conflict if some closed r-ball meets both
    conflict = (meets.T.astype(np.float32) @ meets.astype(np.float32)) > 0
    colors = [-1] * len(centers)
    classes: list[list[int]] = []
    for m in range(len(centers)):
        used = {colors[o] for o in np.nonzero(conflict[m])[0] if colors[o] >= 0}
        c = 0
        while c in used:
            c += 1
        colors[m] = c
        if c == len(classes):
            classes.append([])
        classes[c].append(m)
    cover = CoverFamily(space, r, centers, members, classes)
    if check:
        check_cover(cover, N)
    return cover


def check_cover(cover: CoverFamily, N: int):
    space = cover.space
    bound = N * N
    if not cover.members.any(axis=1).all():
        x = int(np.nonzero(~cover.members.any(axis=1))[0][0])
        raise CoverBoundError("cover misses a point", space.points[x])
    fam = cover.multiplicity(cover.radius)
    if fam.max() > bound:
        x = int(np.argmax(fam))
        raise CoverBoundError(f"family multiplicity {fam.max()} > N^2 = {bound}",
                              space.points[x], bound, int(fam.max()))
    per = cover.multiplicity(3 * cover.radius, cover.centers)
    if len(per) and per.max() > bound:
        c = cover.centers[int(np.argmax(per))]
        raise CoverBoundError(f"center 3r-multiplicity {per.max()} > N^2 = {bound}",
                              space.points[c], bound, int(per.max()))
    if len(cover.color_classes) > bound:
        raise CoverBoundError(f"{len(cover.color_classes)} color classes > N^2 = {bound}",
                              None, bound, len(cover.color_classes))
    meets = meets_matrix(space, cover.radius, cover.members)
    for cls in cover.color_classes:
        if meets[:, cls].sum(axis=1).max() > 1:
            raise CoverBoundError("color class with r-multiplicity > 1")


def assouad_estimate(space: FiniteMetricSpace, scales) -> float:
    """Least-squares slope of log S(alpha, beta) against log(beta / alpha)."""
    scales = list(scales)
    if len(scales) < 3:
        raise MetricError("need at least 3 scale pairs")
    ratios = np.array([math.log(float(b) / float(a)) for a, b in scales])
    if np.ptp(ratios) == 0:
        raise MetricError("degenerate regression: all ratios equal")
    counts = np.array([math.log(packing_number(space, a, b)[0]) for a, b in scales])
    slope = np.polyfit(ratios, counts, 1)[0]
    return float(slope)
