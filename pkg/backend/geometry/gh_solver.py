"""Gromov–Hausdorff distance between finite spaces and metric trees.

Exact values come from a branch-and-bound over correspondences and are only
attempted up to a size cap. Larger inputs get a certified interval from
lower bounds and the distortion of heuristic correspondences.
"""

import itertools
from typing import Iterator

import numpy as np
from pydantic import BaseModel, field_validator
from scipy.optimize import linear_sum_assignment

from .config import config
from .errors import CapExceededError, MetricError
from .metric_core import TOL, FiniteMetricSpace, diameter, eccentricities
from .tree_graph import MetricTree, parse_charts, root_parents, subdivide

Pair = tuple[int, int]

_DISTORTION_BLOCK = 512
_MAX_RUNGS = 64


class Correspondence(BaseModel):
    pairs: list[Pair]

    @field_validator("pairs")
    @classmethod
    def _canonical(cls, pairs):
        return sorted({(int(i), int(j)) for i, j in pairs})

    def covers(self, nx: int, ny: int) -> bool:
        return {i for i, _ in self.pairs} == set(range(nx)) and {j for _, j in self.pairs} == set(range(ny))


class GHInterval(BaseModel):
    lo: float
    hi: float
    lo_witness: str
    hi_witness: Correspondence
    eps: float
    witness_eps: float | None = None
    exact: bool = False


def _check_covering(X: FiniteMetricSpace, Y: FiniteMetricSpace, R: Correspondence):
    bad = [(i, j) for i, j in R.pairs if not (0 <= i < X.size and 0 <= j < Y.size)]
    if bad:
        raise MetricError(f"Correspondence pairs out of range: {bad[:5]}")
    if not R.covers(X.size, Y.size):
        raise MetricError("Correspondence does not cover both spaces")


def distortion(X: FiniteMetricSpace, Y: FiniteMetricSpace, R: Correspondence) -> float:
    _check_covering(X, Y, R)
    xs = np.array([i for i, _ in R.pairs])
    ys = np.array([j for _, j in R.pairs])
    worst = 0.0
    for start in range(0, len(xs), _DISTORTION_BLOCK):
        rows = slice(start, start + _DISTORTION_BLOCK)
        block = np.abs(X.dist[np.ix_(xs[rows], xs)] - Y.dist[np.ix_(ys[rows], ys)])
        worst = max(worst, float(block.max()))
    return worst


def gh_upper_bound(X: FiniteMetricSpace, Y: FiniteMetricSpace, R: Correspondence) -> float:
    return distortion(X, Y, R) / 2


def _value_gap(a: np.ndarray, b: np.ndarray) -> float:
    """Hausdorff distance between two finite sets of reals."""
    a, b = np.sort(a), np.sort(b)

    def one_sided(p, q):
        k = np.clip(np.searchsorted(q, p), 1, len(q) - 1) if len(q) > 1 else np.zeros(len(p), dtype=int)
        gaps = np.abs(p - q[k])
        if len(q) > 1:
            gaps = np.minimum(gaps, np.abs(p - q[k - 1]))
        return float(gaps.max())

    return max(one_sided(a, b), one_sided(b, a))


def lower_bounds(X: FiniteMetricSpace, Y: FiniteMetricSpace) -> dict[str, float]:
    return {
        "diameter": abs(diameter(X) - diameter(Y)) / 2,
        "eccentricity": _value_gap(eccentricities(X), eccentricities(Y)) / 2,
    }


def gh_lower_bound(X: FiniteMetricSpace, Y: FiniteMetricSpace) -> float:
    """Diameter gap and eccentricity-set gap, both halved."""
    return max(lower_bounds(X, Y).values())


def iter_correspondences(nx: int, ny: int) -> Iterator[Correspondence]:
    """Every covering relation between {0..nx-1} and {0..ny-1}."""
    cells = list(itertools.product(range(nx), range(ny)))
    if len(cells) > 16:
        raise CapExceededError(f"Refusing to enumerate 2^{len(cells)} relations")
    for mask in range(1, 2 ** len(cells)):
        pairs = [cells[k] for k in range(len(cells)) if mask >> k & 1]
        R = Correspondence(pairs=pairs)
        if R.covers(nx, ny):
            yield R


# --- Heuristic correspondences ---

def eccentricity_correspondence(X: FiniteMetricSpace, Y: FiniteMetricSpace) -> Correspondence:
    ex, ey = eccentricities(X), eccentricities(Y)
    cost = np.abs(ex[:, None] - ey[None, :])
    rows, cols = linear_sum_assignment(cost)
    pairs = list(zip(rows.tolist(), cols.tolist()))
    pairs += [(i, int(np.argmin(cost[i]))) for i in sorted(set(range(X.size)) - set(rows.tolist()))]
    pairs += [(int(np.argmin(cost[:, j])), j) for j in sorted(set(range(Y.size)) - set(cols.tolist()))]
    return Correspondence(pairs=pairs)


def radial_correspondence(
    X: FiniteMetricSpace, Y: FiniteMetricSpace, root_x: int = 0, root_y: int = 0
) -> Correspondence:
    rx, ry = X.dist[root_x], Y.dist[root_y]
    cost = np.abs(rx[:, None] - ry[None, :])
    pairs = [(root_x, root_y)]
    pairs += [(i, int(np.argmin(cost[i]))) for i in range(X.size)]
    pairs += [(int(np.argmin(cost[:, j])), j) for j in range(Y.size)]
    return Correspondence(pairs=pairs)


def _chart_map(source: MetricTree, target: MetricTree) -> list[Pair]:
    index: dict[str, list[tuple[float, int]]] = {}
    for j in range(target.size):
        for key, coord in parse_charts(target.chart(j)):
            index.setdefault(key, []).append((0.0 if coord is None else coord, j))

    parents = root_parents(source)
    image = {0: 0}
    order = [0] + list(parents)
    for i in order[1:]:
        match = None
        for key, coord in parse_charts(source.chart(i)):
            candidates = index.get(key)
            if candidates:
                c = 0.0 if coord is None else coord
                match = min(candidates, key=lambda item: (abs(item[0] - c), item[1]))[1]
                break
        image[i] = match if match is not None else image[parents[i]]
    return sorted(image.items())


def chart_correspondence(T1: MetricTree, T2: MetricTree) -> Correspondence:
    """Matches vertices by chart key and nearest chart coordinate.

    Unmatched vertices follow their nearest matched ancestor towards vertex 0.
    """
    forward = _chart_map(T1, T2)
    backward = [(i, j) for j, i in _chart_map(T2, T1)]
    return Correspondence(pairs=forward + backward)


def heuristic_correspondences(
    X: FiniteMetricSpace, Y: FiniteMetricSpace, trees: tuple[MetricTree, MetricTree] | None = None
) -> dict[str, Correspondence]:
    found = {
        "eccentricity": eccentricity_correspondence(X, Y),
        "radial": radial_correspondence(X, Y),
    }
    if trees is not None:
        found["chart"] = chart_correspondence(*trees)
    return found


def best_heuristic(
    X: FiniteMetricSpace, Y: FiniteMetricSpace, trees: tuple[MetricTree, MetricTree] | None = None
) -> tuple[str, Correspondence, float]:
    scored = [
        (distortion(X, Y, R), name, R)
        for name, R in heuristic_correspondences(X, Y, trees).items()
    ]
    value, name, R = min(scored, key=lambda item: item[0])
    return name, R, value


# --- Exact search ---

def _profile_gaps(X: FiniteMetricSpace, Y: FiniteMetricSpace) -> np.ndarray:
    """Value-set gap between the distance rows of x and y.

    Any correspondence containing (x, y) has distortion at least this gap.
    """
    return np.array([[_value_gap(X.dist[x], Y.dist[y]) for y in range(Y.size)] for x in range(X.size)])


class _Search:
    """Depth-first search over a map f: X -> Y followed by repairs for
    uncovered Y points, pruned by the running distortion and by row-profile
    gaps. Candidates are tried cheapest first."""

    def __init__(self, X: FiniteMetricSpace, Y: FiniteMetricSpace):
        self.DX, self.DY = X.dist, Y.dist
        self.nx, self.ny = X.size, Y.size
        self.gaps = _profile_gaps(X, Y)

    def floor(self) -> float:
        return float(max(self.gaps.min(axis=1).max(), self.gaps.min(axis=0).max()))

    def _cost(self, xs: list[int], ys: list[int], x: int, y: int) -> float:
        if not xs:
            return 0.0
        return float(np.abs(self.DX[x, xs] - self.DY[y, ys]).max())

    def _ranked(self, xs, ys, current, pairs, admissible):
        scored = []
        for x, y in pairs:
            if not admissible(self.gaps[x, y]):
                continue
            value = max(current, self.gaps[x, y], self._cost(xs, ys, x, y))
            if admissible(value):
                scored.append((value, x, y))
        return sorted(scored)

    def run(self, threshold: float, stop_at: float = -1.0):
        """Branch and bound below ``threshold``. Returns (value, pairs), with
        pairs None when nothing beats the threshold."""
        best = [threshold, None]

        def admissible(value: float) -> bool:
            return value < best[0]

        def done() -> bool:
            return best[1] is not None and best[0] <= stop_at

        def repair(xs, ys, current, missing, k):
            if k == len(missing):
                best[0], best[1] = current, list(zip(xs, ys))
                return
            y = missing[k]
            for value, x, _ in self._ranked(xs, ys, current, [(x, y) for x in range(self.nx)], admissible):
                if not admissible(value):
                    continue
                xs.append(x)
                ys.append(y)
                repair(xs, ys, value, missing, k + 1)
                xs.pop()
                ys.pop()
                if done():
                    return

        def assign(xs, ys, current):
            x = len(xs)
            if x == self.nx:
                missing = sorted(set(range(self.ny)) - set(ys))
                repair(xs, ys, current, missing, 0)
                return
            for value, _, y in self._ranked(xs, ys, current, [(x, y) for y in range(self.ny)], admissible):
                if not admissible(value):
                    continue
                xs.append(x)
                ys.append(y)
                assign(xs, ys, value)
                xs.pop()
                ys.pop()
                if done():
                    return

        assign([], [], 0.0)
        return best[0], best[1]


def solve_gh(
    X: FiniteMetricSpace, Y: FiniteMetricSpace, cap: int | None = None, tol: float = TOL
) -> tuple[float, Correspondence]:
    """Exact GH distance with a minimizing correspondence.

    The witness is the best heuristic correspondence when no search result
    improves on it, otherwise the last improvement found by the search.
    """
    cap = cap or config.solver.gh_cap
    if X.size > cap or Y.size > cap:
        raise CapExceededError(f"gh_exact limited to {cap} points, got {X.size} and {Y.size}")
    if X.size == 0 or Y.size == 0:
        raise MetricError("gh_exact needs non-empty spaces")

    _, seed, upper = best_heuristic(X, Y)
    floor = 2 * gh_lower_bound(X, Y)
    if upper <= floor + tol:
        return upper / 2, seed

    search = _Search(X, Y)
    floor = max(floor, search.floor())
    if upper <= floor + tol:
        return upper / 2, seed
    value, pairs = search.run(upper, stop_at=floor + tol)
    if pairs is None:
        return upper / 2, seed
    return value / 2, Correspondence(pairs=pairs)


def gh_exact(X: FiniteMetricSpace, Y: FiniteMetricSpace, cap: int | None = None) -> float:
    return solve_gh(X, Y, cap)[0]


def _rung(T1: MetricTree, T2: MetricTree, eps: float, cap: int):
    """(lo, lo_name, hi, witness, exact) for one subdivision resolution."""
    S1, S2 = subdivide(T1, eps), subdivide(T2, eps)
    X, Y = S1.space, S2.space
    if X.size <= cap and Y.size <= cap:
        value, witness = solve_gh(X, Y, cap)
        return max(0.0, value - eps), "exact", value + eps, witness, True
    bounds = lower_bounds(X, Y)
    lo_name = max(bounds, key=bounds.get)
    _, R, value = best_heuristic(X, Y, (S1, S2))
    return max(0.0, bounds[lo_name] - eps), lo_name, value / 2 + eps, R, False


def _longest_edge(T: MetricTree) -> float:
    return max((length for _, _, length in T.edges), default=0.0)


def gh_tree_interval(
    T1: MetricTree, T2: MetricTree, eps: float | None = None, cap: int | None = None
) -> GHInterval:
    """Certified interval for the GH distance between the continua of T1 and T2.

    Both trees are subdivided so their vertex sets are eps/2-dense. The
    interval is intersected with the ones at eps*2, eps*4, ... until
    subdivision no longer changes the trees, so halving eps only narrows it.
    ``hi_witness`` indexes the subdivision at ``witness_eps``.
    """
    eps = eps or config.numerics.eps
    cap = cap or config.solver.gh_cap
    longest = max(_longest_edge(T1), _longest_edge(T2))

    lo, lo_name, hi, witness, exact = _rung(T1, T2, eps, cap)
    witness_eps, step = eps, eps
    for _ in range(_MAX_RUNGS):
        if step >= longest:
            break
        step *= 2
        r_lo, r_name, r_hi, r_witness, _ = _rung(T1, T2, step, cap)
        if r_lo > lo:
            lo, lo_name = r_lo, r_name
        if r_hi < hi:
            hi, witness, witness_eps = r_hi, r_witness, step

    return GHInterval(
        lo=min(lo, hi),
        hi=hi,
        lo_witness=lo_name,
        hi_witness=witness,
        eps=eps,
        witness_eps=witness_eps,
        exact=exact,
    )
