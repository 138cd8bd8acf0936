"""Parametrized tree families: combs B(s) over a dyadic spine and star trees
with branch lengths drawn from the cube of a-sequences."""

import math
from typing import Sequence

import numpy as np
from pydantic import BaseModel, Field, model_validator

from .config import config
from .errors import FingerprintError, GeometryError
from .metric_core import TOL
from .tree_graph import MetricTree, _assemble, _fmt


def c_fun(n: int, s: float) -> float:
    """Cut-off ramp: 1 up to 2^-(n+1), linear down to 0 at 2^-n."""
    lo, hi = 2.0 ** -(n + 1), 2.0**-n
    if s <= lo:
        return 1.0
    if s >= hi:
        return 0.0
    return 2.0 ** (n + 1) * (hi - s)


def generation_of(s: float) -> int:
    """The n with 2^-(n+1) <= s < 2^-n, for 0 < s < 1."""
    if not 0 < s < 1:
        raise GeometryError(f"generation_of needs 0 < s < 1, got {s}")
    return math.ceil(-math.log2(s)) - 1


def comb_piece_bound(s: float) -> float:
    """Upper bound on the closure diameter of any deg<=2 component of a unit comb B(s)."""
    if s <= 0:
        raise GeometryError(f"comb_piece_bound needs s > 0, got {s}")
    return 1.5 * 2.0 ** -generation_of(min(s, 0.5))


def comb_dist(p: tuple[float, float], q: tuple[float, float]) -> float:
    (x, s), (y, t) = p, q
    if x == y:
        return abs(s - t)
    return s + abs(x - y) + t


def comb_dist_matrix(P: np.ndarray, Q: np.ndarray, tol: float = TOL) -> np.ndarray:
    """comb_dist between every row of P and every row of Q, rows being (x, height)."""
    dx = np.abs(P[:, 0][:, None] - Q[:, 0][None, :])
    same = np.abs(P[:, 1][:, None] - Q[:, 1][None, :])
    apart = P[:, 1][:, None] + dx + Q[:, 1][None, :]
    return np.where(dx <= tol, same, apart)


class CombParams(BaseModel):
    s: float = Field(ge=0, le=1)
    scale: float = Field(1.0, gt=0, le=1)
    depth: int = Field(default_factory=lambda: config.numerics.comb_depth, ge=1)


def dyadic_generation(n: int) -> list[float]:
    """J_n: the points m·2^-(n+1) that first appear at generation n."""
    step = 2.0 ** -(n + 1)
    if n == 0:
        return [0.0, 0.5, 1.0]
    return [m * step for m in range(1, 2 ** (n + 1), 2)]


def teeth(s: float, depth: int) -> list[tuple[float, int, float]]:
    """(position, generation, height) of every nonzero tooth, height in comb units."""
    found = []
    for n in range(depth + 1):
        height = s * c_fun(n, s)
        if height <= 0:
            continue
        found.extend((x, n, height) for x in dyadic_generation(n))
    return sorted(found)


def comb_tree(p: CombParams) -> MetricTree:
    """Finite model of M·B(s): spine vertices spine:x first, then tooth tips."""
    M = p.scale
    tooth_list = teeth(p.s, p.depth)
    spine = sorted({0.0, 1.0} | {x for x, _, _ in tooth_list})

    vertices = [f"spine:{_fmt(x)}" for x in spine]
    labels = list(vertices)
    position = {x: i for i, x in enumerate(spine)}
    edges = [(i, i + 1, M * (spine[i + 1] - spine[i])) for i in range(len(spine) - 1)]
    for x, _, height in tooth_list:
        vertices.append(f"tooth:{_fmt(x)}")
        labels.append(f"tooth:{_fmt(x)}:{_fmt(height)}")
        edges.append((position[x], len(vertices) - 1, M * height))

    truncated = 0 < p.s < 2.0 ** -(p.depth + 1)
    metadata = {
        "generator": "comb",
        "s": p.s,
        "scale": M,
        "depth": p.depth,
        "truncation_error": p.s if truncated else 0.0,
    }
    return _assemble(vertices, labels, edges, metadata=metadata)


def comb_sample(s: float, eps: float, depth: int | None = None) -> np.ndarray:
    """eps-dense points (x, height) of B(s) inside the unit square."""
    depth = depth or config.numerics.comb_depth
    tooth_list = teeth(s, depth)
    pieces = max(1, math.ceil(1 / eps))
    xs = set(np.linspace(0.0, 1.0, pieces + 1).tolist()) | {x for x, _, _ in tooth_list}
    points = [(x, 0.0) for x in sorted(xs)]
    for x, _, height in tooth_list:
        k = max(1, math.ceil(height / eps))
        points.extend((x, height * j / k) for j in range(1, k + 1))
    return np.array(points)


def comb_hausdorff(s: float, t: float, eps: float, depth: int | None = None) -> float:
    """Discrete Hausdorff distance between eps-samples of B(s) and B(t) under comb_dist."""
    D = comb_dist_matrix(comb_sample(s, eps, depth), comb_sample(t, eps, depth))
    return float(max(D.min(axis=1).max(), D.min(axis=0).max()))


def comb_continuity_bound(s: float, t: float) -> float:
    """Upper bound for the Hausdorff distance between B(s) and B(t)."""
    if s <= 0 or s >= 1:
        return t if t < 1 else 0.0
    n = generation_of(s)
    if abs(s - t) < 2.0 ** -(n + 2):
        return max(abs(s * c_fun(i, s) - t * c_fun(i, t)) for i in range(n + 2))
    return s + t


class StarParams(BaseModel):
    a: list[float]
    scale: float = Field(1.0, ge=0)
    eps: float = Field(default_factory=lambda: config.numerics.eps, gt=0)

    @model_validator(mode="after")
    def _check_cube(self):
        for i, ai in enumerate(self.a, start=1):
            if not 2.0 ** (-2 * i) - TOL <= ai <= 2.0 ** (-2 * i + 1) + TOL:
                raise ValueError(f"a_{i} = {ai} outside [2^-{2 * i}, 2^-{2 * i - 1}]")
        return self

    @property
    def branches(self) -> int:
        return len(self.a)

    def length(self, i: int) -> float:
        return 1.0 if i == 0 else self.a[i - 1]


def star_metric(p: StarParams, x: tuple[float, int], y: tuple[float, int]) -> float:
    """K·R[a] between the point at height s on branch i and height t on branch j."""
    (s, i), (t, j) = x, y
    if i == j:
        return p.scale * p.length(i) * abs(s - t)
    return p.scale * (p.length(i) * s + p.length(j) * t)


def star_tree(p: StarParams) -> MetricTree:
    """Center branch:0:0 with branches 0..N of length K·a_i, subdivided at eps."""
    vertices, edges = ["branch:0:0"], []
    if p.scale > 0:
        for i in range(p.branches + 1):
            length = p.scale * p.length(i)
            k = max(1, math.ceil(length / p.eps - TOL))
            prev = 0
            for j in range(1, k + 1):
                vertices.append(f"branch:{i}:{_fmt(j / k)}")
                edges.append((prev, len(vertices) - 1, length / k))
                prev = len(vertices) - 1
    metadata = {"generator": "star", "a": list(p.a), "scale": p.scale, "eps": p.eps}
    return _assemble(vertices, list(vertices), edges, metadata=metadata)


def tau(a: Sequence[float], b: Sequence[float]) -> float:
    if len(a) != len(b):
        raise GeometryError(f"tau needs sequences of equal length, got {len(a)} and {len(b)}")
    if not len(a):
        return 0.0
    return float(np.max(np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))))


def rho_embed(u: Sequence[float], k: int, m: int, branches: int = 3) -> list[float]:
    """Injective map from H × {1..m} into the cube, truncated to ``branches`` terms."""
    u1, u2 = u
    if not (0 <= u1 <= 1 and 0 <= u2 <= 1):
        raise GeometryError(f"Grid coordinates must lie in [0, 1], got {tuple(u)}")
    if not 1 <= k <= m:
        raise GeometryError(f"Branch index k={k} outside 1..{m}")
    if branches < 3:
        raise GeometryError(f"rho_embed needs at least 3 branches, got {branches}")
    a = [0.25 * (1 + u1), (1 + u2) / 16, 2.0**-6 * (1 + (k - 1) / max(1, m - 1))]
    a.extend(1.5 * 2.0 ** (-2 * i) for i in range(4, branches + 1))
    return a


def rho_invert(a: Sequence[float], m: int, tol: float = 1e-6) -> tuple[float, float, int]:
    """(u1, u2, k) with rho_embed(u, k, m) == a."""
    if len(a) < 3:
        raise FingerprintError(f"Need at least 3 coordinates to invert, got {len(a)}")
    u1 = 4 * a[0] - 1
    u2 = 16 * a[1] - 1
    raw = (64 * a[2] - 1) * max(1, m - 1) + 1
    k = int(round(raw))
    if abs(raw - k) > tol * max(1, m) * 64 or not 1 <= k <= m:
        raise FingerprintError(f"a_3 = {a[2]} does not encode a branch index in 1..{m}")
    if not (-tol <= u1 <= 1 + tol and -tol <= u2 <= 1 + tol):
        raise FingerprintError(f"Recovered coordinates {(u1, u2)} outside the unit square")
    return min(max(u1, 0.0), 1.0), min(max(u2, 0.0), 1.0), k
