"""Desk-scale embedding of a finite parameter grid into the space of metric trees.

Each grid point u and branch k is sent to F(u, k): the endpoint trees X_i
with their deg<=2 parts replaced by combs, cut down to balls around their
basepoints, and wedged together with a star whose branch lengths encode
(u, k). The scans below check injectivity through star fingerprints and
continuity through certified GH intervals.
"""

import asyncio
import itertools
import math
import sys
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from scipy.spatial.distance import cdist

from .config import config, read_yaml
from .documents import read_tree
from .errors import ConfigError, FingerprintError, GeometryError, ScanError
from .families import (
    CombParams,
    StarParams,
    comb_continuity_bound,
    comb_piece_bound,
    comb_tree,
    rho_embed,
    rho_invert,
    star_tree,
    tau,
)
from .gh_solver import GHInterval, gh_tree_interval
from .metric_core import TOL, FiniteMetricSpace, four_point_defect
from .tree_graph import (
    MetricTree,
    PlanEntry,
    ReplacementPlan,
    closed_ball_subtree,
    decompose_deg2,
    deg2_components,
    replace_edges,
    tree_from_edges,
    wedge_sum,
)

STAR_BASEPOINT = "branch:0:1"
STAR_CENTER = "branch:0:0"


# --- Configuration ---

class GridSpec(BaseModel):
    size: int = Field(ge=1)
    lo: float = Field(0.0, ge=0, le=1)
    hi: float = Field(1.0, ge=0, le=1)


class EndpointSpec(BaseModel):
    file: str | None = None
    edges: list[tuple[str, str, float]] | None = None
    basepoint: str

    @model_validator(mode="after")
    def _one_source(self):
        if (self.file is None) == (self.edges is None):
            raise ValueError("An endpoint needs exactly one of 'file' or 'edges'")
        return self


class EmbedFile(BaseModel):
    grid: GridSpec
    marked: list[tuple[float, float]]
    endpoints: list[EndpointSpec]
    m: int = Field(ge=1)
    branches: int = Field(3, ge=3)
    eps: float = Field(default_factory=lambda: config.numerics.eps, gt=0)
    depth: int = Field(default_factory=lambda: config.numerics.comb_depth, ge=1)
    tol: float = Field(default_factory=lambda: config.solver.tol, ge=0)
    gh_cap: int = Field(default_factory=lambda: config.solver.gh_cap, ge=1)


class EmbedConfig(BaseModel):
    """Parameter grid H with marked points v_i, endpoint trees X_i and basepoints p_i."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    coords: np.ndarray
    grid_size: int
    marked: list[int]
    endpoints: list[MetricTree]
    basepoints: list[str]
    m: int
    branches: int = 3
    eps: float = config.numerics.eps
    depth: int = config.numerics.comb_depth
    tol: float = TOL
    gh_cap: int = config.solver.gh_cap

    @model_validator(mode="after")
    def _check(self):
        if len(self.marked) != len(self.endpoints) or len(self.endpoints) != len(self.basepoints):
            raise ValueError("marked points, endpoints and basepoints must have equal length")
        if not self.marked:
            raise ValueError("At least one marked point is required")
        if len(set(self.marked)) != len(self.marked):
            raise ValueError("Marked points must be pairwise distinct")
        if self.diameter <= 0:
            raise ValueError("The parameter grid must have positive diameter")
        for X, p in zip(self.endpoints, self.basepoints):
            X.index_of(p)
        return self

    @property
    def H(self) -> FiniteMetricSpace:
        labels = [f"({u1:.6g},{u2:.6g})" for u1, u2 in self.coords]
        return FiniteMetricSpace(labels=labels, dist=cdist(self.coords, self.coords))

    @property
    def diameter(self) -> float:
        return float(cdist(self.coords, self.coords).max())

    @property
    def interior(self) -> list[int]:
        """Indices of H^×, the grid points that are not marked."""
        marked = set(self.marked)
        return [i for i in range(len(self.coords)) if i not in marked]

    def marked_index(self, u: int) -> int | None:
        return self.marked.index(u) if u in self.marked else None


def _grid_coords(grid: GridSpec) -> np.ndarray:
    axis = np.linspace(grid.lo, grid.hi, grid.size) if grid.size > 1 else np.array([grid.lo])
    return np.array([(u1, u2) for u1 in axis for u2 in axis])


def _endpoint_tree(spec: EndpointSpec, base_dir: Path) -> MetricTree:
    if spec.file is not None:
        path = Path(spec.file)
        return read_tree(path if path.is_absolute() else base_dir / path)
    names = list(dict.fromkeys(name for a, b, _ in spec.edges for name in (a, b)))
    if not names:
        names = [spec.basepoint]
    return tree_from_edges(names, spec.edges, metadata={"generator": "config"})


def embed_config_from_dict(data: dict, base_dir: str | Path = ".", tol: float | None = None) -> EmbedConfig:
    try:
        spec = EmbedFile(**data)
    except ValidationError as e:
        raise ConfigError(f"Invalid embedding configuration: {e}")
    coords = _grid_coords(spec.grid)
    marked = []
    for v in spec.marked:
        hits = np.flatnonzero(np.abs(coords - np.array(v)).max(axis=1) <= spec.tol)
        if len(hits):
            marked.append(int(hits[0]))
        else:
            coords = np.vstack([coords, v])
            marked.append(len(coords) - 1)
    endpoints = [_endpoint_tree(e, Path(base_dir)) for e in spec.endpoints]
    tol = spec.tol if tol is None else tol
    for i, X in enumerate(endpoints):
        if X.size <= 40 and four_point_defect(X.space) > tol:
            raise ConfigError(f"Endpoint tree {i + 1} is not 0-hyperbolic")
    try:
        return EmbedConfig(
            coords=coords,
            grid_size=spec.grid.size,
            marked=marked,
            endpoints=endpoints,
            basepoints=[e.basepoint for e in spec.endpoints],
            m=spec.m,
            branches=spec.branches,
            eps=spec.eps,
            depth=spec.depth,
            tol=tol,
            gh_cap=spec.gh_cap,
        )
    except ValidationError as e:
        raise ConfigError(f"Invalid embedding configuration: {e}")


def load_embed_config(path: str | Path) -> EmbedConfig:
    """Loads an embedding configuration from YAML or JSON."""
    return embed_config_from_dict(read_yaml(path), Path(path).resolve().parent)


# --- F(u, k) ---

class ScalarFields(BaseModel):
    sigma: list[float]
    phi: float
    xi: float


def scalar_fields(cfg: EmbedConfig, u: int) -> ScalarFields:
    d = cdist(cfg.coords[u : u + 1], cfg.coords[cfg.marked])[0]
    sigma = []
    for i in range(len(d)):
        others = np.delete(d, i)
        nearest_other = float(others.min()) if len(others) else math.inf
        if d[i] == 0:
            sigma.append(math.inf)
        elif nearest_other == 0:
            sigma.append(0.0)
        else:
            sigma.append(nearest_other / float(d[i]))
    phi = float(d.min()) / (2 * cfg.diameter)
    return ScalarFields(sigma=sigma, phi=phi, xi=32 * phi)


def replacement_tree(X: MetricTree, s: float, depth: int | None = None) -> MetricTree:
    """Y(s): every deg<=2 segment of X replaced by a comb M·B(s) of the segment's length."""
    depth = depth or config.numerics.comb_depth
    decomposition = decompose_deg2(X)
    entries = [
        PlanEntry(
            a=seg.a,
            b=seg.b,
            tree=comb_tree(CombParams(s=s, scale=min(seg.length, 1.0), depth=depth)),
            alpha="spine:0",
            beta="spine:1",
        )
        for seg in decomposition.segments
        if seg.length > TOL
    ]
    if not entries:
        return X
    Y = replace_edges(decomposition.tree, ReplacementPlan(entries=entries))
    Y.metadata["replacement_s"] = s
    return Y


def embedding_star(cfg: EmbedConfig, u: int, k: int, xi: float) -> MetricTree:
    a = rho_embed(cfg.coords[u], k, cfg.m, cfg.branches)
    return star_tree(StarParams(a=a, scale=xi, eps=cfg.eps))


def build_F(cfg: EmbedConfig, u: int, k: int) -> MetricTree:
    """F(u, k). Marked points map to their endpoint trees unchanged."""
    if not 1 <= k <= cfg.m:
        raise GeometryError(f"Branch index k={k} outside 1..{cfg.m}")
    i = cfg.marked_index(u)
    if i is not None:
        return cfg.endpoints[i]

    fields = scalar_fields(cfg, u)
    parts, tags = [], []
    for i, (X, p) in enumerate(zip(cfg.endpoints, cfg.basepoints)):
        Y = replacement_tree(X, fields.phi, cfg.depth)
        parts.append((closed_ball_subtree(Y, p, fields.sigma[i], cfg.tol), p))
        tags.append(f"Z{i + 1}")
    parts.append((embedding_star(cfg, u, k, fields.xi), STAR_BASEPOINT))
    tags.append("S")

    W = wedge_sum(parts, tags)
    W.metadata.update(
        {"u": cfg.coords[u].tolist(), "k": k, "sigma": fields.sigma, "phi": fields.phi, "xi": fields.xi}
    )
    return W


# --- Fingerprints ---

class Fingerprint(BaseModel):
    xi: float
    a: list[float]
    margin: float
    center: str

    def vector(self) -> np.ndarray:
        return np.array([self.xi, *self.a])


def _branch_lengths(T: MetricTree, center: int) -> list[float]:
    G = T.graph
    lengths = []
    for first in sorted(G[center]):
        prev, here = center, first
        while G.degree(here) == 2:
            prev, here = here, next(w for w in G[here] if w != prev)
        lengths.append(float(T.dist[center, here]))
    return lengths


def star_fingerprint(T: MetricTree, tol: float = TOL) -> Fingerprint:
    """Recovers (ξ, a) from the star leg of a tree built by build_F, or a raw star.

    The two longest deg<=2 closures must beat all others by a positive margin
    and share an endpoint, the star center. The second one must also be longer
    than any component a comb at the matching phi can contain.
    """
    comps = sorted(deg2_components(T), key=lambda c: -c.closure_diameter)
    if len(comps) < 2:
        raise FingerprintError("No certified star: fewer than two deg<=2 components")
    d2 = comps[1].closure_diameter
    d3 = comps[2].closure_diameter if len(comps) > 2 else 0.0
    margin = d2 - d3
    if margin <= tol:
        raise FingerprintError(f"Ambiguous star identification: margin {margin:.3g}")

    ends = [{c.closure[0], c.closure[-1]} for c in comps[:2]]
    shared = sorted(ends[0] & ends[1])
    if len(shared) != 1:
        raise FingerprintError("No certified star: the two longest legs do not meet")
    center = T.index_of(shared[0])

    lengths = sorted(_branch_lengths(T, center), reverse=True)
    xi = lengths[0]
    if xi <= tol:
        raise FingerprintError("No certified star: degenerate leg lengths")
    # no comb component at phi = xi/32 is longer than comb_piece_bound
    if d2 <= comb_piece_bound(xi / 32) + tol:
        raise FingerprintError(f"No certified star: second leg {d2:.3g} does not clear the comb components")
    a = [length / xi for length in lengths[1:]]
    for i, ai in enumerate(a, start=1):
        if not 2.0 ** (-2 * i) - 1e-6 <= ai <= 2.0 ** (-2 * i + 1) + 1e-6:
            raise FingerprintError(f"Recovered a_{i} = {ai:.6g} outside its interval")
    return Fingerprint(xi=xi, a=a, margin=margin, center=T.vertices[center])


def endpoint_fingerprints(cfg: EmbedConfig) -> list[Fingerprint | None]:
    found = []
    for X in cfg.endpoints:
        try:
            found.append(star_fingerprint(X, cfg.tol))
        except FingerprintError:
            found.append(None)
    return found


# --- Parallel cell evaluation ---

async def gather_cells(fn: Callable[[Any], Any], cells: Sequence[Any], label: str) -> list[Any]:
    print(f"Starting {len(cells)} cell tasks in parallel for {label}...", file=sys.stderr)
    results = await asyncio.gather(*[asyncio.to_thread(fn, cell) for cell in cells], return_exceptions=True)
    print(f"All cell tasks finished for {label}.", file=sys.stderr)

    failures = []
    for cell, result in zip(cells, results):
        if isinstance(result, Exception):
            print(f"ERROR: cell {cell} failed: {result}", file=sys.stderr)
            failures.append((cell, result))
    if failures:
        raise ScanError(f"{len(failures)} of {len(cells)} cells failed for {label}", failures)
    return list(results)


def collect_cells(fn: Callable[[Any], Any], cells: Sequence[Any], label: str) -> list[Any]:
    return asyncio.run(gather_cells(fn, cells, label))


# --- Scans ---

class InjectivityReport(BaseModel):
    cells: list[tuple[int, int]]
    fingerprints: list[Fingerprint]
    collisions: list[tuple[int, int]]
    min_separation: float
    max_roundtrip_error: float
    k_star: int | None

    @property
    def ok(self) -> bool:
        return not self.collisions and self.max_roundtrip_error <= 1e-6 and self.k_star is not None


def _separations(vectors: np.ndarray) -> np.ndarray:
    """τ-separation between every pair of fingerprint vectors."""
    return np.abs(vectors[:, None, :] - vectors[None, :, :]).max(axis=2)


def default_cells(cfg: EmbedConfig) -> list[tuple[int, int]]:
    return [(u, k) for u in cfg.interior for k in range(1, cfg.m + 1)]


def _collides(fp: Fingerprint, other: Fingerprint, tol: float) -> bool:
    if len(fp.a) != len(other.a):
        return False
    return tau(fp.a, other.a) <= tol and abs(fp.xi - other.xi) <= tol


def select_branch(
    cfg: EmbedConfig, cells: Sequence[tuple[int, int]], fingerprints: Sequence[Fingerprint]
) -> int | None:
    """Smallest k whose cells never share a fingerprint with an endpoint tree."""
    endpoints = [fp for fp in endpoint_fingerprints(cfg) if fp is not None]
    for k in range(1, cfg.m + 1):
        clash = any(
            _collides(fp, ep, cfg.tol)
            for (_, kk), fp in zip(cells, fingerprints)
            if kk == k
            for ep in endpoints
        )
        if not clash:
            return k
    return None


def injectivity_scan(cfg: EmbedConfig, cells: Sequence[tuple[int, int]] | None = None) -> InjectivityReport:
    cells = list(cells) if cells is not None else default_cells(cfg)
    marked = [cell for cell in cells if cell[0] in cfg.marked]
    if marked:
        raise ScanError(f"Grid cells {marked[:3]} sit on marked points")

    def fingerprint_cell(cell):
        u, k = cell
        return star_fingerprint(build_F(cfg, u, k), cfg.tol)

    fingerprints = collect_cells(fingerprint_cell, cells, "scan-injectivity")

    collisions, min_sep = [], math.inf
    if len(fingerprints) > 1:
        widths = {len(fp.a) for fp in fingerprints}
        if len(widths) == 1:
            sep = _separations(np.array([fp.vector() for fp in fingerprints]))
            upper = np.triu_indices(len(fingerprints), k=1)
            min_sep = float(sep[upper].min())
            collisions = [
                (int(i), int(j)) for i, j in zip(*upper) if sep[i, j] <= cfg.tol
            ]

    roundtrip = 0.0
    for (u, k), fp in zip(cells, fingerprints):
        u1, u2, kk = rho_invert(fp.a, cfg.m)
        error = max(abs(u1 - cfg.coords[u][0]), abs(u2 - cfg.coords[u][1]))
        roundtrip = max(roundtrip, error if kk == k else math.inf)

    return InjectivityReport(
        cells=cells,
        fingerprints=fingerprints,
        collisions=collisions,
        min_separation=min_sep,
        max_roundtrip_error=roundtrip,
        k_star=select_branch(cfg, cells, fingerprints),
    )


def embedding_map(cfg: EmbedConfig, u: int, k_star: int | None = None) -> MetricTree:
    """Φ(u) = F(u, k*) with k* from the injectivity scan unless given."""
    if k_star is None:
        k_star = injectivity_scan(cfg).k_star
        if k_star is None:
            raise ScanError("No collision-free branch exists for this configuration")
    return build_F(cfg, u, k_star)


class ContinuityRow(BaseModel):
    u1: float
    u2: float
    k: int
    v1: float
    v2: float
    bound: float
    hi: float
    margin: float


def grid_adjacency(cfg: EmbedConfig) -> list[tuple[int, int]]:
    """4-neighbour pairs of the size×size grid, both ends in H^×."""
    n = cfg.grid_size
    interior = set(cfg.interior)
    pairs = []
    for r, c in itertools.product(range(n), range(n)):
        here = r * n + c
        for there in ((r + 1) * n + c if r + 1 < n else None, r * n + c + 1 if c + 1 < n else None):
            if there is not None and here in interior and there in interior:
                pairs.append((here, there))
    return pairs


def analytic_bound(cfg: EmbedConfig, u: int, v: int, k: int) -> float:
    """Sum of the comb, ball and star continuity moduli for the pair (u, v)."""
    fu, fv = scalar_fields(cfg, u), scalar_fields(cfg, v)
    comb = comb_continuity_bound(fu.phi, fv.phi)
    total = 0.0
    for i, (X, p) in enumerate(zip(cfg.endpoints, cfg.basepoints)):
        reach = X.eccentricity(p) + max(fu.phi, fv.phi)
        ball = abs(min(fu.sigma[i], reach) - min(fv.sigma[i], reach))
        total += comb + ball
    a_u = rho_embed(cfg.coords[u], k, cfg.m, cfg.branches)
    a_v = rho_embed(cfg.coords[v], k, cfg.m, cfg.branches)
    star = 2 * max(fu.xi, fv.xi) * tau(a_u, a_v) + 1.5 * abs(fu.xi - fv.xi)
    return total + star


def continuity_scan(
    cfg: EmbedConfig, pairs: Sequence[tuple[int, int]] | None = None, k: int = 1
) -> list[ContinuityRow]:
    pairs = list(pairs) if pairs is not None else grid_adjacency(cfg)
    outside = [pair for pair in pairs if pair[0] in cfg.marked or pair[1] in cfg.marked]
    if outside:
        raise ScanError(f"Adjacency pairs {outside[:3]} leave H^×")

    points = sorted({u for pair in pairs for u in pair})
    trees = dict(zip(points, collect_cells(lambda u: build_F(cfg, u, k), points, "scan-continuity trees")))

    def measure(pair) -> GHInterval:
        u, v = pair
        return gh_tree_interval(trees[u], trees[v], cfg.eps, cfg.gh_cap)

    intervals = collect_cells(measure, pairs, "scan-continuity")
    rows = []
    for (u, v), interval in zip(pairs, intervals):
        bound = analytic_bound(cfg, u, v, k)
        rows.append(
            ContinuityRow(
                u1=float(cfg.coords[u][0]),
                u2=float(cfg.coords[u][1]),
                k=k,
                v1=float(cfg.coords[v][0]),
                v2=float(cfg.coords[v][1]),
                bound=bound,
                hi=interval.hi,
                margin=bound + 2 * cfg.eps + cfg.tol - interval.hi,
            )
        )
    return rows


class PathStep(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    s: float
    tree: MetricTree
    hi: float | None = None
    bound: float | None = None


def replacement_path(
    X: MetricTree,
    s_grid: Sequence[float],
    eps: float | None = None,
    cap: int | None = None,
    depth: int | None = None,
) -> list[PathStep]:
    """Y(s) along a sorted grid of s, with GH hi and the comb bound to the predecessor."""
    s_grid = [float(s) for s in s_grid]
    if any(not 0 <= s <= 1 for s in s_grid) or s_grid != sorted(s_grid):
        raise GeometryError("s grid must be sorted and within [0, 1]")
    eps = eps or config.numerics.eps
    trees = collect_cells(lambda s: replacement_tree(X, s, depth), s_grid, "path")

    def measure(index: int) -> GHInterval:
        return gh_tree_interval(trees[index - 1], trees[index], eps, cap)

    intervals = collect_cells(measure, list(range(1, len(trees))), "path intervals")
    steps = [PathStep(s=s_grid[0], tree=trees[0])] if trees else []
    for index, interval in enumerate(intervals, start=1):
        steps.append(
            PathStep(
                s=s_grid[index],
                tree=trees[index],
                hi=interval.hi,
                bound=comb_continuity_bound(s_grid[index - 1], s_grid[index]),
            )
        )
    return steps
