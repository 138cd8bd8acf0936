"""Weighted metric trees.

A MetricTree is the combinatorial model of a compact metric tree: named
vertices, positive edge lengths and the cached path-length metric. A point of
the underlying continuum only exists once subdivision or a ball cut has
inserted a vertex for it.

Vertex labels carry charts, ``<key>:<coord>``, several of them joined by
``|`` when one vertex plays more than one role (a wedge point, a replaced
segment's endpoint). Inserted vertices receive interpolated charts, which lets
two trees built from the same recipe be matched point by point.
"""

import math
from functools import cached_property
from typing import Sequence

import networkx as nx
import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import shortest_path

from .errors import CycleError, DisconnectedError, PlanError, TreeError
from .metric_core import TOL, FiniteMetricSpace

Vertex = int | str


class MetricTree(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    vertices: list[str]
    labels: list[str]
    edges: list[tuple[int, int, float]]
    dist: np.ndarray
    metadata: dict = Field(default_factory=dict)

    @cached_property
    def graph(self) -> nx.Graph:
        G = nx.Graph()
        G.add_nodes_from(range(len(self.vertices)))
        G.add_weighted_edges_from(self.edges, weight="length")
        return G

    @cached_property
    def _positions(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.vertices)}

    @property
    def size(self) -> int:
        return len(self.vertices)

    @property
    def space(self) -> FiniteMetricSpace:
        return FiniteMetricSpace(labels=list(self.vertices), dist=self.dist)

    def index_of(self, v: Vertex) -> int:
        """Integers are positions, strings are vertex names."""
        if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
            if 0 <= v < self.size:
                return int(v)
        elif v in self._positions:
            return self._positions[v]
        raise TreeError(f"Unknown vertex {v!r}")

    def degree(self, v: Vertex) -> int:
        return self.graph.degree(self.index_of(v))

    def chart(self, i: int) -> str:
        return self.labels[i] or self.vertices[i]

    def eccentricity(self, v: Vertex) -> float:
        return float(self.dist[self.index_of(v)].max())

    def distance(self, x: Vertex, y: Vertex) -> float:
        return float(self.dist[self.index_of(x), self.index_of(y)])

    @property
    def total_length(self) -> float:
        return float(sum(length for _, _, length in self.edges))


# --- Charts ---

def _fmt(x: float) -> str:
    return f"{x:.12g}"


def parse_charts(label: str) -> list[tuple[str, float | None]]:
    charts = []
    for alias in label.split("|"):
        key, sep, tail = alias.rpartition(":")
        coord = None
        if sep:
            try:
                coord = float(tail)
            except ValueError:
                coord = None
        charts.append((key, coord) if coord is not None else (alias, None))
    return charts


def prefix_label(tag: str, label: str) -> str:
    return "|".join(f"{tag}/{alias}" for alias in label.split("|"))


def interpolate_label(near: str, far: str, frac: float) -> str:
    """Chart label of the point at fraction ``frac`` from ``near`` towards ``far``."""
    near_charts = dict(parse_charts(near))
    far_charts = parse_charts(far)
    for key, coord in far_charts:
        if coord is not None and near_charts.get(key) is not None:
            start = near_charts[key]
            return f"{key}:{_fmt(start + frac * (coord - start))}"
    for key, coord in far_charts:
        if coord is not None:
            # the far piece starts at ``near`` (tooth or branch leaving a junction)
            return f"{key}:{_fmt(frac * coord)}"
    for key, coord in near_charts.items():
        if coord is not None:
            return f"{key}:{_fmt(coord)}~{far_charts[0][0]}:{_fmt(frac)}"
    return f"{far_charts[0][0]}~{near.split('|')[0]}:{_fmt(1 - frac)}"


# --- Construction ---

def _all_pairs(n: int, edges: Sequence[tuple[int, int, float]]) -> np.ndarray:
    if n == 1:
        return np.zeros((1, 1))
    rows = [u for u, v, _ in edges] + [v for u, v, _ in edges]
    cols = [v for u, v, _ in edges] + [u for u, v, _ in edges]
    data = [length for _, _, length in edges] * 2
    adjacency = csr_matrix((data, (rows, cols)), shape=(n, n))
    return shortest_path(adjacency, method="D", directed=False)


def _assemble(
    vertices: Sequence[str],
    labels: Sequence[str],
    edges: Sequence[tuple[int, int, float]],
    dist: np.ndarray | None = None,
    metadata: dict | None = None,
) -> MetricTree:
    n = len(vertices)
    if n == 0:
        raise TreeError("A tree needs at least one vertex")
    if len(set(vertices)) != n:
        seen, dupes = set(), []
        for name in vertices:
            if name in seen:
                dupes.append(name)
            seen.add(name)
        raise TreeError(f"Duplicate vertex names: {dupes[:5]}")

    clean, pairs = [], {}
    for u, v, length in edges:
        length = float(length)
        if not (length > 0 and math.isfinite(length)):
            raise TreeError(f"Edge {vertices[u]}-{vertices[v]} has nonpositive length {length}")
        if u == v:
            raise CycleError(f"Self-loop at {vertices[u]}", [(vertices[u], vertices[u])])
        pair = frozenset((u, v))
        if pair in pairs:
            raise CycleError(
                f"Parallel edges between {vertices[u]} and {vertices[v]}",
                [(vertices[u], vertices[v]), (vertices[v], vertices[u])],
            )
        pairs[pair] = len(clean)
        clean.append((int(u), int(v), length))

    G = nx.Graph()
    G.add_nodes_from(range(n))
    G.add_edges_from((u, v) for u, v, _ in clean)
    try:
        cycle = nx.find_cycle(G)
    except nx.NetworkXNoCycle:
        cycle = None
    if cycle:
        witness = [(vertices[u], vertices[v]) for u, v in cycle]
        raise CycleError(f"Cycle detected: {witness}", witness)
    if not nx.is_connected(G):
        parts = nx.number_connected_components(G)
        raise DisconnectedError(f"Edge list is disconnected ({parts} components)")

    if dist is None:
        dist = _all_pairs(n, clean)
    dist = np.array(dist, dtype=float)
    dist.setflags(write=False)
    return MetricTree(
        vertices=list(vertices),
        labels=list(labels),
        edges=clean,
        dist=dist,
        metadata=dict(metadata or {}),
    )


def tree_from_edges(
    vertices: Sequence[Vertex],
    edges: Sequence[tuple[Vertex, Vertex, float]],
    labels: Sequence[str] | None = None,
    metadata: dict | None = None,
) -> MetricTree:
    """Validated tree with cached all-pairs distances."""
    names = [str(v) for v in vertices]
    position = {name: i for i, name in enumerate(names)}
    indexed = []
    for a, b, length in edges:
        try:
            indexed.append((position[str(a)], position[str(b)], length))
        except KeyError as e:
            raise TreeError(f"Edge references unknown vertex {e.args[0]!r}")
    if labels is None:
        labels = [""] * len(names)
    return _assemble(names, [str(label) for label in labels], indexed, metadata=metadata)


def split_edges(
    T: MetricTree, cuts: dict[int, Sequence[float]]
) -> tuple[MetricTree, dict[tuple[int, float], int]]:
    """Inserts vertices on edges at the given offsets from each edge's first
    endpoint. Original vertices keep their positions; new ones are appended."""
    vertices, labels = list(T.vertices), list(T.labels)
    d0 = T.dist[0]
    edges, created = [], {}
    for e, (u, v, length) in enumerate(T.edges):
        offsets = sorted(off for off in cuts.get(e, ()) if 0 < off < length)
        if not offsets:
            edges.append((u, v, length))
            continue
        near_is_u = d0[u] <= d0[v]
        chain = [u]
        for off in offsets:
            frac = off / length if near_is_u else 1 - off / length
            near, far = (u, v) if near_is_u else (v, u)
            vertices.append(f"{T.vertices[u]}~{T.vertices[v]}@{_fmt(off)}")
            labels.append(interpolate_label(T.chart(near), T.chart(far), frac))
            created[(e, off)] = len(vertices) - 1
            chain.append(len(vertices) - 1)
        chain.append(v)
        marks = [0.0] + offsets + [length]
        for k in range(len(chain) - 1):
            edges.append((chain[k], chain[k + 1], marks[k + 1] - marks[k]))
    if not created:
        return T, created
    return _assemble(vertices, labels, edges, metadata=T.metadata), created


# --- Geodesics and degrees ---

def geodesic(T: MetricTree, x: Vertex, y: Vertex) -> list[str]:
    """The unique simple path from x to y."""
    path = nx.shortest_path(T.graph, T.index_of(x), T.index_of(y))
    return [T.vertices[i] for i in path]


def _geodesic_indices(T: MetricTree, x: int, y: int) -> list[int]:
    return nx.shortest_path(T.graph, x, y)


def geodesic_meet(T: MetricTree, o: Vertex, x: Vertex, y: Vertex) -> str:
    """The vertex q with [o, x] ∩ [o, y] = [o, q]."""
    px, py = geodesic(T, o, x), geodesic(T, o, y)
    q = px[0]
    for a, b in zip(px, py):
        if a != b:
            break
        q = a
    return q


def branch_count(T: MetricTree, v: Vertex) -> int:
    """Number of components of T minus v."""
    return T.degree(v)


def root_parents(T: MetricTree, root: int = 0) -> dict[int, int]:
    return dict(nx.bfs_predecessors(T.graph, root))


# --- deg <= 2 structure ---

class Deg2Component(BaseModel):
    vertices: list[str]
    delimiters: list[str]
    closure: list[str]
    closure_diameter: float

    @property
    def is_open_edge(self) -> bool:
        return not self.vertices


class Segment(BaseModel):
    a: str
    b: str
    path: list[str]
    length: float


class Decomposition(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    tree: MetricTree
    segments: list[Segment]


def _component_closures(T: MetricTree) -> list[tuple[list[int], list[int], list[int]]]:
    G = T.graph
    low = [i for i in range(T.size) if G.degree(i) <= 2]
    low_set = set(low)
    found = []
    for comp in nx.connected_components(G.subgraph(low)):
        ends = sorted(v for v in comp if sum(1 for w in G[v] if w in comp) < 2)
        path, prev = [ends[0]], None
        while True:
            step = [w for w in G[path[-1]] if w in comp and w != prev]
            if not step:
                break
            prev = path[-1]
            path.append(step[0])
        outside_start = sorted(w for w in G[path[0]] if w not in low_set)
        if len(path) == 1:
            before, after = outside_start[:1], outside_start[1:]
        else:
            before = outside_start
            after = sorted(w for w in G[path[-1]] if w not in low_set)
        delimiters = before + after
        found.append((path, delimiters, before + path + after))
    for u, v, _ in T.edges:
        if u not in low_set and v not in low_set:
            a, b = sorted((u, v))
            found.append(([], [a, b], [a, b]))
    found.sort(key=lambda item: min(item[0] or item[1]))
    return found


def deg2_components(T: MetricTree) -> list[Deg2Component]:
    """Components of the set of points with at most two branches.

    Branch vertices are excluded and reported as delimiters. An edge joining
    two branch vertices is an open component with no vertex of its own.
    """
    components = []
    for path, delimiters, closure in _component_closures(T):
        components.append(
            Deg2Component(
                vertices=[T.vertices[i] for i in path],
                delimiters=[T.vertices[i] for i in delimiters],
                closure=[T.vertices[i] for i in closure],
                closure_diameter=float(T.dist[closure[0], closure[-1]]),
            )
        )
    return components


def decompose_deg2(T: MetricTree, piece: float = 1.0, tol: float = TOL) -> Decomposition:
    """Chops every deg<=2 component closure into segments of length <= piece.

    Chunks are cut greedily from the closure end with the lower vertex index.
    Cut points that do not fall on a vertex are inserted into the returned tree.
    """
    edge_of = {frozenset((u, v)): e for e, (u, v, _) in enumerate(T.edges)}
    cuts: dict[int, list[float]] = {}
    plans = []
    for _, _, closure in _component_closures(T):
        if closure[-1] < closure[0]:
            closure = closure[::-1]
        start = closure[0]
        pos = T.dist[start, closure]
        total = float(pos[-1])
        if total <= tol:
            continue
        marks = [("vertex", start)]
        k = 1
        while k * piece < total - tol:
            c = k * piece
            j = int(np.searchsorted(pos, c))
            if j < len(pos) and abs(pos[j] - c) <= tol:
                marks.append(("vertex", closure[j]))
            elif j > 0 and abs(pos[j - 1] - c) <= tol:
                marks.append(("vertex", closure[j - 1]))
            else:
                a, b = closure[j - 1], closure[j]
                e = edge_of[frozenset((a, b))]
                u = T.edges[e][0]
                off = c - pos[j - 1] if u == a else pos[j] - c
                cuts.setdefault(e, []).append(off)
                marks.append(("cut", (e, off)))
            k += 1
        marks.append(("vertex", closure[-1]))
        plans.append(marks)

    refined, created = split_edges(T, cuts)
    segments = []
    for marks in plans:
        points = [ref if kind == "vertex" else created[ref] for kind, ref in marks]
        for a, b in zip(points, points[1:]):
            path = _geodesic_indices(refined, a, b)
            segments.append(
                Segment(
                    a=refined.vertices[a],
                    b=refined.vertices[b],
                    path=[refined.vertices[i] for i in path],
                    length=float(refined.dist[a, b]),
                )
            )
    return Decomposition(tree=refined, segments=segments)


# --- Balls and subdivision ---

def insert_sphere(T: MetricTree, o: Vertex, r: float, tol: float = TOL) -> MetricTree:
    """T with a vertex at exact distance r from o on every edge crossing the sphere."""
    io = T.index_of(o)
    do = T.dist[io]
    cuts = {}
    for e, (u, v, length) in enumerate(T.edges):
        near, far = (u, v) if do[u] <= do[v] else (v, u)
        if do[near] < r - tol and do[far] > r + tol:
            off = r - do[near]
            cuts[e] = [off if near == u else length - off]
    refined, _ = split_edges(T, cuts)
    return refined


def closed_ball_subtree(T: MetricTree, o: Vertex, r: float, tol: float = TOL) -> MetricTree:
    """The subtree of points within distance r of o (r may be math.inf)."""
    io = T.index_of(o)
    if r < 0:
        raise TreeError(f"Ball radius must be nonnegative, got {r}")
    if math.isinf(r) or r >= T.eccentricity(io) - tol:
        return T
    refined = insert_sphere(T, io, r, tol)
    center = refined.index_of(T.vertices[io])
    keep = [i for i in range(refined.size) if refined.dist[center, i] <= r + tol]
    position = {old: new for new, old in enumerate(keep)}
    edges = [
        (position[u], position[v], length)
        for u, v, length in refined.edges
        if u in position and v in position
    ]
    metadata = dict(T.metadata)
    metadata["ball"] = {"center": T.vertices[io], "radius": r}
    return _assemble(
        [refined.vertices[i] for i in keep],
        [refined.labels[i] for i in keep],
        edges,
        dist=refined.dist[np.ix_(keep, keep)],
        metadata=metadata,
    )


def subdivide(T: MetricTree, eps: float, tol: float = TOL) -> MetricTree:
    """Splits every edge into equal pieces of length <= eps."""
    if eps <= 0:
        raise TreeError(f"Subdivision resolution must be positive, got {eps}")
    cuts = {}
    for e, (_, _, length) in enumerate(T.edges):
        pieces = max(1, math.ceil(length / eps - tol))
        if pieces > 1:
            cuts[e] = [j * length / pieces for j in range(1, pieces)]
    refined, _ = split_edges(T, cuts)
    if refined is not T:
        refined.metadata["sampling_eps"] = eps
    return refined


# --- Gluing ---

def wedge_sum(
    parts: Sequence[tuple[MetricTree, Vertex]], tags: Sequence[str] | None = None
) -> MetricTree:
    """Disjoint union with all basepoints identified to a single vertex ``p``.

    Within-part distances are copied, cross-part distances go through ``p``.
    """
    if not parts:
        raise TreeError("wedge_sum needs at least one part")
    if len(parts) == 1:
        return parts[0][0]
    tags = list(tags) if tags is not None else [f"Z{i + 1}" for i in range(len(parts))]

    vertices, labels, edges = ["p"], ["p"], []
    blocks = []
    for tag, (tree, base) in zip(tags, parts):
        b = tree.index_of(base)
        labels[0] += "|" + prefix_label(tag, tree.chart(b))
        index = {}
        for i in range(tree.size):
            if i == b:
                index[i] = 0
                continue
            index[i] = len(vertices)
            vertices.append(f"{tag}/{tree.vertices[i]}")
            labels.append(prefix_label(tag, tree.chart(i)))
        edges.extend((index[u], index[v], length) for u, v, length in tree.edges)
        blocks.append((tree, b, [index[i] for i in range(tree.size)]))

    D = np.zeros((len(vertices), len(vertices)))
    for tree, b, idx in blocks:
        D[np.ix_(idx, idx)] = tree.dist
    for i, (ti, bi, idx_i) in enumerate(blocks):
        oi = [k for k in range(ti.size) if k != bi]
        for tj, bj, idx_j in blocks[i + 1 :]:
            oj = [k for k in range(tj.size) if k != bj]
            if not oi or not oj:
                continue
            cross = ti.dist[oi, bi][:, None] + tj.dist[bj, oj][None, :]
            gi = [idx_i[k] for k in oi]
            gj = [idx_j[k] for k in oj]
            D[np.ix_(gi, gj)] = cross
            D[np.ix_(gj, gi)] = cross.T

    metadata = {"generator": "wedge_sum", "parts": [dict(t.metadata) for t, _ in parts]}
    return _assemble(vertices, labels, edges, dist=D, metadata=metadata)


class PlanEntry(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    a: Vertex
    b: Vertex
    tree: MetricTree
    alpha: Vertex
    beta: Vertex


class ReplacementPlan(BaseModel):
    entries: list[PlanEntry]


def _check_plan(T: MetricTree, plan: ReplacementPlan, tol: float) -> list[list[int]]:
    paths = []
    for entry in plan.entries:
        a, b = T.index_of(entry.a), T.index_of(entry.b)
        alpha, beta = entry.tree.index_of(entry.alpha), entry.tree.index_of(entry.beta)
        if a == b:
            raise PlanError(f"Segment endpoints coincide at {T.vertices[a]}")
        host, other = T.dist[a, b], entry.tree.dist[alpha, beta]
        if abs(host - other) > tol:
            raise PlanError(
                f"Length mismatch on [{T.vertices[a]}, {T.vertices[b]}]: host {host}, replacement {other}"
            )
        paths.append(_geodesic_indices(T, a, b))

    marked = {p[0] for p in paths} | {p[-1] for p in paths}
    for k, path in enumerate(paths):
        for other in paths[k + 1 :]:
            shared = set(path) & set(other)
            if len(shared) > 1:
                names = sorted(T.vertices[i] for i in shared)
                raise PlanError(f"Segments share more than one vertex: {names}")
        for v in path[1:-1]:
            if v in marked:
                raise PlanError(f"Segment interior contains the endpoint {T.vertices[v]} of another segment")
            if T.graph.degree(v) != 2:
                raise PlanError(f"Segment interior vertex {T.vertices[v]} is a branch point")
    return paths


def replace_edges(T: MetricTree, plan: ReplacementPlan, tol: float = TOL) -> MetricTree:
    """Replaces each geodesic [a, b] by a tree with marked points alpha -> a, beta -> b.

    Interior host vertices are kept, identified with the points of
    [alpha, beta] at the same distance from alpha, so every original vertex
    keeps its pairwise distances.
    """
    paths = _check_plan(T, plan, tol)
    removed = {frozenset(pair) for path in paths for pair in zip(path, path[1:])}

    vertices, labels = list(T.vertices), [T.chart(i) for i in range(T.size)]
    edges = [(u, v, length) for u, v, length in T.edges if frozenset((u, v)) not in removed]

    for ell, (entry, path) in enumerate(zip(plan.entries, paths)):
        tag = f"seg{ell}"
        R = entry.tree
        alpha, beta = R.index_of(entry.alpha), R.index_of(entry.beta)
        positions = T.dist[path[0], path]

        # place interior host vertices on [alpha, beta]
        R_path = _geodesic_indices(R, alpha, beta)
        rpos = R.dist[alpha, R_path]
        edge_of = {frozenset((u, v)): e for e, (u, v, _) in enumerate(R.edges)}
        cuts, wanted = {}, []
        for host, t in zip(path[1:-1], positions[1:-1]):
            j = int(np.searchsorted(rpos, t))
            if j < len(rpos) and abs(rpos[j] - t) <= tol:
                wanted.append((host, ("vertex", R_path[j])))
            elif j > 0 and abs(rpos[j - 1] - t) <= tol:
                wanted.append((host, ("vertex", R_path[j - 1])))
            else:
                x, y = R_path[j - 1], R_path[j]
                e = edge_of[frozenset((x, y))]
                off = t - rpos[j - 1] if R.edges[e][0] == x else rpos[j] - t
                cuts.setdefault(e, []).append(off)
                wanted.append((host, ("cut", (e, off))))
        R, created = split_edges(R, cuts)

        index = {alpha: path[0], beta: path[-1]}
        for host, (kind, ref) in wanted:
            index[ref if kind == "vertex" else created[ref]] = host
        for i in range(R.size):
            if i in index:
                labels[index[i]] += "|" + prefix_label(tag, R.chart(i))
                continue
            index[i] = len(vertices)
            vertices.append(f"{tag}/{R.vertices[i]}")
            labels.append(prefix_label(tag, R.chart(i)))
        edges.extend((index[u], index[v], length) for u, v, length in R.edges)

    metadata = dict(T.metadata)
    metadata["replaced_segments"] = len(plan.entries)
    return _assemble(vertices, labels, edges, metadata=metadata)
