"""Randomized property suite behind ``lab check``.

Every draw comes from a seeded numpy Generator, so a (seed, draws) pair
always produces the same report.
"""

import numpy as np
from pydantic import BaseModel, Field

from .embedding_lab import EmbedConfig, build_F, embed_config_from_dict, replacement_tree, star_fingerprint
from .errors import FingerprintError
from .families import (
    CombParams,
    StarParams,
    comb_continuity_bound,
    comb_hausdorff,
    comb_tree,
    rho_embed,
    star_metric,
    star_tree,
    tau,
)
from .gh_solver import eccentricity_correspondence, gh_exact, gh_lower_bound, gh_upper_bound
from .metric_core import TOL, FiniteMetricSpace, four_point_defect, hausdorff_distance, restrict, validate_metric
from .tree_graph import MetricTree, insert_sphere, tree_from_edges, wedge_sum


class CheckResult(BaseModel):
    runs: int = 0
    failures: int = 0
    worst: float = 0.0


class CheckReport(BaseModel):
    seed: int
    draws: int
    checks: dict[str, CheckResult] = Field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return all(result.failures == 0 for result in self.checks.values())

    def record(self, name: str, excess: float):
        """Logs one run; a positive excess is a failure of that size."""
        result = self.checks.setdefault(name, CheckResult())
        result.runs += 1
        if excess > 0:
            result.failures += 1
            result.worst = max(result.worst, excess)


def random_tree(rng: np.random.Generator, n: int) -> MetricTree:
    names = [f"v{i}" for i in range(n)]
    edges = [(names[int(rng.integers(0, i))], names[i], float(rng.uniform(0.1, 1.0))) for i in range(1, n)]
    return tree_from_edges(names, edges)


def random_a(rng: np.random.Generator, branches: int) -> list[float]:
    return [float(rng.uniform(2.0 ** (-2 * i), 2.0 ** (-2 * i + 1))) for i in range(1, branches + 1)]


def random_embed_config(rng: np.random.Generator) -> EmbedConfig:
    endpoints = []
    for _ in range(2):
        T = random_tree(rng, int(rng.integers(2, 5)))
        edges = [[T.vertices[a], T.vertices[b], length] for a, b, length in T.edges]
        endpoints.append({"basepoint": "v0", "edges": edges})
    return embed_config_from_dict({
        "grid": {"size": 2, "lo": 0.25, "hi": 0.75},
        "marked": [[0, 0], [1, 1]],
        "endpoints": endpoints,
        "m": 2,
        "branches": 3,
        "eps": 0.25,
        "depth": 3,
    })


def _tree_excess(T: MetricTree, tol: float) -> float:
    report = validate_metric(T.space, tol)
    sample = T.space if T.size <= 40 else restrict(T.space, np.linspace(0, T.size - 1, 40).astype(int).tolist())
    defect = four_point_defect(sample)
    return max(report.worst_violation, defect) - tol


def run_checks(seed: int, draws: int, tol: float = TOL) -> CheckReport:
    rng = np.random.default_rng(seed)
    report = CheckReport(seed=seed, draws=draws)

    for _ in range(draws):
        comb = comb_tree(CombParams(s=float(rng.uniform()), scale=float(rng.uniform(0.2, 1.0)), depth=3))
        star = star_tree(StarParams(a=random_a(rng, 3), scale=float(rng.uniform(0.1, 2)), eps=0.5))
        host = random_tree(rng, int(rng.integers(2, 6)))
        replaced = replacement_tree(host, float(rng.uniform(0, 0.5)), depth=3)
        wedge = wedge_sum([(comb, 0), (star, "branch:0:1")])
        for name, T in (("comb", comb), ("star", star), ("replace", replaced), ("wedge", wedge)):
            report.record(f"tree_validity/{name}", _tree_excess(T, tol))

        # within-part distances survive the wedge and the s = 0 replacement
        idx = [wedge.index_of("p")] + [wedge.index_of(f"Z1/{v}") for v in comb.vertices[1:]]
        report.record("restriction/wedge", float(np.abs(wedge.dist[np.ix_(idx, idx)] - comb.dist).max()) - 1e-12)
        flat = replacement_tree(host, 0.0)
        keep = [flat.index_of(v) for v in host.vertices]
        report.record("restriction/replace", float(np.abs(flat.dist[np.ix_(keep, keep)] - host.dist).max()) - 1e-12)

        # F(u, k) stays a tree metric and carries its star fingerprint
        cfg = random_embed_config(rng)
        u, k = int(rng.choice(cfg.interior)), int(rng.integers(1, cfg.m + 1))
        F = build_F(cfg, u, k)
        report.record("tree_validity/build_F", _tree_excess(F, tol))
        try:
            fp = star_fingerprint(F, cfg.tol)
            drift = float(np.abs(np.array(fp.a) - rho_embed(cfg.coords[u], k, cfg.m, cfg.branches)).max())
            report.record("build_F/fingerprint", drift - 1e-6)
        except FingerprintError:
            report.record("build_F/fingerprint", 1.0)

        # combs in one generation window stay within the continuity bound
        n = int(rng.integers(0, 4))
        s = float(rng.uniform(2.0 ** -(n + 1), 2.0**-n))
        t = min(1.0, s + float(rng.uniform(-0.95, 0.95)) * 2.0 ** -(n + 2))
        eps = 2.0**-6
        report.record("comb/continuity", comb_hausdorff(s, t, eps) - comb_continuity_bound(s, t) - 2 * eps)

        # star metrics move by at most 2·tau
        a, b = random_a(rng, 3), random_a(rng, 3)
        pa, pb = StarParams(a=a), StarParams(a=b)
        x = (float(rng.uniform()), int(rng.integers(0, 4)))
        y = (float(rng.uniform()), int(rng.integers(0, 4)))
        report.record("star/tau_bound", abs(star_metric(pa, x, y) - star_metric(pb, x, y)) - 2 * tau(a, b) - 1e-12)

        # ball subtrees move by at most |r - r'|
        T = random_tree(rng, int(rng.integers(2, 7)))
        r1, r2 = (float(r) for r in rng.uniform(0, T.eccentricity(0), size=2))
        report.record("balls/radius_gap", ball_gap(T, 0, r1, r2) - abs(r1 - r2) - 1e-9)

        # GH solver coherence on small tree metrics
        X = random_tree(rng, int(rng.integers(1, 5))).space
        Y = random_tree(rng, int(rng.integers(1, 5))).space
        value = gh_exact(X, Y)
        report.record("gh/lower", gh_lower_bound(X, Y) - value - tol)
        report.record("gh/upper", value - gh_upper_bound(X, Y, eccentricity_correspondence(X, Y)) - tol)
        report.record("gh/symmetry", abs(value - gh_exact(Y, X)) - tol)

        p, q = (float(v) for v in rng.uniform(0.1, 3.0, size=2))
        two = gh_exact(
            FiniteMetricSpace.from_matrix([[0, p], [p, 0]]), FiniteMetricSpace.from_matrix([[0, q], [q, 0]])
        )
        report.record("gh/two_point", abs(two - abs(p - q) / 2) - tol)

    return report


def ball_gap(T: MetricTree, o: int | str, r1: float, r2: float) -> float:
    """Hausdorff distance between the closed balls B(o, r1) and B(o, r2) of T,
    measured on a common refinement containing both spheres."""
    R = insert_sphere(insert_sphere(T, o, r1), o, r2)
    center = R.index_of(T.vertices[T.index_of(o)])
    d = R.dist[center]
    inner = np.flatnonzero(d <= r1 + TOL)
    outer = np.flatnonzero(d <= r2 + TOL)
    return hausdorff_distance(R.space, inner, outer)
