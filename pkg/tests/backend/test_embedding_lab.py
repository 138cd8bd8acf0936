import math
from pathlib import Path

import numpy as np
import pytest

from backend.geometry.config import read_yaml
from backend.geometry.documents import serialize_tree
from backend.geometry.embedding_lab import (
    STAR_CENTER,
    analytic_bound,
    build_F,
    continuity_scan,
    embed_config_from_dict,
    embedding_map,
    endpoint_fingerprints,
    grid_adjacency,
    injectivity_scan,
    load_embed_config,
    replacement_path,
    replacement_tree,
    scalar_fields,
    star_fingerprint,
)
from backend.geometry.errors import ConfigError, CycleError, FingerprintError, GeometryError, ScanError
from backend.geometry.families import StarParams, comb_piece_bound, rho_embed, star_tree
from backend.geometry.gh_solver import gh_tree_interval
from backend.geometry.metric_core import four_point_defect, restrict, validate_metric
from backend.geometry.tree_graph import tree_from_edges

ROOT = Path(__file__).resolve().parents[2]

SEGMENT = {"basepoint": "a", "edges": [["a", "b", 1.0]]}
TRIPOD = {"basepoint": "c", "edges": [["c", "l1", 1.0], ["c", "l2", 1.0], ["c", "l3", 1.0]]}


def small_config(**overrides):
    data = {
        "grid": {"size": 2, "lo": 0.25, "hi": 0.75},
        "marked": [[0, 0], [1, 1]],
        "endpoints": [SEGMENT, TRIPOD],
        "m": 2,
        "branches": 3,
        "eps": 0.25,
        "depth": 4,
    }
    data.update(overrides)
    return embed_config_from_dict(data)


@pytest.fixture(scope="module")
def cfg():
    return small_config()


# --- configuration ---

def test_marked_points_outside_the_grid_are_appended(cfg):
    assert cfg.coords.shape == (6, 2)
    assert cfg.marked == [4, 5]
    assert cfg.interior == [0, 1, 2, 3]
    assert cfg.diameter == pytest.approx(math.sqrt(2))


def test_marked_grid_points_are_reused():
    cfg = embed_config_from_dict(
        {"grid": {"size": 3}, "marked": [[0, 0], [1, 1]], "endpoints": [SEGMENT, TRIPOD], "m": 1}
    )
    assert cfg.coords.shape == (9, 2)
    assert cfg.marked == [0, 8]


@pytest.mark.parametrize(
    "overrides",
    [
        {"marked": [[0, 0]]},
        {"marked": [[0, 0], [0, 0]]},
        {"m": 0},
        {"endpoints": [{"basepoint": "zz", "edges": [["a", "b", 1.0]]}, TRIPOD]},
        {"endpoints": [{"basepoint": "a"}, TRIPOD]},
    ],
)
def test_invalid_configurations_raise_config_error(overrides):
    with pytest.raises(ConfigError):
        small_config(**overrides)


def test_cyclic_endpoint_is_rejected():
    loop = {"basepoint": "a", "edges": [["a", "b", 1.0], ["b", "c", 1.0], ["c", "a", 1.0]]}
    with pytest.raises(CycleError):
        small_config(endpoints=[loop, TRIPOD])


def test_load_embed_config_resolves_tree_files(tmp_path):
    tree = tree_from_edges(["a", "b"], [("a", "b", 2.0)])
    (tmp_path / "seg.json").write_text(serialize_tree(tree))
    (tmp_path / "lab.yaml").write_text(
        "grid: {size: 2}\n"
        "marked: [[0, 0], [1, 1]]\n"
        "endpoints:\n"
        "  - {file: seg.json, basepoint: a}\n"
        "  - {basepoint: c, edges: [[c, l1, 1.0], [c, l2, 1.0], [c, l3, 1.0]]}\n"
        "m: 2\n"
    )
    cfg = load_embed_config(tmp_path / "lab.yaml")
    assert cfg.endpoints[0].distance("a", "b") == 2.0
    assert cfg.marked == [0, 3]


def test_shipped_config_loads():
    cfg = load_embed_config(ROOT / "config.yaml")
    assert cfg.grid_size == 5
    assert len(cfg.interior) == 25
    assert cfg.branches == 4


# --- F(u, k) ---

def test_scalar_fields_at_the_grid_center():
    cfg = embed_config_from_dict(
        {"grid": {"size": 3}, "marked": [[0, 0], [1, 1]], "endpoints": [SEGMENT, TRIPOD], "m": 1}
    )
    fields = scalar_fields(cfg, 4)
    assert fields.phi == pytest.approx(0.25)
    assert fields.xi == pytest.approx(8)
    assert fields.sigma == pytest.approx([1, 1])


def test_scalar_fields_at_marked_points(cfg):
    fields = scalar_fields(cfg, 4)
    assert fields.sigma == [math.inf, 0.0]
    assert fields.phi == 0
    assert fields.xi == 0


def test_scalar_fields_off_center(cfg):
    fields = scalar_fields(cfg, 0)
    assert fields.phi == pytest.approx(0.125)
    assert fields.xi == pytest.approx(4)
    assert fields.sigma == pytest.approx([3, 1 / 3])


def test_marked_points_map_to_their_endpoints(cfg):
    assert build_F(cfg, 4, 1) is cfg.endpoints[0]
    assert build_F(cfg, 5, 2) is cfg.endpoints[1]
    with pytest.raises(GeometryError):
        build_F(cfg, 0, 3)


def test_build_F_is_a_metric_tree(cfg):
    W = build_F(cfg, 1, 1)
    assert validate_metric(W.space).ok
    sample = list(range(0, W.size, max(1, W.size // 30)))
    assert four_point_defect(restrict(W.space, sample)) <= 1e-9
    assert W.metadata["k"] == 1


def test_star_leaves_sit_xi_times_one_plus_a_from_the_wedge_point(cfg):
    W = build_F(cfg, 0, 1)
    a = rho_embed(cfg.coords[0], 1, cfg.m, cfg.branches)
    for i, ai in enumerate(a, start=1):
        assert W.distance("p", f"S/branch:{i}:1") == pytest.approx(4 * (1 + ai))


def test_replacement_tree_keeps_host_distances():
    X = tree_from_edges(["c", "l1", "l2", "l3"], [("c", "l1", 1), ("c", "l2", 1.5), ("c", "l3", 0.5)])
    Y = replacement_tree(X, 0.3, depth=4)
    keep = [Y.index_of(v) for v in X.vertices]
    assert np.allclose(Y.dist[np.ix_(keep, keep)], X.dist, atol=1e-12)
    assert Y.metadata["replacement_s"] == 0.3
    assert validate_metric(Y.space).ok


# --- fingerprints and injectivity ---

def test_star_fingerprint_recovers_branch_lengths():
    T = star_tree(StarParams(a=[0.3, 0.1, 0.02], scale=2, eps=0.25))
    fp = star_fingerprint(T)
    assert fp.xi == pytest.approx(2)
    assert fp.a == pytest.approx([0.3, 0.1, 0.02])
    assert fp.center == STAR_CENTER
    assert fp.margin == pytest.approx(0.4)


def test_star_fingerprint_of_build_F(cfg):
    fp = star_fingerprint(build_F(cfg, 0, 2))
    assert fp.xi == pytest.approx(4)
    assert fp.a == pytest.approx(rho_embed(cfg.coords[0], 2, cfg.m, cfg.branches))
    assert fp.center == f"S/{STAR_CENTER}"


def test_segment_has_no_fingerprint():
    with pytest.raises(FingerprintError):
        star_fingerprint(tree_from_edges(["a", "b"], [("a", "b", 1)]))


def test_short_second_leg_is_not_a_certified_star():
    # margin 0.5 is clear, but a comb at phi = 1 has components up to 1.5 long
    T = tree_from_edges(["c", "x", "y", "z"], [("c", "x", 32), ("c", "y", 1), ("c", "z", 0.5)])
    with pytest.raises(FingerprintError, match="comb components"):
        star_fingerprint(T)


@pytest.mark.parametrize("u, k", [(0, 1), (1, 2), (3, 1)])
def test_build_F_second_leg_clears_its_combs(cfg, u, k):
    fp = star_fingerprint(build_F(cfg, u, k))
    assert fp.xi * fp.a[0] > comb_piece_bound(fp.xi / 32)


def test_endpoints_without_a_star_have_no_fingerprint(cfg):
    assert endpoint_fingerprints(cfg) == [None, None]


def test_injectivity_scan_separates_every_cell(cfg):
    report = injectivity_scan(cfg)
    assert len(report.cells) == 8
    assert report.collisions == []
    assert report.min_separation > cfg.tol
    assert report.max_roundtrip_error <= 1e-6
    assert report.k_star == 1
    assert report.ok


def test_injectivity_scan_reports_repeated_cells(cfg):
    report = injectivity_scan(cfg, cells=[(0, 1), (0, 1)])
    assert report.collisions == [(0, 1)]
    assert not report.ok


def test_injectivity_scan_rejects_marked_cells(cfg):
    with pytest.raises(ScanError):
        injectivity_scan(cfg, cells=[(4, 1)])


# --- continuity ---

def test_grid_adjacency_skips_marked_points():
    cfg = embed_config_from_dict(
        {"grid": {"size": 3}, "marked": [[0, 0], [1, 1]], "endpoints": [SEGMENT, TRIPOD], "m": 1}
    )
    pairs = grid_adjacency(cfg)
    assert (0, 1) not in pairs and (7, 8) not in pairs
    assert (4, 5) in pairs and (1, 2) in pairs
    assert len(pairs) == 8


def test_endpoint_is_at_distance_zero_from_itself(cfg):
    interval = gh_tree_interval(build_F(cfg, 4, 1), cfg.endpoints[0], cfg.eps, cfg.gh_cap)
    assert interval.lo == 0
    assert interval.hi <= 2 * cfg.eps


def test_continuity_scan_margins_are_nonnegative(cfg):
    rows = continuity_scan(cfg)
    assert len(rows) == 4
    assert all(row.margin >= 0 for row in rows)
    assert all(row.bound > 0 for row in rows)


def test_continuity_scan_rejects_marked_pairs(cfg):
    with pytest.raises(ScanError):
        continuity_scan(cfg, pairs=[(0, 4)])


def test_analytic_bound_shrinks_as_the_grid_refines():
    data = read_yaml(ROOT / "config.yaml")
    worst = []
    for size in (3, 5, 9, 17):
        data["grid"]["size"] = size
        fine = embed_config_from_dict(data, ROOT)
        worst.append(max(analytic_bound(fine, u, v, 1) for u, v in grid_adjacency(fine)))
    assert all(b < a for a, b in zip(worst, worst[1:]))


def test_replacement_path_along_close_parameters():
    X = tree_from_edges(["a", "b"], [("a", "b", 1)])
    eps = 2.0**-4
    steps = replacement_path(X, [0, 0.3, 0.31], eps=eps, depth=4)
    assert [step.s for step in steps] == [0, 0.3, 0.31]
    assert steps[0].hi is None
    assert steps[2].bound == pytest.approx(0.01)
    assert steps[2].hi <= steps[2].bound + 2 * eps + 1e-9
    assert steps[1].tree.metadata["replacement_s"] == 0.3


@pytest.mark.parametrize("grid", [[0.3, 0.1], [0, 1.5]])
def test_replacement_path_rejects_bad_grids(grid):
    with pytest.raises(GeometryError):
        replacement_path(tree_from_edges(["a", "b"], [("a", "b", 1)]), grid)


def test_shipped_config_is_injective():
    cfg = load_embed_config(ROOT / "config.yaml")
    report = injectivity_scan(cfg)
    assert len(report.fingerprints) == 75
    assert report.collisions == []
    assert report.max_roundtrip_error <= 1e-6
    assert report.k_star is not None


def test_embedding_map_uses_the_selected_branch(cfg):
    assert embedding_map(cfg, 0).vertices == build_F(cfg, 0, 1).vertices
    assert embedding_map(cfg, 2, k_star=2).metadata["k"] == 2
