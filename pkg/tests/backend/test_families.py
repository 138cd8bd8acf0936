import itertools
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from pydantic import ValidationError

from backend.geometry.errors import FingerprintError, GeometryError
from backend.geometry.families import (
    CombParams,
    StarParams,
    c_fun,
    comb_dist,
    comb_hausdorff,
    comb_tree,
    generation_of,
    rho_embed,
    rho_invert,
    star_metric,
    star_tree,
    tau,
    teeth,
    comb_continuity_bound,
)
from backend.geometry.metric_core import four_point_defect, validate_metric
from backend.geometry.tree_graph import deg2_components


def cube_points(branches=3):
    return st.tuples(
        *(st.floats(2.0 ** (-2 * i), 2.0 ** (-2 * i + 1)) for i in range(1, branches + 1))
    ).map(list)


def star_point(name):
    _, i, height = name.split(":")
    return float(height), int(i)


# --- combs ---

@pytest.mark.parametrize(
    "n, s, expected",
    [(0, 0.25, 1.0), (0, 0.5, 1.0), (0, 0.75, 0.5), (0, 1.0, 0.0), (1, 0.3, 0.8), (2, 0.3, 0.0)],
)
def test_c_fun(n, s, expected):
    assert c_fun(n, s) == pytest.approx(expected)


def test_generation_of_handles_dyadic_endpoints():
    assert generation_of(0.5) == 0
    assert generation_of(0.375) == 1
    assert generation_of(0.25) == 1
    assert generation_of(0.2) == 2
    with pytest.raises(GeometryError):
        generation_of(1.0)


def test_comb_dist():
    assert comb_dist((0.5, 0.2), (0.5, 0.7)) == pytest.approx(0.5)
    assert comb_dist((0.0, 0.1), (1.0, 0.2)) == pytest.approx(1.3)
    assert comb_dist((0.25, 0.0), (0.75, 0.0)) == pytest.approx(0.5)


def test_flat_comb_is_a_segment():
    T = comb_tree(CombParams(s=0))
    assert T.vertices == ["spine:0", "spine:1"]
    assert T.distance(0, 1) == 1


def test_comb_half_at_depth_one():
    T = comb_tree(CombParams(s=0.5, depth=1))
    assert T.size == 6
    assert len(T.edges) == 5
    assert T.distance("tooth:0", "tooth:1") == pytest.approx(2.0)
    assert T.distance("spine:0", "tooth:0.5") == pytest.approx(1.0)
    assert T.metadata["truncation_error"] == 0


def test_comb_tooth_heights_by_generation():
    found = teeth(0.375, depth=3)
    heights = {x: h for x, _, h in found}
    assert heights == pytest.approx({0.0: 0.375, 0.25: 0.1875, 0.5: 0.375, 0.75: 0.1875, 1.0: 0.375})
    T = comb_tree(CombParams(s=0.375, depth=3))
    assert T.size == 10
    assert validate_metric(T.space).ok
    assert four_point_defect(T.space) <= 1e-9


def test_comb_scale_multiplies_lengths():
    T = comb_tree(CombParams(s=0.5, scale=0.5, depth=1))
    assert T.distance("tooth:0", "tooth:1") == pytest.approx(1.0)


def test_truncated_comb_reports_error():
    T = comb_tree(CombParams(s=0.01, depth=3))
    assert T.metadata["truncation_error"] == 0.01


@pytest.mark.parametrize("s", [i / 51 for i in range(1, 51)])
def test_component_closures_shrink_with_generation(s):
    n = generation_of(s)
    comps = deg2_components(comb_tree(CombParams(s=s, depth=8)))
    corners = [c for c in comps if {"spine:0", "spine:1"} & set(c.vertices)]
    assert len(corners) == 2
    for comp in corners:
        assert comp.closure_diameter < 1.5 * 2.0**-n
    for comp in comps:
        if comp not in corners:
            assert comp.closure_diameter < 2.0**-n


def test_comb_continuity_bound_values():
    assert comb_continuity_bound(0, 0.3) == 0.3
    assert comb_continuity_bound(1, 0.3) == 0.3
    assert comb_continuity_bound(0.5, 0.52) == pytest.approx(0.0008)
    assert comb_continuity_bound(0.5, 0.9) == pytest.approx(1.4)


@pytest.mark.parametrize(
    "s, t",
    list(itertools.product([0.1, 0.3, 0.5, 0.7], [0.0, 0.01, -0.01, 0.05])),
)
def test_comb_hausdorff_within_bound(s, t):
    eps = 2.0**-6
    assert comb_hausdorff(s, s + t, eps, depth=6) <= comb_continuity_bound(s, s + t) + 2 * eps


@pytest.mark.parametrize("n", range(4))
def test_comb_hausdorff_within_bound_across_a_generation(n):
    eps = 2.0**-8
    width, window = 2.0 ** -(n + 1), 2.0 ** -(n + 2)
    worst = -math.inf
    for i in range(20):
        s = width + width * i / 20
        for j in range(20):
            t = min(1.0, s + window * (2 * (j + 0.5) / 20 - 1))
            excess = comb_hausdorff(s, t, eps) - comb_continuity_bound(s, t) - 2 * eps
            worst = max(worst, excess)
    assert worst <= 0


# --- stars ---

def test_star_tree_vertices_and_distances():
    p = StarParams(a=[0.3, 0.1, 0.02], scale=2, eps=1)
    T = star_tree(p)
    assert T.size == 6
    assert T.vertices[0] == "branch:0:0"
    assert "branch:0:0.5" in T.vertices
    assert T.distance("branch:1:1", "branch:2:1") == pytest.approx(0.8)
    assert star_metric(p, (1, 1), (1, 2)) == pytest.approx(0.8)


def test_star_metric_matches_tree_distances():
    p = StarParams(a=[0.4, 0.07, 0.02], scale=1.5, eps=0.1)
    T = star_tree(p)
    for x, y in itertools.combinations(T.vertices, 2):
        assert T.distance(x, y) == pytest.approx(star_metric(p, star_point(x), star_point(y)))


def test_zero_scale_star_is_a_point():
    T = star_tree(StarParams(a=[0.3], scale=0))
    assert T.vertices == ["branch:0:0"]


@pytest.mark.parametrize("a", [[0.6], [0.3, 0.2], [0.3, 0.1, 0.001]])
def test_star_rejects_points_outside_the_cube(a):
    with pytest.raises(ValidationError):
        StarParams(a=a)


def test_tau():
    assert tau([0.3, 0.1], [0.25, 0.1]) == pytest.approx(0.05)
    assert tau([], []) == 0
    with pytest.raises(GeometryError):
        tau([0.3], [0.3, 0.1])


@settings(deadline=None, max_examples=60)
@given(cube_points(), cube_points(), st.floats(0, 1), st.floats(0, 1), st.integers(0, 3), st.integers(0, 3))
def test_star_metric_moves_by_at_most_twice_tau(a, b, s, t, i, j):
    pa, pb = StarParams(a=a), StarParams(a=b)
    gap = abs(star_metric(pa, (s, i), (t, j)) - star_metric(pb, (s, i), (t, j)))
    assert gap <= 2 * tau(a, b) + 1e-12


# --- fingerprint coordinates ---

def test_rho_embed_corners():
    assert rho_embed((0, 0), 1, 3) == pytest.approx([0.25, 0.0625, 0.015625])
    assert rho_embed((1, 1), 3, 3) == pytest.approx([0.5, 0.125, 0.03125])
    assert rho_embed((0, 0), 1, 3, branches=4)[3] == pytest.approx(0.005859375)


def test_rho_embed_lands_in_the_cube():
    StarParams(a=rho_embed((0.3, 0.8), 2, 5, branches=6))


def test_rho_embed_rejects_bad_input():
    with pytest.raises(GeometryError):
        rho_embed((1.5, 0), 1, 3)
    with pytest.raises(GeometryError):
        rho_embed((0, 0), 4, 3)


@pytest.mark.parametrize("u1, u2, k, m", [(0.3, 0.7, 2, 3), (0, 1, 1, 1), (1, 0, 5, 5)])
def test_rho_invert_recovers_grid_point(u1, u2, k, m):
    assert rho_invert(rho_embed((u1, u2), k, m), m) == pytest.approx((u1, u2, k))


def test_rho_invert_rejects_non_encoding_points():
    with pytest.raises(FingerprintError):
        rho_invert([0.3, 0.1, 2.0**-6 * 1.25], 3)
    with pytest.raises(FingerprintError):
        rho_invert([0.3, 0.1], 3)
