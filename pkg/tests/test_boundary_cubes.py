from __future__ import annotations

import numpy as np
import pytest

from gmtlab import boundary_cubes, geometry
from gmtlab.boundary_cubes import (EmptyCube, InvalidRatio, ZeroMass,
                                   bbeta, beta_value, build_metric_cubes,
                                   carleson_check, dense_subset,
                                   good_cube_below, stray_point_family,
                                   verify_cube_axioms)

from conftest import flat_square_cloud, lipschitz_graph_scene, two_plane_cloud


# frozen output of a 252-normal x 39-offset plane sweep over the two-plane
# cloud below (h=1/16, extent 4, separation 0.15, cube side 0.625); the
# minimizing plane is the exact midplane
TWO_PLANE_SWEEP_MIN = 0.2592838827718412


def collinear_cloud():
    pts = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]], dtype=float)
    return geometry.make_cloud(pts, spacing=1.0, surface_dim=2)


@pytest.fixture(scope="module")
def plane_tree():
    cloud = flat_square_cloud(h=1.0 / 32.0)
    return build_metric_cubes(cloud, 0.5)


# ---------------------------------------------------------------------------
# construction


def test_single_point_cloud_repeats_one_cube():
    cloud = geometry.make_cloud(np.array([[0.5, 0.5, 0.5]]), spacing=0.1,
                                surface_dim=2)
    tree = build_metric_cubes(cloud, 0.5)
    for level in tree.level_ids:
        cubes = tree.levels[level]
        assert len(cubes) == 1
        assert cubes[0].members.tolist() == [0]


def test_four_collinear_points_split_into_known_pairs():
    # hand enumeration: the level-(-1) net keeps endpoints 0 and 3; points 1
    # and 2 join their nearest endpoint, and nothing changes one level down
    tree = build_metric_cubes(collinear_cloud(), 0.5)
    assert tree.root().members.tolist() == [0, 1, 2, 3]
    fine = tree.levels[tree.level_ids[1]]
    got = {c.center_id: c.members.tolist() for c in fine}
    assert got == {0: [0, 1], 3: [2, 3]}


def test_levels_partition_the_cloud_exactly(plane_tree):
    n = len(plane_tree.cloud)
    for level in plane_tree.level_ids:
        seen = np.concatenate([c.members for c in plane_tree.levels[level]])
        assert len(seen) == n
        assert np.array_equal(np.sort(seen), np.arange(n))


def test_net_ratio_outside_half_is_rejected():
    with pytest.raises(InvalidRatio):
        build_metric_cubes(collinear_cloud(), 0.7)


# ---------------------------------------------------------------------------
# axiom verification


def test_fresh_trees_have_zero_violations(plane_tree):
    rep = verify_cube_axioms(plane_tree)
    assert rep.ok
    assert rep.violations == []
    assert rep.n_cubes == plane_tree.n_cubes()


def test_lipschitz_graph_cloud_passes_all_axioms():
    oracle = lipschitz_graph_scene()
    cloud = geometry.cloud_from_oracle(oracle, 1.0 / 16.0, surface_dim=2)
    assert len(cloud) >= 1000
    tree = build_metric_cubes(cloud, 0.5)
    rep = verify_cube_axioms(tree)
    assert rep.ok, rep.violations[:3]


def test_reassigned_member_is_detected():
    tree = build_metric_cubes(collinear_cloud(), 0.5)
    fine_level = tree.level_ids[1]
    a, b = tree.levels[fine_level][0], tree.levels[fine_level][1]
    moved = a.members[-1]
    a.members = a.members[:-1]
    b.members = np.sort(np.append(b.members, moved))
    rep = verify_cube_axioms(tree)
    assert not rep.ok


# ---------------------------------------------------------------------------
# flatness


def test_plane_cloud_is_flat_to_sampling_resolution(plane_tree):
    h = plane_tree.cloud.spacing
    for level in plane_tree.level_ids[1:4]:
        cubes = plane_tree.levels[level]
        cube = cubes[len(cubes) // 2]
        rec = bbeta(plane_tree, cube, M=3.0, budget=120)
        assert rec.value <= 1e-9 + 2.0 * h / cube.side


def test_two_plane_cloud_scores_the_gap_over_the_side():
    cloud = two_plane_cloud(h=1.0 / 16.0, extent=4.0, separation=0.15)
    tree = build_metric_cubes(cloud, 0.5)
    lvl = min(tree.level_ids, key=lambda n: abs(tree.side(n) - 0.625))
    cubes = tree.levels[lvl]
    dist = [np.linalg.norm(c.center(cloud)) for c in cubes]
    cube = cubes[int(np.argmin(dist))]
    assert cube.side == pytest.approx(0.625)
    rec = bbeta(tree, cube, M=3.0, budget=120)
    expected = 0.15 / cube.side
    assert rec.value == pytest.approx(TWO_PLANE_SWEEP_MIN, abs=1e-5)
    assert rec.value == pytest.approx(expected, rel=0.10)


def test_steep_sawtooth_graph_is_not_flat_at_tooth_scale():
    oracle = lipschitz_graph_scene(slope=1.0, period=0.5, n_teeth=8)
    cloud = geometry.cloud_from_oracle(oracle, 1.0 / 32.0, surface_dim=2)
    tree = build_metric_cubes(cloud, 0.5)
    lvl = min(tree.level_ids, key=lambda n: abs(tree.side(n) - 0.5))
    cubes = tree.levels[lvl]
    mid = np.array([2.0, 0.5, 0.0])
    cube = cubes[int(np.argmin(
        [np.linalg.norm(c.center(cloud) - mid) for c in cubes]))]
    rec = bbeta(tree, cube, M=3.0, budget=120)
    assert rec.value >= 0.2


def test_search_never_beats_its_certified_upper_bound(plane_tree):
    cubes = plane_tree.levels[plane_tree.level_ids[2]]
    cube = cubes[0]
    short = bbeta(plane_tree, cube, M=3.0, budget=2)
    long = bbeta(plane_tree, cube, M=3.0, budget=120)
    assert long.value <= short.value + 1e-12


def test_beta_value_invariant_under_rigid_motion():
    cloud = flat_square_cloud(h=1.0 / 32.0)
    theta = 0.3
    rot = np.array([[np.cos(theta), -np.sin(theta), 0.0],
                    [np.sin(theta), np.cos(theta), 0.0],
                    [0.0, 0.0, 1.0]])
    moved = geometry.make_cloud(cloud.points @ rot.T, spacing=cloud.spacing,
                                surface_dim=2)
    center = np.array([0.5, 0.5, 0.0])
    ell = 0.3
    v0 = beta_value(cloud, center, ell, 3.0, center, [0, 0, 1.0])[0]
    v1 = beta_value(moved, rot @ center, ell, 3.0, rot @ center,
                    rot @ np.array([0, 0, 1.0]))[0]
    assert abs(v0 - v1) <= 1e-9 + 0.1 * cloud.spacing / ell


def test_empty_dilated_ball_raises(plane_tree):
    with pytest.raises(EmptyCube):
        beta_value(plane_tree.cloud, np.array([50.0, 50.0, 50.0]), 0.1, 3.0,
                   [0, 0, 0], [0, 0, 1.0])


# ---------------------------------------------------------------------------
# packing ratios


def test_empty_family_has_zero_ratios(plane_tree):
    rep = carleson_check(plane_tree, lambda c: False, [plane_tree.root()])
    assert rep.ratios == [0.0]
    assert rep.max_ratio == 0.0


def test_single_level_family_is_a_partition_of_mass(plane_tree):
    level = plane_tree.level_ids[2]
    rep = carleson_check(plane_tree, lambda c: c.level == level,
                         [plane_tree.root()])
    assert rep.ratios[0] == pytest.approx(1.0, rel=1e-12)


def test_stray_family_is_empty_when_marks_cover_the_cloud(plane_tree):
    pred = stray_point_family(plane_tree, np.arange(len(plane_tree.cloud)),
                              M=3.0, delta=0.25)
    rep = carleson_check(plane_tree, pred, [plane_tree.root()])
    assert rep.max_ratio == 0.0


# ---------------------------------------------------------------------------
# dense subsets


def brute_dense_subset(tree, e_idx, top):
    """Literal top-down restatement with python sets (independent coding)."""
    e = sorted(int(i) for i in set(e_idx))
    c_e, c_top = len(e), len(top.members)
    e_set = set(e)
    stopping = []

    def walk(cube):
        ce = sum(1 for m in cube.members.tolist() if m in e_set)
        if ce == 0:
            return
        if 2 * ce * c_top <= c_e * len(cube.members):
            stopping.append(cube)
            return
        for child in cube.children:
            walk(child)

    for child in top.children:
        walk(child)
    removed = set()
    for cube in stopping:
        removed.update(cube.members.tolist())
    survivors = [i for i in e if i not in removed]
    return survivors, {c.key for c in stopping}


def test_full_marking_keeps_everything(plane_tree):
    top = plane_tree.root()
    res = dense_subset(plane_tree, np.arange(len(plane_tree.cloud)), top)
    assert res.stopping == []
    assert np.array_equal(res.e_prime, np.arange(len(plane_tree.cloud)))
    assert res.density_constant == pytest.approx(2.0)


def test_two_filled_children_survive_at_quarter_density():
    # 16 points in a 4x4 grid: mark the 8 points of two level-down cubes;
    # delta = 1/4, marked children have density ~1/2 > delta, unmarked ones
    # never meet the marks, so nothing stops
    pts = np.stack(np.meshgrid(np.arange(4.0), np.arange(4.0),
                               indexing="ij"), axis=-1).reshape(-1, 2)
    pts = np.column_stack([pts, np.zeros(len(pts))])
    cloud = geometry.make_cloud(pts, spacing=1.0, surface_dim=2)
    tree = build_metric_cubes(cloud, 0.5)
    top = tree.root()
    kids = sorted(top.children, key=lambda c: c.center_id)
    marked = np.sort(np.concatenate([kids[0].members, kids[1].members]))
    assert len(marked) >= len(top.members) // 4
    res = dense_subset(tree, marked, top)
    assert np.array_equal(res.e_prime, marked)
    assert res.stopping == []


def hand_built_tree():
    """Three explicit levels over 16 points on a line: a root, a crowded left
    child and a thin right child, then singletons under the right child."""
    pts = np.column_stack([np.arange(16.0), np.zeros(16), np.zeros(16)])
    cloud = geometry.make_cloud(pts, spacing=1.0, surface_dim=2)
    root = boundary_cubes.MetricCube(0, 0, 16.0, np.arange(16))
    left = boundary_cubes.MetricCube(1, 0, 8.0, np.arange(12))
    right = boundary_cubes.MetricCube(1, 12, 8.0, np.arange(12, 16))
    leaves = [boundary_cubes.MetricCube(2, i, 4.0, np.array([i]))
              for i in range(12, 16)]
    root.children = [left, right]
    left.parent = right.parent = root
    right.children = leaves
    for leaf in leaves:
        leaf.parent = right
    levels = {0: [root], 1: [left, right], 2: leaves}
    return boundary_cubes.CubeTree(cloud, 0.5, levels, 2)


def test_isolated_point_in_a_sparse_child_is_pruned():
    # marks: 8 points crowding the left child plus one straggler on the
    # right; delta = 9/32, the right child carries density 1/4 <= delta and
    # stops, and at least half the marked mass survives
    tree = hand_built_tree()
    top = tree.root()
    marked = np.array([0, 1, 2, 3, 4, 5, 6, 7, 13])
    res = dense_subset(tree, marked, top)
    assert res.e_prime.tolist() == [0, 1, 2, 3, 4, 5, 6, 7]
    assert [c.key for c in res.stopping] == [(1, 12)]
    assert len(res.e_prime) >= len(marked) / 2.0
    got, stop_keys = brute_dense_subset(tree, marked, top)
    assert res.e_prime.tolist() == got
    assert {c.key for c in res.stopping} == stop_keys


def test_dense_subset_matches_brute_force_on_random_instances():
    rng = np.random.default_rng(41)
    for trial in range(25):
        n = int(rng.integers(24, 90))
        pts = rng.random((n, 3)) * np.array([1.0, 1.0, 0.05])
        cloud = geometry.make_cloud(pts, spacing=0.08, surface_dim=2)
        tree = build_metric_cubes(cloud, 0.5)
        top = tree.root()
        k = int(rng.integers(1, n))
        marked = np.sort(rng.choice(n, size=k, replace=False))
        res = dense_subset(tree, marked, top)
        got, stop_keys = brute_dense_subset(tree, marked, top)
        assert res.e_prime.tolist() == got
        assert {c.key for c in res.stopping} == stop_keys
        assert len(res.e_prime) * 2 >= len(marked)
        # postcondition: every cube meeting the survivors is dense in marks
        e_set = set(marked.tolist())
        surv = set(res.e_prime.tolist())
        for cube in tree.cubes():
            if cube is top or not surv.intersection(cube.members.tolist()):
                continue
            ce = sum(1 for m in cube.members.tolist() if m in e_set)
            assert 2 * ce * len(top.members) > len(marked) * len(cube.members)


def test_empty_marking_raises(plane_tree):
    with pytest.raises(ZeroMass):
        dense_subset(plane_tree, np.array([], dtype=int), plane_tree.root())


# ---------------------------------------------------------------------------
# good cubes below


def test_no_bad_family_returns_the_cube_itself(plane_tree):
    top = plane_tree.root()
    res = dense_subset(plane_tree, np.arange(len(plane_tree.cloud)), top)
    got = good_cube_below(plane_tree, top, lambda c: False, res.e_prime,
                          packing_constant=4.0, density_constant=4.0)
    assert got is top


def test_bad_root_yields_a_child_meeting_the_survivors(plane_tree):
    top = plane_tree.root()
    res = dense_subset(plane_tree, np.arange(len(plane_tree.cloud)), top)
    got = good_cube_below(plane_tree, top, lambda c: c is top, res.e_prime,
                          packing_constant=4.0, density_constant=4.0)
    assert got in top.children
    assert np.intersect1d(got.members, res.e_prime).size > 0


def test_flat_cloud_good_cube_is_found_shallow(plane_tree):
    top = plane_tree.root()
    e_idx = np.arange(len(plane_tree.cloud))
    res = dense_subset(plane_tree, e_idx, top)
    stray = stray_point_family(plane_tree, res.e_prime, M=3.0, delta=0.25)

    def bad(cube):
        if stray(cube):
            return True
        rec = bbeta(plane_tree, cube, M=3.0, budget=40, threshold=0.1)
        return rec.value >= 0.1

    got = good_cube_below(plane_tree, top, bad, res.e_prime,
                          packing_constant=4.0, density_constant=4.0)
    assert got.level - top.level <= 2
