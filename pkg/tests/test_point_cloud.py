import numpy as np
import pytest

from meshless_stokes.errors import GeometryError, UnisolvencyError
from meshless_stokes.point_cloud import (
    INTERIOR,
    SOLID,
    WALL,
    NodeSet,
    compose_parents,
    refine_nodes,
    seed_uniform,
    support_radius,
)


def _line_nodes(xs):
    n = len(xs)
    return NodeSet(
        np.column_stack([xs, np.zeros(n)]), np.ones(n), np.zeros(n), np.full(n, -1),
        np.zeros((n, 2)), np.full(n, np.nan),
    )


def test_seed_uniform_lattice_and_wall(coarse_nodes):
    nodes = coarse_nodes
    assert len(nodes) == 96
    assert np.count_nonzero(nodes.kind == INTERIOR) == 64
    assert np.count_nonzero(nodes.kind == WALL) == 32
    np.testing.assert_allclose(nodes.spacing, 0.25)
    np.testing.assert_allclose(nodes.positions[0], [-0.875, -0.875])
    assert nodes.level == 0
    assert np.all(nodes.parent == -1)


def test_seed_keeps_interior_nodes_off_the_solid(circle_domain):
    nodes = seed_uniform(circle_domain, 0.25)
    interior = nodes.positions[nodes.kind == INTERIOR]
    assert np.all(circle_domain.clearance(interior) >= 0.0625)
    solid = nodes.kind == SOLID
    assert np.count_nonzero(solid) == round(2 * np.pi * 0.3 / 0.25)
    assert np.all(nodes.body[solid] == 0)
    assert set(nodes.boundary_ids[solid]) == {1}
    assert set(nodes.boundary_ids[nodes.kind == WALL]) == {0}


def test_seed_rejects_bad_spacing(empty_domain):
    with pytest.raises(GeometryError):
        seed_uniform(empty_domain, 0.0)


def test_neighbors_are_strictly_inside_radius():
    nodes = _line_nodes([0.0, 1.0, 0.5])
    np.testing.assert_array_equal(nodes.neighbors(0, 1.0), [0, 2])
    np.testing.assert_array_equal(nodes.neighbors(0, 1.5), [0, 1, 2])
    lists = nodes.neighbor_lists([1.0, 0.4, 0.6])
    np.testing.assert_array_equal(lists[1], [1])
    np.testing.assert_array_equal(lists[2], [0, 1, 2])


def test_too_few_neighbors_raises():
    nodes = _line_nodes([0.0, 1.0, 0.5])
    with pytest.raises(UnisolvencyError) as info:
        nodes.neighbors(1, 0.6, min_count=3)
    assert info.value.node == 1


def test_refine_interior_node_into_four_children(coarse_nodes, empty_domain):
    fine = refine_nodes(coarse_nodes, [0], empty_domain)

    assert len(fine) == 96 + 3
    assert fine.level == 1
    kids = np.flatnonzero(fine.parent == 0)
    assert len(kids) == 4
    np.testing.assert_allclose(fine.spacing[kids], 0.125)
    expected = np.array([[-0.9375, -0.9375], [-0.8125, -0.9375], [-0.9375, -0.8125], [-0.8125, -0.8125]])
    np.testing.assert_allclose(fine.positions[kids], expected)
    # everything else is carried over unchanged
    others = fine.parent != 0
    np.testing.assert_allclose(fine.positions[others], coarse_nodes.positions[1:])


def test_refine_wall_corner_splits_along_both_edges(coarse_nodes, empty_domain):
    corner = 64
    np.testing.assert_allclose(coarse_nodes.positions[corner], [-1.0, -1.0])
    fine = refine_nodes(coarse_nodes, [corner], empty_domain)

    kids = np.flatnonzero(fine.parent == corner)
    assert len(kids) == 2
    np.testing.assert_allclose(fine.spacing[kids], 0.125)
    np.testing.assert_allclose(fine.positions[kids], [[-1.0, -0.9375], [-0.9375, -1.0]], atol=1e-12)
    np.testing.assert_allclose(fine.normals[kids], [[-1.0, 0.0], [0.0, -1.0]], atol=1e-12)
    assert np.all(fine.kind[kids] == WALL)


def test_children_groups(coarse_nodes, empty_domain):
    fine = refine_nodes(coarse_nodes, [0, 64], empty_domain)
    groups = fine.children(len(coarse_nodes))
    assert len(groups) == len(coarse_nodes)
    assert len(groups[0]) == 4
    assert len(groups[64]) == 2
    assert all(len(g) == 1 for k, g in enumerate(groups) if k not in (0, 64))


def test_compose_parents_skips_intermediate_round(coarse_nodes, empty_domain):
    mid = refine_nodes(coarse_nodes, [0], empty_domain)
    grand = refine_nodes(mid, [int(np.flatnonzero(mid.parent == 0)[0])], empty_domain)
    composed = compose_parents(grand, mid)

    assert composed.level == 1
    assert np.count_nonzero(composed.parent == 0) == 7
    assert np.all(compose_parents(mid, coarse_nodes).parent == -1)


def test_support_radius():
    assert support_radius(2, 0.1) == pytest.approx(0.26)
    assert support_radius(6, 1.0) == pytest.approx(5.4)
    with pytest.raises(GeometryError):
        support_radius(3, 0.1)


def test_to_csv_header(coarse_nodes, tmp_path):
    path = tmp_path / "nodes.csv"
    coarse_nodes.to_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "x,y,dx,kind,level,parent"
    assert len(lines) == 97
