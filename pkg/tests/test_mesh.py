import numpy as np
import pytest

import cdii
from cdii.mesh import basis_gradients, build_uniform_mesh, centroids, locate_electrodes


def signed_area(nodes, tri):
    a, b, c = nodes[tri[0]], nodes[tri[1]], nodes[tri[2]]
    return 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))


def test_counts_small_grids():
    m = build_uniform_mesh(4)
    assert m.node_count == 16
    assert m.triangle_count == 18
    m = build_uniform_mesh(2)
    assert m.node_count == 4
    assert m.triangle_count == 2
    assert m.h == 1.0


@pytest.mark.parametrize("n", range(2, 13))
def test_triangle_count_formula(n):
    m = build_uniform_mesh(n)
    assert m.triangle_count == 2 * (n - 1) ** 2


def test_rejects_degenerate_grid():
    with pytest.raises(ValueError):
        build_uniform_mesh(1)
    with pytest.raises(ValueError):
        build_uniform_mesh(0)


def test_corner_and_interior_adjacency():
    # 4x4 grid, ids 0-based: the southwest corner touches one triangle, the
    # southeast/northwest corners two, and the interior node (1/3, 2/3)
    # (0-based id 9) six.  Counted by brute-force membership scan.
    m = build_uniform_mesh(4)

    def adjacent(node):
        return int(np.sum(np.any(m.triangles == node, axis=1)))

    assert adjacent(0) == 1
    assert adjacent(3) == 2
    assert adjacent(12) == 2
    assert adjacent(9) == 6


def test_areas():
    m = build_uniform_mesh(5)
    areas = np.array([abs(signed_area(m.nodes, t)) for t in m.triangles])
    assert np.allclose(areas, m.h ** 2 / 2, rtol=1e-13)
    assert abs(areas.sum() - 1.0) < 1e-12


def test_basis_gradients_unit_cell():
    m = build_uniform_mesh(2)  # h = 1
    assert np.array_equal(basis_gradients(m, 0),
                          np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]))
    assert np.array_equal(basis_gradients(m, 1),
                          np.array([[1.0, 1.0], [0.0, -1.0], [-1.0, 0.0]]))


def test_basis_gradients_sum_to_zero():
    m = build_uniform_mesh(6)
    for tid in range(m.triangle_count):
        assert np.allclose(basis_gradients(m, tid).sum(axis=0), 0.0, atol=1e-12)


def test_basis_gradients_index_checked():
    m = build_uniform_mesh(3)
    with pytest.raises(ValueError):
        basis_gradients(m, m.triangle_count)
    with pytest.raises(ValueError):
        basis_gradients(m, -1)


def test_partition_of_unity():
    # The three plane functions of a triangle are 1 at their own vertex and
    # sum to 1 everywhere on the triangle.
    m = build_uniform_mesh(5)
    cent = centroids(m)
    for tid in (0, 1, 7, 12, m.triangle_count - 1):
        grads = basis_gradients(m, tid)
        verts = m.nodes[m.triangles[tid]]

        def plane_values(point):
            return np.array([1.0 + grads[i] @ (point - verts[i]) for i in range(3)])

        assert abs(plane_values(cent[tid]).sum() - 1.0) < 1e-12
        for j in range(3):
            vals = plane_values(verts[j])
            assert np.allclose(vals, np.eye(3)[j], atol=1e-12)


def test_boundary_edges():
    m = build_uniform_mesh(6)
    n = m.side_nodes
    assert len(m.boundary_edges) == 4 * (n - 1)
    for side in cdii.SIDES:
        assert len(m.edges_on_side(side)) == n - 1
        assert np.all(m.edge_sides[m.edges_on_side(side)] == side)
    # each boundary edge has length h and belongs to exactly one triangle
    tri_edge_sets = [
        {frozenset((t[0], t[1])), frozenset((t[1], t[2])), frozenset((t[0], t[2]))}
        for t in m.triangles
    ]
    for p, q in m.boundary_edges:
        assert abs(np.linalg.norm(m.nodes[p] - m.nodes[q]) - m.h) < 1e-14
        owners = sum(frozenset((p, q)) in s for s in tri_edge_sets)
        assert owners == 1


def test_arrays_immutable():
    m = build_uniform_mesh(3)
    with pytest.raises(ValueError):
        m.nodes[0, 0] = 2.0
    with pytest.raises(ValueError):
        m.triangles[0, 0] = 5


def test_locate_full_bottom():
    m = build_uniform_mesh(4)
    setup = locate_electrodes(m, [("bottom", (0.0, 1.0)), ("top", (0.0, 1.0))],
                              [0.1, 0.1])
    assert len(setup.electrodes[0].edge_ids) == 3
    assert setup.electrodes[0].length == pytest.approx(1.0, abs=1e-15)


def test_locate_two_full_sides():
    m = build_uniform_mesh(10)
    setup = locate_electrodes(m, [("bottom", (0.0, 1.0)), ("top", (0.0, 1.0))],
                              [8.3e-3, 8.3e-3])
    assert setup.count == 2
    assert np.allclose(setup.lengths, 1.0)
    assert np.allclose(setup.impedances, 8.3e-3)


def test_locate_partial_spans():
    m = build_uniform_mesh(5)  # h = 0.25
    setup = locate_electrodes(m, [("left", (0.25, 0.75)), ("right", (0.0, 0.5))],
                              [1.0, 2.0])
    assert len(setup.electrodes[0].edge_ids) == 2
    assert setup.electrodes[0].length == pytest.approx(0.5)
    assert len(setup.electrodes[1].edge_ids) == 2


def test_locate_rejects_overlap():
    m = build_uniform_mesh(5)
    with pytest.raises(ValueError, match="shares"):
        locate_electrodes(m, [("bottom", (0.0, 0.5)), ("bottom", (0.25, 1.0))],
                          [1.0, 1.0])


def test_locate_rejects_misaligned():
    m = build_uniform_mesh(4)
    with pytest.raises(ValueError, match="align"):
        locate_electrodes(m, [("bottom", (0.0, 0.5)), ("top", (0.0, 1.0))],
                          [1.0, 1.0])


def test_locate_rejects_bad_impedance():
    m = build_uniform_mesh(4)
    with pytest.raises(ValueError, match="impedance"):
        locate_electrodes(m, [("bottom", (0.0, 1.0)), ("top", (0.0, 1.0))],
                          [1.0, 0.0])


def test_locate_rejects_empty_span():
    m = build_uniform_mesh(4)
    with pytest.raises(ValueError):
        locate_electrodes(m, [("bottom", (0.5, 0.5)), ("top", (0.0, 1.0))],
                          [1.0, 1.0])


def test_nodes_on_side_order():
    m = build_uniform_mesh(3)
    assert np.array_equal(m.nodes_on_side("bottom"), [0, 1, 2])
    assert np.array_equal(m.nodes_on_side("right"), [2, 5, 8])
    assert np.array_equal(m.nodes_on_side("top"), [6, 7, 8])
    assert np.array_equal(m.nodes_on_side("left"), [0, 3, 6])
