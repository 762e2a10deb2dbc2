import numpy as np
import pytest

import oracles
from penflow import mesh
from penflow.mesh import MeshFormatError, TriMesh, load_msh, save_msh


# ---------------------------------------------------------------------------
# Construction and geometry


def test_two_triangle_square():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    tris = np.array([[0, 1, 2], [0, 2, 3]])
    m = TriMesh.from_arrays(nodes, tris)
    assert m.n_vertices == 4
    assert m.n_triangles == 2
    assert m.n_edges == 5
    assert np.allclose(m.element_area, 0.5)
    assert m.domain_area == pytest.approx(1.0, rel=1e-14)
    # one interior edge (the diagonal), four boundary edges
    assert int(m.edge_on_boundary.sum()) == 4
    assert int(m.vertex_on_boundary.sum()) == 4


def test_ccw_reorientation():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
    m = TriMesh.from_arrays(nodes, np.array([[0, 2, 1]]))  # clockwise input
    a, b, c = m.triangles[0]
    d1 = nodes[b] - nodes[a]
    d2 = nodes[c] - nodes[a]
    signed = d1[0] * d2[1] - d1[1] * d2[0]
    assert signed > 0
    assert m.element_area[0] == pytest.approx(0.5)


def test_degenerate_triangle_rejected():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    with pytest.raises(ValueError):
        TriMesh.from_arrays(nodes, np.array([[0, 1, 2]]))


def test_nonmanifold_edge_rejected():
    nodes = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 1.0], [0.5, -1.0], [2.0, 0.5]])
    tris = np.array([[0, 1, 2], [0, 1, 3], [0, 1, 4]])  # edge (0,1) in 3 cells
    with pytest.raises(ValueError):
        TriMesh.from_arrays(nodes, tris)


def test_area_matches_shoelace(random_meshes):
    for m in random_meshes:
        loop_area = oracles.shoelace_area(m.nodes, m.triangles)
        assert m.domain_area == pytest.approx(loop_area, rel=1e-10)


def test_edge_classification(random_meshes):
    for m in random_meshes:
        expect_boundary = oracles.boundary_edges_bruteforce(m.triangles)
        expect_all = oracles.all_edges_bruteforce(m.triangles)
        got_all = {tuple(e) for e in m.edges}
        got_boundary = {tuple(e) for e in m.edges[m.edge_on_boundary]}
        assert got_all == expect_all
        assert got_boundary == expect_boundary


def test_edges_sorted_lexicographically(unit8):
    e = unit8.edges
    assert np.all(e[:, 0] < e[:, 1])
    order = np.lexsort((e[:, 1], e[:, 0]))
    assert np.array_equal(order, np.arange(len(e)))


def test_tri_edges_consistent(unit8):
    # tri_edges[t, k] is the edge opposite to the local pair (k, k+1)
    for t in range(unit8.n_triangles):
        tri = unit8.triangles[t]
        for k, (a, b) in enumerate(((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0]))):
            eid = unit8.tri_edges[t, k]
            assert set(unit8.edges[eid]) == {a, b}


def test_midpoints(unit8):
    mid = unit8.midpoints
    expect = 0.5 * (unit8.nodes[unit8.edges[:, 0]] + unit8.nodes[unit8.edges[:, 1]])
    assert np.array_equal(mid, expect)


def test_affine_maps_match_scalar_geometry(random_meshes):
    for m in random_meshes[:5]:
        jac_all, inv_t_all, det_all = mesh.affine_maps(m)
        for t in range(0, m.n_triangles, 7):
            single = mesh.element_geometry(m, t)
            assert np.allclose(jac_all[t], single.jacobian, rtol=1e-15)
            assert np.allclose(inv_t_all[t], single.inverse_transpose, rtol=1e-13)
            assert det_all[t] == pytest.approx(single.det, rel=1e-15)
            j, inv_t, area = oracles.triangle_geometry(m.nodes[m.triangles[t]])
            assert np.allclose(jac_all[t], j)
            assert np.allclose(inv_t_all[t], inv_t, rtol=1e-13)
            assert m.element_area[t] == pytest.approx(area, rel=1e-13)


def test_rectangle_mesh_counts():
    m = mesh.rectangle_mesh(3, 2, 0.0, 3.0, 0.0, 2.0)
    assert m.n_vertices == 12
    assert m.n_triangles == 12
    assert m.domain_area == pytest.approx(6.0, rel=1e-14)
    m1 = mesh.unit_square_mesh(8)
    assert m1.n_vertices == 81
    assert m1.n_triangles == 128
    assert m1.n_edges == 208
    assert m1.domain_area == pytest.approx(1.0, rel=1e-14)


# ---------------------------------------------------------------------------
# MSH I/O


V22_SQUARE = """$MeshFormat
2.2 0 8
$EndMeshFormat
$Nodes
4
1 0 0 0
2 1 0 0
3 1 1 0
4 0 1 0
$EndNodes
$Elements
6
1 1 2 1 1 1 2
2 1 2 1 1 2 3
3 1 2 1 1 3 4
4 1 2 1 1 4 1
5 2 2 1 1 1 2 3
6 2 2 1 1 1 3 4
$EndElements
"""


V41_SQUARE = """$MeshFormat
4.1 0 8
$EndMeshFormat
$Nodes
1 4 1 4
2 1 0 4
1
2
3
4
0 0 0
1 0 0
1 1 0
0 1 0
$EndNodes
$Elements
1 2 1 2
2 1 2 2
1 1 2 3
2 1 3 4
$EndElements
"""


def test_load_v22(tmp_path):
    path = tmp_path / "square.msh"
    path.write_text(V22_SQUARE)
    m = load_msh(path)
    assert m.n_vertices == 4
    assert m.n_triangles == 2
    assert m.domain_area == pytest.approx(1.0)


def test_load_v41(tmp_path):
    path = tmp_path / "square4.msh"
    path.write_text(V41_SQUARE)
    m = load_msh(path)
    assert m.n_vertices == 4
    assert m.n_triangles == 2
    assert m.domain_area == pytest.approx(1.0)


def test_roundtrip_bit_exact(tmp_path, random_meshes):
    m = random_meshes[0]
    path = tmp_path / "round.msh"
    save_msh(m, path)
    m2 = load_msh(path)
    assert np.array_equal(m.nodes, m2.nodes)  # bit-exact coordinates
    assert np.array_equal(np.sort(m.triangles, axis=1)[np.lexsort(np.sort(m.triangles, axis=1).T)],
                          np.sort(m2.triangles, axis=1)[np.lexsort(np.sort(m2.triangles, axis=1).T)])


def test_save_then_load_preserves_boundary(tmp_path, unit8):
    path = tmp_path / "u8.msh"
    save_msh(unit8, path)
    m2 = load_msh(path)
    assert int(m2.edge_on_boundary.sum()) == int(unit8.edge_on_boundary.sum())


def test_unsupported_version(tmp_path):
    path = tmp_path / "bad.msh"
    path.write_text("$MeshFormat\n3.0 0 8\n$EndMeshFormat\n")
    with pytest.raises(MeshFormatError):
        load_msh(path)


def test_binary_rejected(tmp_path):
    path = tmp_path / "bin.msh"
    path.write_text("$MeshFormat\n2.2 1 8\n$EndMeshFormat\n")
    with pytest.raises(MeshFormatError):
        load_msh(path)


def test_unsupported_element_type(tmp_path):
    body = V22_SQUARE.replace("5 2 2 1 1 1 2 3", "5 3 2 1 1 1 2 3 4").replace(
        "$Elements\n6", "$Elements\n6")
    path = tmp_path / "quad.msh"
    path.write_text(body)
    with pytest.raises(MeshFormatError):
        load_msh(path)


def test_dangling_node_reference(tmp_path):
    body = V22_SQUARE.replace("6 2 2 1 1 1 3 4", "6 2 2 1 1 1 3 9")
    path = tmp_path / "dangle.msh"
    path.write_text(body)
    with pytest.raises(MeshFormatError):
        load_msh(path)


def test_empty_mesh_rejected(tmp_path):
    path = tmp_path / "empty.msh"
    path.write_text("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n"
                    "$Nodes\n0\n$EndNodes\n$Elements\n0\n$EndElements\n")
    with pytest.raises(MeshFormatError):
        load_msh(path)


def test_interior_line_element_rejected(tmp_path):
    # line element on the diagonal (an interior edge) disagrees with the
    # topological boundary
    body = V22_SQUARE.replace("4 1 2 1 1 4 1", "4 1 2 1 1 1 3")
    path = tmp_path / "badline.msh"
    path.write_text(body)
    with pytest.raises(MeshFormatError):
        load_msh(path)


def test_missing_section(tmp_path):
    path = tmp_path / "nonodes.msh"
    path.write_text("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Elements\n0\n$EndElements\n")
    with pytest.raises(MeshFormatError):
        load_msh(path)
