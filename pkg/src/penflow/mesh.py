"""Triangular meshes: topology, geometry, and Gmsh ASCII I/O.

A :class:`TriMesh` stores straight-edged triangles with counterclockwise
vertex ordering, the unique undirected edge list with one midpoint per edge
(quadratic scalar nodes are "vertices first, then edge midpoints"), and the
topological boundary (edges incident to exactly one triangle).

Meshes are loaded from pre-generated ``.msh`` files (Gmsh ASCII, versions
2.2 and 4.1) or built directly by the structured generators below; the
solver itself never invokes a mesh generator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class MeshFormatError(ValueError):
    """Raised for malformed or unsupported mesh files and element data."""


@dataclass(frozen=True)
class AffineMap:
    """Affine map from the reference triangle {(0,0),(1,0),(0,1)} to one element.

    Attributes
    ----------
    jacobian : (2, 2) ndarray
        Columns are the physical edge vectors v1 - v0 and v2 - v0.
    inverse_transpose : (2, 2) ndarray
        Maps reference-coordinate gradients to physical gradients.
    det : float
        Jacobian determinant; equals twice the element area (positive for
        counterclockwise elements).
    """

    jacobian: np.ndarray
    inverse_transpose: np.ndarray
    det: float


@dataclass(frozen=True)
class TriMesh:
    """Conforming triangulation with edge midpoints and boundary flags.

    Attributes
    ----------
    nodes : (n_vertices, 2) float ndarray
        Vertex coordinates.
    triangles : (n_triangles, 3) int ndarray
        Vertex indices, counterclockwise.
    edges : (n_edges, 2) int ndarray
        Unique undirected edges as sorted vertex pairs, lexicographically
        ordered.  Edge ``e`` owns the midpoint scalar node
        ``n_vertices + e``.
    tri_edges : (n_triangles, 3) int ndarray
        Edge index for the local edges (0,1), (1,2), (2,0) of each triangle.
    midpoints : (n_edges, 2) float ndarray
        Edge midpoint coordinates.
    vertex_on_boundary : (n_vertices,) bool ndarray
    edge_on_boundary : (n_edges,) bool ndarray
        Flags for the topological boundary (edges with exactly one incident
        triangle, and their endpoints).
    element_area : (n_triangles,) float ndarray
        Positive element areas.
    domain_area : float
        Sum of the element areas.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    tri_edges: np.ndarray
    midpoints: np.ndarray
    vertex_on_boundary: np.ndarray
    edge_on_boundary: np.ndarray
    element_area: np.ndarray
    domain_area: float

    @property
    def n_vertices(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @classmethod
    def from_arrays(cls, nodes: np.ndarray, triangles: np.ndarray) -> "TriMesh":
        """Build a mesh from raw vertex and connectivity arrays.

        Triangles with negative signed area are reoriented; degenerate
        (zero-area) triangles and out-of-range vertex indices raise
        :class:`MeshFormatError`.
        """
        nodes = np.ascontiguousarray(nodes, dtype=float)
        triangles = np.ascontiguousarray(triangles, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] != 2:
            raise MeshFormatError("nodes must be an (n, 2) array")
        if triangles.ndim != 2 or triangles.shape[1] != 3:
            raise MeshFormatError("triangles must be an (n, 3) array")
        if triangles.shape[0] == 0:
            raise MeshFormatError("mesh contains no triangles")
        if triangles.min() < 0 or triangles.max() >= nodes.shape[0]:
            raise MeshFormatError("triangle references a nonexistent vertex")

        signed = _signed_areas(nodes, triangles)
        flip = signed < 0
        if np.any(flip):
            triangles = triangles.copy()
            triangles[flip] = triangles[flip][:, [0, 2, 1]]
            signed = np.abs(signed)
        scale = max(np.abs(nodes).max(), 1.0)
        if np.any(signed <= 1e-14 * scale * scale):
            bad = int(np.argmin(signed))
            raise MeshFormatError(f"degenerate triangle {bad} (zero area)")

        edges, tri_edges, counts = build_edge_midpoints(triangles)
        if counts.max() > 2:
            raise MeshFormatError("non-manifold edge (more than two incident triangles)")
        edge_on_boundary = counts == 1
        vertex_on_boundary = np.zeros(nodes.shape[0], dtype=bool)
        vertex_on_boundary[edges[edge_on_boundary].ravel()] = True
        midpoints = 0.5 * (nodes[edges[:, 0]] + nodes[edges[:, 1]])

        return cls(
            nodes=nodes,
            triangles=triangles,
            edges=edges,
            tri_edges=tri_edges,
            midpoints=midpoints,
            vertex_on_boundary=vertex_on_boundary,
            edge_on_boundary=edge_on_boundary,
            element_area=signed,
            domain_area=float(signed.sum()),
        )


def _signed_areas(nodes: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Signed areas via the cross product of the two edge vectors at vertex 0."""
    p0 = nodes[triangles[:, 0]]
    d1 = nodes[triangles[:, 1]] - p0
    d2 = nodes[triangles[:, 2]] - p0
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def build_edge_midpoints(triangles: np.ndarray):
    """Enumerate unique undirected edges and per-triangle edge indices.

    Parameters
    ----------
    triangles : (n_triangles, 3) int ndarray

    Returns
    -------
    edges : (n_edges, 2) int ndarray
        Sorted vertex pairs in lexicographic order.
    tri_edges : (n_triangles, 3) int ndarray
        Edge index of the local edges (0,1), (1,2), (2,0).
    counts : (n_edges,) int ndarray
        Number of triangles incident to each edge.
    """
    pairs = triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    pairs = np.sort(pairs, axis=1)
    edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
    tri_edges = inverse.reshape(-1, 3)
    counts = np.bincount(inverse.ravel(), minlength=edges.shape[0])
    return edges, tri_edges, counts


def element_geometry(mesh: TriMesh, t: int) -> AffineMap:
    """Affine reference-to-physical map of triangle ``t``."""
    tri = mesh.triangles[t]
    p0 = mesh.nodes[tri[0]]
    jac = np.column_stack((mesh.nodes[tri[1]] - p0, mesh.nodes[tri[2]] - p0))
    det = jac[0, 0] * jac[1, 1] - jac[0, 1] * jac[1, 0]
    inv_t = np.array([[jac[1, 1], -jac[1, 0]], [-jac[0, 1], jac[0, 0]]]) / det
    return AffineMap(jacobian=jac, inverse_transpose=inv_t, det=float(det))


def affine_maps(mesh: TriMesh):
    """Vectorized :func:`element_geometry` for all triangles.

    Returns
    -------
    jac : (n_triangles, 2, 2) ndarray
    inv_t : (n_triangles, 2, 2) ndarray
    det : (n_triangles,) ndarray
    """
    p0 = mesh.nodes[mesh.triangles[:, 0]]
    d1 = mesh.nodes[mesh.triangles[:, 1]] - p0
    d2 = mesh.nodes[mesh.triangles[:, 2]] - p0
    jac = np.stack((d1, d2), axis=2)
    det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
    inv_t = np.empty_like(jac)
    inv_t[:, 0, 0] = d2[:, 1]
    inv_t[:, 0, 1] = -d1[:, 1]
    inv_t[:, 1, 0] = -d2[:, 0]
    inv_t[:, 1, 1] = d1[:, 0]
    inv_t /= det[:, None, None]
    return jac, inv_t, det


# ---------------------------------------------------------------------------
# Structured generators
# ---------------------------------------------------------------------------

def rectangle_mesh(nx: int, ny: int, x0: float, x1: float, y0: float, y1: float) -> TriMesh:
    """Structured triangulation of [x0, x1] x [y0, y1].

    Each of the nx-by-ny cells is split along its lower-left/upper-right
    diagonal into two counterclockwise triangles.
    """
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    nodes = np.column_stack((X.ravel(), Y.ravel()))

    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    v00 = (i * (ny + 1) + j).ravel()
    v10 = v00 + (ny + 1)
    v01 = v00 + 1
    v11 = v10 + 1
    lower = np.column_stack((v00, v10, v11))
    upper = np.column_stack((v00, v11, v01))
    triangles = np.vstack((lower, upper))
    return TriMesh.from_arrays(nodes, triangles)


def unit_square_mesh(n: int) -> TriMesh:
    """Structured n-by-n triangulation of the unit square (mesh size 1/n)."""
    return rectangle_mesh(n, n, 0.0, 1.0, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Gmsh ASCII I/O
# ---------------------------------------------------------------------------

_TRIANGLE = 2
_LINE = 1


def load_msh(path) -> TriMesh:
    """Load a Gmsh ASCII mesh (format 2.2 or 4.1).

    Only 3-node triangles (the 2D elements) and 2-node lines (optional
    boundary tags) are accepted; any other element type raises
    :class:`MeshFormatError`.  Line elements, when present, must lie on the
    topological boundary.
    """
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()

    version = None
    i = 0
    node_tags = None
    coords = None
    tri_tags = []
    line_tags = []
    while i < len(lines):
        header = lines[i].strip()
        if header == "$MeshFormat":
            parts = lines[i + 1].split()
            version = parts[0]
            if version not in ("2.2", "4.1"):
                raise MeshFormatError(f"unsupported mesh format version {version!r}")
            if int(parts[1]) != 0:
                raise MeshFormatError("binary mesh files are not supported")
            i = _skip_to_end(lines, i, "$MeshFormat")
        elif header == "$Nodes":
            if version is None:
                raise MeshFormatError("missing $MeshFormat section")
            if version == "2.2":
                node_tags, coords, i = _parse_nodes_v2(lines, i)
            else:
                node_tags, coords, i = _parse_nodes_v4(lines, i)
        elif header == "$Elements":
            if node_tags is None:
                raise MeshFormatError("$Elements section precedes $Nodes")
            if version == "2.2":
                tri_tags, line_tags, i = _parse_elements_v2(lines, i)
            else:
                tri_tags, line_tags, i = _parse_elements_v4(lines, i)
        elif header.startswith("$") and not header.startswith("$End"):
            i = _skip_to_end(lines, i, header)
        else:
            i += 1

    if version is None:
        raise MeshFormatError("missing $MeshFormat section")
    if node_tags is None or len(node_tags) == 0:
        raise MeshFormatError("mesh contains no nodes")
    if len(tri_tags) == 0:
        raise MeshFormatError("mesh contains no triangles")

    order = np.argsort(node_tags)
    sorted_tags = node_tags[order]
    if sorted_tags.shape[0] > 1 and np.any(np.diff(sorted_tags) == 0):
        raise MeshFormatError("duplicate node tags")
    nodes = coords[order]

    def remap(tags: np.ndarray) -> np.ndarray:
        idx = np.searchsorted(sorted_tags, tags)
        bad = (idx >= sorted_tags.shape[0]) | (sorted_tags[np.minimum(idx, sorted_tags.shape[0] - 1)] != tags)
        if np.any(bad):
            raise MeshFormatError(f"element references unknown node tag {tags[bad].ravel()[0]}")
        return idx

    triangles = remap(np.asarray(tri_tags, dtype=np.int64))
    mesh = TriMesh.from_arrays(nodes, triangles)

    if line_tags:
        boundary_pairs = {tuple(e) for e in mesh.edges[mesh.edge_on_boundary]}
        for pair in remap(np.asarray(line_tags, dtype=np.int64)):
            key = (int(min(pair)), int(max(pair)))
            if key not in boundary_pairs:
                raise MeshFormatError(
                    f"line element {key} does not lie on the topological boundary"
                )
    return mesh


def _skip_to_end(lines, i, header):
    end = "$End" + header[1:]
    j = i + 1
    while j < len(lines):
        if lines[j].strip() == end:
            return j + 1
        j += 1
    raise MeshFormatError(f"unterminated {header} section")


def _parse_nodes_v2(lines, i):
    n = int(lines[i + 1].split()[0])
    if n <= 0:
        raise MeshFormatError("empty $Nodes section")
    tags = np.empty(n, dtype=np.int64)
    coords = np.empty((n, 2), dtype=float)
    for k in range(n):
        parts = lines[i + 2 + k].split()
        tags[k] = int(parts[0])
        coords[k, 0] = float(parts[1])
        coords[k, 1] = float(parts[2])
    i = i + 2 + n
    if lines[i].strip() != "$EndNodes":
        raise MeshFormatError("malformed $Nodes section")
    return tags, coords, i + 1


def _parse_elements_v2(lines, i):
    n = int(lines[i + 1].split()[0])
    if n <= 0:
        raise MeshFormatError("empty $Elements section")
    tri, lin = [], []
    for k in range(n):
        parts = lines[i + 2 + k].split()
        etype = int(parts[1])
        ntags = int(parts[2])
        conn = [int(p) for p in parts[3 + ntags:]]
        if etype == _TRIANGLE:
            if len(conn) != 3:
                raise MeshFormatError("triangle element with wrong node count")
            tri.append(conn)
        elif etype == _LINE:
            if len(conn) != 2:
                raise MeshFormatError("line element with wrong node count")
            lin.append(conn)
        else:
            raise MeshFormatError(f"unsupported element type {etype}")
    i = i + 2 + n
    if lines[i].strip() != "$EndElements":
        raise MeshFormatError("malformed $Elements section")
    return tri, lin, i + 1


def _parse_nodes_v4(lines, i):
    num_blocks, num_nodes = (int(x) for x in lines[i + 1].split()[:2])
    if num_nodes <= 0:
        raise MeshFormatError("empty $Nodes section")
    tags = np.empty(num_nodes, dtype=np.int64)
    coords = np.empty((num_nodes, 2), dtype=float)
    j = i + 2
    filled = 0
    for _ in range(num_blocks):
        _dim, _etag, parametric, nblock = (int(x) for x in lines[j].split())
        if parametric != 0:
            raise MeshFormatError("parametric nodes are not supported")
        j += 1
        for k in range(nblock):
            tags[filled + k] = int(lines[j + k])
        j += nblock
        for k in range(nblock):
            parts = lines[j + k].split()
            coords[filled + k, 0] = float(parts[0])
            coords[filled + k, 1] = float(parts[1])
        j += nblock
        filled += nblock
    if filled != num_nodes:
        raise MeshFormatError("inconsistent $Nodes block counts")
    if lines[j].strip() != "$EndNodes":
        raise MeshFormatError("malformed $Nodes section")
    return tags, coords, j + 1


def _parse_elements_v4(lines, i):
    num_blocks, num_elems = (int(x) for x in lines[i + 1].split()[:2])
    if num_elems <= 0:
        raise MeshFormatError("empty $Elements section")
    tri, lin = [], []
    j = i + 2
    for _ in range(num_blocks):
        _dim, _etag, etype, nblock = (int(x) for x in lines[j].split())
        j += 1
        for k in range(nblock):
            conn = [int(p) for p in lines[j + k].split()[1:]]
            if etype == _TRIANGLE:
                if len(conn) != 3:
                    raise MeshFormatError("triangle element with wrong node count")
                tri.append(conn)
            elif etype == _LINE:
                if len(conn) != 2:
                    raise MeshFormatError("line element with wrong node count")
                lin.append(conn)
            else:
                raise MeshFormatError(f"unsupported element type {etype}")
        j += nblock
    if lines[j].strip() != "$EndElements":
        raise MeshFormatError("malformed $Elements section")
    return tri, lin, j + 1


def save_msh(mesh: TriMesh, path) -> None:
    """Write a mesh as Gmsh ASCII 2.2.

    Coordinates use shortest round-trip decimal representation, so loading
    the written file reproduces them bit-exactly.  Boundary edges are
    written as 2-node line elements.
    """
    boundary = mesh.edges[mesh.edge_on_boundary]
    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$Nodes", str(mesh.n_vertices)]
    for idx, (x, y) in enumerate(mesh.nodes, start=1):
        out.append(f"{idx} {float(x)!r} {float(y)!r} 0")
    out.append("$EndNodes")
    out.append("$Elements")
    out.append(str(boundary.shape[0] + mesh.n_triangles))
    eid = 1
    for a, b in boundary:
        out.append(f"{eid} 1 2 1 1 {a + 1} {b + 1}")
        eid += 1
    for a, b, c in mesh.triangles:
        out.append(f"{eid} 2 2 1 1 {a + 1} {b + 1} {c + 1}")
        eid += 1
    out.append("$EndElements")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(out) + "\n")
