"""Triangle meshes in grid coordinates and their vertex graphs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy import sparse
from skimage import measure

from .errors import NoSurface
from .voxel import VoxelVolume

__all__ = [
    "TriMesh",
    "MeshGraph",
    "marching_cubes",
    "taubin_smooth",
    "vertex_normals",
    "mesh_to_graph",
    "unique_edges",
    "enclosed_volume",
    "icosphere",
    "tetrahedron",
    "check_invariants",
]

FALLBACK_NORMAL = np.array([0.0, 0.0, 1.0])


@dataclass
class TriMesh:
    """Indexed triangle mesh; faces wind counter-clockwise seen from outside."""

    vertices: NDArray[np.float64]
    faces: NDArray[np.int64]

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def is_empty(self) -> bool:
        return self.n_vertices == 0 or self.n_faces == 0

    def copy(self) -> "TriMesh":
        return TriMesh(self.vertices.copy(), self.faces.copy())

    def edges(self) -> NDArray[np.int64]:
        return unique_edges(self.faces)

    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges()) + self.n_faces

    def is_watertight(self) -> bool:
        """Every undirected edge is shared by exactly two faces."""
        if self.is_empty:
            return False
        e = np.sort(self.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return bool(np.all(counts == 2))

    def mean_edge_length(self) -> float:
        e = self.edges()
        return float(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1).mean())

    def compact(self) -> "TriMesh":
        """Drop degenerate and duplicate faces, merge coincident vertices, drop unreferenced ones."""
        if self.n_vertices == 0:
            return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), np.int64))
        verts, inverse = np.unique(self.vertices, axis=0, return_inverse=True)
        faces = inverse.reshape(-1)[self.faces]
        ok = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
        faces = faces[ok]
        if len(faces):
            # duplicates up to rotation/orientation
            _, first = np.unique(np.sort(faces, axis=1), axis=0, return_index=True)
            faces = faces[np.sort(first)]
        used = np.unique(faces)
        remap = np.full(len(verts), -1, np.int64)
        remap[used] = np.arange(len(used))
        return TriMesh(verts[used], remap[faces])


@dataclass
class MeshGraph:
    """Vertex graph of a mesh: undirected edges ``i < j``, deduplicated."""

    node_positions: NDArray[np.float64]
    edges: NDArray[np.int64]

    def __post_init__(self):
        self.node_positions = np.asarray(self.node_positions, dtype=np.float64).reshape(-1, 3)
        self.edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        e = self.edges
        if len(e):
            if np.any(e[:, 0] >= e[:, 1]):
                raise ValueError("edges must satisfy i < j (no self-loops)")
            if e.max() >= len(self.node_positions):
                raise ValueError("edge endpoint out of range")
            if len(np.unique(e, axis=0)) != len(e):
                raise ValueError("duplicate edges")

    @property
    def node_count(self) -> int:
        return len(self.node_positions)

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def degrees(self) -> NDArray[np.int64]:
        return np.bincount(self.edges.reshape(-1), minlength=self.node_count)


def unique_edges(faces: NDArray) -> NDArray[np.int64]:
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    if len(faces) == 0:
        return np.zeros((0, 2), np.int64)
    e = np.sort(faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    return np.unique(e, axis=0)


def marching_cubes(sdf: VoxelVolume, isolevel: float = 0.0, strict: bool = False) -> TriMesh:
    """Isosurface of ``sdf`` as an indexed mesh in grid coordinates.

    Vertices are linearly interpolated along cube edges and shared between
    cells. Faces are oriented so normals point toward increasing field values
    (outward for a signed distance field). A field that never crosses
    ``isolevel`` yields an empty mesh, or :class:`NoSurface` when ``strict``.
    """
    v = np.asarray(sdf.values, dtype=np.float64)
    if not (v.min() < isolevel <= v.max()):
        if strict:
            raise NoSurface(f"field range [{v.min()}, {v.max()}] does not cross {isolevel}")
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), np.int64))
    verts, faces, _, _ = measure.marching_cubes(v, level=isolevel, gradient_direction="descent", allow_degenerate=False)
    mesh = TriMesh(verts, faces).compact()
    if mesh.is_empty and strict:
        raise NoSurface("no triangles extracted")
    return mesh


def _uniform_laplacian(n: int, faces: NDArray) -> sparse.csr_matrix:
    e = unique_edges(faces)
    rows = np.concatenate([e[:, 0], e[:, 1]])
    cols = np.concatenate([e[:, 1], e[:, 0]])
    adj = sparse.csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    deg = np.asarray(adj.sum(axis=1)).ravel()
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    # mean of neighbours minus self; isolated vertices stay put
    return sparse.diags(inv) @ adj - sparse.diags((deg > 0).astype(float))


def taubin_smooth(mesh: TriMesh, lam: float = 0.5, mu: float = -0.53, iterations: int = 10) -> TriMesh:
    """Alternating uniform-Laplacian steps with factors ``lam`` then ``mu``.

    ``mu=0`` disables the inflating step, i.e. plain Laplacian smoothing.
    """
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if lam <= 0:
        raise ValueError("lam must be > 0")
    if mu > 0:
        raise ValueError("mu must be <= 0")
    if iterations == 0 or mesh.is_empty:
        return mesh.copy()
    L = _uniform_laplacian(mesh.n_vertices, mesh.faces)
    v = mesh.vertices.copy()
    for _ in range(iterations):
        v = v + lam * (L @ v)
        if mu != 0.0:
            v = v + mu * (L @ v)
    return TriMesh(v, mesh.faces.copy())


def face_normals(vertices: NDArray, faces: NDArray) -> NDArray[np.float64]:
    """Unnormalised face normals; length is twice the triangle area."""
    a, b, c = (vertices[faces[:, i]] for i in range(3))
    return np.cross(b - a, c - a)


def vertex_normals(mesh: TriMesh, return_fallbacks: bool = False):
    """Area-weighted unit vertex normals.

    Vertices with a zero-area star get ``(0, 0, 1)``; pass
    ``return_fallbacks=True`` to also get how many did.
    """
    acc = np.zeros((mesh.n_vertices, 3))
    if mesh.n_faces:
        fn = face_normals(mesh.vertices, mesh.faces)
        for i in range(3):
            np.add.at(acc, mesh.faces[:, i], fn)
    norm = np.linalg.norm(acc, axis=1)
    bad = norm <= 1e-12
    out = np.empty_like(acc)
    out[~bad] = acc[~bad] / norm[~bad, None]
    out[bad] = FALLBACK_NORMAL
    if return_fallbacks:
        return out, int(bad.sum())
    return out


def mesh_to_graph(mesh: TriMesh) -> MeshGraph:
    return MeshGraph(mesh.vertices.copy(), unique_edges(mesh.faces))


def enclosed_volume(mesh: TriMesh) -> float:
    """Signed volume from origin tetrahedra; positive for outward-wound closed meshes."""
    a, b, c = (mesh.vertices[mesh.faces[:, i]] for i in range(3))
    return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


def check_invariants(mesh: TriMesh) -> list[str]:
    """Return a list of violated mesh invariants (empty when valid)."""
    problems = []
    v, f = mesh.vertices, mesh.faces
    if not np.all(np.isfinite(v)):
        problems.append("non-finite vertex positions")
    if len(f):
        if f.min() < 0 or f.max() >= len(v):
            problems.append("face index out of range")
        if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            problems.append("degenerate face")
        if len(np.unique(np.sort(f, axis=1), axis=0)) != len(f):
            problems.append("duplicate face")
    if len(v) and len(np.unique(f)) != len(v):
        problems.append("unreferenced vertices")
    return problems


def tetrahedron() -> TriMesh:
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float)
    f = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return TriMesh(v, f)


def icosphere(subdivisions: int = 3, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Subdivided icosahedron with ``20 * 4**subdivisions`` faces."""
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [
        (-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
        (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
        (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    verts = [np.array(p, float) / np.linalg.norm(p) for p in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    v = np.array(verts) * radius + np.asarray(center, float)
    return TriMesh(v, np.array(faces))
