"""Quadric error edge-collapse decimation."""

from __future__ import annotations

import heapq

import numpy as np

from .mesh import TriMesh, face_normals

__all__ = ["quadric_decimate", "vertex_quadrics"]

# optimal-position systems with |det| below this fraction of |A|_F^3 use the midpoint
_REL_DET_LIMIT = 1e-6
# minimum cosine between a face normal before and after a collapse
_MIN_NORMAL_COS = 0.1


def vertex_quadrics(mesh: TriMesh) -> np.ndarray:
    """Per-vertex sum of plane quadrics ``p p^T`` of the incident faces."""
    fn = face_normals(mesh.vertices, mesh.faces)
    norm = np.linalg.norm(fn, axis=1)
    ok = norm > 0
    n = np.zeros_like(fn)
    n[ok] = fn[ok] / norm[ok, None]
    d = -np.einsum("ij,ij->i", n, mesh.vertices[mesh.faces[:, 0]])
    p = np.concatenate([n, d[:, None]], axis=1)
    K = p[:, :, None] * p[:, None, :]
    Q = np.zeros((mesh.n_vertices, 4, 4))
    for i in range(3):
        np.add.at(Q, mesh.faces[:, i], K)
    return Q


def _placements(Q: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Optimal collapse positions and costs for a batch of summed quadrics.

    Ill-conditioned systems (relative determinant below threshold) fall back
    to the edge midpoint.
    """
    A = Q[:, :3, :3]
    scale = np.linalg.norm(A, axis=(1, 2)) ** 3
    det = np.linalg.det(A)
    ok = np.abs(det) > _REL_DET_LIMIT * np.maximum(scale, 1e-300)
    p = 0.5 * (a + b)
    if ok.any():
        p[ok] = np.linalg.solve(A[ok], -Q[ok, :3, 3:4])[..., 0]
    h = np.concatenate([p, np.ones((len(p), 1))], axis=1)
    cost = np.maximum(np.einsum("ni,nij,nj->n", h, Q, h), 0.0)
    return cost, p


def quadric_decimate(mesh: TriMesh, target_faces: int) -> TriMesh:
    """Collapse edges in order of quadric error until ``target_faces`` remain.

    Only interior manifold edges satisfying the link condition are collapsed,
    and collapses that flip or degenerate a surrounding face are skipped, so
    the output keeps the input's topology. Stops early when no valid
    collapse remains.
    """
    if target_faces < 4:
        raise ValueError("target_faces must be >= 4")
    if target_faces >= mesh.n_faces:
        return mesh.copy()

    V = mesh.vertices.copy()
    F = mesh.faces.copy()
    face_alive = np.ones(len(F), bool)
    n_faces = len(F)
    Q = vertex_quadrics(mesh)
    vert_faces: list[set[int]] = [set() for _ in range(len(V))]
    for fi, f in enumerate(F):
        for vi in f:
            vert_faces[vi].add(fi)
    version = np.zeros(len(V), np.int64)
    v_alive = np.ones(len(V), bool)

    # boundary vertices are pinned
    e = np.sort(F[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
    edges, counts = np.unique(e, axis=0, return_counts=True)
    pinned = np.zeros(len(V), bool)
    pinned[edges[counts != 2].reshape(-1)] = True

    heap: list = []
    tick = 0

    def push(us, vs):
        nonlocal tick
        us, vs = np.asarray(us, np.int64), np.asarray(vs, np.int64)
        keep = ~(pinned[us] | pinned[vs])
        us, vs = us[keep], vs[keep]
        if len(us) == 0:
            return
        costs, ps = _placements(Q[us] + Q[vs], V[us], V[vs])
        for c, u, v, p in zip(costs.tolist(), us.tolist(), vs.tolist(), ps):
            heapq.heappush(heap, (c, tick, u, v, version[u], version[v], p))
            tick += 1

    def neighbours(x):
        out = set()
        for fi in vert_faces[x]:
            out.update(F[fi])
        out.discard(x)
        return out

    interior = edges[counts == 2]
    push(interior[:, 0], interior[:, 1])

    while n_faces > target_faces and heap:
        _, _, u, v, vu, vv, p = heapq.heappop(heap)
        if not (v_alive[u] and v_alive[v]) or version[u] != vu or version[v] != vv:
            continue
        shared = vert_faces[u] & vert_faces[v]
        if len(shared) != 2:
            continue
        opposite = {int(w) for fi in shared for w in F[fi] if w != u and w != v}
        if neighbours(u) & neighbours(v) != opposite:
            continue  # link condition
        if n_faces - 2 < 4:
            break
        if not _collapse_keeps_orientation(V, F, vert_faces, u, v, shared, p):
            continue

        for fi in shared:
            face_alive[fi] = False
            for w in F[fi]:
                vert_faces[w].discard(fi)
        n_faces -= 2
        for fi in vert_faces[v]:
            F[fi][F[fi] == v] = u
            vert_faces[u].add(fi)
        vert_faces[v] = set()
        v_alive[v] = False
        V[u] = p
        Q[u] = Q[u] + Q[v]
        version[u] += 1
        ws = np.fromiter(neighbours(u), np.int64)
        push(np.minimum(ws, u), np.maximum(ws, u))

    return TriMesh(V, F[face_alive]).compact()


def _collapse_keeps_orientation(V, F, vert_faces, u, v, shared, p) -> bool:
    ring = np.fromiter((vert_faces[u] | vert_faces[v]) - shared, np.int64)
    if len(ring) == 0:
        return True
    idx = F[ring]
    tri = V[idx]
    before = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    tri[(idx == u) | (idx == v)] = p
    after = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    nb = np.linalg.norm(before, axis=1)
    na = np.linalg.norm(after, axis=1)
    if np.any(na <= 1e-12 * np.maximum(nb, 1.0)):
        return False
    dots = np.einsum("ij,ij->i", before, after)
    return bool(np.all((nb == 0) | (dots >= _MIN_NORMAL_COS * nb * na)))
