import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import analytic_sphere_sdf
from segqa.errors import FormatError, NoSurface
from segqa.mesh import (
    MeshGraph,
    TriMesh,
    check_invariants,
    enclosed_volume,
    icosphere,
    marching_cubes,
    mesh_to_graph,
    taubin_smooth,
    tetrahedron,
    vertex_normals,
)
from segqa.meshio import read_mesh, read_ply, write_mesh, write_obj
from segqa.voxel import SignedDistanceField, trilinear_sample


@pytest.fixture(scope="module")
def sphere_mesh():
    sdf = SignedDistanceField(analytic_sphere_sdf(32, 8.0, (15.5, 15.5, 15.5)))
    return sdf, marching_cubes(sdf)


def test_marching_cubes_sphere(sphere_mesh):
    sdf, m = sphere_mesh
    assert m.euler_characteristic() == 2
    assert m.is_watertight()
    r = np.linalg.norm(m.vertices - 15.5, axis=1)
    assert np.all(np.abs(r - 8.0) <= 0.5 * math.sqrt(3))
    assert check_invariants(m) == []
    # vertices lie on the isolevel
    assert np.abs(trilinear_sample(sdf, m.vertices)).max() < 1e-3
    # outward winding
    assert enclosed_volume(m) > 0
    assert len(m.edges()) * 2 == 3 * m.n_faces


def test_marching_cubes_plane():
    g = np.meshgrid(*[np.arange(12.0)] * 3, indexing="ij")
    m = marching_cubes(SignedDistanceField(g[2] - 5.25))
    assert m.n_faces > 0
    np.testing.assert_allclose(m.vertices[:, 2], 5.25, atol=1e-6)


def test_marching_cubes_no_surface():
    f = SignedDistanceField(np.ones((6, 6, 6)))
    assert marching_cubes(f).is_empty
    with pytest.raises(NoSurface):
        marching_cubes(f, strict=True)


def test_taubin_zero_iterations_identity():
    m = icosphere(2)
    out = taubin_smooth(m, iterations=0)
    assert np.array_equal(out.vertices, m.vertices)
    assert np.array_equal(out.faces, m.faces)


def test_taubin_preserves_volume_better_than_laplacian():
    m = icosphere(3, radius=10.0)
    assert m.n_faces == 1280
    v0 = enclosed_volume(m)
    vt = enclosed_volume(taubin_smooth(m, 0.5, -0.53, 10))
    vl = enclosed_volume(taubin_smooth(m, 0.5, 0.0, 10))
    assert abs(vt - v0) / v0 < 0.05
    assert abs(vl - v0) > abs(vt - v0)


def test_taubin_keeps_connectivity_and_invariants(sphere_mesh):
    _, m = sphere_mesh
    out = taubin_smooth(m)
    assert np.array_equal(out.faces, m.faces)
    assert check_invariants(out) == []


def test_vertex_normals_examples():
    tri = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    np.testing.assert_allclose(vertex_normals(tri), [[0, 0, 1]] * 3)
    ico = icosphere(3)
    n = vertex_normals(ico)
    radial = ico.vertices / np.linalg.norm(ico.vertices, axis=1, keepdims=True)
    assert np.all((n * radial).sum(1) > 0.9)
    np.testing.assert_allclose(np.linalg.norm(n, axis=1), 1.0, atol=1e-6)


def test_vertex_normal_fallback():
    m = TriMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0], [5, 5, 5]], [[0, 1, 2]])
    n, fallbacks = vertex_normals(m, return_fallbacks=True)
    assert fallbacks == 4
    np.testing.assert_array_equal(n, [[0, 0, 1]] * 4)


def test_mesh_to_graph_examples():
    g = mesh_to_graph(TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]]))
    assert (g.node_count, g.edge_count) == (3, 3)
    t = mesh_to_graph(tetrahedron())
    assert (t.node_count, t.edge_count) == (4, 6)
    assert np.all(t.degrees() == 3)
    for s in (1, 2, 3):
        ico = icosphere(s)
        assert 2 * mesh_to_graph(ico).edge_count == 3 * ico.n_faces


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_graph_permutation_stable(seed):
    m = icosphere(1)
    perm = np.random.default_rng(seed).permutation(m.n_vertices)
    inv = np.argsort(perm)
    # vertex i of the new mesh is vertex perm[i] of the old one
    pm = TriMesh(m.vertices[perm], inv[m.faces])
    e_old = {tuple(sorted((inv[a], inv[b]))) for a, b in mesh_to_graph(m).edges}
    e_new = {tuple(e) for e in mesh_to_graph(pm).edges}
    assert e_old == e_new


def test_graph_validation():
    with pytest.raises(ValueError):
        MeshGraph(np.zeros((3, 3)), [[1, 1]])
    with pytest.raises(ValueError):
        MeshGraph(np.zeros((3, 3)), [[0, 1], [0, 1]])
    with pytest.raises(ValueError):
        MeshGraph(np.zeros((3, 3)), [[0, 3]])


def test_compact_removes_junk():
    v = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 1, 0], [9, 9, 9]], float)
    f = np.array([[0, 1, 2], [0, 1, 3], [1, 1, 2]])
    c = TriMesh(v, f).compact()
    assert c.n_vertices == 3 and c.n_faces == 1
    assert check_invariants(c) == []


# ---------------------------------------------------------------- PLY


def test_ply_round_trip(tmp_path):
    t = tetrahedron()
    write_mesh(t, tmp_path / "t.ply")
    back = read_mesh(tmp_path / "t.ply")
    assert np.array_equal(back.faces, t.faces)
    np.testing.assert_array_equal(back.vertices, t.vertices.astype(np.float32))


def test_ply_with_colors_and_scalars(tmp_path):
    m = icosphere(1, radius=3.3)
    rng = np.random.default_rng(0)
    cols = rng.integers(0, 256, (m.n_vertices, 3))
    s = rng.standard_normal(m.n_vertices)
    write_mesh(m, tmp_path / "c.ply", node_scalars=s, node_colors=cols, scalar_name="err")
    text = (tmp_path / "c.ply").read_text()
    for p in ("property uchar red", "property uchar green", "property uchar blue", "property float err"):
        assert p in text
    back, props = read_ply(tmp_path / "c.ply")
    np.testing.assert_array_equal(back.vertices.astype(np.float32), m.vertices.astype(np.float32))
    np.testing.assert_array_equal(props["red"], cols[:, 0])
    np.testing.assert_array_equal(props["err"], s.astype(np.float32))
    with pytest.raises(ValueError):
        write_mesh(m, tmp_path / "bad.ply", node_colors=cols[:-1])


def test_ply_truncated_and_malformed(tmp_path):
    write_mesh(icosphere(1), tmp_path / "a.ply")
    lines = (tmp_path / "a.ply").read_text().splitlines()
    (tmp_path / "trunc.ply").write_text("\n".join(lines[: len(lines) - 10]) + "\n")
    with pytest.raises(FormatError) as ei:
        read_ply(tmp_path / "trunc.ply")
    assert ei.value.line is not None
    bad = list(lines)
    bad[12] = "0.5 nope 1"
    (tmp_path / "bad.ply").write_text("\n".join(bad))
    with pytest.raises(FormatError, match="line 13"):
        read_ply(tmp_path / "bad.ply")
    (tmp_path / "nomagic.ply").write_text("hello\n")
    with pytest.raises(FormatError, match="line 1"):
        read_ply(tmp_path / "nomagic.ply")


def test_obj_export(tmp_path):
    write_obj(tetrahedron(), tmp_path / "t.obj")
    lines = (tmp_path / "t.obj").read_text().splitlines()
    assert sum(l.startswith("v ") for l in lines) == 4
    assert "f 1 2 3" in lines
