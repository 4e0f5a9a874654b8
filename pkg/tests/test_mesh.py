import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import edge_census
from plategeom.errors import GeometryError, MeshFormatError
from plategeom.mesh import (
    Polyline3,
    RigidTransform,
    TriangleMesh,
    apply_rigid_transform,
    boundary_loops,
    load_mesh,
    rotation_about_axis,
)
from plategeom.synthetic import (
    frame_mesh,
    icosphere,
    random_rigid_transform,
    square_grid_mesh,
    write_obj,
    write_ply,
)

TRI_V = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]])
TRI_F = np.array([[0, 1, 2]])


# ---------------------------------------------------------------------------
# TriangleMesh


def test_mesh_arrays_are_read_only():
    m = TriangleMesh(TRI_V, TRI_F)
    with pytest.raises(ValueError):
        m.vertices[0, 0] = 5.0
    assert m.faces.dtype == np.int64


@pytest.mark.parametrize(
    "v, f, code",
    [
        (np.zeros((0, 3)), np.zeros((0, 3), dtype=int), "empty-mesh"),
        (TRI_V, np.zeros((0, 3), dtype=int), "empty-mesh"),
        (TRI_V, [[0, 1, 999]], "invalid-vertex"),
        (TRI_V, [[0, -1, 2]], "invalid-vertex"),
        ([[0, 0, 0], [1, 0, np.nan], [0, 1, 0]], TRI_F, "invalid-vertex"),
        ([[0, 0, 0], [np.inf, 0, 0], [0, 1, 0]], TRI_F, "invalid-vertex"),
        (np.zeros((3, 2)), TRI_F, "invalid-shape"),
    ],
)
def test_mesh_validation(v, f, code):
    with pytest.raises(GeometryError) as exc:
        TriangleMesh(v, f)
    assert exc.value.code == code


def test_build_drops_degenerate_faces():
    v = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 0, 0]])
    # repeated index, and a zero-area collinear face
    f = np.array([[0, 1, 2], [0, 0, 1], [0, 1, 3]])
    m = TriangleMesh.build(v, f)
    assert m.dropped_faces == 2
    assert m.faces.tolist() == [[0, 1, 2]]


def test_face_areas():
    m = square_grid_mesh(2, size=4.0)
    assert np.allclose(m.face_areas(), 2.0)


# ---------------------------------------------------------------------------
# RigidTransform


def test_rigid_transform_rejects_reflection_and_skew():
    with pytest.raises(GeometryError):
        RigidTransform(np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(GeometryError):
        RigidTransform(np.diag([1.0, 2.0, 1.0]))


def test_identity_preserves_vertices_bitwise():
    m = icosphere(3.0, 1)
    out = apply_rigid_transform(m, RigidTransform.identity())
    assert np.array_equal(out.vertices, m.vertices)
    assert np.array_equal(out.faces, m.faces)


def test_pure_translation_shifts_z():
    m = icosphere(3.0, 1)
    out = apply_rigid_transform(m, RigidTransform(np.eye(3), [0, 0, 5]))
    assert np.array_equal(out.vertices[:, 2], m.vertices[:, 2] + 5)
    assert np.array_equal(out.vertices[:, :2], m.vertices[:, :2])


def test_quarter_turn_twice_is_half_turn():
    q = RigidTransform(rotation_about_axis([0, 0, 1], math.pi / 2))
    h = RigidTransform(rotation_about_axis([0, 0, 1], math.pi))
    # oracle: a half turn about z negates x and y
    assert np.allclose((q @ q).rotation, np.diag([-1.0, -1.0, 1.0]), atol=1e-12)
    assert np.allclose((q @ q).rotation, h.rotation, atol=1e-12)


def test_compose_applies_inner_first(rng):
    a = random_rigid_transform(rng)
    b = random_rigid_transform(rng)
    p = rng.normal(size=(10, 3))
    assert np.allclose(a.compose(b).apply(p), a.apply(b.apply(p)), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_transform_group_laws(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_rigid_transform(rng) for _ in range(3))
    assert ((a @ b) @ c).allclose(a @ (b @ c), atol=1e-9)
    assert (a.inverse() @ a).allclose(RigidTransform.identity(), atol=1e-9)
    r = a.rotation
    assert np.allclose(r.T @ r, np.eye(3), atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_transform_preserves_distances(seed):
    rng = np.random.default_rng(seed)
    p = rng.uniform(-200, 200, size=(30, 3))
    q = random_rigid_transform(rng, 500.0).apply(p)
    d0 = np.linalg.norm(p[:, None] - p[None], axis=2)
    d1 = np.linalg.norm(q[:, None] - q[None], axis=2)
    assert np.all(np.abs(d1 - d0) <= 1e-9 * np.maximum(d0, 1.0))


# ---------------------------------------------------------------------------
# Polyline3


def test_polyline_invariants():
    with pytest.raises(GeometryError):
        Polyline3([[0, 0, 0]])
    with pytest.raises(GeometryError):
        Polyline3([[0, 0, 0], [0, 0, 0], [1, 0, 0]])
    with pytest.raises(GeometryError):
        Polyline3([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 0, 0]], closed=True)


def test_polyline_measures():
    sq = Polyline3([[0, 0, 0], [2, 0, 0], [2, 2, 0], [0, 2, 0]], closed=True)
    assert sq.length() == pytest.approx(8.0)
    assert sq.signed_area_xy() == pytest.approx(4.0)
    assert len(sq.segments()) == 4
    assert len(Polyline3(sq.points, closed=False).segments()) == 3


# ---------------------------------------------------------------------------
# boundary_loops


def test_single_triangle_loop():
    loops = boundary_loops(TriangleMesh(TRI_V, TRI_F))
    assert len(loops) == 1
    assert loops[0].closed and len(loops[0]) == 3


def test_square_loop_has_four_points():
    loops = boundary_loops(square_grid_mesh(1))
    assert len(loops) == 1 and loops[0].closed and len(loops[0]) == 4


def test_frame_has_two_loops_outer_first():
    m = frame_mesh(3.0, 1.0)
    assert len(m.faces) == 8
    loops = boundary_loops(m)
    # oracle: edges used by exactly one face
    census = edge_census(m.faces)
    boundary_edges = [e for e, n in census.items() if n == 1]
    assert len(boundary_edges) == 8
    assert len(loops) == 2
    assert loops[0].length() == pytest.approx(12.0)
    assert loops[1].length() == pytest.approx(4.0)
    assert sum(len(lp) for lp in loops) == len(boundary_edges)


def test_watertight_mesh_has_no_loops():
    assert boundary_loops(icosphere(1.0, 2)) == []


def test_non_manifold_edge_is_reported():
    v = np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1]])
    f = np.array([[0, 1, 2], [1, 0, 3], [0, 1, 4]])
    with pytest.raises(GeometryError) as exc:
        boundary_loops(TriangleMesh(v, f))
    assert exc.value.code == "non-manifold-edge"
    assert "(0, 1)" in str(exc.value)


def test_min_points_filter():
    assert boundary_loops(TriangleMesh(TRI_V, TRI_F), min_points=10) == []


def _canonical_loop(points):
    # loops equal up to cyclic shift and reversal
    pts = [tuple(np.round(p, 9)) for p in points]
    k = pts.index(min(pts))
    fwd = pts[k:] + pts[:k]
    rev = [fwd[0]] + fwd[1:][::-1]
    return min(fwd, rev)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_boundary_loops_invariant_under_relabelling(seed):
    rng = np.random.default_rng(seed)
    m = frame_mesh(5.0, 2.0) if seed % 2 else square_grid_mesh(4, 3.0)
    perm = rng.permutation(len(m.vertices))
    inv = np.argsort(perm)
    v2 = m.vertices[perm]
    f2 = inv[m.faces][rng.permutation(len(m.faces))]
    a = sorted(_canonical_loop(lp.points) for lp in boundary_loops(m))
    b = sorted(_canonical_loop(lp.points) for lp in boundary_loops(TriangleMesh(v2, f2)))
    assert a == b


# ---------------------------------------------------------------------------
# load_mesh


def test_obj_unit_triangle(tmp_path):
    p = tmp_path / "t.obj"
    p.write_text("# tri\nv 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nf 1/1/1 2/2/1 3/3/1\n")
    m = load_mesh(p)
    assert m.vertices.shape == (3, 3) and m.faces.tolist() == [[0, 1, 2]]
    m2 = load_mesh(p, unit_scale=25.4)
    assert np.array_equal(m2.vertices, m.vertices * 25.4)


def test_obj_negative_indices_and_quads(tmp_path):
    p = tmp_path / "q.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf -4 -3 -2 -1\n")
    m = load_mesh(p)
    assert m.faces.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_obj_bad_record_reports_line(tmp_path):
    p = tmp_path / "bad.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 one 0\nf 1 2 3\n")
    with pytest.raises(MeshFormatError) as exc:
        load_mesh(p)
    assert exc.value.line == 3
    assert exc.value.code == "format-error"


def test_ply_out_of_range_index(tmp_path):
    p = tmp_path / "bad.ply"
    p.write_text(
        "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\n"
        "property float z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n"
        "0 0 0\n1 0 0\n0 1 0\n3 0 1 999\n"
    )
    with pytest.raises(GeometryError) as exc:
        load_mesh(p)
    assert exc.value.code == "invalid-vertex"


def test_ply_big_endian_rejected(tmp_path):
    p = tmp_path / "be.ply"
    p.write_bytes(
        b"ply\nformat binary_big_endian 1.0\nelement vertex 0\nproperty float x\nend_header\n"
    )
    with pytest.raises(MeshFormatError):
        load_mesh(p)


def test_ply_truncated_binary_reports_offset(tmp_path):
    p = tmp_path / "cut.ply"
    write_ply(icosphere(1.0, 1), p, binary=True)
    data = p.read_bytes()
    p.write_bytes(data[:-7])
    with pytest.raises(MeshFormatError) as exc:
        load_mesh(p)
    assert exc.value.offset is not None


def test_ply_binary_with_float_and_extra_properties(tmp_path):
    # float32 coords, an extra per-vertex property and a uint8 face count
    header = (
        b"ply\nformat binary_little_endian 1.0\nelement vertex 3\nproperty float x\n"
        b"property float y\nproperty float z\nproperty uchar red\nelement face 1\n"
        b"property list uchar uint vertex_indices\nend_header\n"
    )
    body = b"".join(struct.pack("<fffB", *p, 7) for p in TRI_V.tolist())
    body += struct.pack("<BIII", 3, 0, 1, 2)
    p = tmp_path / "f.ply"
    p.write_bytes(header + body)
    m = load_mesh(p)
    assert np.array_equal(m.vertices, TRI_V) and m.faces.tolist() == [[0, 1, 2]]


def test_empty_file_is_empty_mesh(tmp_path):
    p = tmp_path / "e.obj"
    p.write_text("# nothing\n")
    with pytest.raises(GeometryError) as exc:
        load_mesh(p)
    assert exc.value.code == "empty-mesh"


def test_unit_scale_must_be_positive(tmp_path):
    p = tmp_path / "t.obj"
    write_obj(TriangleMesh(TRI_V, TRI_F), p)
    with pytest.raises(ValueError):
        load_mesh(p, unit_scale=0)


def test_stated_format_must_match(tmp_path):
    p = tmp_path / "t.ply"
    write_ply(TriangleMesh(TRI_V, TRI_F), p, binary=True)
    with pytest.raises(MeshFormatError):
        load_mesh(p, format="ply-ascii")
    assert len(load_mesh(p, format="ply-binary-le").faces) == 1


@pytest.mark.parametrize("writer", ["obj", "ply-ascii", "ply-binary-le"])
def test_formats_round_trip(tmp_path, writer):
    m = icosphere(12.5, 2)
    p = tmp_path / ("m.obj" if writer == "obj" else "m.ply")
    if writer == "obj":
        write_obj(m, p)
    else:
        write_ply(m, p, binary=writer == "ply-binary-le")
    back = load_mesh(p)
    assert np.array_equal(back.vertices, m.vertices)
    assert np.array_equal(back.faces, m.faces)


def test_ply_and_obj_agree_up_to_vertex_order(tmp_path, rng):
    m = icosphere(4.0, 1)
    perm = rng.permutation(len(m.vertices))
    inv = np.argsort(perm)
    shuffled = TriangleMesh(m.vertices[perm], inv[m.faces])
    write_ply(m, tmp_path / "a.ply")
    write_obj(shuffled, tmp_path / "b.obj")
    a, b = load_mesh(tmp_path / "a.ply"), load_mesh(tmp_path / "b.obj")

    def triangles(mesh):
        return sorted(tuple(sorted(map(tuple, t.round(12).tolist()))) for t in mesh.triangles)

    assert triangles(a) == triangles(b)
