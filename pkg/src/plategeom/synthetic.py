"""
synthetic.py
------------

Synthetic plates and test geometry with known answers, plus small PLY/OBJ
writers for exporting them. Used by the test-suite, the benchmarks and
the ``synth-corpus`` CLI command.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.spatial.transform import Rotation

from .mesh import RigidTransform, TriangleMesh


def write_obj(mesh: TriangleMesh, path) -> Path:
    path = Path(path)
    with path.open("w", encoding="ascii") as fh:
        fh.write(f"# {mesh.name}\n")
        np.savetxt(fh, mesh.vertices, fmt="v %.17g %.17g %.17g")
        np.savetxt(fh, mesh.faces + 1, fmt="f %d %d %d")
    return path


def write_ply(mesh: TriangleMesh, path, binary: bool = True) -> Path:
    path = Path(path)
    fmt = "binary_little_endian" if binary else "ascii"
    header = (
        f"ply\nformat {fmt} 1.0\ncomment {mesh.name}\n"
        f"element vertex {len(mesh.vertices)}\n"
        "property double x\nproperty double y\nproperty double z\n"
        f"element face {len(mesh.faces)}\n"
        "property list uchar int vertex_indices\nend_header\n"
    )
    with path.open("wb") as fh:
        fh.write(header.encode("ascii"))
        if binary:
            fh.write(mesh.vertices.astype("<f8").tobytes())
            rec = np.zeros(len(mesh.faces), dtype=[("n", "u1"), ("idx", "<i4", (3,))])
            rec["n"] = 3
            rec["idx"] = mesh.faces
            fh.write(rec.tobytes())
        else:
            np.savetxt(fh, mesh.vertices, fmt="%.17g")
            np.savetxt(fh, mesh.faces, fmt="3 %d %d %d")
    return path


def random_rigid_transform(rng: np.random.Generator, max_translation: float = 100.0) -> RigidTransform:
    r = Rotation.random(random_state=rng).as_matrix()
    return RigidTransform(r, rng.uniform(-max_translation, max_translation, 3))


# ---------------------------------------------------------------------------
# primitive meshes


def icosphere(radius: float = 1.0, subdivisions: int = 3) -> TriangleMesh:
    """Geodesic sphere; 20 * 4**subdivisions faces."""
    t = (1.0 + math.sqrt(5.0)) / 2.0
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
    v = [np.array(p, dtype=np.float64) / np.linalg.norm(p) for p in verts]
    f = faces
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            if key not in cache:
                m = v[a] + v[b]
                v.append(m / np.linalg.norm(m))
                cache[key] = len(v) - 1
            return cache[key]

        nf = []
        for a, b, c in f:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            nf += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        f = nf
    return TriangleMesh(np.array(v) * radius, np.array(f), name=f"icosphere_r{radius:g}")


def sphere_cap(radius: float, subdivisions: int, z_cut: float) -> TriangleMesh:
    """Faces of an icosphere with at least one vertex at or above ``z_cut``."""
    s = icosphere(radius, subdivisions)
    keep = s.vertices[s.faces][:, :, 2].max(axis=1) >= z_cut
    return compact(s.vertices, s.faces[keep], name=f"cap_r{radius:g}")


def compact(vertices: np.ndarray, faces: np.ndarray, name: str = "") -> TriangleMesh:
    """Mesh with unreferenced vertices removed."""
    used, inverse = np.unique(faces, return_inverse=True)
    return TriangleMesh(vertices[used], inverse.reshape(-1, 3), name=name)


def box_mesh(lx: float, ly: float, lz: float) -> TriangleMesh:
    """Closed axis-aligned box centred at the origin."""
    h = np.array([lx, ly, lz]) / 2.0
    corners = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]) * h
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    faces = []
    for a, b, c, d in quads:
        faces += [(a, b, c), (a, c, d)]
    return TriangleMesh(corners, np.array(faces), name="box")


def square_grid_mesh(n: int = 1, size: float = 1.0, z: float = 0.0) -> TriangleMesh:
    """Flat n x n square grid of 2*n*n triangles."""
    xs = np.linspace(0.0, size, n + 1)
    gx, gy = np.meshgrid(xs, xs)
    v = np.column_stack([gx.ravel(), gy.ravel(), np.full(gx.size, z)])
    faces = []
    for r in range(n):
        for c in range(n):
            a = r * (n + 1) + c
            faces += [(a, a + 1, a + n + 2), (a, a + n + 2, a + n + 1)]
    return TriangleMesh(v, np.array(faces), name="square")


def frame_mesh(outer: float = 3.0, inner: float = 1.0) -> TriangleMesh:
    """Square annulus of exactly 8 triangles between two concentric squares."""
    o, i = outer / 2.0, inner / 2.0
    ring_o = [(-o, -o), (o, -o), (o, o), (-o, o)]
    ring_i = [(-i, -i), (i, -i), (i, i), (-i, i)]
    v = np.array([(x, y, 0.0) for x, y in ring_o + ring_i])
    faces = []
    for k in range(4):
        a, b = k, (k + 1) % 4
        faces += [(a, b, 4 + b), (a, 4 + b, 4 + a)]
    return TriangleMesh(v, np.array(faces), name="frame")


def elliptic_plate(
    a: float,
    b: float,
    rings: int,
    sectors: int,
    height: Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray],
    name: str = "plate",
) -> TriangleMesh:
    """
    Elliptic disc meshed with concentric rings, lifted by ``height(x, y, rho)``.

    ``rho`` is the normalised elliptic radius; the outer ring lies exactly
    on rho = 1 so ``height`` fully controls the boundary loop.
    """
    rho = np.arange(1, rings + 1) / rings
    phi = 2 * np.pi * np.arange(sectors) / sectors
    rr, pp = np.meshgrid(rho, phi, indexing="ij")
    x = np.concatenate([[0.0], (a * rr * np.cos(pp)).ravel()])
    y = np.concatenate([[0.0], (b * rr * np.sin(pp)).ravel()])
    r = np.concatenate([[0.0], rr.ravel()])
    z = height(x, y, r)
    verts = np.column_stack([x, y, z])

    def vid(ring, s):
        return 1 + ring * sectors + (s % sectors)

    faces = [(0, vid(0, s), vid(0, s + 1)) for s in range(sectors)]
    for ring in range(rings - 1):
        for s in range(sectors):
            p, q = vid(ring, s), vid(ring, s + 1)
            p2, q2 = vid(ring + 1, s), vid(ring + 1, s + 1)
            faces += [(p, p2, q2), (p, q2, q)]
    return TriangleMesh(verts, np.array(faces), name=name)


def plate_pair(
    length: float = 356.0,
    width: float = 208.0,
    gap: float = 60.0,
    arch: float = 15.0,
    tilt_deg: float = 0.0,
    rings: int = 40,
    sectors: int = 96,
    name: str = "pair",
) -> tuple[TriangleMesh, TriangleMesh]:
    """
    Sound board and back whose contours lie exactly in known planes.

    The sound-board contour plane is z = gap/2 + tan(tilt/2) x, the back
    contour plane is its mirror image in z = 0, so the plane of symmetry is
    z = 0 and the plates open towards +x (positive parallelism angle for a
    neck pointing to +x).
    """
    a, b = length / 2.0, width / 2.0
    k = math.tan(math.radians(tilt_deg) / 2.0)

    def sb(x, y, r):
        return gap / 2.0 + k * x + arch * (1.0 - r * r)

    def back(x, y, r):
        return -(gap / 2.0 + k * x + arch * (1.0 - r * r))

    return (
        elliptic_plate(a, b, rings, sectors, sb, name=f"{name}_sb"),
        elliptic_plate(a, b, rings, sectors, back, name=f"{name}_back"),
    )


# ---------------------------------------------------------------------------
# grooved plate with a known channel


def ellipse_distance(a: float, b: float, x, y) -> np.ndarray:
    """
    Euclidean distance from points to the ellipse (x/a)^2 + (y/b)^2 = 1, a >= b.

    Root of the closest-point equation found by bisection on the
    parametrisation of Eberly, "Distance from a point to an ellipse".
    """
    if a < b:
        return ellipse_distance(b, a, y, x)
    x = np.abs(np.asarray(x, dtype=np.float64))
    y = np.abs(np.asarray(y, dtype=np.float64))
    shape = np.broadcast(x, y).shape
    x, y = np.broadcast_to(x, shape).ravel(), np.broadcast_to(y, shape).ravel()
    d = np.empty(x.shape)

    on_axis = y == 0
    # points on the major axis: closest point is off-axis when close to the centre
    xa = x[on_axis]
    inner = xa < (a * a - b * b) / a
    x0 = np.where(inner, a * a * xa / np.where(inner, a * a - b * b, 1.0), a)
    y0 = np.where(inner, b * np.sqrt(np.clip(1.0 - (x0 / a) ** 2, 0.0, None)), 0.0)
    d[on_axis] = np.hypot(xa - x0, y0)

    m = ~on_axis
    z0, z1 = x[m] / a, y[m] / b
    r0 = (a / b) ** 2
    n0 = r0 * z0
    lo = z1 - 1.0
    hi = np.where(z0 ** 2 + z1 ** 2 >= 1.0, np.hypot(n0, z1) - 1.0, 0.0)
    for _ in range(100):
        s = 0.5 * (lo + hi)
        g = (n0 / (s + r0)) ** 2 + (z1 / (s + 1.0)) ** 2 - 1.0
        lo = np.where(g > 0, s, lo)
        hi = np.where(g > 0, hi, s)
    s = 0.5 * (lo + hi)
    px = r0 * x[m] / (s + r0)
    py = y[m] / (s + 1.0)
    d[m] = np.hypot(x[m] - px, y[m] - py)
    return d.reshape(shape)


@dataclass(frozen=True)
class GroovedPlate:
    mesh: TriangleMesh
    semi_axes: tuple[float, float]
    groove_inset: float
    erased_arc: tuple[float, float] | None

    def edge_distance(self, x, y) -> np.ndarray:
        """Distance in mm from (x, y) to the plate outline."""
        return ellipse_distance(*self.semi_axes, x, y)

    def groove_distance(self, x, y) -> np.ndarray:
        """Distance in mm from (x, y) to the bottom line of the groove."""
        return np.abs(self.edge_distance(x, y) - self.groove_inset)

    def on_erased_arc(self, x, y) -> np.ndarray:
        if self.erased_arc is None:
            return np.zeros(np.shape(x), dtype=bool)
        centre, span = self.erased_arc
        phi = np.degrees(np.arctan2(y, x))
        delta = (phi - centre + 180.0) % 360.0 - 180.0
        return np.abs(delta) <= span / 2.0


def grooved_plate(
    length: float = 300.0,
    width: float = 180.0,
    step: float = 0.25,
    groove_inset: float = 6.0,
    groove_depth: float = 0.8,
    groove_sigma: float = 1.5,
    rim_width: float = 12.0,
    arch: float = 15.0,
    arch_scale: float = 30.0,
    erased_arc: tuple[float, float] | None = None,
    taper_deg: float = 15.0,
    z0: float = 20.0,
    name: str = "grooved",
) -> GroovedPlate:
    """
    Arched elliptic sound board with a Gaussian groove at a constant inset.

    The surface is flat within ``rim_width`` of the edge, then rises into
    the arching; the groove runs at ``groove_inset`` mm from the outline.
    ``erased_arc = (centre_deg, span_deg)`` removes the groove over that
    polar-angle arc, fading back in over ``taper_deg`` on either side, as on
    a plate shortened by reduction. Vertices sit on a ``step`` lattice so
    resampling at the same step reads them back exactly.
    """
    a, b = length / 2.0, width / 2.0
    ia, ib = int(math.floor(a / step)), int(math.floor(b / step))
    xs = np.arange(-ia, ia + 1) * step
    ys = np.arange(-ib, ib + 1) * step
    gx, gy = np.meshgrid(xs, ys)
    inside = (gx / a) ** 2 + (gy / b) ** 2 < 1.0
    d = ellipse_distance(a, b, gx[inside], gy[inside])

    rise = np.where(d > rim_width, 1.0 - np.exp(-(((d - rim_width) / arch_scale) ** 2)), 0.0)
    weight = np.ones_like(d)
    if erased_arc is not None:
        centre, span = erased_arc
        phi = np.degrees(np.arctan2(gy[inside], gx[inside]))
        delta = np.abs((phi - centre + 180.0) % 360.0 - 180.0) - span / 2.0
        ramp = np.clip(delta / taper_deg, 0.0, 1.0)
        weight = np.where(delta <= 0, 0.0, np.sin(0.5 * np.pi * ramp) ** 2)
    groove = groove_depth * weight * np.exp(-((d - groove_inset) ** 2) / (2 * groove_sigma ** 2))
    z = z0 + arch * rise - groove

    index = np.full(gx.shape, -1, dtype=np.int64)
    index[inside] = np.arange(inside.sum())
    verts = np.column_stack([gx[inside], gy[inside], z])
    a00 = index[:-1, :-1].ravel()
    a01 = index[:-1, 1:].ravel()
    a10 = index[1:, :-1].ravel()
    a11 = index[1:, 1:].ravel()
    t1 = np.column_stack([a00, a01, a11])
    t2 = np.column_stack([a00, a11, a10])
    faces = np.concatenate([t1[(t1 >= 0).all(axis=1)], t2[(t2 >= 0).all(axis=1)]])
    mesh = TriangleMesh(verts, faces, name=name)
    return GroovedPlate(mesh, (a, b), groove_inset, erased_arc)


# ---------------------------------------------------------------------------
# synthetic corpus


def synthetic_corpus(
    directory,
    count: int = 5,
    back_only: int = 1,
    seed: int = 0,
    rings: int = 24,
    sectors: int = 64,
) -> Path:
    """
    Write ``count`` plate pairs plus a corpus table into ``directory``.

    Instruments get relative tilts cycling through 0, 0.3, 1 and 5 degrees
    and a random horizontal turn plus a tilt of up to 10 degrees; the neck
    direction column follows the turn. The last ``back_only`` instruments
    have no sound board. Meshes alternate between binary PLY and OBJ.
    Returns the path of the corpus table.
    """
    from .report import InstrumentRecord, write_corpus_metadata

    directory = Path(directory)
    mesh_dir = directory / "meshes"
    mesh_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    tilts = (0.0, 0.3, 1.0, 5.0)
    records = []
    for i in range(count):
        inv = f"S{i + 1:03d}"
        size = "cello" if i % 4 == 3 else "violin"
        scale = 2.1 if size == "cello" else 1.0
        sb, back = plate_pair(
            length=356.0 * scale, width=208.0 * scale, gap=60.0 * scale, arch=15.0 * scale,
            tilt_deg=tilts[i % len(tilts)], rings=rings, sectors=sectors, name=inv,
        )
        turn = Rotation.from_euler("z", rng.uniform(0.0, 360.0), degrees=True)
        axis = rng.normal(size=3)
        axis[2] = 0.0
        lean = Rotation.from_rotvec(axis / np.linalg.norm(axis) * math.radians(rng.uniform(0.0, 10.0)))
        t = RigidTransform((lean * turn).as_matrix(), rng.uniform(-50.0, 50.0, 3))
        neck = t.rotation @ np.array([1.0, 0.0, 0.0])
        write = write_ply if i % 2 == 0 else write_obj
        ext = "ply" if i % 2 == 0 else "obj"
        paths = {}
        for side, plate in (("sb", sb), ("back", back)):
            moved = TriangleMesh(t.apply(plate.vertices), plate.faces, plate.name)
            paths[side] = write(moved, mesh_dir / f"{inv}_{side}.{ext}")
        missing_sb = i >= count - back_only
        records.append(
            InstrumentRecord(
                inventory_id=inv,
                size=size,
                attribution="synthetic" if i % 3 else "?",
                date="?" if i % 2 else "2026",
                sound_board_path=None if missing_sb else paths["sb"],
                back_path=paths["back"],
                neck_direction=(float(neck[0]), float(neck[1])),
                notes=f"tilt {tilts[i % len(tilts)]} deg",
            )
        )
    return write_corpus_metadata(records, directory / "corpus.csv")
