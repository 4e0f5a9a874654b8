"""
mesh.py
-------

Triangle meshes of instrument plates: ingestion from PLY/OBJ, rigid
transforms and boundary-loop (plate contour) extraction.

All coordinates are millimetres.
"""

from __future__ import annotations

import logging
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GeometryError, MeshFormatError

log = logging.getLogger(__name__)

DEGENERATE_AREA_MM2 = 1e-12


def _frozen(a, dtype) -> np.ndarray:
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """
    Indexed triangle mesh.

    Parameters
    ----------
    vertices : (n, 3) float
      Vertex positions in mm.
    faces : (m, 3) int
      Vertex indices of each triangle.
    name : str
      Free-text label, usually the source file stem.
    dropped_faces : int
      Number of degenerate faces removed when the mesh was built.
    """

    vertices: np.ndarray
    faces: np.ndarray
    name: str = ""
    dropped_faces: int = 0

    def __post_init__(self) -> None:
        v = _frozen(self.vertices, np.float64)
        f = _frozen(self.faces, np.int64)
        if v.ndim != 2 or v.shape[1] != 3 or f.ndim != 2 or f.shape[1] != 3:
            raise GeometryError("invalid-shape", "vertices and faces must be (n, 3) arrays")
        if len(v) == 0 or len(f) == 0:
            raise GeometryError("empty-mesh", f"{len(v)} vertices, {len(f)} faces")
        if not np.isfinite(v).all():
            bad = int(np.flatnonzero(~np.isfinite(v).all(axis=1))[0])
            raise GeometryError("invalid-vertex", f"vertex {bad} has a non-finite coordinate")
        if f.min() < 0 or f.max() >= len(v):
            bad = int(np.flatnonzero(((f < 0) | (f >= len(v))).any(axis=1))[0])
            raise GeometryError(
                "invalid-vertex",
                f"face {bad} references vertex outside 0..{len(v) - 1}: {f[bad].tolist()}",
            )
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @classmethod
    def build(cls, vertices, faces, name: str = "") -> "TriangleMesh":
        """Construct a mesh, silently dropping degenerate faces (counted in ``dropped_faces``)."""
        v = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
        f = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
        if len(v) and len(f) and f.min() >= 0 and f.max() < len(v) and np.isfinite(v).all():
            keep = ~degenerate_faces(v, f)
            dropped = int(len(f) - keep.sum())
            f = f[keep]
        else:
            # let __post_init__ report the precise problem
            dropped = 0
        if dropped:
            log.info("%s: dropped %d degenerate faces", name or "mesh", dropped)
        return cls(v, f, name, dropped)

    @property
    def triangles(self) -> np.ndarray:
        """(m, 3, 3) vertex coordinates per face."""
        return self.vertices[self.faces]

    def face_areas(self) -> np.ndarray:
        t = self.triangles
        return 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)

    def __repr__(self) -> str:
        return f"TriangleMesh({self.name!r}, {len(self.vertices)} vertices, {len(self.faces)} faces)"


def degenerate_faces(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    """Boolean mask of faces with repeated indices or area <= 1e-12 mm^2."""
    repeated = (
        (faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 0] == faces[:, 2])
    )
    t = vertices[faces]
    area = 0.5 * np.linalg.norm(np.cross(t[:, 1] - t[:, 0], t[:, 2] - t[:, 0]), axis=1)
    return repeated | (area <= DEGENERATE_AREA_MM2)


@dataclass(frozen=True, eq=False)
class RigidTransform:
    """Proper rigid motion ``p -> rotation @ p + translation``."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        r = _frozen(self.rotation, np.float64).reshape(3, 3)
        t = _frozen(self.translation, np.float64).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9) or np.linalg.det(r) < 0:
            raise GeometryError("invalid-rotation", "rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation

    def compose(self, inner: "RigidTransform") -> "RigidTransform":
        """Return ``self ∘ inner`` (``inner`` is applied first)."""
        return RigidTransform(
            self.rotation @ inner.rotation,
            self.rotation @ inner.translation + self.translation,
        )

    __matmul__ = compose

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def allclose(self, other: "RigidTransform", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.rotation, other.rotation, atol=atol, rtol=0)
            and np.allclose(self.translation, other.translation, atol=atol, rtol=0)
        )


def rotation_about_axis(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix; ``angle`` in radians, right-handed about ``axis``."""
    k = np.asarray(axis, dtype=np.float64)
    k = k / np.linalg.norm(k)
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + math.sin(angle) * kx + (1.0 - math.cos(angle)) * (kx @ kx)


@dataclass(frozen=True, eq=False)
class Polyline3:
    """Ordered 3D points; when ``closed`` the last point connects back to the first."""

    points: np.ndarray
    closed: bool = False

    def __post_init__(self) -> None:
        p = _frozen(self.points, np.float64).reshape(-1, 3)
        if len(p) < 2:
            raise GeometryError("invalid-polyline", "a polyline needs at least 2 points")
        if (np.linalg.norm(np.diff(p, axis=0), axis=1) <= 1e-9).any():
            raise GeometryError("invalid-polyline", "consecutive points coincide")
        if self.closed and np.linalg.norm(p[0] - p[-1]) <= 1e-9:
            raise GeometryError("invalid-polyline", "closed polyline repeats its first point")
        object.__setattr__(self, "points", p)

    def __len__(self) -> int:
        return len(self.points)

    def segments(self) -> np.ndarray:
        """(k, 2, 3) consecutive point pairs, including the closing one."""
        p = self.points
        q = np.roll(p, -1, axis=0) if self.closed else p[1:]
        return np.stack([p[: len(q)], q], axis=1)

    def length(self) -> float:
        s = self.segments()
        return float(np.linalg.norm(s[:, 1] - s[:, 0], axis=1).sum())

    def centroid(self) -> np.ndarray:
        return self.points.mean(axis=0)

    def signed_area_xy(self) -> float:
        """Shoelace area of the Oxy projection (counter-clockwise positive)."""
        x, y = self.points[:, 0], self.points[:, 1]
        return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


# ---------------------------------------------------------------------------
# transforms and topology


def apply_rigid_transform(mesh: TriangleMesh, t: RigidTransform) -> TriangleMesh:
    """Map every vertex through ``t``; connectivity is shared with the input."""
    return TriangleMesh(t.apply(mesh.vertices), mesh.faces, mesh.name, mesh.dropped_faces)


def boundary_loops(mesh: TriangleMesh, min_points: int = 3) -> list[Polyline3]:
    """
    Chains of edges that belong to exactly one face.

    Parameters
    ----------
    mesh : TriangleMesh
      Manifold-with-boundary mesh.
    min_points : int
      Loops with fewer points are discarded.

    Returns
    -------
    loops : list of Polyline3
      Longest loop (by length) first. Each loop starts at its lowest
      vertex index and follows the winding of the face owning its first edge.

    Raises
    ------
    GeometryError
      ``non-manifold-edge`` if an edge is shared by more than two faces.
    """
    f = mesh.faces
    directed = np.stack([f, np.roll(f, -1, axis=1)], axis=2).reshape(-1, 2)
    lo = directed.min(axis=1)
    hi = directed.max(axis=1)
    n = np.int64(len(mesh.vertices))
    key = lo * n + hi
    _, inverse, counts = np.unique(key, return_inverse=True, return_counts=True)
    per_edge = counts[inverse]
    if (per_edge > 2).any():
        i = int(np.flatnonzero(per_edge > 2)[0])
        raise GeometryError(
            "non-manifold-edge",
            f"edge ({lo[i]}, {hi[i]}) is shared by {per_edge[i]} faces",
        )
    bnd = directed[per_edge == 1]
    if len(bnd) == 0:
        return []

    adjacency: dict[int, list[int]] = defaultdict(list)
    forward: set[tuple[int, int]] = set()
    for a, b in bnd.tolist():
        adjacency[a].append(b)
        adjacency[b].append(a)
        forward.add((a, b))
    for nbrs in adjacency.values():
        nbrs.sort()

    used: set[tuple[int, int]] = set()

    def edge(a: int, b: int) -> tuple[int, int]:
        return (a, b) if a < b else (b, a)

    chains: list[tuple[list[int], bool]] = []
    for start in sorted(adjacency):
        while True:
            free = [b for b in adjacency[start] if edge(start, b) not in used]
            if not free:
                break
            # prefer the face-winding direction so loop orientation is stable
            nxt = next((b for b in free if (start, b) in forward), free[0])
            chain = [start]
            cur = nxt
            used.add(edge(start, cur))
            closed = False
            while True:
                if cur == start:
                    closed = True
                    break
                chain.append(cur)
                options = [b for b in adjacency[cur] if edge(cur, b) not in used]
                if not options:
                    break
                step = options[0]
                used.add(edge(cur, step))
                cur = step
            chains.append((chain, closed))

    loops = []
    for chain, closed in chains:
        if len(chain) < max(min_points, 2):
            continue
        loops.append(Polyline3(mesh.vertices[chain], closed=closed))
    order = sorted(range(len(loops)), key=lambda i: -loops[i].length())
    return [loops[i] for i in order]


# ---------------------------------------------------------------------------
# file ingestion

_FORMATS = {"ply-ascii", "ply-binary-le", "obj"}

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def load_mesh(path, format: str | None = None, unit_scale: float = 1.0) -> TriangleMesh:
    """
    Read a PLY (ascii or binary little-endian) or OBJ triangle mesh.

    ``format`` is one of ``ply-ascii``, ``ply-binary-le``, ``obj``; when
    omitted it is inferred from the file. Coordinates are multiplied by
    ``unit_scale``. Polygons are fan-triangulated, degenerate faces dropped.
    """
    path = Path(path)
    if not unit_scale > 0 or not math.isfinite(unit_scale):
        raise ValueError(f"unit_scale must be a positive finite number, got {unit_scale}")
    if format is not None and format not in _FORMATS:
        raise ValueError(f"unknown mesh format {format!r}; expected one of {sorted(_FORMATS)}")
    data = path.read_bytes()
    if format is None:
        format = _sniff(data, path)
    if format == "obj":
        vertices, faces = _parse_obj(data)
    else:
        vertices, faces, found = _parse_ply(data)
        if found != format:
            raise MeshFormatError(f"file is {found}, not {format}", line=2)
    if len(vertices) == 0 or len(faces) == 0:
        raise GeometryError("empty-mesh", f"{path.name}: {len(vertices)} vertices, {len(faces)} faces")
    vertices = vertices * float(unit_scale)
    return TriangleMesh.build(vertices, faces, name=path.stem)


def _sniff(data: bytes, path: Path) -> str:
    if data.startswith(b"ply"):
        m = re.search(rb"^format\s+(\S+)", data[:4096], re.M)
        if not m:
            raise MeshFormatError("PLY header lacks a format line", line=2)
        return {b"ascii": "ply-ascii", b"binary_little_endian": "ply-binary-le"}.get(
            m.group(1), m.group(1).decode("ascii", "replace")
        )
    if path.suffix.lower() == ".ply":
        raise MeshFormatError("missing 'ply' magic", line=1)
    return "obj"


def _fan(poly: list[int]) -> list[tuple[int, int, int]]:
    return [(poly[0], poly[i], poly[i + 1]) for i in range(1, len(poly) - 1)]


def _parse_obj(data: bytes) -> tuple[np.ndarray, np.ndarray]:
    vertices: list[tuple[float, float, float]] = []
    faces: list[tuple[int, int, int]] = []
    for lineno, raw in enumerate(data.decode("utf-8", "replace").splitlines(), start=1):
        parts = raw.split("#", 1)[0].split()
        if not parts:
            continue
        tag = parts[0]
        try:
            if tag == "v":
                vertices.append((float(parts[1]), float(parts[2]), float(parts[3])))
            elif tag == "f":
                poly = []
                for token in parts[1:]:
                    i = int(token.split("/", 1)[0])
                    # OBJ is 1-based; negative indices count back from the latest vertex
                    poly.append(i - 1 if i > 0 else len(vertices) + i)
                if len(poly) < 3:
                    raise ValueError("face with fewer than 3 vertices")
                faces.extend(_fan(poly))
        except (ValueError, IndexError) as exc:
            raise MeshFormatError(f"bad OBJ record {raw.strip()!r}: {exc}", line=lineno) from None
    return np.array(vertices, dtype=np.float64).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3)


@dataclass
class _PlyElement:
    name: str
    count: int
    # (name, dtype) for scalars, (name, count_dtype, item_dtype) for lists
    props: list[tuple] = field(default_factory=list)

    @property
    def has_lists(self) -> bool:
        return any(len(p) == 3 for p in self.props)


def _parse_ply_header(data: bytes) -> tuple[str, list[_PlyElement], int, int]:
    end = data.find(b"end_header")
    if end < 0:
        raise MeshFormatError("PLY header has no end_header", line=1)
    nl = data.find(b"\n", end)
    body_start = len(data) if nl < 0 else nl + 1
    lines = data[:end].decode("ascii", "replace").splitlines()
    fmt = None
    elements: list[_PlyElement] = []
    for lineno, line in enumerate(lines, start=1):
        parts = line.split()
        if not parts or parts[0] in ("ply", "comment", "obj_info"):
            continue
        try:
            if parts[0] == "format":
                fmt = parts[1]
            elif parts[0] == "element":
                elements.append(_PlyElement(parts[1], int(parts[2])))
            elif parts[0] == "property":
                if not elements:
                    raise ValueError("property before any element")
                if parts[1] == "list":
                    elements[-1].props.append(
                        (parts[4], np.dtype(_PLY_TYPES[parts[2]]), np.dtype(_PLY_TYPES[parts[3]]))
                    )
                else:
                    elements[-1].props.append((parts[2], np.dtype(_PLY_TYPES[parts[1]])))
            else:
                raise ValueError(f"unknown header keyword {parts[0]!r}")
        except (ValueError, IndexError, KeyError) as exc:
            raise MeshFormatError(f"bad PLY header line {line!r}: {exc}", line=lineno) from None
    if fmt is None:
        raise MeshFormatError("PLY header lacks a format line", line=2)
    return fmt, elements, body_start, len(lines) + 1


def _vertex_xyz(el: _PlyElement, table: dict[str, np.ndarray]) -> np.ndarray:
    try:
        return np.column_stack([table["x"], table["y"], table["z"]]).astype(np.float64)
    except KeyError:
        raise MeshFormatError("vertex element lacks x/y/z properties") from None


def _face_prop(el: _PlyElement) -> str:
    for p in el.props:
        if len(p) == 3 and p[0] in ("vertex_indices", "vertex_index"):
            return p[0]
    raise MeshFormatError("face element lacks a vertex_indices list")


def _parse_ply(data: bytes) -> tuple[np.ndarray, np.ndarray, str]:
    fmt, elements, body, header_lines = _parse_ply_header(data)
    if fmt == "ascii":
        v, f = _ply_ascii(data[body:], elements, header_lines + 1)
        return v, f, "ply-ascii"
    if fmt == "binary_little_endian":
        v, f = _ply_binary(data, body, elements)
        return v, f, "ply-binary-le"
    if fmt == "binary_big_endian":
        raise MeshFormatError("big-endian PLY is not supported", line=2)
    raise MeshFormatError(f"unknown PLY format {fmt!r}", line=2)


def _ply_ascii(body: bytes, elements: list[_PlyElement], first_line: int):
    lines = body.decode("ascii", "replace").splitlines()
    pos = 0
    vertices = np.zeros((0, 3))
    faces: list[tuple[int, int, int]] = []
    for el in elements:
        rows = lines[pos: pos + el.count]
        if len(rows) < el.count:
            raise MeshFormatError(
                f"element {el.name!r} expects {el.count} rows, file ends after {len(rows)}",
                line=first_line + pos + len(rows),
            )
        if el.name == "vertex":
            table: dict[str, list[float]] = {p[0]: [] for p in el.props}
            for i, row in enumerate(rows):
                tokens = row.split()
                try:
                    k = 0
                    for p in el.props:
                        if len(p) == 3:
                            n = int(tokens[k])
                            k += 1 + n
                        else:
                            table[p[0]].append(float(tokens[k]))
                            k += 1
                except (ValueError, IndexError):
                    raise MeshFormatError(f"bad vertex row {row!r}", line=first_line + pos + i) from None
            vertices = _vertex_xyz(el, {k: np.asarray(v) for k, v in table.items()})
        elif el.name == "face":
            target = _face_prop(el)
            for i, row in enumerate(rows):
                tokens = row.split()
                try:
                    k = 0
                    for p in el.props:
                        if len(p) == 3:
                            n = int(tokens[k])
                            items = [int(float(t)) for t in tokens[k + 1: k + 1 + n]]
                            if len(items) != n:
                                raise IndexError
                            if p[0] == target:
                                if n < 3:
                                    raise ValueError
                                faces.extend(_fan(items))
                            k += 1 + n
                        else:
                            k += 1
                except (ValueError, IndexError):
                    raise MeshFormatError(f"bad face row {row!r}", line=first_line + pos + i) from None
        pos += el.count
    return vertices, np.array(faces, dtype=np.int64).reshape(-1, 3)


def _ply_binary(data: bytes, offset: int, elements: list[_PlyElement]):
    vertices = np.zeros((0, 3))
    faces = np.zeros((0, 3), dtype=np.int64)
    for el in elements:
        if not el.has_lists:
            dtype = np.dtype([(p[0], p[1].newbyteorder("<")) for p in el.props])
            need = dtype.itemsize * el.count
            if offset + need > len(data):
                raise MeshFormatError(f"truncated element {el.name!r}", offset=len(data))
            table = np.frombuffer(data, dtype=dtype, count=el.count, offset=offset)
            offset += need
            if el.name == "vertex":
                vertices = _vertex_xyz(el, {n: table[n] for n in table.dtype.names})
            continue
        fast = _ply_binary_triangles(data, offset, el)
        if fast is not None:
            tris, offset = fast
        else:
            tris, offset = _ply_binary_slow(data, offset, el)
        if el.name == "face":
            faces = tris
    return vertices, faces


def _ply_binary_triangles(data: bytes, offset: int, el: _PlyElement):
    """Structured read assuming every list holds exactly 3 items; None if not."""
    fields = []
    for p in el.props:
        if len(p) == 3:
            fields.append((p[0] + "__n", p[1].newbyteorder("<")))
            fields.append((p[0], p[2].newbyteorder("<"), (3,)))
        else:
            fields.append((p[0], p[1].newbyteorder("<")))
    dtype = np.dtype(fields)
    if offset + dtype.itemsize * el.count > len(data):
        return None
    table = np.frombuffer(data, dtype=dtype, count=el.count, offset=offset)
    for p in el.props:
        if len(p) == 3 and (table[p[0] + "__n"] != 3).any():
            return None
    if el.name != "face":
        return np.zeros((0, 3), dtype=np.int64), offset + dtype.itemsize * el.count
    return table[_face_prop(el)].astype(np.int64), offset + dtype.itemsize * el.count


def _ply_binary_slow(data: bytes, offset: int, el: _PlyElement):
    target = _face_prop(el) if el.name == "face" else None
    faces: list[tuple[int, int, int]] = []
    buf = memoryview(data)
    for _ in range(el.count):
        for p in el.props:
            if len(p) == 3:
                cdt, idt = p[1].newbyteorder("<"), p[2].newbyteorder("<")
                if offset + cdt.itemsize > len(data):
                    raise MeshFormatError(f"truncated element {el.name!r}", offset=offset)
                n = int(np.frombuffer(buf, cdt, 1, offset)[0])
                offset += cdt.itemsize
                if offset + n * idt.itemsize > len(data):
                    raise MeshFormatError(f"truncated element {el.name!r}", offset=offset)
                items = np.frombuffer(buf, idt, n, offset).astype(np.int64).tolist()
                offset += n * idt.itemsize
                if p[0] == target:
                    if n < 3:
                        raise MeshFormatError("face with fewer than 3 vertices", offset=offset)
                    faces.extend(_fan(items))
            else:
                offset += p[1].itemsize
    return np.array(faces, dtype=np.int64).reshape(-1, 3), offset
