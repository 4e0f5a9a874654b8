"""
contours.py
-----------

Plane/mesh intersection and stacks of horizontal contour lines.
"""

from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from . import defaults
from .alignment import Plane
from .mesh import Polyline3, TriangleMesh

# endpoints closer than this are the same contour vertex
CHAIN_TOLERANCE_MM = 1e-6


@dataclass(frozen=True)
class ContourLevel:
    z: float
    polylines: tuple[Polyline3, ...]


@dataclass(frozen=True, eq=False)
class ContourSet:
    """Contour polylines of one plate, one entry per horizontal level."""

    plate_id: str
    side: str
    levels: tuple[ContourLevel, ...]
    z_min: float
    z_max: float
    # (xmin, ymin, xmax, ymax) of the plate footprint
    xy_bounds: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        zs = [lv.z for lv in self.levels]
        if any(b <= a for a, b in zip(zs, zs[1:])):
            raise ValueError("contour levels must be strictly increasing")

    @property
    def level_values(self) -> list[float]:
        return [lv.z for lv in self.levels]

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["plate_id", "level_mm", "polyline_index", "point_index", "x", "y", "z"])
        for lv in self.levels:
            for i, pl in enumerate(lv.polylines):
                for j, (x, y, z) in enumerate(pl.points.tolist()):
                    w.writerow([self.plate_id, f"{lv.z:g}", i, j, f"{x:.6f}", f"{y:.6f}", f"{z:.6f}"])
        return out.getvalue()


def intersection_segments(vertices: np.ndarray, faces: np.ndarray, normal, offset: float):
    """
    Raw intersection segments of triangles with a plane.

    Returns
    -------
    points : (k, 3) float
      Distinct intersection points, merged within ``CHAIN_TOLERANCE_MM``.
    segments : (s, 2) int
      Unique undirected segments as index pairs into ``points``.
    """
    normal = np.asarray(normal, dtype=np.float64)
    d = vertices @ normal - offset
    if len(faces) == 0:
        return np.zeros((0, 3)), np.zeros((0, 2), dtype=np.int64)
    s = np.sign(d[faces]).astype(np.int8)
    zeros = (s == 0).sum(axis=1)
    total = s.sum(axis=1)

    # each endpoint is ("v", vertex) or ("e", a, b); encoded as (a, b) with a == b for vertices
    ends: list[np.ndarray] = []

    # no vertex on the plane, vertices on both sides
    m = (zeros == 0) & (np.abs(total) == 1)
    if m.any():
        f, ss = faces[m], s[m]
        # the lone vertex is the one whose sign differs from the row sum
        lone = np.argmax(ss != np.sign(total[m])[:, None], axis=1)
        r = np.arange(len(f))
        a = f[r, lone]
        b = f[r, (lone + 1) % 3]
        c = f[r, (lone + 2) % 3]
        ends.append(np.stack([np.stack([a, b], 1), np.stack([a, c], 1)], 1))

    # one vertex on the plane, the other two on opposite sides
    m = (zeros == 1) & (total == 0)
    if m.any():
        f, ss = faces[m], s[m]
        k = np.argmax(ss == 0, axis=1)
        r = np.arange(len(f))
        a = f[r, k]
        b = f[r, (k + 1) % 3]
        c = f[r, (k + 2) % 3]
        ends.append(np.stack([np.stack([a, a], 1), np.stack([b, c], 1)], 1))

    # an edge in the plane
    m = zeros == 2
    if m.any():
        f, ss = faces[m], s[m]
        k = np.argmax(ss != 0, axis=1)
        r = np.arange(len(f))
        b = f[r, (k + 1) % 3]
        c = f[r, (k + 2) % 3]
        ends.append(np.stack([np.stack([b, b], 1), np.stack([c, c], 1)], 1))

    # triangle lying in the plane contributes its three edges
    m = zeros == 3
    if m.any():
        f = faces[m]
        for i in range(3):
            a, b = f[:, i], f[:, (i + 1) % 3]
            ends.append(np.stack([np.stack([a, a], 1), np.stack([b, b], 1)], 1))

    if not ends:
        return np.zeros((0, 3)), np.zeros((0, 2), dtype=np.int64)
    e = np.concatenate(ends)  # (s, 2 endpoints, 2 vertex ids)
    e = np.sort(e, axis=2)
    flat = e.reshape(-1, 2)
    n = np.int64(len(vertices))
    keys, inverse = np.unique(flat[:, 0] * n + flat[:, 1], return_inverse=True)
    ka, kb = keys // n, keys % n
    # canonical interpolation from the lower vertex index: identical for both faces of an edge
    da, db = d[ka], d[kb]
    same = ka == kb
    denom = np.where(same, 1.0, da - db)
    t = np.where(same, 0.0, da / denom)
    pts = vertices[ka] + t[:, None] * (vertices[kb] - vertices[ka])

    labels = _merge_close(pts)
    seg = labels[inverse.reshape(-1, 2)]
    seg = seg[seg[:, 0] != seg[:, 1]]
    seg = np.unique(np.sort(seg, axis=1), axis=0)
    # compact the point table to those still referenced
    used, seg_compact = np.unique(seg, return_inverse=True)
    _, first = np.unique(labels, return_index=True)
    points = pts[first[used]]
    return points, seg_compact.reshape(-1, 2).astype(np.int64)


def _merge_close(pts: np.ndarray) -> np.ndarray:
    """Label points so that any two within the chaining tolerance share a label."""
    if len(pts) < 2:
        return np.zeros(len(pts), dtype=np.int64)
    pairs = cKDTree(pts).query_pairs(CHAIN_TOLERANCE_MM, output_type="ndarray")
    if len(pairs) == 0:
        return np.arange(len(pts), dtype=np.int64)
    g = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(len(pts), len(pts)))
    _, comp = connected_components(g, directed=False)
    # relabel by first occurrence so labels stay in point order
    _, first = np.unique(comp, return_index=True)
    order = np.argsort(first)
    remap = np.empty_like(order)
    remap[order] = np.arange(len(order))
    return remap[comp].astype(np.int64)


def chain_segments(points: np.ndarray, segments: np.ndarray) -> list[Polyline3]:
    """Join segments sharing endpoints into open and closed polylines."""
    adj: dict[int, list[int]] = defaultdict(list)
    for a, b in segments.tolist():
        adj[a].append(b)
        adj[b].append(a)
    for v in adj.values():
        v.sort()
    used: set[tuple[int, int]] = set()

    def take(a: int, b: int) -> None:
        used.add((a, b) if a < b else (b, a))

    def free(a: int) -> list[int]:
        return [b for b in adj[a] if ((a, b) if a < b else (b, a)) not in used]

    chains: list[tuple[list[int], bool]] = []

    def walk(start: int) -> None:
        while free(start):
            chain = [start]
            cur = free(start)[0]
            take(start, cur)
            closed = False
            while True:
                if cur == start:
                    closed = True
                    break
                chain.append(cur)
                nxt = free(cur)
                if not nxt:
                    break
                take(cur, nxt[0])
                cur = nxt[0]
            chains.append((chain, closed))

    # open chains start at odd-degree nodes, cycles afterwards
    for node in sorted(adj):
        if len(adj[node]) % 2 == 1:
            walk(node)
    for node in sorted(adj):
        walk(node)

    out = []
    for chain, closed in chains:
        out.append(Polyline3(points[chain], closed=closed))
    out.sort(key=lambda p: (-len(p), float(p.points[0, 0]), float(p.points[0, 1])))
    return out


def plane_mesh_intersection(mesh: TriangleMesh, plane: Plane) -> list[Polyline3]:
    """Polylines where ``plane`` cuts ``mesh``; empty if they do not meet."""
    pts, seg = intersection_segments(mesh.vertices, mesh.faces, plane.normal, plane.offset)
    if len(seg) == 0:
        return []
    return chain_segments(pts, seg)


def infer_side(plate: TriangleMesh) -> str:
    return "sound_board" if plate.vertices[:, 2].mean() >= 0 else "back"


def level_values(z_min: float, z_max: float, spacing: float) -> list[float]:
    """Multiples of ``spacing`` inside [z_min, z_max]."""
    lo = math.ceil(round(z_min / spacing, 9))
    hi = math.floor(round(z_max / spacing, 9))
    return [k * spacing for k in range(lo, hi + 1)]


def contour_lines(
    plate: TriangleMesh,
    spacing: float = defaults.CONTOUR_SPACING_MM,
    plate_id: str | None = None,
    side: str | None = None,
) -> ContourSet:
    """
    Horizontal contour lines of an aligned plate.

    Levels are the multiples of ``spacing`` between the plate's lowest and
    highest vertex, so two plates sharing the symmetry-plane datum have
    comparable levels.
    """
    if not spacing > 0:
        raise ValueError("spacing must be positive")
    v, f = plate.vertices, plate.faces
    z = v[:, 2]
    z_min, z_max = float(z.min()), float(z.max())
    fz = z[f]
    fz_lo, fz_hi = fz.min(axis=1), fz.max(axis=1)
    levels = []
    for lv in level_values(z_min, z_max, spacing):
        sel = f[(fz_lo <= lv) & (fz_hi >= lv)]
        pts, seg = intersection_segments(v, sel, (0.0, 0.0, 1.0), lv)
        polylines = chain_segments(pts, seg) if len(seg) else []
        levels.append(ContourLevel(lv, tuple(polylines)))
    bounds = (float(v[:, 0].min()), float(v[:, 1].min()), float(v[:, 0].max()), float(v[:, 1].max()))
    return ContourSet(
        plate_id=plate_id if plate_id is not None else plate.name,
        side=side or infer_side(plate),
        levels=tuple(levels),
        z_min=z_min,
        z_max=z_max,
        xy_bounds=bounds,
    )
