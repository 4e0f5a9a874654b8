"""
elevation.py
------------

Resampling of an aligned plate onto a regular horizontal grid, and the
1D slices (rows, columns, diagonals) through that grid.

Grid arrays are indexed ``z[row, col]`` with rows along y and columns
along x; node (row, col) sits at ``((i0 + col) * step, (j0 + row) * step)``.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass

import numpy as np

from . import defaults
from .errors import GeometryError
from .mesh import TriangleMesh

SIDES = ("sound_board", "back")
DIRECTIONS = ("horizontal", "vertical", "diag_plus", "diag_minus")

_RASTER_MAGIC = b"PLTGRID1"
_RASTER_HEADER = struct.Struct("<8sqqdIIB7x")

# barycentric slack so nodes on shared edges are claimed by both faces
_INSIDE_TOL = 1e-12
# candidate (node, face) pairs evaluated per batch
_BATCH = 4_000_000


@dataclass(frozen=True, eq=False)
class ElevationGrid:
    """
    Regular grid of plate elevations.

    ``z`` holds elevations in mm with NaN marking nodes outside the
    plate footprint or over holes.
    """

    origin_index: tuple[int, int]
    step: float
    z: np.ndarray
    side: str = "sound_board"
    plate_id: str = ""

    def __post_init__(self) -> None:
        if not self.step > 0:
            raise ValueError("step must be positive")
        z = np.array(self.z, dtype=np.float64)
        if z.ndim != 2 or min(z.shape) < 2:
            raise ValueError(f"grid must be at least 2x2, got {z.shape}")
        if self.side not in SIDES:
            raise ValueError(f"side must be one of {SIDES}")
        z.setflags(write=False)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "origin_index", (int(self.origin_index[0]), int(self.origin_index[1])))

    @property
    def ny(self) -> int:
        return self.z.shape[0]

    @property
    def nx(self) -> int:
        return self.z.shape[1]

    @property
    def origin(self) -> tuple[float, float]:
        return (self.origin_index[0] * self.step, self.origin_index[1] * self.step)

    @property
    def valid(self) -> np.ndarray:
        return ~np.isnan(self.z)

    @property
    def outward(self) -> np.ndarray:
        """Elevation measured away from the symmetry plane (z for sound boards, -z for backs)."""
        return self.z if self.side == "sound_board" else -self.z

    def x_of(self, col) -> np.ndarray:
        return (self.origin_index[0] + np.asarray(col)) * self.step

    def y_of(self, row) -> np.ndarray:
        return (self.origin_index[1] + np.asarray(row)) * self.step

    def xy(self) -> tuple[np.ndarray, np.ndarray]:
        """Node coordinate arrays, each shaped like ``z``."""
        return np.meshgrid(self.x_of(np.arange(self.nx)), self.y_of(np.arange(self.ny)))

    def to_raster(self) -> bytes:
        """Binary raster: fixed header then row-major float32 elevations (NaN = invalid)."""
        header = _RASTER_HEADER.pack(
            _RASTER_MAGIC,
            self.origin_index[0],
            self.origin_index[1],
            self.step,
            self.nx,
            self.ny,
            SIDES.index(self.side),
        )
        return header + self.z.astype("<f4").tobytes()

    @classmethod
    def from_raster(cls, data: bytes, plate_id: str = "") -> "ElevationGrid":
        if len(data) < _RASTER_HEADER.size:
            raise ValueError("raster too short")
        magic, i0, j0, step, nx, ny, side = _RASTER_HEADER.unpack_from(data)
        if magic != _RASTER_MAGIC:
            raise ValueError("not an elevation raster")
        z = np.frombuffer(data, dtype="<f4", count=nx * ny, offset=_RASTER_HEADER.size)
        return cls((i0, j0), step, z.reshape(ny, nx).astype(np.float64), SIDES[side], plate_id)

    def to_pgm(self) -> str:
        """Plain PGM (P2) for quick viewing: 0 = invalid, 1..65535 = low..high."""
        z = self.z
        valid = self.valid
        out = io.StringIO()
        out.write(f"P2\n# {self.plate_id} {self.side} step={self.step:g} origin={self.origin}\n")
        out.write(f"{self.nx} {self.ny}\n65535\n")
        if valid.any():
            lo, hi = float(z[valid].min()), float(z[valid].max())
            scale = 65534.0 / (hi - lo) if hi > lo else 0.0
            levels = np.where(valid, np.round((np.nan_to_num(z, nan=lo) - lo) * scale) + 1, 0)
        else:
            levels = np.zeros(z.shape)
        # PGM rows run top to bottom; flip so +y is up
        for row in levels[::-1].astype(np.int64):
            out.write(" ".join(map(str, row.tolist())) + "\n")
        return out.getvalue()


def grid_extent(lo: float, hi: float, step: float) -> tuple[int, int]:
    """First node index and node count covering [lo, hi] padded by one step."""
    i0 = math.floor(lo / step) - 1
    i1 = math.ceil(hi / step) + 1
    return i0, i1 - i0 + 1


def resample_grid(
    plate: TriangleMesh,
    step: float = defaults.GRID_STEP_MM,
    side: str | None = None,
    plate_id: str | None = None,
) -> ElevationGrid:
    """
    Sample an aligned plate on a horizontal grid.

    Every node takes the elevation of the triangle its vertical line
    passes through (barycentric interpolation). Where several triangles
    are hit, the one farthest from the symmetry plane wins. Nodes that hit
    nothing are invalid. The grid covers the plate's bounding box plus one
    step, with its origin on a multiple of ``step``.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    v = plate.vertices
    i0, nx = grid_extent(float(v[:, 0].min()), float(v[:, 0].max()), step)
    j0, ny = grid_extent(float(v[:, 1].min()), float(v[:, 1].max()), step)

    tri = v[plate.faces]
    # face bounding boxes in grid units relative to the origin node
    gx = tri[:, :, 0] / step - i0
    gy = tri[:, :, 1] / step - j0
    c_lo = np.ceil(gx.min(axis=1) - 1e-9).astype(np.int64)
    c_hi = np.floor(gx.max(axis=1) + 1e-9).astype(np.int64)
    r_lo = np.ceil(gy.min(axis=1) - 1e-9).astype(np.int64)
    r_hi = np.floor(gy.max(axis=1) + 1e-9).astype(np.int64)
    ncol = np.maximum(c_hi - c_lo + 1, 0)
    nrow = np.maximum(r_hi - r_lo + 1, 0)
    counts = ncol * nrow

    nodes_out: list[np.ndarray] = []
    z_out: list[np.ndarray] = []
    ends = np.cumsum(counts)
    start = 0
    while start < len(counts):
        base = ends[start - 1] if start else 0
        stop = int(np.searchsorted(ends, base + _BATCH, side="right"))
        stop = max(stop, start + 1)
        sl = slice(start, stop)
        nodes, z = _sample_faces(tri[sl], c_lo[sl], r_lo[sl], ncol[sl], counts[sl], i0, j0, step, nx)
        nodes_out.append(nodes)
        z_out.append(z)
        start = stop

    nodes = np.concatenate(nodes_out) if nodes_out else np.zeros(0, dtype=np.int64)
    zc = np.concatenate(z_out) if z_out else np.zeros(0)
    if len(nodes) == 0:
        raise GeometryError("empty-footprint", f"{plate.name or 'plate'} covers no grid node")
    if side is None:
        side = "sound_board" if v[:, 2].mean() >= 0 else "back"

    size = nx * ny
    absz = np.abs(zc)
    best_abs = np.full(size, -np.inf)
    np.maximum.at(best_abs, nodes, absz)
    win = absz == best_abs[nodes]
    best = np.full(size, -np.inf)
    # ties in |z| between opposite signs resolve to the outward side
    outward = zc[win] if side == "sound_board" else -zc[win]
    np.maximum.at(best, nodes[win], outward)
    hit = np.isfinite(best)
    grid = np.full(size, np.nan)
    grid[hit] = best[hit] if side == "sound_board" else -best[hit]
    return ElevationGrid(
        (i0, j0),
        step,
        grid.reshape(ny, nx),
        side,
        plate_id if plate_id is not None else plate.name,
    )


def _sample_faces(tri, c_lo, r_lo, ncol, counts, i0, j0, step, nx):
    total = int(counts.sum())
    face = np.repeat(np.arange(len(counts)), counts)
    offsets = np.repeat(np.cumsum(counts) - counts, counts)
    local = np.arange(total) - offsets
    nc = ncol[face]
    col = c_lo[face] + local % np.maximum(nc, 1)
    row = r_lo[face] + local // np.maximum(nc, 1)

    # barycentrics in mm from the node's exact coordinate, so a node gets the
    # same value whatever grid resolution it belongs to
    t = tri[face]
    x0, y0 = t[:, 0, 0], t[:, 0, 1]
    e1x, e1y = t[:, 1, 0] - x0, t[:, 1, 1] - y0
    e2x, e2y = t[:, 2, 0] - x0, t[:, 2, 1] - y0
    det = e1x * e2y - e1y * e2x
    px = (i0 + col) * step - x0
    py = (j0 + row) * step - y0
    with np.errstate(divide="ignore", invalid="ignore"):
        l1 = (px * e2y - py * e2x) / det
        l2 = (e1x * py - e1y * px) / det
    inside = (
        (np.abs(det) > 1e-14 * step * step)
        & (l1 >= -_INSIDE_TOL)
        & (l2 >= -_INSIDE_TOL)
        & (l1 + l2 <= 1.0 + _INSIDE_TOL)
    )
    tz = t[inside][:, :, 2]
    z0 = tz[:, 0]
    # differences from the first vertex keep constant patches exactly constant
    z = z0 + l1[inside] * (tz[:, 1] - z0) + l2[inside] * (tz[:, 2] - z0)
    return row[inside] * nx + col[inside], z


@dataclass(frozen=True, eq=False)
class Slice:
    """One line of grid nodes in a given direction, ordered by increasing row (then column)."""

    direction: str
    rows: np.ndarray
    cols: np.ndarray
    z: np.ndarray
    spacing: float

    @property
    def valid(self) -> np.ndarray:
        return ~np.isnan(self.z)

    def __len__(self) -> int:
        return len(self.rows)


# row/col increment between consecutive nodes of a slice
DIRECTION_STEP = {
    "horizontal": (0, 1),
    "vertical": (1, 0),
    "diag_plus": (1, 1),
    "diag_minus": (1, -1),
}


def grid_slices(grid: ElevationGrid, direction: str, outward: bool = False) -> list[Slice]:
    """
    All slices of ``grid`` in one direction; each node lies on exactly one of them.

    With ``outward`` the slices carry the outward elevation instead of raw z.
    """
    ny, nx = grid.z.shape
    z = grid.outward if outward else grid.z
    out: list[Slice] = []
    if direction == "horizontal":
        cols = np.arange(nx)
        for r in range(ny):
            out.append(Slice(direction, np.full(nx, r), cols, z[r].copy(), grid.step))
    elif direction == "vertical":
        rows = np.arange(ny)
        for c in range(nx):
            out.append(Slice(direction, rows, np.full(ny, c), z[:, c].copy(), grid.step))
    elif direction == "diag_plus":
        # constant row - col
        for k in range(-(nx - 1), ny):
            r = np.arange(max(k, 0), min(ny, nx + k))
            c = r - k
            out.append(Slice(direction, r, c, z[r, c], grid.step * math.sqrt(2.0)))
    elif direction == "diag_minus":
        # constant row + col
        for k in range(nx + ny - 1):
            r = np.arange(max(0, k - nx + 1), min(ny, k + 1))
            c = k - r
            out.append(Slice(direction, r, c, z[r, c], grid.step * math.sqrt(2.0)))
    else:
        raise ValueError(f"direction must be one of {DIRECTIONS}")
    return out
