"""
channel.py
----------

Channel of minima: grid nodes that are strict local minima along at
least two of the four slice directions through them, followed by a pass
that discards outliers on the arching.

Minima are taken on the outward elevation (z for a sound board, -z for a
back), so the groove is a valley on both plates.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from . import defaults
from .elevation import DIRECTION_STEP, DIRECTIONS, ElevationGrid, Slice

log = logging.getLogger(__name__)

# vote bit per direction, and its letter in the CSV mask
VOTE_BITS = {"horizontal": 1, "vertical": 2, "diag_plus": 4, "diag_minus": 8}
VOTE_LETTERS = "HVDA"


@dataclass(frozen=True)
class ArchingFilterParams:
    max_relative_height: float = defaults.MAX_RELATIVE_HEIGHT
    boundary_band: float | None = None

    def __post_init__(self) -> None:
        if not 0 < self.max_relative_height <= 1:
            raise ValueError("max_relative_height must lie in (0, 1]")
        if self.boundary_band is not None and not self.boundary_band > 0:
            raise ValueError("boundary_band must be positive")


@dataclass(frozen=True)
class ChannelParams:
    neighbourhood_radius: float = defaults.NEIGHBOURHOOD_RADIUS_MM["violin_viola"]
    min_votes: int = defaults.MIN_VOTES
    arching_filter: ArchingFilterParams = field(default_factory=ArchingFilterParams)

    def __post_init__(self) -> None:
        if not self.neighbourhood_radius > 0:
            raise ValueError("neighbourhood_radius must be positive")
        if not 1 <= self.min_votes <= 4:
            raise ValueError("min_votes must be between 1 and 4")

    @classmethod
    def for_size_class(cls, size_class: str, **overrides) -> "ChannelParams":
        return cls(neighbourhood_radius=defaults.NEIGHBOURHOOD_RADIUS_MM[size_class], **overrides)

    def as_dict(self) -> dict:
        return {
            "neighbourhood_radius_mm": self.neighbourhood_radius,
            "min_votes": self.min_votes,
            "max_relative_height": self.arching_filter.max_relative_height,
            "boundary_band_mm": self.arching_filter.boundary_band,
        }


@dataclass(frozen=True, eq=False)
class ChannelPointSet:
    """Grid nodes voted into the channel; ``votes`` is a bitmask over ``VOTE_BITS``."""

    plate_id: str
    rows: np.ndarray
    cols: np.ndarray
    x: np.ndarray
    y: np.ndarray
    z: np.ndarray
    votes: np.ndarray
    params: ChannelParams
    warnings: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.rows)

    def vote_counts(self) -> np.ndarray:
        v = self.votes.astype(np.uint8)
        return sum(((v >> i) & 1) for i in range(4)).astype(np.int64)

    def node_set(self) -> set[tuple[int, int]]:
        return set(zip(self.rows.tolist(), self.cols.tolist()))

    def subset(self, keep: np.ndarray, warnings: tuple[str, ...] | None = None) -> "ChannelPointSet":
        return replace(
            self,
            rows=self.rows[keep],
            cols=self.cols[keep],
            x=self.x[keep],
            y=self.y[keep],
            z=self.z[keep],
            votes=self.votes[keep],
            warnings=self.warnings if warnings is None else warnings,
        )

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["row", "col", "x_mm", "y_mm", "z_mm", "votes"])
        for r, c, x, y, z, v in zip(
            self.rows.tolist(), self.cols.tolist(), self.x.tolist(), self.y.tolist(),
            self.z.tolist(), self.votes.tolist(),
        ):
            w.writerow([r, c, f"{x:.4f}", f"{y:.4f}", f"{z:.6f}", vote_mask(v)])
        return out.getvalue()


def vote_mask(bits: int) -> str:
    """Four-letter mask, e.g. ``HV-A``."""
    return "".join(ch if bits & (1 << i) else "-" for i, ch in enumerate(VOTE_LETTERS))


def neighbour_count(radius: float, spacing: float) -> int:
    """Nodes on each side whose along-slice distance is within ``radius``."""
    return int(math.floor(radius / spacing + 1e-9))


def local_minima_on_slice(slice: Slice, radius: float) -> list[int]:
    """
    Positions along ``slice`` that are strict local minima.

    A valid node qualifies when it is lower than every valid node of the
    slice within ``radius`` mm. Missing neighbours (slice ends, invalid
    nodes) are simply not consulted.
    """
    z = np.asarray(slice.z, dtype=np.float64)
    n = len(z)
    k_max = neighbour_count(radius, slice.spacing)
    ok = ~np.isnan(z)
    for k in range(1, min(k_max, n - 1) + 1):
        # NaN comparisons are False, so invalid neighbours never disqualify
        ok[k:] &= ~(z[:-k] <= z[k:])
        ok[:-k] &= ~(z[k:] <= z[:-k])
    return np.flatnonzero(ok).tolist()


def minima_mask(values: np.ndarray, direction: str, k_max: int) -> np.ndarray:
    """Boolean mask of nodes that are strict minima along ``direction`` within ``k_max`` nodes."""
    ny, nx = values.shape
    dr, dc = DIRECTION_STEP[direction]
    pad = k_max
    padded = np.full((ny + 2 * pad, nx + 2 * pad), np.nan)
    padded[pad: pad + ny, pad: pad + nx] = values
    ok = ~np.isnan(values)
    for k in range(1, k_max + 1):
        for sgn in (1, -1):
            r0 = pad + sgn * k * dr
            c0 = pad + sgn * k * dc
            nb = padded[r0: r0 + ny, c0: c0 + nx]
            ok &= ~(nb <= values)
    return ok


def channel_points(grid: ElevationGrid, params: ChannelParams | None = None) -> ChannelPointSet:
    """
    Nodes that are local minima on at least ``params.min_votes`` of the
    four slices (row, column, both diagonals) passing through them.
    """
    params = params or ChannelParams()
    h = grid.outward
    votes = np.zeros(h.shape, dtype=np.uint8)
    for direction in DIRECTIONS:
        dr, dc = DIRECTION_STEP[direction]
        spacing = grid.step * math.hypot(dr, dc)
        k_max = neighbour_count(params.neighbourhood_radius, spacing)
        if k_max == 0:
            continue
        votes |= minima_mask(h, direction, k_max).astype(np.uint8) * np.uint8(VOTE_BITS[direction])
    count = np.zeros(h.shape, dtype=np.int64)
    for i in range(4):
        count += (votes >> i) & 1
    rows, cols = np.nonzero(count >= params.min_votes)
    return ChannelPointSet(
        plate_id=grid.plate_id,
        rows=rows,
        cols=cols,
        x=grid.x_of(cols).astype(np.float64),
        y=grid.y_of(rows).astype(np.float64),
        z=grid.z[rows, cols],
        votes=votes[rows, cols],
        params=params,
    )


def distance_to_outline(grid: ElevationGrid) -> np.ndarray:
    """Distance in mm from each node to the nearest node outside the plate outline (holes filled)."""
    footprint = ndimage.binary_fill_holes(grid.valid)
    padded = np.pad(footprint, 1, constant_values=False)
    return ndimage.distance_transform_edt(padded)[1:-1, 1:-1] * grid.step


def filter_arching_outliers(raw: ChannelPointSet, grid: ElevationGrid) -> ChannelPointSet:
    """
    Drop channel points that sit high on the arching.

    A point is kept when its outward elevation above the plate's lowest
    valid node is at most ``max_relative_height`` of the plate relief and,
    if a ``boundary_band`` is set, it lies within that distance of the
    plate outline.
    """
    fp = raw.params.arching_filter
    h = grid.outward
    valid = grid.valid
    if len(raw) == 0:
        return raw
    lo, hi = float(h[valid].min()), float(h[valid].max())
    if hi <= lo:
        msg = "degenerate relief: arching filter skipped"
        log.warning("%s: %s", raw.plate_id, msg)
        return raw.subset(np.ones(len(raw), dtype=bool), raw.warnings + (msg,))
    rel = (h[raw.rows, raw.cols] - lo) / (hi - lo)
    keep = rel <= fp.max_relative_height
    if fp.boundary_band is not None:
        keep &= distance_to_outline(grid)[raw.rows, raw.cols] <= fp.boundary_band
    return raw.subset(keep)
