"""
alignment.py
------------

Reference planes for a pair of plates: PCA pre-alignment of the body,
total-least-squares plane fits of the plate contours, the bisector
(symmetry) plane, the rigid motion that lays it onto z = 0, and the
dihedral-angle diagnostics with their histograms.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import defaults
from .errors import GeometryError
from .mesh import (
    RigidTransform,
    TriangleMesh,
    apply_rigid_transform,
    boundary_loops,
    rotation_about_axis,
)

Z_AXIS = np.array([0.0, 0.0, 1.0])


def _canonical(normal: np.ndarray) -> float:
    """+1 if ``normal`` already has the canonical orientation, else -1."""
    x, y, z = normal
    if z != 0.0:
        return 1.0 if z > 0 else -1.0
    if x != 0.0:
        return 1.0 if x > 0 else -1.0
    return 1.0 if y > 0 else -1.0


@dataclass(frozen=True, eq=False)
class Plane:
    """
    Oriented plane ``{p : normal . p = offset}``.

    The normal is normalised and flipped on construction so that its z
    component is non-negative (ties broken on x, then y).
    """

    normal: np.ndarray
    offset: float

    def __post_init__(self) -> None:
        n = np.asarray(self.normal, dtype=np.float64).reshape(3)
        norm = float(np.linalg.norm(n))
        if not norm > 0 or not math.isfinite(norm):
            raise GeometryError("invalid-plane", f"normal {n.tolist()} cannot be normalised")
        n = n / norm
        o = float(self.offset) / norm
        s = _canonical(n)
        n = n * s
        n.setflags(write=False)
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "offset", o * s)

    @classmethod
    def through(cls, point, normal) -> "Plane":
        n = np.asarray(normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        return cls(n, float(np.dot(n, point)))

    @classmethod
    def horizontal(cls, z: float = 0.0) -> "Plane":
        return cls(Z_AXIS, z)

    def signed_distance(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.normal - self.offset

    def project(self, point) -> np.ndarray:
        p = np.asarray(point, dtype=np.float64)
        return p - self.signed_distance(p) * self.normal

    def transformed(self, t: RigidTransform) -> "Plane":
        n = t.rotation @ self.normal
        return Plane(n, self.offset + float(np.dot(n, t.translation)))

    def z_at(self, x, y):
        """Height of the plane above (x, y); the plane must not be vertical."""
        n = self.normal
        return (self.offset - n[0] * x - n[1] * y) / n[2]

    def __repr__(self) -> str:
        n = ", ".join(f"{c:.6g}" for c in self.normal)
        return f"Plane(normal=({n}), offset={self.offset:.6g})"


def fit_plane_orthogonal(points) -> tuple[Plane, float]:
    """
    Orthogonal-regression plane through a point set.

    The plane passes through the centroid; its normal is the eigenvector
    of the centred covariance with the smallest eigenvalue, which
    minimises the summed squared perpendicular distances.

    Returns
    -------
    plane : Plane
    rms : float
      Root-mean-square perpendicular distance of the points, mm.
    """
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(p) < 3:
        raise GeometryError("degenerate-plane-fit", f"need at least 3 points, got {len(p)}")
    centroid = p.mean(axis=0)
    q = p - centroid
    evals, evecs = np.linalg.eigh(q.T @ q / len(p))
    if evals[2] <= 0 or evals[1] <= 1e-12 * evals[2]:
        raise GeometryError("degenerate-plane-fit", "points are collinear")
    normal = evecs[:, 0]
    d = q @ normal
    rms = float(np.sqrt(np.mean(d * d)))
    return Plane(normal, float(np.dot(normal, centroid))), rms


def dihedral_angle(a: Plane, b: Plane) -> float:
    """Unsigned angle between two planes in degrees, in [0, 90]."""
    c = abs(float(np.dot(a.normal, b.normal)))
    s = float(np.linalg.norm(np.cross(a.normal, b.normal)))
    return math.degrees(math.atan2(s, min(c, 1.0)))


def bisector_plane(a: Plane, b: Plane, anchor) -> Plane:
    """
    Plane bisecting the dihedral between ``a`` and ``b``.

    Its normal is the normalised sum of the two (co-oriented) normals. It
    passes through the midpoint of the projections of ``anchor`` onto
    both planes, which is the mid-plane when ``a`` and ``b`` are parallel.
    """
    na, nb = a.normal, b.normal
    if np.dot(na, nb) < 0:
        nb = -nb
    s = na + nb
    norm = float(np.linalg.norm(s))
    if norm < 1e-15:
        raise GeometryError("undefined-bisector", "plane normals are anti-parallel")
    n = s / norm
    anchor = np.asarray(anchor, dtype=np.float64)
    mid = 0.5 * (a.project(anchor) + b.project(anchor))
    return Plane(n, float(np.dot(n, mid)))


def signed_parallelism_angle(sb_plane: Plane, back_plane: Plane, neck_direction=(1.0, 0.0)) -> float:
    """
    Dihedral angle between the plate planes, signed by where the plates converge.

    Positive when the sound board and back are closer at the bottom of the
    body than at the neck, i.e. the vertical gap between the planes grows
    along ``neck_direction`` (a direction in Oxy). Planes must be roughly
    horizontal, as after symmetry-plane alignment.
    """
    u = np.asarray(neck_direction, dtype=np.float64).reshape(2)
    u = u / np.linalg.norm(u)
    magnitude = dihedral_angle(sb_plane, back_plane)
    if magnitude == 0.0:
        return 0.0

    def slope(p: Plane) -> float:
        n = p.normal
        return -(n[0] * u[0] + n[1] * u[1]) / n[2]

    growth = slope(sb_plane) - slope(back_plane)
    return magnitude if growth >= 0 else -magnitude


# ---------------------------------------------------------------------------
# PCA pre-alignment


def _third_moment(x: np.ndarray) -> float:
    return float(np.mean(x ** 3))


def pca_align(body: TriangleMesh) -> tuple[TriangleMesh, RigidTransform]:
    """
    Centre a body mesh and rotate its principal axes onto x, y, z.

    x carries the largest vertex variance and z the smallest. Axis signs
    are fixed so that the x and y coordinates have non-negative third
    moment, and z completes a right-handed frame.
    """
    v = body.vertices
    centroid = v.mean(axis=0)
    q = v - centroid
    evals, evecs = np.linalg.eigh(q.T @ q / len(v))
    if evals[2] <= 0 or evals[0] <= 1e-12 * evals[2]:
        raise GeometryError("degenerate-pca", "vertex covariance is rank deficient")
    axes = evecs[:, ::-1].T.copy()
    for i in (0, 1):
        m = _third_moment(q @ axes[i])
        scale = max(float(np.abs(q @ axes[i]).max()), 1e-300)
        if abs(m) <= 1e-12 * scale ** 3:
            # symmetric spread: fall back on the sign of the dominant component
            m = axes[i][np.argmax(np.abs(axes[i]))]
        if m < 0:
            axes[i] = -axes[i]
    axes[2] = np.cross(axes[0], axes[1])
    t = RigidTransform(axes, -axes @ centroid)
    return apply_rigid_transform(body, t), t


# ---------------------------------------------------------------------------
# symmetry-plane alignment


@dataclass(frozen=True, eq=False)
class AlignedPair:
    """Both plates after the symmetry plane has been laid onto z = 0."""

    sound_board: TriangleMesh
    back: TriangleMesh
    transform: RigidTransform
    symmetry_plane_before: Plane
    sound_board_plane_before: Plane
    back_plane_before: Plane
    residuals: dict = field(default_factory=dict)

    @property
    def sound_board_plane(self) -> Plane:
        return self.sound_board_plane_before.transformed(self.transform)

    @property
    def back_plane(self) -> Plane:
        return self.back_plane_before.transformed(self.transform)


def plate_contour(plate: TriangleMesh) -> np.ndarray:
    """Points of the longest boundary loop of a plate."""
    loops = boundary_loops(plate, min_points=defaults.MIN_CONTOUR_POINTS)
    if not loops:
        raise GeometryError("no-contour", f"{plate.name or 'plate'} has no boundary loop")
    return loops[0].points


def _rotation_onto_z(n: np.ndarray) -> np.ndarray:
    axis = np.cross(n, Z_AXIS)
    s = float(np.linalg.norm(axis))
    if s == 0.0:
        return np.eye(3)
    return rotation_about_axis(axis, math.atan2(s, float(np.dot(n, Z_AXIS))))


def align_to_symmetry_plane(sound_board: TriangleMesh, back: TriangleMesh) -> AlignedPair:
    """
    Rotate and shift both plates so their plane of symmetry becomes z = 0.

    Each plate contour is fitted with an orthogonal-regression plane; the
    bisector of the two fits is rotated onto the horizontal and translated
    to zero offset. The sound board ends up on the positive side; if it
    does not, the pair is turned 180 degrees about x.
    """
    sb_loop = plate_contour(sound_board)
    back_loop = plate_contour(back)
    sb_plane, sb_rms = fit_plane_orthogonal(sb_loop)
    back_plane, back_rms = fit_plane_orthogonal(back_loop)
    anchor = 0.5 * (sb_loop.mean(axis=0) + back_loop.mean(axis=0))
    sym = bisector_plane(sb_plane, back_plane, anchor)

    r = _rotation_onto_z(sym.normal)
    t = RigidTransform(r, np.zeros(3))
    moved = sym.transformed(t)
    t = RigidTransform(r, np.array([0.0, 0.0, -moved.offset]))
    if t.apply(sound_board.vertices)[:, 2].mean() < 0:
        flip = RigidTransform(np.diag([1.0, -1.0, -1.0]))
        t = flip.compose(t)
    return AlignedPair(
        sound_board=apply_rigid_transform(sound_board, t),
        back=apply_rigid_transform(back, t),
        transform=t,
        symmetry_plane_before=sym,
        sound_board_plane_before=sb_plane,
        back_plane_before=back_plane,
        residuals={"sound_board": sb_rms, "back": back_rms},
    )


def align_single_plate(plate: TriangleMesh, side: str) -> tuple[TriangleMesh, RigidTransform, Plane, float]:
    """
    Level a plate whose partner is missing.

    Without a second plate there is no plane of symmetry, so the plate's
    own contour plane is laid onto z = 0 as the datum, with the plate on
    its outward side (z > 0 for a sound board, z < 0 for a back).

    Returns the moved plate, the transform, the contour plane before the
    move and the rms of its fit.
    """
    if side not in ("sound_board", "back"):
        raise ValueError("side must be 'sound_board' or 'back'")
    plane, rms = fit_plane_orthogonal(plate_contour(plate))
    r = _rotation_onto_z(plane.normal)
    moved = plane.transformed(RigidTransform(r, np.zeros(3)))
    t = RigidTransform(r, np.array([0.0, 0.0, -moved.offset]))
    mean_z = t.apply(plate.vertices)[:, 2].mean()
    if (mean_z < 0) == (side == "sound_board"):
        t = RigidTransform(np.diag([1.0, -1.0, -1.0])).compose(t)
    return apply_rigid_transform(plate, t), t, plane, rms


# ---------------------------------------------------------------------------
# angle diagnostics

HISTOGRAM_NAMES = ("sb_back_signed", "sym_horizontal", "sb_horizontal", "back_horizontal")

HISTOGRAM_TITLES = {
    "sb_back_signed": "Sound board / back (signed)",
    "sym_horizontal": "Plane of symmetry / horizontal",
    "sb_horizontal": "Sound board / horizontal",
    "back_horizontal": "Back / horizontal",
}


@dataclass(frozen=True)
class AngleRecord:
    """The four dihedral-angle diagnostics of one instrument, in degrees."""

    instrument_id: str
    sb_back_signed: float
    sym_horizontal: float
    sb_horizontal: float
    back_horizontal: float

    def as_dict(self) -> dict:
        return {
            "instrument_id": self.instrument_id,
            "sb_back_signed": self.sb_back_signed,
            "sym_horizontal": self.sym_horizontal,
            "sb_horizontal": self.sb_horizontal,
            "back_horizontal": self.back_horizontal,
        }


def aligned_neck_direction(pair: AlignedPair, neck_direction=(1.0, 0.0)) -> np.ndarray:
    """Carry a neck direction given in the input frame into the aligned frame."""
    u = np.array([neck_direction[0], neck_direction[1], 0.0], dtype=np.float64)
    w = pair.transform.rotation @ u
    return w[:2] / np.linalg.norm(w[:2])


def angle_record(instrument_id: str, pair: AlignedPair, neck_direction=(1.0, 0.0)) -> AngleRecord:
    """
    Angles for one aligned instrument.

    The parallelism angle is measured in the aligned frame; the three
    angles to the horizontal use the planes as they were before alignment
    (i.e. relative to the PCA frame).
    """
    horizontal = Plane.horizontal()
    return AngleRecord(
        instrument_id=instrument_id,
        sb_back_signed=signed_parallelism_angle(
            pair.sound_board_plane, pair.back_plane, aligned_neck_direction(pair, neck_direction)
        ),
        sym_horizontal=dihedral_angle(pair.symmetry_plane_before, horizontal),
        sb_horizontal=dihedral_angle(pair.sound_board_plane_before, horizontal),
        back_horizontal=dihedral_angle(pair.back_plane_before, horizontal),
    )


@dataclass(frozen=True)
class HistogramBin:
    low: float
    high: float
    ids: tuple[str, ...]

    @property
    def count(self) -> int:
        return len(self.ids)


@dataclass
class AngleHistograms:
    """Non-empty bins of each angle family, keyed by histogram name."""

    bin_width: float
    histograms: dict[str, list[HistogramBin]]

    def total(self, name: str) -> int:
        return sum(b.count for b in self.histograms[name])

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["histogram", "bin_low_deg", "bin_high_deg", "count", "ids"])
        for name in HISTOGRAM_NAMES:
            for b in self.histograms[name]:
                w.writerow([name, f"{b.low:.4f}", f"{b.high:.4f}", b.count, ";".join(b.ids)])
        return out.getvalue()

    def to_svg(self, name: str) -> str:
        from .svg import HISTOGRAM_COLOURS, histogram_svg

        return histogram_svg(
            self.histograms[name], self.bin_width, HISTOGRAM_TITLES[name], HISTOGRAM_COLOURS[name]
        )


def bin_index(value: float, width: float) -> int:
    """Index k of the bin [k*width, (k+1)*width) holding ``value``."""
    # rounding guards exact boundaries such as 0.15 / 0.05 = 2.9999999999999996
    return math.floor(round(value / width, 9))


def angle_report(records: Iterable[AngleRecord], bin_width: float = defaults.HISTOGRAM_BIN_DEG) -> AngleHistograms:
    """Bin the four angle families of a corpus; records are ordered by id first."""
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    ordered: Sequence[AngleRecord] = sorted(records, key=lambda r: r.instrument_id)
    histograms: dict[str, list[HistogramBin]] = {}
    for name in HISTOGRAM_NAMES:
        members: dict[int, list[str]] = {}
        for r in ordered:
            members.setdefault(bin_index(getattr(r, name), bin_width), []).append(r.instrument_id)
        histograms[name] = [
            HistogramBin(k * bin_width, (k + 1) * bin_width, tuple(ids))
            for k, ids in sorted(members.items())
        ]
    return AngleHistograms(bin_width, histograms)
