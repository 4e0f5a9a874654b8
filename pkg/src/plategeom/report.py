"""
report.py
---------

Corpus metadata, the per-instrument pipeline and the batch driver.

Output layout under ``config.output_dir``::

    summary.json, summary.csv, config.ini
    angles/histograms.csv, angles/<histogram>.svg
    <instrument>/report.json
    <instrument>/<side>_contours.svg|csv, <side>_channel.csv, <side>_grid.pltgrid

Every file is listed by exactly one report: instrument files by the
instrument's ``report.json`` (or by its summary entry when JSON output is
off), everything else by ``summary.json``.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import repeat
from pathlib import Path

import numpy as np

from .alignment import (
    HISTOGRAM_NAMES,
    AngleHistograms,
    AngleRecord,
    align_single_plate,
    align_to_symmetry_plane,
    angle_record,
    angle_report,
    pca_align,
)
from .channel import channel_points, filter_arching_outliers
from .config import AnalysisConfig
from .contours import contour_lines
from .elevation import SIDES, resample_grid
from .errors import CorpusError
from .mesh import apply_rigid_transform, load_mesh
from .svg import render_contours_svg

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

SIZE_TO_CLASS = {
    "violin": "violin_viola",
    "viola": "violin_viola",
    "tenor_violin": "violin_viola",
    "cello": "cello",
    "bass_violin": "cello",
}

CSV_COLUMNS = (
    "inventory_id",
    "size",
    "attribution",
    "date",
    "sound_board_path",
    "back_path",
    "body_path",
    "size_class_override",
    "neck_direction",
    "notes",
)
REQUIRED_COLUMNS = ("inventory_id", "size")

STATUSES = ("ok", "missing_plate", "failed")

_NECK_AXES = {"+x": (1.0, 0.0), "-x": (-1.0, 0.0), "+y": (0.0, 1.0), "-y": (0.0, -1.0)}


# ---------------------------------------------------------------------------
# corpus metadata


@dataclass(frozen=True)
class InstrumentRecord:
    """One row of the corpus table. Mesh paths are absolute or relative to the working directory."""

    inventory_id: str
    size: str
    size_class: str = ""
    attribution: str = ""
    date: str = ""
    sound_board_path: Path | None = None
    back_path: Path | None = None
    body_path: Path | None = None
    neck_direction: tuple[float, float] = (1.0, 0.0)
    notes: str = ""

    def __post_init__(self) -> None:
        if not self.inventory_id:
            raise CorpusError("invalid-record", "empty inventory_id")
        if self.size not in SIZE_TO_CLASS:
            raise CorpusError("unknown-size", f"{self.inventory_id}: unknown size {self.size!r}")
        if not self.size_class:
            object.__setattr__(self, "size_class", SIZE_TO_CLASS[self.size])
        elif self.size_class not in set(SIZE_TO_CLASS.values()):
            raise CorpusError("invalid-record", f"{self.inventory_id}: unknown size class {self.size_class!r}")
        n = np.asarray(self.neck_direction, dtype=np.float64)
        norm = float(np.hypot(n[0], n[1])) if n.shape == (2,) else 0.0
        if not norm > 0 or not np.isfinite(norm):
            raise CorpusError("invalid-record", f"{self.inventory_id}: neck direction must be a non-zero 2D vector")
        object.__setattr__(self, "neck_direction", (float(n[0] / norm), float(n[1] / norm)))
        for name in ("sound_board_path", "back_path", "body_path"):
            p = getattr(self, name)
            if p is not None:
                object.__setattr__(self, name, Path(p))


def parse_neck_direction(text: str) -> tuple[float, float]:
    """``+x``/``-x``/``+y``/``-y`` or two numbers separated by a space or ``;``; empty means +x."""
    text = text.strip()
    if not text:
        return (1.0, 0.0)
    if text.lower() in _NECK_AXES:
        return _NECK_AXES[text.lower()]
    parts = [p for p in re.split(r"[;\s]+", text) if p]
    try:
        if len(parts) == 2:
            return (float(parts[0]), float(parts[1]))
    except ValueError:
        pass
    raise CorpusError("invalid-record", f"cannot read neck direction {text!r}")


def load_corpus_metadata(path) -> list[InstrumentRecord]:
    """
    Read the corpus table.

    Relative mesh paths are resolved against the CSV file's directory.
    Attribution and date are kept verbatim, so "?" marks stay as written.
    """
    path = Path(path)
    base = path.parent
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise CorpusError("invalid-header", f"{path}: missing columns {missing}")
        rows = list(reader)

    records: list[InstrumentRecord] = []
    seen: set[str] = set()
    for line, row in enumerate(rows, start=2):

        def get(key: str) -> str:
            return (row.get(key) or "").strip()

        inv = get("inventory_id")
        if inv in seen:
            raise CorpusError("duplicate-id", f"{path}:{line}: inventory_id {inv!r} appears twice")
        seen.add(inv)

        def mesh_path(key: str) -> Path | None:
            v = get(key)
            return (base / v) if v else None

        try:
            records.append(
                InstrumentRecord(
                    inventory_id=inv,
                    size=get("size"),
                    size_class=get("size_class_override"),
                    attribution=row.get("attribution") or "",
                    date=row.get("date") or "",
                    sound_board_path=mesh_path("sound_board_path"),
                    back_path=mesh_path("back_path"),
                    body_path=mesh_path("body_path"),
                    neck_direction=parse_neck_direction(get("neck_direction")),
                    notes=row.get("notes") or "",
                )
            )
        except CorpusError as exc:
            raise CorpusError(exc.code, f"{path}:{line}: {exc}") from None
    if not records:
        log.warning("%s: corpus table has no instruments", path)
    return records


def write_corpus_metadata(records, path) -> Path:
    """Write records back as a corpus table; mesh paths are written relative to the table if possible."""
    path = Path(path)
    base = path.parent.resolve()

    def rel(p: Path | None) -> str:
        if p is None:
            return ""
        p = Path(p).resolve()
        try:
            return p.relative_to(base).as_posix()
        except ValueError:
            return str(p)

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in records:
            override = r.size_class if r.size_class != SIZE_TO_CLASS[r.size] else ""
            w.writerow([
                r.inventory_id, r.size, r.attribution, r.date,
                rel(r.sound_board_path), rel(r.back_path), rel(r.body_path),
                override, f"{r.neck_direction[0]!r} {r.neck_direction[1]!r}", r.notes,
            ])
    return path


# ---------------------------------------------------------------------------
# per-instrument pipeline


@dataclass
class InstrumentReport:
    """
    Outcome of one instrument.

    ``status`` is ``ok``, ``missing_plate`` or ``failed``; a failure names
    the ``stage`` that raised and its ``message``. ``artifacts`` are paths
    relative to the output directory.
    """

    instrument_id: str
    size_class: str
    status: str = "ok"
    stage: str | None = None
    message: str | None = None
    angles: AngleRecord | None = None
    residuals: dict = field(default_factory=dict)
    plates: dict = field(default_factory=dict)
    artifacts: list[str] = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    record: InstrumentRecord | None = None

    @property
    def status_text(self) -> str:
        if self.status == "failed":
            return f"failed({self.stage}, {self.message})"
        return self.status

    @property
    def succeeded(self) -> bool:
        return self.status in ("ok", "missing_plate")

    def as_dict(self, with_timings: bool = False) -> dict:
        r = self.record
        d = {
            "schema_version": SCHEMA_VERSION,
            "instrument_id": self.instrument_id,
            "size": r.size if r else None,
            "size_class": self.size_class,
            "attribution": r.attribution if r else None,
            "date": r.date if r else None,
            "status": self.status,
            "failed_stage": self.stage,
            "message": self.message,
            "angles_deg": None if self.angles is None else {
                k: v for k, v in self.angles.as_dict().items() if k != "instrument_id"
            },
            "contour_fit_rms_mm": dict(sorted(self.residuals.items())),
            "plates": self.plates,
            "artifacts": list(self.artifacts),
        }
        if with_timings:
            d["timings_s"] = dict(self.timings)
        return d


def safe_name(instrument_id: str) -> str:
    """Directory name for an instrument."""
    name = re.sub(r"[^A-Za-z0-9._-]", "_", instrument_id)
    return name if name.strip(".") else "_" + name


class _StageFailed(Exception):
    def __init__(self, stage: str, exc: BaseException) -> None:
        self.stage = stage
        self.exc = exc


class _Stages:
    """Runs named stages, recording wall time and wrapping exceptions."""

    def __init__(self, timings: dict) -> None:
        self.timings = timings

    def __call__(self, name: str, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        except Exception as exc:  # noqa: BLE001 - captured into the report
            raise _StageFailed(name, exc) from exc
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - t0


def run_instrument(record: InstrumentRecord, config: AnalysisConfig) -> InstrumentReport:
    """
    Full pipeline for one instrument; never raises for pipeline failures.

    Meshes are loaded, optionally pre-aligned by PCA of the body, laid
    onto the plane of symmetry, measured, contoured, resampled and
    searched for the channel of minima; results are written per the emit
    flags. An instrument with one plate gets ``missing_plate`` and its
    remaining plate is still contoured (levelled on its own contour plane).
    """
    rep = InstrumentReport(record.inventory_id, record.size_class, record=record)
    stage = _Stages(rep.timings)
    try:
        _run(record, config, rep, stage)
    except _StageFailed as f:
        rep.status, rep.stage = "failed", f.stage
        rep.message = str(f.exc) or type(f.exc).__name__
        rep.angles = None
        log.warning("%s: %s failed: %s", record.inventory_id, f.stage, rep.message)
    return rep


def _require_plate(record: InstrumentRecord) -> None:
    if record.sound_board_path is None and record.back_path is None:
        raise CorpusError("no-plate", "neither sound board nor back mesh given")


def _run(record: InstrumentRecord, config: AnalysisConfig, rep: InstrumentReport, stage: _Stages) -> None:
    stage("load", _require_plate, record)
    paths = {"sound_board": record.sound_board_path, "back": record.back_path}
    plates = {}
    for side in SIDES:
        if paths[side] is not None:
            plates[side] = stage("load", load_mesh, paths[side])
    body = stage("load", load_mesh, record.body_path) if record.body_path is not None else None

    neck = np.array([*record.neck_direction, 0.0])
    if body is not None:
        _, t_pca = stage("pca", pca_align, body)
        plates = {s: apply_rigid_transform(m, t_pca) for s, m in plates.items()}
        neck = t_pca.rotation @ neck

    if len(plates) == 2:
        pair = stage("align", align_to_symmetry_plane, plates["sound_board"], plates["back"])
        plates = {"sound_board": pair.sound_board, "back": pair.back}
        rep.residuals = dict(pair.residuals)
        if np.hypot(neck[0], neck[1]) < 1e-9:
            raise _StageFailed("angles", CorpusError("invalid-record", "neck direction is vertical"))
        rep.angles = stage("angles", angle_record, record.inventory_id, pair, tuple(neck[:2]))
    else:
        rep.status = "missing_plate"
        (side, plate), = plates.items()
        moved, _, _, rms = stage("align", align_single_plate, plate, side)
        plates = {side: moved}
        rep.residuals = {side: rms}

    params = config.channel_params(record.size_class)
    results = {}
    for side, plate in plates.items():
        cs = stage("contours", contour_lines, plate, config.contour_spacing, record.inventory_id, side)
        grid = stage("grid", resample_grid, plate, config.grid_step, side, record.inventory_id)
        raw = stage("channel", channel_points, grid, params)
        kept = stage("channel", filter_arching_outliers, raw, grid)
        results[side] = (cs, grid, raw, kept)
        rep.plates[side] = {
            "contour_levels": len(cs.levels),
            "contour_polylines": sum(len(lv.polylines) for lv in cs.levels),
            "z_min_mm": cs.z_min,
            "z_max_mm": cs.z_max,
            "grid": {
                "origin_index": list(grid.origin_index),
                "step_mm": grid.step,
                "nx": grid.nx,
                "ny": grid.ny,
                "valid_nodes": int(grid.valid.sum()),
            },
            "channel": {
                "raw_points": len(raw),
                "points": len(kept),
                "warnings": list(kept.warnings),
            },
        }
    stage("emit", _emit_instrument, record, config, rep, results)


def _write(out: Path, rel: str, data, rep: InstrumentReport) -> None:
    path = out / rel
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, bytes):
        path.write_bytes(data)
    else:
        path.write_text(data, encoding="utf-8", newline="\n")
    rep.artifacts.append(rel)


def _emit_instrument(record, config: AnalysisConfig, rep: InstrumentReport, results) -> None:
    out = config.output_dir
    d = safe_name(record.inventory_id)
    for side, (cs, grid, _raw, kept) in results.items():
        if "svg" in config.emit:
            svg = render_contours_svg(cs, kept, record.size_class, config.colour_range(record.size_class))
            _write(out, f"{d}/{side}_contours.svg", svg, rep)
        if "csv" in config.emit:
            _write(out, f"{d}/{side}_contours.csv", cs.to_csv(), rep)
            _write(out, f"{d}/{side}_channel.csv", kept.to_csv(), rep)
        if "raster" in config.emit:
            _write(out, f"{d}/{side}_grid.pltgrid", grid.to_raster(), rep)
    if "json" in config.emit:
        # written last and not listed by itself; the summary points to it
        text = json.dumps(rep.as_dict("timings" in config.emit), indent=2) + "\n"
        path = out / d / "report.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8", newline="\n")


def report_json_path(rep: InstrumentReport) -> str:
    return f"{safe_name(rep.instrument_id)}/report.json"


# ---------------------------------------------------------------------------
# corpus


@dataclass
class CorpusReport:
    reports: list[InstrumentReport]
    histograms: AngleHistograms
    artifacts: list[str]

    @property
    def exit_code(self) -> int:
        return 0 if all(r.succeeded for r in self.reports) else 1

    def report(self, instrument_id: str) -> InstrumentReport:
        for r in self.reports:
            if r.instrument_id == instrument_id:
                return r
        raise KeyError(instrument_id)


def run_corpus(records, config: AnalysisConfig, jobs: int = 1, only=None) -> CorpusReport:
    """
    Run every instrument and write the corpus summary.

    Instruments run in up to ``jobs`` worker processes; results are sorted
    by inventory id before anything corpus-level is assembled, so the
    outputs do not depend on ``jobs``. Angle histograms count status-ok
    instruments only.
    """
    if jobs < 1:
        raise CorpusError("invalid-config", "jobs must be at least 1")
    records = sorted(records, key=lambda r: r.inventory_id)
    if only:
        wanted = set(only)
        unknown = wanted - {r.inventory_id for r in records}
        if unknown:
            raise CorpusError("unknown-id", f"not in corpus: {sorted(unknown)}")
        records = [r for r in records if r.inventory_id in wanted]
    if not records:
        raise CorpusError("empty-corpus", "no instruments to analyse")
    ids = [r.inventory_id for r in records]
    if len(set(ids)) != len(ids):
        raise CorpusError("duplicate-id", "inventory ids must be unique")
    dirs = [safe_name(i) for i in ids]
    if len(set(dirs)) != len(dirs):
        raise CorpusError("duplicate-id", "inventory ids collide after path sanitising")

    config.output_dir.mkdir(parents=True, exist_ok=True)
    if jobs > 1 and len(records) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(records))) as pool:
            reports = list(pool.map(run_instrument, records, repeat(config)))
    else:
        reports = [run_instrument(r, config) for r in records]
    reports.sort(key=lambda r: r.instrument_id)

    angles = [r.angles for r in reports if r.status == "ok" and r.angles is not None]
    hist = angle_report(angles, config.histogram_bin)
    corpus = CorpusReport(reports, hist, [])
    _emit_corpus(corpus, config)
    return corpus


def _emit_corpus(corpus: CorpusReport, config: AnalysisConfig) -> None:
    out = config.output_dir
    holder = InstrumentReport("", "")

    _write(out, "config.ini", config.to_ini(), holder)
    if "csv" in config.emit:
        _write(out, "angles/histograms.csv", corpus.histograms.to_csv(), holder)
    if "svg" in config.emit:
        for name in HISTOGRAM_NAMES:
            _write(out, f"angles/{name}.svg", corpus.histograms.to_svg(name), holder)
    _write(out, "summary.csv", _summary_csv(corpus), holder)

    instruments = []
    for r in corpus.reports:
        entry = {
            "instrument_id": r.instrument_id,
            "size_class": r.size_class,
            "status": r.status,
            "failed_stage": r.stage,
            "message": r.message,
        }
        if "json" in config.emit and r.status != "failed":
            entry["report"] = report_json_path(r)
        else:
            entry["artifacts"] = list(r.artifacts)
        if "timings" in config.emit:
            entry["timings_s"] = dict(r.timings)
        instruments.append(entry)

    corpus.artifacts = holder.artifacts + ["summary.json"]
    summary = {
        "schema_version": SCHEMA_VERSION,
        "config": config.as_dict(),
        "counts": {s: sum(r.status == s for r in corpus.reports) for s in STATUSES},
        "histograms": {
            name: {
                "total": corpus.histograms.total(name),
                "bins": [
                    {"low_deg": round(b.low, 10), "high_deg": round(b.high, 10), "ids": list(b.ids)}
                    for b in corpus.histograms.histograms[name]
                ],
            }
            for name in HISTOGRAM_NAMES
        },
        "instruments": instruments,
        "artifacts": holder.artifacts,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8", newline="\n")


def _summary_csv(corpus: CorpusReport) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["instrument_id", "size_class", "status", "failed_stage",
                "sb_back_signed_deg", "sym_horizontal_deg", "sb_horizontal_deg", "back_horizontal_deg",
                "sound_board_channel_points", "back_channel_points"])
    for r in corpus.reports:
        a = r.angles
        angles = [""] * 4 if a is None else [
            f"{a.sb_back_signed:.6f}", f"{a.sym_horizontal:.6f}", f"{a.sb_horizontal:.6f}", f"{a.back_horizontal:.6f}"
        ]
        pts = [r.plates.get(s, {}).get("channel", {}).get("points", "") for s in SIDES]
        w.writerow([r.instrument_id, r.size_class, r.status, r.stage or "", *angles, *pts])
    return buf.getvalue()
