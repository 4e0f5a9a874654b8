"""
config.py
---------

Analysis configuration and its INI file form.

The file has one ``[analysis]`` section for settings shared by all
instruments and one section per size class::

    [analysis]
    contour_spacing_mm = 1.0
    grid_step_mm = 0.25
    ...

    [violin_viola]
    neighbourhood_radius_mm = 2.0
    colour_range_mm = 28.0

Missing keys fall back to the values in :mod:`plategeom.defaults`.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

from . import defaults
from .channel import ArchingFilterParams, ChannelParams
from .errors import CorpusError

EMIT_FLAGS = ("svg", "csv", "json", "raster")
# opt-in only: wall-clock timings break byte-identical reruns
EXTRA_EMIT_FLAGS = ("timings",)


@dataclass(frozen=True)
class SizeClassConfig:
    neighbourhood_radius: float
    colour_range: float

    def __post_init__(self) -> None:
        if not self.neighbourhood_radius > 0:
            raise CorpusError("invalid-config", "neighbourhood_radius_mm must be positive")
        if not self.colour_range > 0:
            raise CorpusError("invalid-config", "colour_range_mm must be positive")


def _default_size_classes() -> dict[str, SizeClassConfig]:
    return {
        sc: SizeClassConfig(defaults.NEIGHBOURHOOD_RADIUS_MM[sc], defaults.COLOUR_RANGE_MM[sc])
        for sc in defaults.SIZE_CLASSES
    }


@dataclass(frozen=True)
class AnalysisConfig:
    """Every tunable of the pipeline in one place."""

    contour_spacing: float = defaults.CONTOUR_SPACING_MM
    grid_step: float = defaults.GRID_STEP_MM
    histogram_bin: float = defaults.HISTOGRAM_BIN_DEG
    min_votes: int = defaults.MIN_VOTES
    max_relative_height: float = defaults.MAX_RELATIVE_HEIGHT
    boundary_band: float | None = None
    size_classes: dict[str, SizeClassConfig] = field(default_factory=_default_size_classes)
    output_dir: Path = Path("out")
    emit: frozenset[str] = frozenset(EMIT_FLAGS)

    def __post_init__(self) -> None:
        for name in ("contour_spacing", "grid_step", "histogram_bin", "max_relative_height"):
            if not getattr(self, name) > 0:
                raise CorpusError("invalid-config", f"{name} must be positive")
        if self.boundary_band is not None and not self.boundary_band > 0:
            raise CorpusError("invalid-config", "boundary_band must be positive")
        if not 1 <= self.min_votes <= 4:
            raise CorpusError("invalid-config", "min_votes must be between 1 and 4")
        missing = set(defaults.SIZE_CLASSES) - set(self.size_classes)
        if missing:
            raise CorpusError("invalid-config", f"missing size classes {sorted(missing)}")
        object.__setattr__(self, "emit", parse_emit(self.emit))
        object.__setattr__(self, "output_dir", Path(self.output_dir))

    def channel_params(self, size_class: str) -> ChannelParams:
        return ChannelParams(
            neighbourhood_radius=self.size_classes[size_class].neighbourhood_radius,
            min_votes=self.min_votes,
            arching_filter=ArchingFilterParams(self.max_relative_height, self.boundary_band),
        )

    def colour_range(self, size_class: str) -> float:
        return self.size_classes[size_class].colour_range

    def as_dict(self) -> dict:
        """Settings that shape the outputs (no output directory, no emit flags)."""
        return {
            "contour_spacing_mm": self.contour_spacing,
            "grid_step_mm": self.grid_step,
            "histogram_bin_deg": self.histogram_bin,
            "min_votes": self.min_votes,
            "max_relative_height": self.max_relative_height,
            "boundary_band_mm": self.boundary_band,
            "size_classes": {
                sc: {
                    "neighbourhood_radius_mm": c.neighbourhood_radius,
                    "colour_range_mm": c.colour_range,
                }
                for sc, c in sorted(self.size_classes.items())
            },
        }

    def to_ini(self) -> str:
        lines = [
            "[analysis]",
            f"contour_spacing_mm = {self.contour_spacing!r}",
            f"grid_step_mm = {self.grid_step!r}",
            f"histogram_bin_deg = {self.histogram_bin!r}",
            f"min_votes = {self.min_votes}",
            f"max_relative_height = {self.max_relative_height!r}",
            "boundary_band_mm = " + ("" if self.boundary_band is None else repr(self.boundary_band)),
            "emit = " + ",".join(f for f in EMIT_FLAGS + EXTRA_EMIT_FLAGS if f in self.emit),
        ]
        for sc in defaults.SIZE_CLASSES:
            c = self.size_classes[sc]
            lines += [
                "",
                f"[{sc}]",
                f"neighbourhood_radius_mm = {c.neighbourhood_radius!r}",
                f"colour_range_mm = {c.colour_range!r}",
            ]
        return "\n".join(lines) + "\n"


def parse_emit(flags) -> frozenset[str]:
    """Emit flags from a comma-separated string or an iterable."""
    if isinstance(flags, str):
        flags = [f.strip() for f in flags.split(",") if f.strip()]
    flags = frozenset(flags)
    unknown = flags - set(EMIT_FLAGS + EXTRA_EMIT_FLAGS)
    if unknown:
        raise CorpusError("invalid-config", f"unknown emit flags {sorted(unknown)}")
    return flags


def default_config_text() -> str:
    return AnalysisConfig().to_ini()


def _float(section: configparser.SectionProxy, key: str, default: float) -> float:
    try:
        return section.getfloat(key, fallback=default)
    except ValueError as exc:
        raise CorpusError("invalid-config", f"[{section.name}] {key}: {exc}") from None


def parse_config(text: str, output_dir=None) -> AnalysisConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise CorpusError("invalid-config", str(exc)) from None
    unknown = set(parser.sections()) - {"analysis", *defaults.SIZE_CLASSES}
    if unknown:
        raise CorpusError("invalid-config", f"unknown sections {sorted(unknown)}")
    if not parser.has_section("analysis"):
        parser.add_section("analysis")
    a = parser["analysis"]
    band = a.get("boundary_band_mm", fallback="").strip()
    try:
        band_mm = float(band) if band else None
    except ValueError:
        raise CorpusError("invalid-config", f"[analysis] boundary_band_mm: {band!r}") from None
    try:
        min_votes = a.getint("min_votes", fallback=defaults.MIN_VOTES)
    except ValueError as exc:
        raise CorpusError("invalid-config", f"[analysis] min_votes: {exc}") from None

    size_classes = {}
    for sc in defaults.SIZE_CLASSES:
        if not parser.has_section(sc):
            parser.add_section(sc)
        s = parser[sc]
        size_classes[sc] = SizeClassConfig(
            _float(s, "neighbourhood_radius_mm", defaults.NEIGHBOURHOOD_RADIUS_MM[sc]),
            _float(s, "colour_range_mm", defaults.COLOUR_RANGE_MM[sc]),
        )
    kwargs = {}
    if output_dir is not None:
        kwargs["output_dir"] = Path(output_dir)
    return AnalysisConfig(
        contour_spacing=_float(a, "contour_spacing_mm", defaults.CONTOUR_SPACING_MM),
        grid_step=_float(a, "grid_step_mm", defaults.GRID_STEP_MM),
        histogram_bin=_float(a, "histogram_bin_deg", defaults.HISTOGRAM_BIN_DEG),
        min_votes=min_votes,
        max_relative_height=_float(a, "max_relative_height", defaults.MAX_RELATIVE_HEIGHT),
        boundary_band=band_mm,
        size_classes=size_classes,
        emit=parse_emit(a.get("emit", fallback=",".join(EMIT_FLAGS))),
        **kwargs,
    )


def load_config(path, output_dir=None) -> AnalysisConfig:
    return parse_config(Path(path).read_text(encoding="utf-8"), output_dir)
