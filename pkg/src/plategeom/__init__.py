"""Geometric analysis of violin-family plate meshes.

Symmetry-plane alignment, dihedral-angle diagnostics, contour lines every
millimetre and the channel of minima, from triangle meshes in mm.
"""

from .alignment import (
    AlignedPair,
    AngleHistograms,
    AngleRecord,
    Plane,
    align_single_plate,
    align_to_symmetry_plane,
    angle_record,
    angle_report,
    bisector_plane,
    dihedral_angle,
    fit_plane_orthogonal,
    pca_align,
    signed_parallelism_angle,
)
from .channel import (
    ArchingFilterParams,
    ChannelParams,
    ChannelPointSet,
    channel_points,
    filter_arching_outliers,
    local_minima_on_slice,
)
from .config import AnalysisConfig, default_config_text, load_config, parse_config
from .contours import ContourSet, contour_lines, plane_mesh_intersection
from .elevation import ElevationGrid, Slice, grid_slices, resample_grid
from .errors import CorpusError, GeometryError, MeshFormatError
from .mesh import (
    Polyline3,
    RigidTransform,
    TriangleMesh,
    apply_rigid_transform,
    boundary_loops,
    load_mesh,
)
from .report import (
    CorpusReport,
    InstrumentRecord,
    InstrumentReport,
    load_corpus_metadata,
    run_corpus,
    run_instrument,
)
from .svg import render_contours_svg

__version__ = "0.1.0"
