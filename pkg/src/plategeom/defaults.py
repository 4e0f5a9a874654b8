"""Numeric defaults shared by every stage of the analysis.

Each constant is defined here once; config files, CLI help and function
signatures all read from this module.
"""

# contour levels, mm between successive horizontal planes
CONTOUR_SPACING_MM = 1.0

# elevation grid resolution, mm
GRID_STEP_MM = 0.25

# local-minimum neighbourhood radius per size class, mm
NEIGHBOURHOOD_RADIUS_MM = {"violin_viola": 2.0, "cello": 5.0}

# a node joins the channel when it is a minimum on at least this many slices
MIN_VOTES = 2

# dihedral-angle histogram bin width, degrees
HISTOGRAM_BIN_DEG = 0.05

# half-range of the contour colour bar per size class, mm
COLOUR_RANGE_MM = {"violin_viola": 28.0, "cello": 80.0}

# arching-outlier filter: keep points below this fraction of the plate relief
MAX_RELATIVE_HEIGHT = 0.3

# boundary loops with fewer points are treated as scan noise
MIN_CONTOUR_POINTS = 10

SIZE_CLASSES = ("violin_viola", "cello")
