"""Polynomial-curve averaging operators, density-increment audits and pattern search on grids."""

__version__ = "0.1.0"

from .errors import PolyPatternError  # noqa: E402
from .gridfield import GridFunction, read_grid, write_grid  # noqa: E402
from .polycurve import Curve, Polynomial, ScaleLattice, calibrate_lattice, load_curve, make_curve  # noqa: E402

__all__ = [
    "Curve",
    "GridFunction",
    "PolyPatternError",
    "Polynomial",
    "ScaleLattice",
    "__version__",
    "calibrate_lattice",
    "load_curve",
    "make_curve",
    "read_grid",
    "write_grid",
]
