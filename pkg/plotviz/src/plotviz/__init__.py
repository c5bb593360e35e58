"""Line charts from harness figure CSVs."""

from .figure import FigureSpec, build_figure, render
from .reader import FigureRow, SchemaError, read_figure_csv

__all__ = ["FigureSpec", "FigureRow", "SchemaError", "build_figure",
           "read_figure_csv", "render"]

__version__ = "0.1.0"
