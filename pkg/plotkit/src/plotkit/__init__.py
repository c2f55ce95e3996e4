"""plotkit: publication-style figures from manl CSV experiment outputs."""

from .figures import (FIGURE_KINDS, FigureSpec, PlotkitError, RenderResult,
                      read_csv, render, slope_fit)

__version__ = "0.1.0"
