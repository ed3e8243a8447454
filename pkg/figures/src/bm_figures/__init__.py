"""Figure rendering for bondedsim experiment outputs."""

from .render import FIGURE_KINDS, FigureSpec, RenderError, render

__version__ = "0.1.0"
