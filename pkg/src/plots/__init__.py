"""Figure rendering for solver CSV artifacts.

Couples to the solver only through the CSV files the command line driver
writes; nothing here imports the solver.
"""

from .render import (
    ERROR_COLUMNS,
    FAR_COLUMNS,
    KINDS,
    NEAR_COLUMNS,
    FigureSpec,
    RenderResult,
    load_error_map,
    load_far_field,
    load_near_field,
    render,
)

__all__ = [
    "ERROR_COLUMNS",
    "FAR_COLUMNS",
    "KINDS",
    "NEAR_COLUMNS",
    "FigureSpec",
    "RenderResult",
    "load_error_map",
    "load_far_field",
    "load_near_field",
    "render",
]
