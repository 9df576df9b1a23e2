"""Report figures for finished axiflow runs.

Consumes only the solver's file outputs (run.csv, summary.json, droplet.csv,
manifest.json) and renders deterministic PNG/SVG figures.
"""

from .plotting import (
    QUANTITIES,
    ReportSpec,
    load_run,
    plot_droplet_overlay,
    plot_panels,
    plot_timeseries,
)

__all__ = [
    "QUANTITIES",
    "ReportSpec",
    "load_run",
    "plot_droplet_overlay",
    "plot_panels",
    "plot_timeseries",
]

__version__ = "0.1.0"
