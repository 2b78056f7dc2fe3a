"""Post-hoc figure generation from the simulator's CSV/JSON artifacts."""

from .render import KINDS, PlotJob, SchemaError, render

__all__ = ["KINDS", "PlotJob", "SchemaError", "render"]
__version__ = "0.1.0"
