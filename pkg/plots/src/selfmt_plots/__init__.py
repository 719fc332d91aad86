"""Static figure rendering for selfmt training stats and summary tables."""

from .render import PlotError, plot_dynamics, plot_summary

__all__ = ["PlotError", "plot_dynamics", "plot_summary"]
