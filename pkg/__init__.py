"""nl2econ - Nightlight rasters to gravity networks, walk features and economic indicators."""

__version__ = "0.1.0"
