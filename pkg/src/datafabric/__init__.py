"""Analysis-to-data fabric: middleware, data-site agents, and result profiling."""

__version__ = "0.1.0"
