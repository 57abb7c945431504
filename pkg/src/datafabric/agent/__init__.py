"""Data-site agent: dataset catalog, site-local grants, and sandboxed
execution of analysis steps."""

from .core import SiteAgent
from .runner import PacRunner, RunnerSpec

__all__ = ["SiteAgent", "PacRunner", "RunnerSpec"]
