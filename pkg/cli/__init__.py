"""
Command-line entry point, run configuration, stages and report figures.
"""

from .config import ReportOptions, RunConfig, build_config
from .main import main

__all__ = ["ReportOptions", "RunConfig", "build_config", "main"]
