"""Standard figures for hymlab flow traces and summaries."""

__version__ = "0.1.0"
