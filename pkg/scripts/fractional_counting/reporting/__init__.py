"""
Summary and comparison tables over Monte-Carlo results.
"""

from .report import COMPARE_COLUMNS, REPORT_COLUMNS, ReportError, compare_methods, load_run, summarise

__all__ = [
    "summarise",
    "compare_methods",
    "load_run",
    "ReportError",
    "REPORT_COLUMNS",
    "COMPARE_COLUMNS",
]
