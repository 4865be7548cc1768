"""Control-flow pattern conformance corpus and coverage reporting."""

from .harness import CoverageReport, PatternCase, PatternResult, run_all, run_pattern

__all__ = ["CoverageReport", "PatternCase", "PatternResult", "run_all", "run_pattern"]
