"""Reachability-based control barrier functions for nested STL formulas."""

from .formula import BandPredicate, parse_formula, to_text
from .oracle import SampledSignal, robustness, satisfied
from .scenarios import preset, run, scenario_from_config

__all__ = ["BandPredicate", "parse_formula", "to_text", "SampledSignal", "robustness",
           "satisfied", "preset", "run", "scenario_from_config"]
__version__ = "0.1.0"
