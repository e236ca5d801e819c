"""Stress-constrained topology optimization under uncertain loads.

Deterministic, robust, reliability-based and worst-case (anti-optimization)
stress measures share one augmented Lagrangian driver; finished designs are
checked by Monte Carlo sampling of the loads.
"""

from .benchmarks import lshape_problem, rectangle_problem
from .config import PRESETS, RunConfig, preset
from .optimizer import ALSettings, run
from .postprocess import MCSettings, inv_std_normal, monte_carlo_map, reliability_of_design
from .problem import Problem
from .sensitivity import al_gradient, al_value, analyze, evaluate
from .uncertainty import Formulation, LoadModel

__version__ = "0.1.0"

__all__ = [
    "ALSettings", "Formulation", "LoadModel", "MCSettings", "PRESETS", "Problem", "RunConfig",
    "al_gradient", "al_value", "analyze", "evaluate", "inv_std_normal", "lshape_problem",
    "monte_carlo_map", "preset", "rectangle_problem", "reliability_of_design", "run",
]
