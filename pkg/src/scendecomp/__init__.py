"""Scenario decomposition for multistage stochastic control.

Progressive hedging over finite scenario trees, with an online QP family,
portfolio selection with smoothing, and a small convex minimizer.
"""
from .convex import MinimizerSettings, SmoothObjective, minimize
from .kernels import BACKEND
from .pha import (
    AdapterError,
    ControlEnsemble,
    DivergenceError,
    MultiplierEnsemble,
    PhaConfig,
    PhaResult,
    SubproblemAdapter,
    distance_to_reference,
    multiplier_update,
    pha_solve,
    stopping_metric,
)
from .tree import ScenarioPath, ScenarioTree, StageDistribution, aggregate, build_tree, projection_matrix

__version__ = "0.1.0"
