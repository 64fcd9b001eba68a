"""Diffusions on the unit ball and sphere: simulation, time changes and Monte Carlo checks."""
from .errors import (
    AccuracyError,
    BallDiffError,
    ConfigurationError,
    DegenerateInputError,
    DimensionError,
    DomainError,
    HorizonError,
    SingularityError,
)
from .geometry import BallPoint, DensityParams, SpherePoint, invariant_density_h, project_coords, renormalize_sphere, sigma
from .noise import NoiseDriver, gaussian_increment, split_driver
from .processes import Coefficients, PathGrid, WfParams, simulate_path, squared_radius
from .stats import TestReport, merge_reports

__version__ = "0.1.0"

__all__ = [
    "AccuracyError", "BallDiffError", "ConfigurationError", "DegenerateInputError", "DimensionError",
    "DomainError", "HorizonError", "SingularityError", "BallPoint", "DensityParams", "SpherePoint",
    "invariant_density_h", "project_coords", "renormalize_sphere", "sigma", "NoiseDriver",
    "gaussian_increment", "split_driver", "Coefficients", "PathGrid", "WfParams", "simulate_path",
    "squared_radius", "TestReport", "merge_reports",
]
