"""Transition densities and pathwise simulation for distorted Brownian
motion on a space obtained by gluing a half-line to R^3 at the origin."""

from .model import (BranchPoint, ConfigurationError, ModelError, ModelParams,
                    NumericsError, RhoProfile, SingularityError, dist_E,
                    reference_density, validate)
from .analytic import (Classification, ScaleSpeed, classify, drift_b,
                       killed_kernel_q, scale_speed, skew_density)
from .parametrix import (BoundFit, KernelGrid, KernelOptions,
                         ParametrixEngine, assemble_full_kernel,
                         build_kernel_grid, fit_gaussian_bounds,
                         full_kernel_mass, get_engine, parametrix_term,
                         radial_kernel)

__version__ = "0.1.0"

__all__ = [
    "ModelParams", "RhoProfile", "BranchPoint", "validate", "dist_E",
    "reference_density", "ModelError", "SingularityError",
    "ConfigurationError", "NumericsError",
    "skew_density", "drift_b", "killed_kernel_q", "scale_speed",
    "ScaleSpeed", "classify", "Classification",
    "KernelOptions", "ParametrixEngine", "get_engine", "parametrix_term",
    "radial_kernel", "assemble_full_kernel", "build_kernel_grid",
    "KernelGrid", "fit_gaussian_bounds", "BoundFit", "full_kernel_mass",
    "__version__",
]
