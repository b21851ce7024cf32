"""Numerical lab for small-noise asymptotics of stochastic 3D viscous primitive equations."""

__version__ = "0.1.0"

from .grid import Domain, Field, State, norm, random_state  # noqa: E402
from .operators import Forcing, Model, PhysicalParams  # noqa: E402
from .noise import ControlPath, NoiseMode, NoiseModel, example_model  # noqa: E402
from .dynamics import BlowUp, Ensemble, IntegratorConfig, Trajectory  # noqa: E402

__all__ = [
    "__version__",
    "Domain",
    "Field",
    "State",
    "norm",
    "random_state",
    "Forcing",
    "Model",
    "PhysicalParams",
    "ControlPath",
    "NoiseMode",
    "NoiseModel",
    "example_model",
    "BlowUp",
    "Ensemble",
    "IntegratorConfig",
    "Trajectory",
]
