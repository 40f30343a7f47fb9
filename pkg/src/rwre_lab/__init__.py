"""Simulation and exact-oracle toolkit for random walks in random environments.

Submodules
----------
env         environment laws, sampled environments, quantization
geometry    scale hierarchy, boxes, quasi-covers, strips
walk        stopping-time races, box exits, fixed-horizon walks
oned        exact one-dimensional absorption oracles
renorm      cascade constants and recursive Good/Bad classification
conditions  ballisticity-condition estimators and decay fits
cli         ``rwre-lab`` command line interface
"""

__version__ = "0.1.0"

from .env import (EnvironmentLaw, MixingParams, QuenchedEnvironment, Window,  # noqa: E402
                  one_dim_law, sample_environment)
from .errors import (CapacityError, CensoringError, ConfigError,  # noqa: E402
                     MissingStatusError, QuantizationError, RWRELabError, WindowUnderrunError)
from .geometry import BoxSpec, Direction, make_hierarchy  # noqa: E402

__all__ = ["EnvironmentLaw", "MixingParams", "QuenchedEnvironment", "Window", "one_dim_law",
           "sample_environment", "BoxSpec", "Direction", "make_hierarchy", "RWRELabError",
           "CapacityError", "CensoringError", "ConfigError", "MissingStatusError",
           "QuantizationError", "WindowUnderrunError", "__version__"]
