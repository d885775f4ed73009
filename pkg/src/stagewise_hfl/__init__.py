"""Stage-wise hierarchical federated learning with unreliable clients."""

from .config import ConfigError, ScenarioConfig, load_config
from .scenario import Scenario, generate_scenario
from .association import AssociationMatrix, SolverOutcome

__all__ = [
    "AssociationMatrix",
    "ConfigError",
    "Scenario",
    "ScenarioConfig",
    "SolverOutcome",
    "generate_scenario",
    "load_config",
]

__version__ = "0.1.0"
