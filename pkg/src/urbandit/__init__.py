"""Adaptive learning for uncontrolled restless bandits."""

from .aroe import AROESolver, build_grid, value_iterate
from .belief import InformationState, belief_of
from .markov import BanditInstance, validate_instance
from .oracle import finite_horizon_oracle
from .policy import ALA, ALAFP, ALAConfig, ExplorationSchedule
from .simulation import regret_curve, simulate, simulate_many

__all__ = ["AROESolver", "build_grid", "value_iterate", "InformationState", "belief_of",
           "BanditInstance", "validate_instance", "finite_horizon_oracle", "ALA", "ALAFP",
           "ALAConfig", "ExplorationSchedule", "regret_curve", "simulate", "simulate_many"]

__version__ = "0.1.0"
