"""Simulation of queueing systems and verification of rate-balance identities."""
__version__ = "0.1.0"

from .errors import (ConfigError, EmptyLog, InapplicableAssumption, InvalidParameter,
                     MissingEstimate, NegativeState, NonConvergent, QBalanceError,
                     SimultaneityViolation, SingularPoint)
from .inputs import BatchLaw, RngStream, ServiceDistribution
from .kernel import Clock, SimulationResult, Simulator, run
from .runner import replay, run_scenario
from .scenarios import Scenario, list_scenarios, load_scenario
from .state import CountingLedger, JumpMark, StateVector, read_jump_log
from .verifier import BalanceReport, IdentityCheck

__all__ = [
    "BalanceReport", "BatchLaw", "Clock", "ConfigError", "CountingLedger", "EmptyLog",
    "IdentityCheck", "InapplicableAssumption", "InvalidParameter", "JumpMark",
    "MissingEstimate", "NegativeState", "NonConvergent", "QBalanceError", "RngStream",
    "Scenario", "ServiceDistribution", "SimulationResult", "SimultaneityViolation",
    "Simulator", "SingularPoint", "StateVector", "list_scenarios", "load_scenario",
    "read_jump_log", "replay", "run", "run_scenario",
]
