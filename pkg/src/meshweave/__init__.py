"""Mesh-pull P2P streaming overlay: peer selection, position exchanges and churn simulation."""

from .simulator import ScenarioConfig, Simulation, run

__all__ = ["ScenarioConfig", "Simulation", "run"]
