"""Cooperative-perception helper selection and C-V2X resource allocation."""

from cpopt.scenario import (
    ArrivalModel,
    CameraConstants,
    Scenario,
    ScenarioConfig,
    Vehicle,
    VelocityModel,
    generate_scenario,
)
from cpopt.objective import SelectionMask, TimeAggregates, QcqpForm
from cpopt.channel import CommConfig, LinkState
from cpopt.allocator import Allocation

__version__ = "0.1.0"

__all__ = [
    "Allocation",
    "ArrivalModel",
    "CameraConstants",
    "CommConfig",
    "LinkState",
    "QcqpForm",
    "Scenario",
    "ScenarioConfig",
    "SelectionMask",
    "TimeAggregates",
    "Vehicle",
    "VelocityModel",
    "generate_scenario",
]
