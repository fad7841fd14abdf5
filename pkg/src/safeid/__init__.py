"""Closed-loop identification of linear systems under safe (bounded-state) policies."""

__version__ = "0.1.0"

from safeid.model import (
    History,
    PolicyError,
    RngStream,
    SystemParams,
    Trajectory,
    simulate,
    step,
    trajectory_bound,
)
from safeid.noise import NoiseSpec
from safeid.sets import Box, UncertaintySet

__all__ = [
    "Box",
    "History",
    "NoiseSpec",
    "PolicyError",
    "RngStream",
    "SystemParams",
    "Trajectory",
    "UncertaintySet",
    "simulate",
    "step",
    "trajectory_bound",
]
