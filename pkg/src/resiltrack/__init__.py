"""Resilient trajectory tracking of a chaser spacecraft under actuation delay."""

from .dynamics import CwParams, ThrusterLayout, cw_expm, cw_matrix, default_layout, split_layout
from .reference import Mission, build_reference
from .sim import Scenario, run_scenario

__all__ = [
    "CwParams",
    "Mission",
    "Scenario",
    "ThrusterLayout",
    "build_reference",
    "cw_expm",
    "cw_matrix",
    "default_layout",
    "run_scenario",
    "split_layout",
]
