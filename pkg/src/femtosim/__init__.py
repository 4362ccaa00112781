"""Femtocell channel-clustering simulator (GVCF vs. random set choice)."""

from .clustering import ClusterAssignment, GvcfConfig, gvcf_assign, ncs_assign
from .geometry import Area, build_topology
from .radio import RadioParams
from .simkernel import MetricsReport, ScenarioConfig, run_scenario

__version__ = "0.1.0"

__all__ = [
    "Area", "ClusterAssignment", "GvcfConfig", "MetricsReport", "RadioParams",
    "ScenarioConfig", "build_topology", "gvcf_assign", "ncs_assign", "run_scenario",
]
