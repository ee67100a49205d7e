"""Independent oracles and structural checks for value surfaces."""

from .lattice import LatticeOracle, lattice_dp_value
from .montecarlo import McEstimate, mc_policy_value
from .properties import CheckResult, PropertyReport, run_property_suite

__all__ = [
    "CheckResult",
    "LatticeOracle",
    "McEstimate",
    "PropertyReport",
    "lattice_dp_value",
    "mc_policy_value",
    "run_property_suite",
]
