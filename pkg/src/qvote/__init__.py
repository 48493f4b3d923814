"""Simulator for anonymous two-candidate voting over GHZ-family photonic states."""
from .qsim import ContractViolation, LocalGate, StateVector
from .ghz import (
    DephasingEnsemble,
    FamilyKind,
    FamilyLabel,
    FixedFamily,
    Ideal,
    WernerEnsemble,
    make_ghz,
    make_phi0,
    make_phi1,
    make_psi,
)
from .protocol import AgentProfile, Intent, SecurityParams, run_election

__version__ = "0.1.0"
