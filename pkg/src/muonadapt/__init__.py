"""Adaptive per-operator-type Newton-Schulz scheduling for Muon-style training."""

from .allocator import (
    AllocationPlan,
    CostModel,
    allocate,
    brute_force_allocate,
    check_optimality,
    cost_estimate,
    derive_budget,
)
from .composer import ErrorCurve, ScalarTrajectory, compose, error_curve, simulate
from .linalg import SpectralStats, jacobi_svd, ns_residual, spectral_stats, svd
from .ns_engine import CoefficientSchedule, CoefficientTriplet, apply_ns, builtin_schedule
from .optim import AdamState, LrSchedule, MuonState, adamw_step, lr_at_step, muon_step, stable_lr
from .scheduler import (
    OPERATOR_TYPES,
    AmoScheduler,
    GeometrySnapshot,
    ObservationConfig,
    Phase,
)
from .trace import TraceReport, trace_stats

__all__ = [
    "AllocationPlan",
    "AmoScheduler",
    "AdamState",
    "CoefficientSchedule",
    "CoefficientTriplet",
    "CostModel",
    "ErrorCurve",
    "GeometrySnapshot",
    "LrSchedule",
    "MuonState",
    "ObservationConfig",
    "OPERATOR_TYPES",
    "Phase",
    "ScalarTrajectory",
    "SpectralStats",
    "TraceReport",
    "adamw_step",
    "allocate",
    "apply_ns",
    "brute_force_allocate",
    "builtin_schedule",
    "check_optimality",
    "compose",
    "cost_estimate",
    "derive_budget",
    "error_curve",
    "jacobi_svd",
    "lr_at_step",
    "muon_step",
    "ns_residual",
    "simulate",
    "spectral_stats",
    "stable_lr",
    "svd",
    "trace_stats",
]
