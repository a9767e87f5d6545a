"""Noisy release with budget recycling: kernels, accounting, allocation and subsampling."""

from .budgeting import AllocationResult, allocate, find_q
from .core import BrdpMechanism, ErrorBound, ShiftWeight, acceptance_rate, brdp_privacy_profile, sample, shift_params
from .errors import BrdpError
from .kernels import BudgetPair, CalibratedKernel, KernelKind, calibrate, privacy_profile
from .pld import PldGrid

__all__ = [
    "AllocationResult",
    "BrdpError",
    "BrdpMechanism",
    "BudgetPair",
    "CalibratedKernel",
    "ErrorBound",
    "KernelKind",
    "PldGrid",
    "ShiftWeight",
    "acceptance_rate",
    "allocate",
    "brdp_privacy_profile",
    "calibrate",
    "find_q",
    "privacy_profile",
    "sample",
    "shift_params",
]
