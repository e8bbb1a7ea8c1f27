"""Quintic Newton-Schulz iteration engine and builtin coefficient tables."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .linalg import DegenerateInputError, as_matrix


class ConfigurationError(ValueError):
    """Raised for unknown schedule names or malformed fixture files."""


class NumericalBlowupError(RuntimeError):
    """Raised when an iteration produces non-finite values."""

    def __init__(self, step_index: int):
        super().__init__(f"non-finite values after iteration step {step_index}")
        self.step_index = step_index


@dataclass(frozen=True)
class CoefficientTriplet:
    a: float
    b: float
    c: float

    def __post_init__(self):
        if not all(np.isfinite([self.a, self.b, self.c])):
            raise ConfigurationError("coefficient triplet must be finite")

    def __iter__(self):
        return iter((self.a, self.b, self.c))


@dataclass(frozen=True)
class CoefficientSchedule:
    """An ordered list of quintic triplets, optionally tagged with the input
    lower bound the schedule was built for (fixed tables carry none)."""

    triplets: tuple[CoefficientTriplet, ...]
    declared_ell: float | None = None

    @property
    def steps(self) -> int:
        return len(self.triplets)

    @staticmethod
    def from_floats(trips, declared_ell=None) -> "CoefficientSchedule":
        return CoefficientSchedule(
            triplets=tuple(CoefficientTriplet(float(a), float(b), float(c)) for a, b, c in trips),
            declared_ell=None if declared_ell is None else float(declared_ell),
        )

    def as_lists(self) -> list[list[float]]:
        return [[t.a, t.b, t.c] for t in self.triplets]


def _schedule_checksum(entries) -> str:
    canonical = json.dumps(entries, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


def _load_builtin() -> dict:
    raw = resources.files("muonadapt.fixtures").joinpath("ns_builtin.json").read_text()
    doc = json.loads(raw)
    expected = doc.get("checksum")
    actual = _schedule_checksum(doc["schedules"])
    if expected != actual:
        raise ConfigurationError(
            f"builtin schedule fixture checksum mismatch: {actual} != {expected}"
        )
    return doc["schedules"]


_builtin_cache: dict | None = None


def builtin_schedule(name: str) -> CoefficientSchedule:
    """Fixed coefficient tables for the classical baselines (KJ-5, You-5)."""
    global _builtin_cache
    if _builtin_cache is None:
        _builtin_cache = _load_builtin()
    if name not in _builtin_cache:
        known = ", ".join(sorted(_builtin_cache))
        raise ConfigurationError(f"unknown builtin schedule {name!r} (known: {known})")
    entry = _builtin_cache[name]
    return CoefficientSchedule.from_floats([tuple(t) for t in entry["triplets"]])


def apply_ns(m, schedule: CoefficientSchedule, safety_scale: float = 1.01) -> np.ndarray:
    """Run the quintic iteration X <- a X + (b A + c A^2) X with A = X X^T.

    The matrix is transposed internally so the Gram side is the short one,
    normalized by safety_scale * ||M||_F, iterated, and transposed back.
    """
    if safety_scale < 1.0:
        raise ValueError("safety_scale must be >= 1")
    m = as_matrix(m)
    norm = np.linalg.norm(m)
    if norm == 0.0:
        raise DegenerateInputError("cannot orthogonalize an all-zero matrix")
    rows, cols = m.shape
    transposed = rows > cols
    x = (m.T if transposed else m) / (norm * safety_scale)
    with np.errstate(over="ignore", invalid="ignore"):
        for k, (a, b, c) in enumerate(schedule.triplets):
            gram = x @ x.T
            x = a * x + (b * gram + c * (gram @ gram)) @ x
            if not np.all(np.isfinite(x)):
                raise NumericalBlowupError(k)
    return x.T if transposed else x
