"""Observe -> plan -> transition -> lock scheduling of per-type step budgets.

One writer (the training loop) drives the state machine; schedule queries are
pure reads between writes.  Geometry is captured only during the observation
window, a single allocation plan is computed at its end, per-type step counts
and target bounds are linearly interpolated over the transition window with
two-stage rounding, and the plan is frozen afterwards.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

import numpy as np

from .allocator import AllocationPlan, allocate, derive_budget, round_half_away
from .composer import ScheduleCache, error_curve
from .linalg import spectral_stats
from .ns_engine import CoefficientSchedule, ConfigurationError

OPERATOR_TYPES = (
    "attn_q",
    "attn_k",
    "attn_v",
    "attn_o",
    "mlp_gate",
    "mlp_up",
    "mlp_down",
)

NS_SAFETY_SCALE = 1.01


class PhaseError(RuntimeError):
    """Raised when an operation is invoked in the wrong scheduler phase."""


class Phase(enum.Enum):
    OBSERVING = "observing"
    TRANSITIONING = "transitioning"
    LOCKED = "locked"


@dataclass(frozen=True)
class GeometrySnapshot:
    """Spectral statistics of one momentum matrix at one training step."""

    step: int
    op_type: str
    layer: int
    ell_eff: float
    kappa: float
    eps_norm: float
    frobenius: float
    effective_rank: int

    def as_dict(self) -> dict:
        return {
            "step": self.step,
            "op_type": self.op_type,
            "layer": self.layer,
            "ell_eff": self.ell_eff,
            "kappa": self.kappa,
            "eps_norm": self.eps_norm,
            "frobenius": self.frobenius,
            "effective_rank": self.effective_rank,
        }


@dataclass(frozen=True)
class ObservationConfig:
    """Knobs of the observe-then-commit protocol."""

    horizon: int = 1200          # observation end step
    interval: int = 150          # steps between geometry captures
    sample_size: int = 8         # matrices sampled per type per capture
    shrinkage: float = 0.7       # pull of the measured bound toward the baseline
    ell_base: float = 1e-3       # conservative baseline lower bound
    transition: int = 300        # transition duration in steps
    budget_ratio: float = 1.0
    t_base: int = 5
    k_min: int = 3
    k_max: int = 7
    sampling_seed: int = 42

    def __post_init__(self):
        if self.horizon % self.interval != 0:
            raise ConfigurationError("observation interval must divide the horizon")
        for name in ("horizon", "interval", "sample_size", "transition", "t_base"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be positive")
        if not 0.0 <= self.shrinkage <= 1.0:
            raise ConfigurationError("shrinkage must be in [0, 1]")
        if not 0.0 < self.ell_base < 1.0:
            raise ConfigurationError("ell_base must be in (0, 1)")
        if self.budget_ratio <= 0:
            raise ConfigurationError("budget ratio must be positive")

    @property
    def observation_count(self) -> int:
        return self.horizon // self.interval


def median(values) -> float:
    """Median with the even-count mean-of-middle convention."""
    ordered = sorted(float(v) for v in values)
    if not ordered:
        raise ValueError("median of an empty sequence")
    n = len(ordered)
    mid = n // 2
    if n % 2:
        return ordered[mid]
    return 0.5 * (ordered[mid - 1] + ordered[mid])


def robust_aggregate(history: dict[str, list[float]]) -> dict[str, float]:
    """Median over the recorded per-capture medians, per type."""
    out = {}
    for op_type, medians in history.items():
        if not medians:
            raise ValueError(f"no observations recorded for {op_type}")
        out[op_type] = median(medians)
    return out


def shrink_target(ell_robust: float, alpha: float, ell_base: float) -> float:
    """Affine pull of the measured bound toward the conservative baseline."""
    return alpha * ell_robust + (1.0 - alpha) * ell_base


def hamilton_round(targets, total: int, k_min: int, k_max: int) -> list[int]:
    """Largest-remainder rounding constrained to sum to `total` inside the box.

    Ties break toward the lowest index; box clipping redistributes any
    leftover to the types with the largest unclipped fractional parts.
    """
    floors = [int(np.floor(t)) for t in targets]
    fracs = [t - f for t, f in zip(targets, floors)]
    remainder = total - sum(floors)
    order = sorted(range(len(targets)), key=lambda i: (-fracs[i], i))
    values = list(floors)
    idx = 0
    while remainder > 0 and idx < len(order):
        values[order[idx]] += 1
        remainder -= 1
        idx += 1
    # floors can overshoot when targets sit exactly on integers; take back
    idx = len(order) - 1
    while remainder < 0 and idx >= 0:
        values[order[idx]] -= 1
        remainder += 1
        idx -= 1
    clipped = [min(max(v, k_min), k_max) for v in values]
    delta = total - sum(clipped)
    while delta != 0:
        step = 1 if delta > 0 else -1
        movable = [i for i in range(len(clipped)) if k_min <= clipped[i] + step <= k_max]
        if not movable:
            raise ConfigurationError("box constraints make the rounded total infeasible")
        unclipped = [i for i in movable if clipped[i] == values[i]]
        pool = unclipped or movable
        pick = min(pool, key=lambda i: (-fracs[i], i))
        clipped[pick] += step
        delta -= step
    return clipped


class AmoScheduler:
    """Phase machine owning observation history, the plan and schedule cache."""

    def __init__(
        self,
        config: ObservationConfig,
        layer_counts: dict[str, int],
        op_types: tuple[str, ...] = OPERATOR_TYPES,
    ):
        self.config = config
        self.op_types = tuple(op_types)
        for op in self.op_types:
            if layer_counts.get(op, 0) < 1:
                raise ConfigurationError(f"no layers registered for type {op!r}")
        self.layer_counts = dict(layer_counts)
        self.phase = Phase.OBSERVING
        self.history: dict[str, list[float]] = {op: [] for op in self.op_types}
        self.plan: AllocationPlan | None = None
        self.ell_targets: dict[str, float] | None = None
        self.transition_u = 0
        self.cache = ScheduleCache()
        rng = np.random.default_rng(config.sampling_seed)
        self._samples = {}
        for op in self.op_types:
            count = self.layer_counts[op]
            take = min(config.sample_size, count)
            self._samples[op] = tuple(
                int(i) for i in rng.permutation(count)[:take]
            )

    # -- observation ---------------------------------------------------------

    def sampled_layers(self, op_type: str) -> tuple[int, ...]:
        """Seeded fixed subset of layer indices observed for one type."""
        return self._samples[op_type]

    def record_observation(self, step: int, sampled: dict[str, list]) -> None:
        """Record per-type medians of ell_eff from the sampled matrices."""
        if self.phase is not Phase.OBSERVING:
            raise PhaseError(f"geometry capture in phase {self.phase.value}")
        if step % self.config.interval != 0 or not 0 < step <= self.config.horizon:
            raise PhaseError(f"step {step} is not an observation step")
        for op in self.op_types:
            matrices = sampled.get(op)
            if not matrices:
                raise ValueError(f"no sampled matrices for type {op!r}")
            ells = []
            for m in matrices:
                stats = spectral_stats(np.asarray(m, dtype=np.float64))
                ells.append(stats.ell / NS_SAFETY_SCALE)
            self.history[op].append(median(ells))
        if step == self.config.horizon:
            self._make_plan()
            self.phase = Phase.TRANSITIONING
            self.transition_u = 0

    # -- planning ------------------------------------------------------------

    def _make_plan(self) -> None:
        cfg = self.config
        robust = robust_aggregate(self.history)
        targets = {
            op: shrink_target(robust[op], cfg.shrinkage, cfg.ell_base)
            for op in self.op_types
        }
        curves = [error_curve(targets[op], cfg.k_min, cfg.k_max) for op in self.op_types]
        budget = derive_budget(cfg.budget_ratio, len(self.op_types), cfg.t_base)
        self.plan = allocate(
            curves,
            budget,
            (cfg.k_min, cfg.k_max),
            cfg.t_base,
            type_names=self.op_types,
            ell_targets=tuple(targets[op] for op in self.op_types),
        )
        self.ell_targets = targets

    # -- transition ----------------------------------------------------------

    def transition_schedule(
        self, u: int
    ) -> dict[str, tuple[int, float, CoefficientSchedule]]:
        """Interpolated (T_i(u), ell_i(u), schedule) for transition step u."""
        if self.phase is not Phase.TRANSITIONING:
            raise PhaseError(f"transition query in phase {self.phase.value}")
        cfg = self.config
        if not 1 <= u <= cfg.transition:
            raise PhaseError(f"transition step {u} outside [1, {cfg.transition}]")
        plan = self.plan
        p = u / cfg.transition
        real_steps = [
            cfg.t_base + p * (t_star - cfg.t_base) for t_star in plan.steps
        ]
        ells = [
            cfg.ell_base + p * (target - cfg.ell_base) for target in plan.ell_targets
        ]
        total = round_half_away(sum(real_steps))
        counts = hamilton_round(real_steps, total, plan.k_min, plan.k_max)
        out = {}
        for op, count, ell in zip(self.op_types, counts, ells):
            out[op] = (count, ell, self.cache.get(ell, count))
        self.transition_u = u
        if u == cfg.transition:
            self.phase = Phase.LOCKED
        return out

    # -- dispatch ------------------------------------------------------------

    def schedule_for_step(
        self, step: int, op_type: str
    ) -> tuple[CoefficientSchedule, float]:
        """Schedule and safety scale for one operator type at one step."""
        cfg = self.config
        if self.phase is Phase.OBSERVING:
            return self.cache.get(cfg.ell_base, cfg.t_base), NS_SAFETY_SCALE
        if self.phase is Phase.TRANSITIONING:
            u = min(max(step - cfg.horizon, 1), cfg.transition)
            idx = self.op_types.index(op_type)
            p = u / cfg.transition
            real_steps = [
                cfg.t_base + p * (t - cfg.t_base) for t in self.plan.steps
            ]
            total = round_half_away(sum(real_steps))
            counts = hamilton_round(real_steps, total, self.plan.k_min, self.plan.k_max)
            ell = cfg.ell_base + p * (self.plan.ell_targets[idx] - cfg.ell_base)
            return self.cache.get(ell, counts[idx]), NS_SAFETY_SCALE
        idx = self.op_types.index(op_type)
        return (
            self.cache.get(self.plan.ell_targets[idx], self.plan.steps[idx]),
            NS_SAFETY_SCALE,
        )

    # -- reporting ------------------------------------------------------------

    def locked_report(self) -> dict:
        """Locked per-type (T, ell_target, triplets), plan-file compatible."""
        if self.plan is None:
            raise PhaseError("no plan computed yet")
        rows = []
        for op, t_star, ell in zip(
            self.op_types, self.plan.steps, self.plan.ell_targets
        ):
            schedule = self.cache.get(ell, t_star)
            rows.append(
                {
                    "op_type": op,
                    "steps": t_star,
                    "ell_target": ell,
                    "triplets": schedule.as_lists(),
                }
            )
        return {"budget": self.plan.budget, "types": rows}


def write_geometry_log(path, snapshots) -> None:
    with open(path, "a") as handle:
        for snap in snapshots:
            handle.write(json.dumps(snap.as_dict()) + "\n")


def read_geometry_log(path) -> list[GeometrySnapshot]:
    out = []
    with open(path) as handle:
        for line in handle:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            out.append(GeometrySnapshot(**doc))
    return out
