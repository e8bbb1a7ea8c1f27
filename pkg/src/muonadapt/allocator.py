"""Budget derivation and greedy per-type step allocation with proof-grade checks.

The allocation problem is a separable minimization of per-type projected
error curves under an integer box and one budget equality.  The greedy
add/remove/transfer routine is exact for strictly decreasing, discretely
convex curves; `brute_force_allocate` provides the independent enumeration
oracle and `check_optimality` the pairwise marginal-gain certificate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .composer import ErrorCurve
from .ns_engine import ConfigurationError


class ModelMismatchError(KeyError):
    """Raised when a cost model is missing a type present in the plan."""


@dataclass(frozen=True)
class AllocationPlan:
    """Per-type target step counts under a global budget."""

    type_names: tuple[str, ...]
    steps: tuple[int, ...]
    ell_targets: tuple[float, ...]
    budget: int
    k_min: int
    k_max: int

    def __post_init__(self):
        if sum(self.steps) != self.budget:
            raise ValueError("allocation does not meet the budget")
        if any(not self.k_min <= t <= self.k_max for t in self.steps):
            raise ValueError("allocation violates the box constraint")

    def as_dict(self) -> dict:
        return {
            "budget": self.budget,
            "range": [self.k_min, self.k_max],
            "per_type": [
                {"name": n, "T_star": t, "ell_target": e}
                for n, t, e in zip(self.type_names, self.steps, self.ell_targets)
            ],
        }

    @staticmethod
    def from_dict(doc: dict) -> "AllocationPlan":
        per_type = doc["per_type"]
        return AllocationPlan(
            type_names=tuple(p["name"] for p in per_type),
            steps=tuple(int(p["T_star"]) for p in per_type),
            ell_targets=tuple(float(p["ell_target"]) for p in per_type),
            budget=int(doc["budget"]),
            k_min=int(doc["range"][0]),
            k_max=int(doc["range"][1]),
        )


@dataclass(frozen=True)
class CostModel:
    """Matrix shapes (with multiplicity) per operator type."""

    shapes: dict[str, tuple[tuple[int, int, int], ...]]  # type -> ((m, n, count), ...)

    def __post_init__(self):
        for name, shapes in self.shapes.items():
            for m, n, count in shapes:
                if m < 1 or n < 1 or count < 1:
                    raise ValueError(f"non-positive shape entry for {name}")


def round_half_away(x: float) -> int:
    """round() with halves away from zero (35 * 1.1 -> 39, not 38)."""
    return int(math.floor(x + 0.5)) if x >= 0 else int(math.ceil(x - 0.5))


def derive_budget(r: float, n_types: int, t_base: int) -> int:
    """Total step budget round(r * n_types * t_base)."""
    if r <= 0:
        raise ConfigurationError("budget ratio must be positive")
    return round_half_away(r * n_types * t_base)


def _relax_range(n: int, budget: int, k_min: int, k_max: int) -> tuple[int, int]:
    while budget < n * k_min and k_min > 1:
        k_min -= 1
    while budget > n * k_max:
        k_max += 1
    if budget < n * k_min:
        raise ConfigurationError(
            f"budget {budget} infeasible for {n} types even at k_min=1"
        )
    return k_min, k_max


def allocate(
    curves: list[ErrorCurve],
    budget: int,
    k_range: tuple[int, int],
    t_base: int,
    type_names: tuple[str, ...] | None = None,
    ell_targets: tuple[float, ...] | None = None,
) -> AllocationPlan:
    """Greedy add/remove/transfer allocation; exact under A2/A3.

    Ties in the add/remove argmax/argmin break toward the lowest type index;
    the transfer pass scans receivers ascending and donors descending.
    """
    n = len(curves)
    if n == 0:
        raise ConfigurationError("no curves to allocate over")
    k_min, k_max = _relax_range(n, budget, *k_range)
    for curve in curves:
        if curve.k_min > k_min or curve.k_max < k_max:
            raise ConfigurationError(
                f"curve range [{curve.k_min},{curve.k_max}] does not cover "
                f"[{k_min},{k_max}]"
            )
        values = [curve.at(k) for k in range(k_min, k_max + 1)]
        if any(values[i] <= values[i + 1] for i in range(len(values) - 1)):
            raise ConfigurationError("error curve is not strictly decreasing")
        gains = [values[i] - values[i + 1] for i in range(len(values) - 1)]
        if any(gains[i] < gains[i + 1] - 1e-9 * max(1.0, gains[i + 1]) for i in range(len(gains) - 1)):
            raise ConfigurationError("error curve is not discretely convex")

    steps = [min(max(t_base, k_min), k_max) for _ in range(n)]

    while sum(steps) < budget:  # add pass
        best, best_gain = -1, -math.inf
        for i in range(n):
            if steps[i] < k_max:
                gain = curves[i].at(steps[i]) - curves[i].at(steps[i] + 1)
                if gain > best_gain:
                    best, best_gain = i, gain
        steps[best] += 1

    while sum(steps) > budget:  # remove pass
        best, best_loss = -1, math.inf
        for i in range(n):
            if steps[i] > k_min:
                loss = curves[i].at(steps[i] - 1) - curves[i].at(steps[i])
                if loss < best_loss:
                    best, best_loss = i, loss
        steps[best] -= 1

    moved = True  # transfer pass
    while moved:
        moved = False
        for i in range(n):
            if steps[i] >= k_max:
                continue
            gain_i = curves[i].at(steps[i]) - curves[i].at(steps[i] + 1)
            for j in range(n - 1, -1, -1):
                if j == i or steps[j] <= k_min:
                    continue
                loss_j = curves[j].at(steps[j] - 1) - curves[j].at(steps[j])
                if gain_i > loss_j:
                    steps[i] += 1
                    steps[j] -= 1
                    moved = True
                    break
            if moved:
                break

    names = type_names or tuple(f"type_{i}" for i in range(n))
    ells = ell_targets or tuple(float("nan") for _ in range(n))
    return AllocationPlan(
        type_names=tuple(names),
        steps=tuple(steps),
        ell_targets=tuple(ells),
        budget=budget,
        k_min=k_min,
        k_max=k_max,
    )


def count_allocations(n: int, budget: int, k_min: int, k_max: int) -> int:
    """Number of integer allocations in the box summing to the budget."""
    counts = {0: 1}
    for _ in range(n):
        nxt: dict[int, int] = {}
        for total, ways in counts.items():
            for x in range(k_min, k_max + 1):
                nxt[total + x] = nxt.get(total + x, 0) + ways
        counts = nxt
    return counts.get(budget, 0)


def brute_force_allocate(
    curves: list[ErrorCurve],
    budget: int,
    k_range: tuple[int, int],
    type_names: tuple[str, ...] | None = None,
    ell_targets: tuple[float, ...] | None = None,
) -> AllocationPlan:
    """Exhaustive dynamic-programming oracle; lexicographically smallest optimum."""
    n = len(curves)
    k_min, k_max = k_range
    if not n * k_min <= budget <= n * k_max:
        raise ConfigurationError(
            f"budget {budget} infeasible for {n} types in [{k_min},{k_max}]"
        )
    span = k_max - k_min + 1
    if span**n > 10**7:
        raise ConfigurationError("enumeration space exceeds 10^7 states")

    # best[t][b] = minimal cost of types t..n-1 given remaining budget b
    best: list[dict[int, float]] = [dict() for _ in range(n + 1)]
    best[n][0] = 0.0
    for t in range(n - 1, -1, -1):
        lo_rest = (n - t - 1) * k_min
        hi_rest = (n - t - 1) * k_max
        for b in range((n - t) * k_min, (n - t) * k_max + 1):
            acc = math.inf
            for x in range(k_min, min(k_max, b - lo_rest) + 1):
                if b - x > hi_rest or b - x < lo_rest:
                    continue
                tail = best[t + 1].get(b - x)
                if tail is None:
                    continue
                cost = curves[t].at(x) + tail
                if cost < acc:
                    acc = cost
            if acc < math.inf:
                best[t][b] = acc

    steps = []
    remaining = budget
    for t in range(n):
        target = best[t][remaining]
        for x in range(k_min, k_max + 1):  # ascending: lexicographic minimum
            tail = best[t + 1].get(remaining - x)
            if tail is not None and curves[t].at(x) + tail == target:
                steps.append(x)
                remaining -= x
                break
    names = type_names or tuple(f"type_{i}" for i in range(n))
    ells = ell_targets or tuple(float("nan") for _ in range(n))
    return AllocationPlan(
        type_names=tuple(names),
        steps=tuple(steps),
        ell_targets=tuple(ells),
        budget=budget,
        k_min=k_min,
        k_max=k_max,
    )


def objective(curves: list[ErrorCurve], steps) -> float:
    return sum(curve.at(t) for curve, t in zip(curves, steps))


def check_optimality(plan: AllocationPlan, curves: list[ErrorCurve]) -> bool:
    """Pairwise certificate: no feasible unit transfer strictly improves."""
    steps = plan.steps
    for i in range(len(steps)):
        if steps[i] >= plan.k_max:
            continue
        gain_i = curves[i].at(steps[i]) - curves[i].at(steps[i] + 1)
        for j in range(len(steps)):
            if j == i or steps[j] <= plan.k_min:
                continue
            loss_j = curves[j].at(steps[j] - 1) - curves[j].at(steps[j])
            if gain_i > loss_j:
                return False
    return True


def cost_estimate(plan: AllocationPlan, model: CostModel) -> dict:
    """Weighted iteration cost: 6 * min(m,n)^2 * max(m,n) per step per matrix."""
    per_type = {}
    for name, steps in zip(plan.type_names, plan.steps):
        if name not in model.shapes:
            raise ModelMismatchError(f"cost model has no shapes for type {name!r}")
        unit = 0.0
        for m, n, count in model.shapes[name]:
            small, large = min(m, n), max(m, n)
            unit += count * 6.0 * small * small * large
        per_type[name] = steps * unit
    total = sum(per_type.values())
    return {
        "total_flops": total,
        "per_type_flops": per_type,
        "per_type_share": {k: (v / total if total else 0.0) for k, v in per_type.items()},
    }
