import numpy as np
import pytest

from muonadapt.allocator import (
    AllocationPlan,
    CostModel,
    ModelMismatchError,
    allocate,
    brute_force_allocate,
    check_optimality,
    cost_estimate,
    count_allocations,
    derive_budget,
    objective,
    round_half_away,
)
from muonadapt.composer import ErrorCurve
from muonadapt.ns_engine import ConfigurationError


def convex_curve(rng, k_min=3, k_max=7) -> ErrorCurve:
    """Random strictly decreasing, discretely convex curve on [k_min, k_max]."""
    n_gaps = k_max - k_min
    increments = rng.uniform(0.01, 1.0, size=n_gaps)
    gains = np.cumsum(increments)[::-1]  # strictly decreasing marginal gains
    start = float(gains.sum() + rng.uniform(0.0, 0.5))
    values = [start]
    for g in gains:
        values.append(values[-1] - float(g))
    return ErrorCurve(k_min=k_min, k_max=k_max, values=tuple(values))


class TestDeriveBudget:
    def test_baseline(self):
        assert derive_budget(1.0, 7, 5) == 35

    def test_sweep(self):
        got = [derive_budget(r, 7, 5) for r in (0.8, 0.9, 1.0, 1.1, 1.2)]
        assert got == [28, 32, 35, 39, 42]

    def test_half_rounds_away_from_zero(self):
        assert derive_budget(1.1, 7, 5) == 39  # 38.5 -> 39
        assert round_half_away(-38.5) == -39

    def test_rejects_nonpositive(self):
        with pytest.raises(ConfigurationError):
            derive_budget(0.0, 7, 5)


class TestAllocate:
    def test_symmetric_instance(self):
        rng = np.random.default_rng(0)
        curve = convex_curve(rng)
        curves = [curve] * 7
        plan = allocate(curves, 35, (3, 7), 5)
        assert plan.steps == (5,) * 7

    def test_boundary_saturation(self):
        rng = np.random.default_rng(1)
        curves = [convex_curve(rng) for _ in range(7)]
        plan = allocate(curves, 21, (3, 7), 5)
        assert plan.steps == (3,) * 7

    def test_matches_brute_force(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            curves = [convex_curve(rng) for _ in range(7)]
            budget = int(rng.integers(21, 50))
            plan = allocate(curves, budget, (3, 7), 5)
            oracle = brute_force_allocate(curves, budget, (3, 7))
            assert objective(curves, plan.steps) == pytest.approx(
                objective(curves, oracle.steps), abs=0.0
            )
            assert check_optimality(plan, curves)

    def test_relaxation_lowers_k_min(self):
        rng = np.random.default_rng(3)
        curves = [convex_curve(rng, 1, 7) for _ in range(7)]
        plan = allocate(curves, 10, (3, 7), 5)  # 10 < 7*3 -> relax
        assert plan.k_min < 3
        assert sum(plan.steps) == 10

    def test_relaxation_raises_k_max(self):
        rng = np.random.default_rng(4)
        curves = [convex_curve(rng, 3, 12) for _ in range(7)]
        plan = allocate(curves, 60, (3, 7), 5)  # 60 > 7*7 -> relax
        assert plan.k_max > 7
        assert sum(plan.steps) == 60

    def test_no_relaxation_inside_range(self):
        rng = np.random.default_rng(5)
        curves = [convex_curve(rng) for _ in range(7)]
        for budget in (21, 35, 49):
            plan = allocate(curves, budget, (3, 7), 5)
            assert (plan.k_min, plan.k_max) == (3, 7)

    def test_infeasible_budget_rejected(self):
        rng = np.random.default_rng(6)
        curves = [convex_curve(rng, 1, 7) for _ in range(7)]
        with pytest.raises(ConfigurationError):
            allocate(curves, 4, (3, 7), 5)

    def test_non_convex_curve_rejected(self):
        bad = ErrorCurve(k_min=3, k_max=7, values=(0.9, 0.85, 0.4, 0.39, 0.38))
        rng = np.random.default_rng(7)
        curves = [bad] + [convex_curve(rng) for _ in range(6)]
        with pytest.raises(ConfigurationError):
            allocate(curves, 35, (3, 7), 5)


class TestBruteForce:
    def test_single_type(self):
        rng = np.random.default_rng(8)
        curve = convex_curve(rng)
        plan = brute_force_allocate([curve], 6, (3, 7))
        assert plan.steps == (6,)

    def test_lexicographic_tie_break(self):
        curve = ErrorCurve(k_min=1, k_max=3, values=(0.3, 0.2, 0.1))
        plan = brute_force_allocate([curve, curve], 3, (1, 3))
        # (1, 2) and (2, 1) tie; lexicographically smallest wins
        assert plan.steps == (1, 2)

    def test_enumeration_count(self):
        # compositions of 35 into 7 parts within [3, 7], against raw enumeration
        from itertools import product

        count = count_allocations(7, 35, 3, 7)
        brute = sum(1 for combo in product(range(3, 8), repeat=7) if sum(combo) == 35)
        assert count == brute
        assert count > 0

    def test_search_space_guard(self):
        rng = np.random.default_rng(9)
        curves = [convex_curve(rng, 1, 30) for _ in range(7)]
        with pytest.raises(ConfigurationError):
            brute_force_allocate(curves, 100, (1, 30))


class TestCheckOptimality:
    def test_constructed_violation(self):
        rng = np.random.default_rng(10)
        curves = [convex_curve(rng) for _ in range(7)]
        plan = allocate(curves, 35, (3, 7), 5)
        assert check_optimality(plan, curves)
        steps = list(plan.steps)
        donor = next(i for i, t in enumerate(steps) if t > 3)
        receiver = next(i for i, t in enumerate(steps) if t < 7 and i != donor)
        # move one unit against the optimal gradient
        steps[donor] -= 1
        steps[receiver] += 1
        worse = AllocationPlan(
            type_names=plan.type_names,
            steps=tuple(steps),
            ell_targets=plan.ell_targets,
            budget=plan.budget,
            k_min=plan.k_min,
            k_max=plan.k_max,
        )
        if objective(curves, worse.steps) > objective(curves, plan.steps):
            assert not check_optimality(worse, curves)

    def test_all_at_k_max_vacuous(self):
        rng = np.random.default_rng(11)
        curves = [convex_curve(rng) for _ in range(7)]
        plan = allocate(curves, 49, (3, 7), 5)
        assert plan.steps == (7,) * 7
        assert check_optimality(plan, curves)


class TestCostEstimate:
    def make_plan(self, steps):
        return AllocationPlan(
            type_names=tuple(f"t{i}" for i in range(len(steps))),
            steps=tuple(steps),
            ell_targets=tuple(1e-3 for _ in steps),
            budget=sum(steps),
            k_min=min(steps),
            k_max=max(steps),
        )

    def test_uniform_plan_equal_shapes(self):
        plan = self.make_plan([5] * 7)
        model = CostModel(shapes={f"t{i}": ((64, 64, 1),) for i in range(7)})
        result = cost_estimate(plan, model)
        unit = 6.0 * 64 * 64 * 64
        assert result["total_flops"] == pytest.approx(35 * unit)

    def test_moving_step_to_cheaper_type_lowers_cost(self):
        plan_a = self.make_plan([5, 5])
        plan_b = self.make_plan([4, 6])  # one step moved to the cheaper type
        model = CostModel(shapes={"t0": ((128, 512, 1),), "t1": ((16, 16, 1),)})
        assert cost_estimate(plan_b, model)["total_flops"] < cost_estimate(plan_a, model)["total_flops"]

    def test_hand_summed_shapes(self):
        # toy-transformer block shapes, steps from the reference plan
        shapes = {
            "attn_q": ((64, 64, 4),),
            "attn_k": ((64, 32, 4),),
            "attn_v": ((64, 32, 4),),
            "attn_o": ((64, 64, 4),),
            "mlp_gate": ((64, 128, 4),),
            "mlp_up": ((64, 128, 4),),
            "mlp_down": ((128, 64, 4),),
        }
        steps = {"attn_q": 5, "attn_k": 6, "attn_v": 6, "attn_o": 5,
                 "mlp_gate": 4, "mlp_up": 5, "mlp_down": 4}
        plan = AllocationPlan(
            type_names=tuple(steps),
            steps=tuple(steps.values()),
            ell_targets=tuple(1e-3 for _ in steps),
            budget=sum(steps.values()),
            k_min=3,
            k_max=7,
        )
        model = CostModel(shapes=shapes)
        result = cost_estimate(plan, model)
        expected = 0.0
        for name, t in steps.items():
            (m, n, count), = shapes[name]
            expected += t * count * 6.0 * min(m, n) ** 2 * max(m, n)
        assert result["total_flops"] == pytest.approx(expected)
        assert sum(result["per_type_share"].values()) == pytest.approx(1.0)

    def test_missing_type_rejected(self):
        plan = self.make_plan([5, 5])
        model = CostModel(shapes={"t0": ((8, 8, 1),)})
        with pytest.raises(ModelMismatchError):
            cost_estimate(plan, model)
