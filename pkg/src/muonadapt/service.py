"""HTTP service exposing the pure scheduling operations.

The CLI uses the same request/response models and can either call the
handlers in process or POST to a running server; both paths serialize through
the pydantic schemas below.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import composer
from .allocator import (
    AllocationPlan,
    CostModel,
    allocate,
    brute_force_allocate,
    check_optimality,
    cost_estimate,
    count_allocations,
    derive_budget,
)
from .composer import ErrorCurve
from .ns_engine import ConfigurationError, builtin_schedule
from .optim import stable_lr
from .scheduler import OPERATOR_TYPES, GeometrySnapshot, shrink_target
from .trace import trace_stats


class ComposeRequest(BaseModel):
    ell: float = Field(gt=0, lt=1)
    steps: int = Field(ge=1, le=composer.MAX_STEPS)


class ComposeResponse(BaseModel):
    ell: float
    steps: int
    triplets: list[list[float]]
    final_lower: float
    final_upper: float


class SimulateRequest(BaseModel):
    ell: float = Field(gt=0, lt=1)
    triplets: list[list[float]]


class SimulateResponse(BaseModel):
    bounds: list[list[float]]


class ErrorCurveRequest(BaseModel):
    ell: float = Field(gt=0, lt=1)
    k_min: int = Field(ge=1)
    k_max: int = Field(ge=1)


class ErrorCurveResponse(BaseModel):
    k_min: int
    k_max: int
    values: list[float]


class BudgetRequest(BaseModel):
    ratio: float = Field(gt=0)
    n_types: int = Field(ge=1)
    t_base: int = Field(ge=1)


class BudgetResponse(BaseModel):
    budget: int


class CurveIn(BaseModel):
    name: str
    k_min: int
    k_max: int
    values: list[float]


class AllocateRequest(BaseModel):
    curves: list[CurveIn]
    budget: int
    k_min: int = 3
    k_max: int = 7
    t_base: int = 5
    oracle: bool = False


class AllocateResponse(BaseModel):
    plan: dict
    objective: float
    optimal: bool
    oracle_plan: dict | None = None
    oracle_objective: float | None = None
    enumeration_size: int | None = None


class PlanRequest(BaseModel):
    ell_robust: dict[str, float]
    shrinkage: float = 0.7
    ell_base: float = 1e-3
    budget_ratio: float = 1.0
    t_base: int = 5
    k_min: int = 3
    k_max: int = 7


class PlanResponse(BaseModel):
    plan: dict
    ell_targets: dict[str, float]


class StableLrRequest(BaseModel):
    n_billions: float = Field(gt=0)
    d_billions: float = Field(gt=0)


class StableLrResponse(BaseModel):
    eta_stable: float


class CostRequest(BaseModel):
    plan: dict
    shapes: dict[str, list[list[int]]]  # type -> [[m, n, count], ...]


class CostResponse(BaseModel):
    total_flops: float
    per_type_flops: dict[str, float]
    per_type_share: dict[str, float]


class TraceRequest(BaseModel):
    rows: list[dict]


class TraceResponse(BaseModel):
    report: dict


def _curve(c: CurveIn) -> ErrorCurve:
    return ErrorCurve(k_min=c.k_min, k_max=c.k_max, values=tuple(c.values))


def create_app() -> FastAPI:
    app = FastAPI(title="muonadapt", version="0.1.0")

    @app.exception_handler(ConfigurationError)
    async def _config_error(_, exc):
        return JSONResponse(status_code=422, content={"detail": str(exc)})

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/schedules/builtin/{name}")
    def builtin(name: str):
        try:
            schedule = builtin_schedule(name)
        except ConfigurationError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return {"name": name, "triplets": schedule.as_lists()}

    @app.post("/compose", response_model=ComposeResponse)
    def compose_endpoint(req: ComposeRequest):
        try:
            schedule = composer.compose(req.ell, req.steps)
        except ConfigurationError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        traj = composer.simulate(req.ell, schedule)
        return ComposeResponse(
            ell=req.ell,
            steps=req.steps,
            triplets=schedule.as_lists(),
            final_lower=traj.final_lower,
            final_upper=traj.final_upper,
        )

    @app.post("/simulate", response_model=SimulateResponse)
    def simulate_endpoint(req: SimulateRequest):
        from .ns_engine import CoefficientSchedule

        schedule = CoefficientSchedule.from_floats([tuple(t) for t in req.triplets])
        traj = composer.simulate(req.ell, schedule)
        return SimulateResponse(bounds=[list(b) for b in traj.bounds])

    @app.post("/error-curve", response_model=ErrorCurveResponse)
    def error_curve_endpoint(req: ErrorCurveRequest):
        try:
            curve = composer.error_curve(req.ell, req.k_min, req.k_max)
        except ConfigurationError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return ErrorCurveResponse(
            k_min=curve.k_min, k_max=curve.k_max, values=list(curve.values)
        )

    @app.post("/budget", response_model=BudgetResponse)
    def budget_endpoint(req: BudgetRequest):
        return BudgetResponse(budget=derive_budget(req.ratio, req.n_types, req.t_base))

    @app.post("/allocate", response_model=AllocateResponse)
    def allocate_endpoint(req: AllocateRequest):
        curves = [_curve(c) for c in req.curves]
        names = tuple(c.name for c in req.curves)
        try:
            plan = allocate(
                curves, req.budget, (req.k_min, req.k_max), req.t_base, type_names=names
            )
        except ConfigurationError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        obj = sum(c.at(t) for c, t in zip(curves, plan.steps))
        resp = AllocateResponse(
            plan=plan.as_dict(),
            objective=obj,
            optimal=check_optimality(plan, curves),
        )
        if req.oracle:
            oracle = brute_force_allocate(
                curves, req.budget, (plan.k_min, plan.k_max), type_names=names
            )
            resp.oracle_plan = oracle.as_dict()
            resp.oracle_objective = sum(c.at(t) for c, t in zip(curves, oracle.steps))
            resp.enumeration_size = count_allocations(
                len(curves), req.budget, plan.k_min, plan.k_max
            )
        return resp

    @app.post("/plan", response_model=PlanResponse)
    def plan_endpoint(req: PlanRequest):
        missing = [op for op in OPERATOR_TYPES if op not in req.ell_robust]
        if missing:
            raise HTTPException(status_code=422, detail=f"missing types: {missing}")
        targets = {
            op: shrink_target(req.ell_robust[op], req.shrinkage, req.ell_base)
            for op in OPERATOR_TYPES
        }
        curves = [
            composer.error_curve(targets[op], req.k_min, req.k_max)
            for op in OPERATOR_TYPES
        ]
        budget = derive_budget(req.budget_ratio, len(OPERATOR_TYPES), req.t_base)
        plan = allocate(
            curves,
            budget,
            (req.k_min, req.k_max),
            req.t_base,
            type_names=OPERATOR_TYPES,
            ell_targets=tuple(targets[op] for op in OPERATOR_TYPES),
        )
        return PlanResponse(plan=plan.as_dict(), ell_targets=targets)

    @app.post("/stable-lr", response_model=StableLrResponse)
    def stable_lr_endpoint(req: StableLrRequest):
        return StableLrResponse(eta_stable=stable_lr(req.n_billions, req.d_billions))

    @app.post("/cost-estimate", response_model=CostResponse)
    def cost_endpoint(req: CostRequest):
        plan = AllocationPlan.from_dict(req.plan)
        model = CostModel(
            shapes={
                name: tuple((m, n, c) for m, n, c in rows)
                for name, rows in req.shapes.items()
            }
        )
        try:
            result = cost_estimate(plan, model)
        except KeyError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return CostResponse(**result)

    @app.post("/trace-stats", response_model=TraceResponse)
    def trace_endpoint(req: TraceRequest):
        rows = [GeometrySnapshot(**r) for r in req.rows]
        try:
            report = trace_stats(rows)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return TraceResponse(report=report.as_dict())

    return app


app = create_app()
