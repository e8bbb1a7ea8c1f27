"""Toy training runs wiring the model, optimizers, scheduler and geometry capture."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .allocator import AllocationPlan
from .composer import ScheduleCache
from .data import MotifStream
from .linalg import ns_residual, spectral_stats
from .model import ToyModelConfig, init_params, loss_and_grads, op_type_of
from .ns_engine import CoefficientSchedule, ConfigurationError, apply_ns, builtin_schedule
from .optim import (
    AdamState,
    LrSchedule,
    MuonState,
    adamw_step,
    clip_global_norm,
    lr_at_step,
    muon_step,
)
from .scheduler import (
    NS_SAFETY_SCALE,
    OPERATOR_TYPES,
    AmoScheduler,
    GeometrySnapshot,
    ObservationConfig,
    Phase,
    write_geometry_log,
)

OPTIMIZER_KINDS = ("adamw", "muon-kj", "muon-you", "muon-pe", "amo", "static-plan")

TOY_OBSERVATION = ObservationConfig(
    horizon=200,
    interval=25,
    sample_size=2,
    transition=50,
)


@dataclass(frozen=True)
class RunConfig:
    optimizer: str = "amo"
    model: ToyModelConfig = field(default_factory=ToyModelConfig)
    observation: ObservationConfig = field(default_factory=lambda: TOY_OBSERVATION)
    steps: int = 400
    batch_size: int = 4
    seed: int = 42
    lr_kind: str = "cosine"
    lr_eta: float = 0.02
    lr_warmup: int = 20
    pe_ell: float = 1e-3
    static_plan: dict | None = None       # op_type -> {"steps": int, "ell": float|None}
    geometry_every: int = 0               # pilot-style capture cadence (non-amo only)
    mu: float = 0.95
    weight_decay: float = 0.1
    nesterov: bool = True

    def __post_init__(self):
        if self.optimizer not in OPTIMIZER_KINDS:
            raise ConfigurationError(f"unknown optimizer kind {self.optimizer!r}")
        if self.optimizer == "static-plan" and not self.static_plan:
            raise ConfigurationError("static-plan runs need a static plan table")
        if self.optimizer == "amo" and self.geometry_every:
            raise ConfigurationError(
                "pilot geometry capture is driven by the observation phase in amo runs"
            )
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigurationError("steps and batch_size must be positive")


@dataclass
class RunArtifacts:
    losses: list[float]
    geometry: list[GeometrySnapshot]
    plan: AllocationPlan | None
    locked_report: dict | None
    ns_counts: list[dict]          # one row per step: {"step": int, type: count}
    degenerate_events: int
    params: dict

    def loss_reduction(self) -> float:
        return 1.0 - self.losses[-1] / self.losses[0]


def _static_schedules(cfg: RunConfig, cache: ScheduleCache):
    """Per-type (schedule, scale) table for the static-plan optimizer kind."""
    table = {}
    plan = cfg.static_plan
    for op in OPERATOR_TYPES:
        if op not in plan:
            raise ConfigurationError(f"static plan missing operator type {op!r}")
        entry = plan[op]
        steps = int(entry["steps"])
        ell = entry.get("ell")
        if ell is not None:
            table[op] = (cache.get(float(ell), steps), NS_SAFETY_SCALE)
        else:
            kj = builtin_schedule("kj5").triplets[0]
            table[op] = (
                CoefficientSchedule.from_floats([tuple(kj)] * steps),
                1.0,
            )
    return table


def run_training(cfg: RunConfig, out_dir: str | None = None) -> RunArtifacts:
    """Deterministic toy training run; returns artifacts and optionally writes
    loss CSV, geometry JSONL, plan JSON and the locked-schedule report."""
    model_cfg = cfg.model
    params = init_params(model_cfg)
    stream = MotifStream(model_cfg.vocab, model_cfg.seq_len, seed=cfg.seed + 1)
    warmup = min(cfg.lr_warmup, cfg.steps - 1)
    stable = decay = 0
    if cfg.lr_kind == "ws":
        stable = cfg.steps - warmup
    elif cfg.lr_kind == "wsd":
        decay = max(1, cfg.steps // 10)
        stable = cfg.steps - warmup - decay
    schedule = LrSchedule(
        kind=cfg.lr_kind,
        eta=cfg.lr_eta,
        total=cfg.steps,
        warmup=warmup,
        stable=stable,
        decay=decay,
    )

    muon_named = [n for n in params if op_type_of(n) is not None]
    use_muon = cfg.optimizer != "adamw"
    muon_states = (
        {n: MuonState.for_param(params[n], cfg.mu, cfg.weight_decay, cfg.nesterov)
         for n in muon_named}
        if use_muon
        else {}
    )
    adam_states = {
        n: AdamState.for_param(params[n], weight_decay=cfg.weight_decay)
        for n in params
        if n not in muon_states
    }

    cache = ScheduleCache()
    scheduler: AmoScheduler | None = None
    if cfg.optimizer == "amo":
        layer_counts = {op: model_cfg.layers for op in OPERATOR_TYPES}
        scheduler = AmoScheduler(cfg.observation, layer_counts)
    static_table = (
        _static_schedules(cfg, cache) if cfg.optimizer == "static-plan" else None
    )

    def provider(op_type: str, step: int):
        if cfg.optimizer == "muon-kj":
            return builtin_schedule("kj5"), 1.0
        if cfg.optimizer == "muon-you":
            return builtin_schedule("you5"), 1.0
        if cfg.optimizer == "muon-pe":
            return cache.get(cfg.pe_ell, cfg.observation.t_base), NS_SAFETY_SCALE
        if cfg.optimizer == "static-plan":
            return static_table[op_type]
        return scheduler.schedule_for_step(step, op_type)

    losses: list[float] = []
    geometry: list[GeometrySnapshot] = []
    ns_counts: list[dict] = []
    obs = cfg.observation

    for step in range(1, cfg.steps + 1):
        tokens, targets = stream.batch(cfg.batch_size)
        loss, grads = loss_and_grads(params, model_cfg, tokens, targets)
        losses.append(loss)
        clip_global_norm([grads[n] for n in sorted(grads)], 1.0)

        capture_amo = (
            scheduler is not None
            and scheduler.phase is Phase.OBSERVING
            and step % obs.interval == 0
            and step <= obs.horizon
        )
        capture_pilot = (
            cfg.geometry_every > 0 and use_muon and step % cfg.geometry_every == 0
        )
        if capture_amo:
            sampled: dict[str, list[np.ndarray]] = {}
            for op in OPERATOR_TYPES:
                mats = []
                for layer in scheduler.sampled_layers(op):
                    name = f"layers.{layer}.{op}"
                    src = _momentum_source(grads[name], muon_states[name], cfg)
                    mats.append(src)
                    geometry.append(
                        _snapshot(step, op, layer, src, provider(op, step))
                    )
                sampled[op] = mats
            scheduler.record_observation(step, sampled)
        elif capture_pilot:
            for op in OPERATOR_TYPES:
                for layer in range(model_cfg.layers):
                    name = f"layers.{layer}.{op}"
                    src = _momentum_source(grads[name], muon_states[name], cfg)
                    geometry.append(
                        _snapshot(step, op, layer, src, provider(op, step))
                    )

        if scheduler is not None and scheduler.phase is Phase.TRANSITIONING:
            u = step - obs.horizon
            if 1 <= u <= obs.transition:
                scheduler.transition_schedule(u)

        eta = lr_at_step(schedule, step - 1)
        counts_row: dict = {"step": step}
        for name in sorted(params):
            if name in muon_states:
                op = op_type_of(name)
                sched, scale = provider(op, step)
                counts_row[op] = sched.steps
                params[name] = muon_step(
                    params[name],
                    grads[name],
                    muon_states[name],
                    lambda s=sched, sc=scale: (s, sc),
                    eta,
                )
            else:
                params[name] = adamw_step(params[name], grads[name], adam_states[name], eta)
        if use_muon:
            ns_counts.append(counts_row)

    plan = scheduler.plan if scheduler is not None else None
    locked = (
        scheduler.locked_report()
        if scheduler is not None and scheduler.plan is not None
        else None
    )
    degenerate = sum(s.degenerate_events for s in muon_states.values())
    artifacts = RunArtifacts(
        losses=losses,
        geometry=geometry,
        plan=plan,
        locked_report=locked,
        ns_counts=ns_counts,
        degenerate_events=degenerate,
        params=params,
    )
    if out_dir is not None:
        _write_artifacts(artifacts, cfg, out_dir)
    return artifacts


def _momentum_source(grad: np.ndarray, state: MuonState, cfg: RunConfig) -> np.ndarray:
    """Update source the optimizer will orthogonalize this step (peek, no mutation)."""
    buf = state.mu * state.momentum + grad
    return grad + state.mu * buf if cfg.nesterov else buf


def _snapshot(step, op, layer, source, schedule_and_scale) -> GeometrySnapshot:
    stats = spectral_stats(source)
    sched, scale = schedule_and_scale
    post = apply_ns(source, sched, scale)
    _, eps_norm = ns_residual(post)
    return GeometrySnapshot(
        step=step,
        op_type=op,
        layer=layer,
        ell_eff=stats.ell / NS_SAFETY_SCALE,
        kappa=stats.kappa,
        eps_norm=eps_norm,
        frobenius=stats.frobenius,
        effective_rank=stats.effective_rank,
    )


def _write_artifacts(artifacts: RunArtifacts, cfg: RunConfig, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    from .trace import emit_csv

    emit_csv(
        ["step", "loss"],
        [(i + 1, loss) for i, loss in enumerate(artifacts.losses)],
        out / "loss.csv",
    )
    if artifacts.geometry:
        write_geometry_log(out / "geometry.jsonl", artifacts.geometry)
    if artifacts.plan is not None:
        (out / "plan.json").write_text(json.dumps(artifacts.plan.as_dict(), indent=2))
    if artifacts.locked_report is not None:
        (out / "locked_schedule.json").write_text(
            json.dumps(artifacts.locked_report, indent=2)
        )
    if artifacts.ns_counts:
        header = ["step"] + list(OPERATOR_TYPES)
        rows = [
            [row["step"]] + [row.get(op, "") for op in OPERATOR_TYPES]
            for row in artifacts.ns_counts
        ]
        emit_csv(header, rows, out / "ns_counts.csv")
    (out / "run_config.json").write_text(
        json.dumps(
            {
                "optimizer": cfg.optimizer,
                "steps": cfg.steps,
                "batch_size": cfg.batch_size,
                "seed": cfg.seed,
                "lr_kind": cfg.lr_kind,
                "lr_eta": cfg.lr_eta,
            },
            indent=2,
        )
    )
