"""Parameter update rules: orthogonalized momentum steps, AdamW, LR schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .ns_engine import CoefficientSchedule, apply_ns


def stable_lr(n_billions: float, d_billions: float) -> float:
    """Empirical stable learning rate from model size and token budget (both
    in billions): 1e-4 * 38.4588 * N^-0.2219 * D^-0.3509."""
    if n_billions <= 0 or d_billions <= 0:
        raise ValueError("model size and token budget must be positive")
    return 1e-4 * 38.4588 * n_billions**-0.2219 * d_billions**-0.3509


@dataclass(frozen=True)
class LrSchedule:
    """Warmup-stable / warmup-stable-decay / cosine / constant schedules."""

    kind: str  # "ws" | "wsd" | "cosine" | "constant"
    eta: float
    total: int
    warmup: int = 0
    stable: int = 0
    decay: int = 0
    floor_fraction: float = 0.1

    def __post_init__(self):
        if self.kind not in ("ws", "wsd", "cosine", "constant"):
            raise ValueError(f"unknown LR schedule kind {self.kind!r}")
        if self.total < 1 or self.eta <= 0:
            raise ValueError("total steps and eta must be positive")
        if self.kind == "ws" and self.warmup + self.stable != self.total:
            raise ValueError("ws schedule needs warmup + stable == total")
        if self.kind == "wsd" and self.warmup + self.stable + self.decay != self.total:
            raise ValueError("wsd schedule needs warmup + stable + decay == total")


def lr_at_step(schedule: LrSchedule, step: int) -> float:
    """Learning rate at a 0-based step index (step < total)."""
    if not 0 <= step < schedule.total:
        raise ValueError(f"step {step} outside [0, {schedule.total})")
    eta = schedule.eta
    floor = schedule.floor_fraction * eta
    if schedule.kind == "constant":
        return eta
    if schedule.warmup > 0 and step < schedule.warmup:
        return eta * step / schedule.warmup
    if schedule.kind == "ws":
        return eta
    if schedule.kind == "wsd":
        decay_start = schedule.warmup + schedule.stable
        if step < decay_start:
            return eta
        progressed = step - decay_start + 1
        return eta - (eta - floor) * progressed / schedule.decay
    # cosine: from eta at end of warmup down to the floor at the final step
    span = schedule.total - 1 - schedule.warmup
    progress = (step - schedule.warmup) / span if span > 0 else 1.0
    return floor + (eta - floor) * 0.5 * (1.0 + math.cos(math.pi * progress))


@dataclass
class MuonState:
    """Momentum buffer and hyperparameters for one 2-D parameter."""

    momentum: np.ndarray
    mu: float = 0.95
    weight_decay: float = 0.1
    nesterov: bool = True
    degenerate_events: int = 0

    @staticmethod
    def for_param(param, mu=0.95, weight_decay=0.1, nesterov=True) -> "MuonState":
        return MuonState(
            momentum=np.zeros_like(param),
            mu=mu,
            weight_decay=weight_decay,
            nesterov=nesterov,
        )


def muon_update_source(grad: np.ndarray, state: MuonState) -> np.ndarray:
    """Advance the momentum buffer and return the matrix to orthogonalize."""
    state.momentum = state.mu * state.momentum + grad
    if state.nesterov:
        return grad + state.mu * state.momentum
    return state.momentum


def muon_step(
    param: np.ndarray,
    grad: np.ndarray,
    state: MuonState,
    schedule_provider,
    eta: float,
) -> np.ndarray:
    """One orthogonalized momentum step.

    schedule_provider() -> (CoefficientSchedule, safety_scale) for this
    parameter's operator type at the current step.  The update applies
    decoupled weight decay first, then subtracts
    eta * 0.2 * sqrt(max(m, n)) * orthogonalized(update source).
    """
    if param.shape != grad.shape:
        raise ValueError("parameter and gradient shapes differ")
    source = muon_update_source(grad, state)
    new_param = param * (1.0 - eta * state.weight_decay)
    if not np.any(source):
        state.degenerate_events += 1
        return new_param
    schedule, safety_scale = schedule_provider()
    ortho = apply_ns(source, schedule, safety_scale)
    scale = 0.2 * math.sqrt(max(param.shape))
    return new_param - eta * scale * ortho


@dataclass
class AdamState:
    """First/second moments and step count for one parameter."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.1

    @staticmethod
    def for_param(param, beta1=0.9, beta2=0.95, eps=1e-8, weight_decay=0.1) -> "AdamState":
        return AdamState(
            m=np.zeros_like(param),
            v=np.zeros_like(param),
            beta1=beta1,
            beta2=beta2,
            eps=eps,
            weight_decay=weight_decay,
        )


def adamw_step(param: np.ndarray, grad: np.ndarray, state: AdamState, eta: float) -> np.ndarray:
    """Decoupled AdamW: decay first, then the bias-corrected adaptive step."""
    if param.shape != grad.shape:
        raise ValueError("parameter and gradient shapes differ")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    new_param = param * (1.0 - eta * state.weight_decay)
    return new_param - eta * m_hat / (np.sqrt(v_hat) + state.eps)


def clip_global_norm(grads: list[np.ndarray], max_norm: float = 1.0) -> float:
    """Scale all gradients in place so their joint norm is at most max_norm."""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if total > max_norm and total > 0:
        factor = max_norm / total
        for g in grads:
            g *= factor
    return total
