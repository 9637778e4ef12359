"""
Flow-matching paths with per-modality sigma-shift schedules.

The model is always fed the effective time τ = σ(t), so a schedule can be
changed at inference time without touching the weights.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .errors import ContractError, DimensionError, DomainError

NORMALIZED = "normalized"
LITERAL = "literal"
SIGMA_VARIANTS = (NORMALIZED, LITERAL)

DECOUPLED = "decoupled"
SHARED = "shared"
TIMESTEP_MODES = (DECOUPLED, SHARED)


@dataclass(frozen=True)
class SigmaShiftSchedule:
    shift: float = 1.0
    variant: str = NORMALIZED

    def __post_init__(self):
        if not self.shift > 0:
            raise DomainError(f"sigma shift must be positive, got {self.shift}")
        if self.variant not in SIGMA_VARIANTS:
            raise ContractError(f"sigma variant must be one of {SIGMA_VARIANTS}, got {self.variant!r}")

    def __call__(self, t: float) -> float:
        return sigma(self, t)


@dataclass(frozen=True)
class TimestepDraw:
    t_v: float
    t_a: float
    rng_seed: int | None = None


@dataclass(frozen=True)
class FlowSample:
    x0: Tensor
    eps: Tensor
    t: float
    x_t: Tensor
    target_v: Tensor


@dataclass(frozen=True)
class LossWeights:
    lambda_v: float = 1.0
    lambda_a: float = 0.2

    def __post_init__(self):
        if not (self.lambda_v > 0 and self.lambda_a > 0):
            raise DomainError(f"loss weights must be positive, got ({self.lambda_v}, {self.lambda_a})")


def sigma(schedule: SigmaShiftSchedule, t: float) -> float:
    """
    normalized:      shift·t / (1 + (shift − 1)·t), σ(1) = 1
    literal:         shift·t / (shift + t·(1 − shift)), σ(1) = shift
    """
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"timestep must lie in [0, 1], got {t}")
    s = schedule.shift
    if schedule.variant == LITERAL:
        return s * t / (s + t * (1.0 - s))
    if t == 1.0:
        # 1 + (s - 1) need not round back to s
        return 1.0
    return s * t / (1.0 + (s - 1.0) * t)


def corrupt(x0: Tensor, eps: Tensor, t: float, schedule: SigmaShiftSchedule) -> FlowSample:
    """x_t = (1 − σ(t))·x0 + σ(t)·eps on the linear path; the target velocity is eps − x0."""
    if schedule.variant != NORMALIZED:
        raise ContractError("corrupt needs the normalized schedule; the verbatim form leaves [0, 1] at t = 1")
    if x0.shape != eps.shape:
        raise DimensionError(f"clean latent {x0.shape} and noise {eps.shape} differ in shape")
    s = sigma(schedule, t)
    x_t = (1.0 - s) * x0.data + s * eps.data
    return FlowSample(x0=x0, eps=eps, t=float(t), x_t=Tensor(x_t, dtype=x0.dtype), target_v=Tensor(eps.data - x0.data, dtype=x0.dtype))


def fm_loss(pred_v: Tensor, pred_a: Tensor, tgt_v: Tensor, tgt_a: Tensor, w: LossWeights) -> Tensor:
    """λ_v·mean‖pred_v − tgt_v‖² + λ_a·mean‖pred_a − tgt_a‖², differentiable through the predictions."""
    if pred_v.shape != tgt_v.shape or pred_a.shape != tgt_a.shape:
        raise DimensionError(
            f"prediction/target shapes differ: video {pred_v.shape} vs {tgt_v.shape}, audio {pred_a.shape} vs {tgt_a.shape}"
        )
    return dc.add(dc.scale(dc.mse(pred_v, tgt_v), w.lambda_v), dc.scale(dc.mse(pred_a, tgt_a), w.lambda_a))


def draw_timesteps(
    rng: np.random.Generator | int,
    mode: str = DECOUPLED,
    t_v_range: tuple[float, float] = (0.0, 1.0),
) -> TimestepDraw:
    """
    Decoupled mode draws t_v and t_a independently; shared mode sets t_a = t_v
    (the single-timestep baseline). `t_v_range` narrows the video draw for
    alternating expert optimisation.
    """
    if mode not in TIMESTEP_MODES:
        raise ContractError(f"timestep mode must be one of {TIMESTEP_MODES}, got {mode!r}")
    seed = None
    if not isinstance(rng, np.random.Generator):
        seed = int(rng)
        rng = np.random.default_rng(seed)
    lo, hi = t_v_range
    t_v = float(rng.uniform(lo, hi))
    t_a = t_v if mode == SHARED else float(rng.uniform(0.0, 1.0))
    return TimestepDraw(t_v=t_v, t_a=t_a, rng_seed=seed)


def time_grid(n_steps: int, schedule: SigmaShiftSchedule) -> tuple[np.ndarray, np.ndarray]:
    """
    Uniform t grid from 1 to 0 and its image τ = σ(t). The sampler integrates
    over τ, so a larger shift spends more steps at high noise.
    """
    if n_steps < 1:
        raise ContractError(f"n_steps must be at least 1, got {n_steps}")
    t = np.linspace(1.0, 0.0, n_steps + 1)
    tau = np.array([sigma(schedule, float(x)) for x in t])
    return t, tau
