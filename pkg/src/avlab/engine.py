"""
Training and sampling for the dual-tower model.

Training regresses both velocity fields with per-modality timesteps, text and
bridge dropout, and an optional alternation between the two video experts.
Sampling integrates the guided velocity with Euler steps on each modality's
own σ grid.
"""

from __future__ import annotations

import contextlib
import dataclasses
import logging
import math
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr
from tqdm import tqdm

from . import diffcore as dc
from . import guidance
from .dataset import TrainingExample, make_batch, random_scene, sync_score
from .diffcore import Tape, Tensor
from .errors import ContractError, DomainError, NumericError
from .guidance import BranchOutputs, GuidanceScales
from .model import BRIDGE_PREFIX, ConditionSet, DualTowerModel, white_frame
from .schedule import (
    DECOUPLED,
    TIMESTEP_MODES,
    LossWeights,
    SigmaShiftSchedule,
    corrupt,
    draw_timesteps,
    fm_loss,
    sigma,
    time_grid,
)

logger = logging.getLogger(__name__)

MetricsCallback = Callable[[int, dict], None]

FIRST_FRAME_MODES = ("none", "white", "clean")


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OptimizerGroups:
    backbone_lr: float = 1e-3
    bridge_lr: float = 2e-3
    weight_decay: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    use_moments: bool = True

    def __post_init__(self):
        if self.backbone_lr < 0 or self.bridge_lr < 0:
            raise DomainError(f"learning rates must be non-negative, got {self.backbone_lr}, {self.bridge_lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise DomainError(f"betas must lie in [0, 1), got ({self.beta1}, {self.beta2})")
        if self.weight_decay < 0 or self.eps <= 0:
            raise DomainError("weight_decay must be non-negative and eps positive")

    def lr_for(self, name: str) -> float:
        return self.bridge_lr if name.startswith(BRIDGE_PREFIX) else self.backbone_lr


FULL_SCALE_OPTIMIZER = OptimizerGroups(backbone_lr=1e-5, bridge_lr=2e-5)
OPTIMIZER_PRESETS = {"toy": OptimizerGroups(), "full_scale": FULL_SCALE_OPTIMIZER}


class AdamW:
    """
    Decoupled weight decay with adaptive moments, one learning rate per
    parameter group. Parameters without a gradient in a step are left alone,
    including their moments and their step count.
    """

    def __init__(self, groups: OptimizerGroups | None = None):
        self.groups = groups or OptimizerGroups()
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: dict[str, int] = {}

    def step(self, params: dict[str, Tensor], grads: dict[str, np.ndarray | None]) -> dict[str, Tensor]:
        g_cfg = self.groups
        updated = dict(params)
        for name, g in grads.items():
            if g is None:
                continue
            p = params[name].data
            lr = g_cfg.lr_for(name)
            if g_cfg.use_moments:
                t = self.t[name] = self.t.get(name, 0) + 1
                m = self.m[name] = g_cfg.beta1 * self.m.get(name, np.zeros_like(p)) + (1.0 - g_cfg.beta1) * g
                v = self.v[name] = g_cfg.beta2 * self.v.get(name, np.zeros_like(p)) + (1.0 - g_cfg.beta2) * g * g
                m_hat = m / (1.0 - g_cfg.beta1**t)
                v_hat = v / (1.0 - g_cfg.beta2**t)
                direction = m_hat / (np.sqrt(v_hat) + g_cfg.eps)
            else:
                direction = g
            updated[name] = Tensor(p - lr * (direction + g_cfg.weight_decay * p), requires_grad=True, dtype=p.dtype)
        return updated


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    p_drop_text: float = 0.5
    p_drop_bridge: float = 0.1
    shift_v: float = 5.0
    shift_a: float = 1.0
    timestep_mode: str = DECOUPLED
    lambda_v: float = 1.0
    lambda_a: float = 0.2
    steps: int = 200
    batch: int = 4
    seed: int = 0
    alternate_experts: bool = False
    first_frame: str = "none"
    workers: int = 1
    log_every: int = 10
    # float32 parameters and activations
    fast: bool = False

    def __post_init__(self):
        for name in ("p_drop_text", "p_drop_bridge"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise DomainError(f"{name} must lie in [0, 1], got {p}")
        if self.timestep_mode not in TIMESTEP_MODES:
            raise ContractError(f"timestep_mode must be one of {TIMESTEP_MODES}, got {self.timestep_mode!r}")
        if self.first_frame not in FIRST_FRAME_MODES:
            raise ContractError(f"first_frame must be one of {FIRST_FRAME_MODES}, got {self.first_frame!r}")
        if self.steps < 0 or self.batch < 1 or self.workers < 1 or self.log_every < 1:
            raise ContractError("steps must be non-negative; batch, workers and log_every positive")
        self.schedules  # noqa: B018 - validates shifts
        self.loss_weights  # noqa: B018

    @property
    def schedules(self) -> tuple[SigmaShiftSchedule, SigmaShiftSchedule]:
        return SigmaShiftSchedule(self.shift_v), SigmaShiftSchedule(self.shift_a)

    @property
    def loss_weights(self) -> LossWeights:
        return LossWeights(self.lambda_v, self.lambda_a)


@dataclass(frozen=True)
class PhasePreset:
    name: str
    train_overrides: dict = field(default_factory=dict)
    # frame-rate multiplier; longer token sequences over the same clip
    grid_scale: float = 1.0


PHASE_PRESETS = {
    "phase1": PhasePreset("phase1", {"shift_v": 5.0, "shift_a": 1.0, "p_drop_text": 0.5}),
    "phase2": PhasePreset("phase2", {"shift_v": 5.0, "shift_a": 5.0, "p_drop_text": 0.2}),
    "phase3": PhasePreset("phase3", {"shift_v": 5.0, "shift_a": 5.0, "p_drop_text": 0.2}, grid_scale=2.0),
}


def phase_config(name: str, base: TrainConfig | None = None) -> TrainConfig:
    if name not in PHASE_PRESETS:
        raise ContractError(f"unknown phase {name!r}; expected one of {sorted(PHASE_PRESETS)}")
    return dataclasses.replace(base or TrainConfig(), **PHASE_PRESETS[name].train_overrides)


@dataclass(frozen=True)
class StepResult:
    loss: float
    params: dict[str, Tensor]
    t_v_mean: float
    t_a_mean: float
    null_text: int
    no_bridge: int
    expert: str | None
    updated: int


@dataclass
class _SamplePlan:
    example: TrainingExample
    t_v: float
    t_a: float
    eps_v: np.ndarray
    eps_a: np.ndarray
    cond: ConditionSet


def _expert_range(model: DualTowerModel, cfg: TrainConfig, step_index: int) -> tuple[tuple[float, float], str | None]:
    experts = model.config.experts
    if experts is None or not cfg.alternate_experts:
        return (0.0, 1.0), None
    # odd steps train the high-noise expert
    if step_index % 2 == 1:
        return (experts.t_split, 1.0), experts.high_noise_tower.name
    return (0.0, experts.t_split), experts.low_noise_tower.name


def _first_frame(cfg: TrainConfig, example: TrainingExample) -> np.ndarray | None:
    if cfg.first_frame == "white":
        return white_frame(example.x_v.shape[1])
    if cfg.first_frame == "clean":
        return example.x_v.numpy()[0]
    return None


def _plan_samples(
    model: DualTowerModel, batch: Sequence[TrainingExample], cfg: TrainConfig, step_index: int, rng: np.random.Generator
) -> tuple[list[_SamplePlan], str | None]:
    t_range, expert = _expert_range(model, cfg, step_index)
    plans = []
    for example in batch:
        draw = draw_timesteps(rng, cfg.timestep_mode, t_range)
        eps_v = rng.standard_normal(example.x_v.shape)
        eps_a = rng.standard_normal(example.x_a.shape)
        drop_text = rng.random() < cfg.p_drop_text
        drop_bridge = rng.random() < cfg.p_drop_bridge
        cond = ConditionSet(
            text_tokens=None if drop_text else example.text_tokens,
            bridge_enabled=not drop_bridge,
            first_frame=_first_frame(cfg, example),
        )
        plans.append(_SamplePlan(example, draw.t_v, draw.t_a, eps_v, eps_a, cond))
    return plans, expert


def _precision(cfg: TrainConfig):
    return dc.fast_mode() if cfg.fast else contextlib.nullcontext()


def _cast_params(params: dict[str, Tensor], dtype) -> dict[str, Tensor]:
    if all(p.dtype == dtype for p in params.values()):
        return params
    return {name: Tensor(p.data, requires_grad=True, dtype=dtype) for name, p in params.items()}


def _sample_gradients(model: DualTowerModel, plan: _SamplePlan, cfg: TrainConfig) -> tuple[float, dict]:
    sched_v, sched_a = cfg.schedules
    names = list(model.params)
    # entered per sample: worker threads do not inherit the caller's context
    with _precision(cfg), Tape() as tape:
        x_v, x_a = Tensor(plan.example.x_v.numpy()), Tensor(plan.example.x_a.numpy())
        flow_v = corrupt(x_v, Tensor(plan.eps_v), plan.t_v, sched_v)
        flow_a = corrupt(x_a, Tensor(plan.eps_a), plan.t_a, sched_a)
        pred_v, pred_a = model.forward(
            flow_v.x_t, flow_a.x_t, sigma(sched_v, plan.t_v), sigma(sched_a, plan.t_a), plan.cond, t_v=plan.t_v
        )
        loss = fm_loss(pred_v, pred_a, flow_v.target_v, flow_a.target_v, cfg.loss_weights)
    grads = tape.gradient(loss, [model.params[n] for n in names], unused="none")
    return loss.item(), dict(zip(names, grads))


def train_step(
    model: DualTowerModel,
    batch: Sequence[TrainingExample],
    cfg: TrainConfig,
    optimizer: AdamW,
    step_index: int,
    rng: np.random.Generator,
) -> StepResult:
    """
    One optimizer step on the batch-mean flow-matching loss. All random draws
    happen up front in batch order, so the result does not depend on
    `cfg.workers`.
    """
    if not batch:
        raise ContractError("train_step needs a non-empty batch")
    if cfg.fast:
        with dc.fast_mode():
            model.params = _cast_params(model.params, dc.default_dtype())
    plans, expert = _plan_samples(model, batch, cfg, step_index, rng)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(lambda p: _sample_gradients(model, p, cfg), plans))
    else:
        results = [_sample_gradients(model, p, cfg) for p in plans]

    losses = [loss for loss, _ in results]
    loss = float(np.mean(losses))
    if not math.isfinite(loss):
        bad = [(p.t_v, p.t_a) for p, v in zip(plans, losses) if not math.isfinite(v)]
        raise NumericError(f"non-finite loss at step {step_index}; (t_v, t_a) of failing samples: {bad}")

    scale = 1.0 / len(batch)
    total: dict[str, np.ndarray | None] = {name: None for name in model.params}
    for _, grads in results:
        for name, g in grads.items():
            if g is not None:
                total[name] = g * scale if total[name] is None else total[name] + g * scale

    params = optimizer.step(model.params, total)
    model.params = params
    return StepResult(
        loss=loss,
        params=params,
        t_v_mean=float(np.mean([p.t_v for p in plans])),
        t_a_mean=float(np.mean([p.t_a for p in plans])),
        null_text=sum(p.cond.text_tokens is None for p in plans),
        no_bridge=sum(not p.cond.bridge_enabled for p in plans),
        expert=expert,
        updated=sum(g is not None for g in total.values()),
    )


@dataclass
class TrainResult:
    model: DualTowerModel
    history: list[dict]
    null_text_total: int = 0
    no_bridge_total: int = 0

    @property
    def losses(self) -> list[float]:
        return [row["loss"] for row in self.history]


def train(
    model: DualTowerModel,
    cfg: TrainConfig,
    groups: OptimizerGroups | None = None,
    on_metrics: MetricsCallback | None = None,
    on_progress: Callable[[int], None] | None = None,
    progress_bar: bool = False,
    step_offset: int = 0,
) -> TrainResult:
    """
    Run `cfg.steps` steps on freshly generated synthetic batches. Every step
    produces one metrics row (step, loss, lr per group, t_v/t_a means, dropout counts).
    """
    groups = groups or OptimizerGroups()
    optimizer = AdamW(groups)
    rng = np.random.default_rng(cfg.seed)
    grid = model.config.grid
    latent_dims = (model.config.video.latent_dim, model.config.audio.latent_dim)
    result = TrainResult(model=model, history=[])

    for i in tqdm(range(cfg.steps), desc="train", disable=not progress_bar):
        step = step_offset + i
        batch = make_batch(rng, grid, cfg.batch, model.config.text_len, latent_dims, model.config.duration_s)
        out = train_step(model, batch, cfg, optimizer, step, rng)
        row = {
            "step": step,
            "loss": out.loss,
            "lr_backbone": groups.backbone_lr,
            "lr_bridge": groups.bridge_lr,
            "t_v_mean": out.t_v_mean,
            "t_a_mean": out.t_a_mean,
            "null_text": out.null_text,
            "no_bridge": out.no_bridge,
            "expert": out.expert,
        }
        result.history.append(row)
        result.null_text_total += out.null_text
        result.no_bridge_total += out.no_bridge
        if on_metrics is not None:
            on_metrics(step, row)
        if i % cfg.log_every == 0 or i == cfg.steps - 1:
            logger.info("step %d loss %.5f", step, out.loss)
        if on_progress is not None and cfg.steps:
            on_progress(int(100 * (i + 1) / cfg.steps))
    return result


def phase_curriculum(
    model: DualTowerModel,
    base: TrainConfig | None = None,
    groups: OptimizerGroups | None = None,
    phases: Sequence[str] = ("phase1", "phase2", "phase3"),
    on_metrics: MetricsCallback | None = None,
) -> TrainResult:
    """
    Train the phase presets one after another on the same parameters. A phase
    with a grid scale rebinds the model to the finer frame rates first.
    """
    history: list[dict] = []
    null_text = no_bridge = 0
    for name in phases:
        preset = PHASE_PRESETS.get(name)
        cfg = phase_config(name, base)
        if preset.grid_scale != 1.0:
            mc = model.config
            model = model.with_config(mc.with_grid(mc.f_v * preset.grid_scale, mc.f_a * preset.grid_scale))
        logger.info("phase %s: %d steps, shift_a=%s, p_drop_text=%s", name, cfg.steps, cfg.shift_a, cfg.p_drop_text)

        def tag(step, row, phase=name):
            row["phase"] = phase
            if on_metrics is not None:
                on_metrics(step, row)

        out = train(model, cfg, groups, on_metrics=tag, step_offset=len(history))
        history.extend(out.history)
        null_text += out.null_text_total
        no_bridge += out.no_bridge_total
    return TrainResult(model=model, history=history, null_text_total=null_text, no_bridge_total=no_bridge)


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SampleConfig:
    n_steps: int = 25
    shift_v: float = 5.0
    shift_a: float = 5.0
    s_B: float = 2.0
    s_T: float = 5.0
    guidance: str = guidance.DUAL
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.n_steps < 1:
            raise ContractError(f"n_steps must be at least 1, got {self.n_steps}")
        guidance.resolve(self.guidance, self.s_B, self.s_T)

    @property
    def schedules(self) -> tuple[SigmaShiftSchedule, SigmaShiftSchedule]:
        return SigmaShiftSchedule(self.shift_v), SigmaShiftSchedule(self.shift_a)


def _latent_shapes(model) -> tuple[tuple[int, int], tuple[int, int]]:
    cfg = model.config
    return (cfg.video.seq_len, cfg.video.latent_dim), (cfg.audio.seq_len, cfg.audio.latent_dim)


def sample(
    model,
    cond: ConditionSet,
    scales: GuidanceScales,
    n_steps: int,
    schedules: tuple[SigmaShiftSchedule, SigmaShiftSchedule],
    rng: np.random.Generator | int,
    swapped: bool = False,
    workers: int = 1,
    noise: tuple[np.ndarray, np.ndarray] | None = None,
) -> tuple[Tensor, Tensor]:
    """
    Euler integration of the guided velocity from τ = 1 to τ = 0:
    z ← z − Δτ·ṽ per modality, where each modality's τ grid is the image of a
    uniform t grid under its own σ. Only the planned branches are evaluated.
    """
    if n_steps < 1:
        raise ContractError(f"n_steps must be at least 1, got {n_steps}")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(int(rng))
    shape_v, shape_a = _latent_shapes(model)
    if noise is None:
        z_v, z_a = rng.standard_normal(shape_v), rng.standard_normal(shape_a)
    else:
        z_v, z_a = (np.array(n, dtype=np.float64) for n in noise)
    sched_v, sched_a = schedules
    t, tau_v = time_grid(n_steps, sched_v)
    _, tau_a = time_grid(n_steps, sched_a)
    plan = guidance.plan_for(scales, swapped)
    conds = {b: guidance.branch_condition(b, cond) for b in plan.branches}

    def evaluate(branch, zv, za, k):
        v_v, v_a = model.forward(Tensor(zv), Tensor(za), float(tau_v[k]), float(tau_a[k]), conds[branch], t_v=float(t[k]))
        return branch, (v_v.numpy(), v_a.numpy())

    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 and plan.nfe > 1 else None
    try:
        for k in range(n_steps):
            if pool is not None:
                outputs = dict(pool.map(lambda b: evaluate(b, z_v, z_a, k), plan.branches))
            else:
                outputs = dict(evaluate(b, z_v, z_a, k) for b in plan.branches)
            v_v, v_a = guidance.combine_for(BranchOutputs(**outputs), scales, swapped)
            z_v = z_v - (tau_v[k] - tau_v[k + 1]) * v_v
            z_a = z_a - (tau_a[k] - tau_a[k + 1]) * v_a
            if not (np.all(np.isfinite(z_v)) and np.all(np.isfinite(z_a))):
                raise NumericError(f"sampler produced non-finite latents at step {k} of {n_steps}")
    finally:
        if pool is not None:
            pool.shutdown()
    return Tensor(z_v, dtype=np.float64), Tensor(z_a, dtype=np.float64)


def sample_with_config(model, cond: ConditionSet, cfg: SampleConfig, seed: int | None = None) -> tuple[Tensor, Tensor]:
    scales, swapped = guidance.resolve(cfg.guidance, cfg.s_B, cfg.s_T)
    return sample(
        model, cond, scales, cfg.n_steps, cfg.schedules, cfg.seed if seed is None else seed, swapped, cfg.workers
    )


# ---------------------------------------------------------------------------
# desk-scale synchronization experiments
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyncEvaluation:
    median_offset_s: float
    mean_f1: float
    failures: int
    offsets: tuple[float, ...]


def evaluate_sync(
    model: DualTowerModel,
    cfg: SampleConfig,
    n_scenes: int = 16,
    seed: int = 0,
    bridge_enabled: bool = True,
) -> SyncEvaluation:
    """Sample one pair per random scene prompt and score its synchronization."""
    if n_scenes < 1:
        raise ContractError(f"n_scenes must be positive, got {n_scenes}")
    rng = np.random.default_rng(seed)
    offsets, f1s, failures = [], [], 0
    for i in range(n_scenes):
        scene = random_scene(rng)
        cond = ConditionSet(text_tokens=scene.prompt_tokens(model.config.text_len), bridge_enabled=bridge_enabled)
        x_v, x_a = sample_with_config(model, cond, cfg, seed=int(rng.integers(2**31)))
        report = sync_score(x_v, x_a, model.config.grid)
        failures += not report.ok
        offsets.append(report.offset_error_s)
        f1s.append(report.event_f1)
        logger.debug("scene %d: offset %.3f s, f1 %.3f", i, report.offset_error_s, report.event_f1)
    return SyncEvaluation(float(np.median(offsets)), float(np.mean(f1s)), failures, tuple(offsets))


def bridge_ablation(
    model_factory: Callable[[int], DualTowerModel],
    train_cfg: TrainConfig,
    sample_cfg: SampleConfig,
    seeds: Sequence[int] = (0, 1, 2),
    groups: OptimizerGroups | None = None,
    n_scenes: int = 16,
) -> dict:
    """
    Train a bridged model and a no-bridge model per seed and compare their
    median sync offsets. The no-bridge variant never runs the bridge, neither
    in training nor in sampling, and uses text-only guidance.
    """
    rows = []
    for seed in seeds:
        for variant in ("bridge", "no_bridge"):
            bridged = variant == "bridge"
            cfg = dataclasses.replace(train_cfg, seed=seed, p_drop_bridge=train_cfg.p_drop_bridge if bridged else 1.0)
            model = train(model_factory(seed), cfg, groups).model
            scfg = sample_cfg if bridged else dataclasses.replace(sample_cfg, guidance=guidance.TEXT_ONLY)
            ev = evaluate_sync(model, scfg, n_scenes=n_scenes, seed=seed, bridge_enabled=bridged)
            rows.append({"seed": seed, "variant": variant, "median_offset_s": ev.median_offset_s, "mean_f1": ev.mean_f1})
            logger.info("ablation seed %d %s: median offset %.3f s", seed, variant, ev.median_offset_s)

    def median_of(variant):
        return float(np.median([r["median_offset_s"] for r in rows if r["variant"] == variant]))

    with_bridge, without = median_of("bridge"), median_of("no_bridge")
    reduction = 1.0 - with_bridge / without if without > 0 else 0.0
    return {"rows": rows, "bridge_median_s": with_bridge, "no_bridge_median_s": without, "relative_reduction": reduction}


def sweep_s_b(
    model: DualTowerModel,
    s_b_values: Sequence[float],
    sample_cfg: SampleConfig,
    n_scenes: int = 16,
    seed: int = 0,
) -> dict:
    """Median offset per s_B at fixed s_T, plus the Spearman ρ of the trend."""
    if len(s_b_values) < 2:
        raise ContractError("an s_B sweep needs at least two values")
    rows = []
    for s_b in s_b_values:
        cfg = dataclasses.replace(sample_cfg, s_B=float(s_b), guidance=guidance.DUAL)
        ev = evaluate_sync(model, cfg, n_scenes=n_scenes, seed=seed)
        rows.append({"s_B": float(s_b), "s_T": cfg.s_T, "median_offset_s": ev.median_offset_s, "mean_f1": ev.mean_f1})
    medians = [r["median_offset_s"] for r in rows]
    rho = spearmanr(list(s_b_values), medians)[0] if len(set(medians)) > 1 else 0.0
    return {"rows": rows, "spearman_rho": float(rho)}


def loss_trend(losses: Sequence[float]) -> tuple[float, float]:
    """Median loss over the first and the last tenth of a run."""
    if len(losses) < 10:
        raise ContractError("loss_trend needs at least 10 steps")
    n = max(1, len(losses) // 10)
    return float(np.median(losses[:n])), float(np.median(losses[-n:]))


def model_loss(model: DualTowerModel, example: TrainingExample, t_v: float, t_a: float, cfg: TrainConfig, seed: int = 0):
    """Deterministic flow-matching loss of one example as a function of the parameters, for gradient checks."""
    rng = np.random.default_rng(seed)
    eps_v = Tensor(rng.standard_normal(example.x_v.shape))
    eps_a = Tensor(rng.standard_normal(example.x_a.shape))
    sched_v, sched_a = cfg.schedules
    flow_v = corrupt(example.x_v, eps_v, t_v, sched_v)
    flow_a = corrupt(example.x_a, eps_a, t_a, sched_a)
    cond = ConditionSet(text_tokens=example.text_tokens)

    def loss_of(m: DualTowerModel) -> Tensor:
        pred_v, pred_a = m.forward(flow_v.x_t, flow_a.x_t, sigma(sched_v, t_v), sigma(sched_a, t_a), cond, t_v=t_v)
        return fm_loss(pred_v, pred_a, flow_v.target_v, flow_a.target_v, cfg.loss_weights)

    return loss_of


def gradcheck_model(
    model: DualTowerModel,
    names: Sequence[str] | None = None,
    coords: int = 6,
    seed: int = 0,
    eps: float = 1e-5,
) -> dict[str, float]:
    """
    Finite-difference check of fm_loss∘forward against each named parameter.
    Returns the max relative error per parameter.
    """
    rng = np.random.default_rng(seed)
    mc = model.config
    example = make_batch(rng, mc.grid, 1, mc.text_len, (mc.video.latent_dim, mc.audio.latent_dim), mc.duration_s)[0]
    loss_of = model_loss(model, example, 0.7, 0.4, TrainConfig(), seed)
    if names is None:
        names = _representative_parameters(model)
    errors = {}
    for name in names:
        if name not in model.params:
            raise ContractError(f"unknown parameter {name!r}")

        def f(p, name=name):
            return loss_of(model.with_params({name: p}))

        errors[name] = dc.grad_check(f, model.params[name], eps=eps, coords=coords, seed=seed)
    return errors


def _representative_parameters(model: DualTowerModel) -> list[str]:
    """One parameter per block type: text, frame, each tower's input, attention, modulation and output, and the bridge."""
    wanted = []
    for tower in (model.config.video_towers[0].name, model.config.audio.name):
        wanted += [f"{tower}.in.w", f"{tower}.time1.w", f"{tower}.l0.mod.w", f"{tower}.l0.attn.q.w", f"{tower}.l0.xattn.k.w", f"{tower}.out.w"]
    wanted += ["text.embed"]
    wanted += [n for n in sorted(model.params) if n.startswith(BRIDGE_PREFIX)][:4]
    return [n for n in wanted if n in model.params]
