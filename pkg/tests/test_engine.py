import dataclasses
import math

import numpy as np
import pytest

from avlab.dataset import DURATION_S, make_batch
from avlab.diffcore import Tensor
from avlab.engine import (
    PHASE_PRESETS,
    AdamW,
    OptimizerGroups,
    SampleConfig,
    TrainConfig,
    bridge_ablation,
    evaluate_sync,
    loss_trend,
    phase_config,
    phase_curriculum,
    sample,
    sample_with_config,
    sweep_s_b,
    train,
    train_step,
)
from avlab.errors import ContractError, DomainError, NumericError
from avlab.guidance import GuidanceScales
from avlab.model import ConditionSet, DualTowerModel, ModelConfig
from avlab.schedule import SigmaShiftSchedule

PROMPT = (1, 2, 4, 0, 0, 0)
UNIFORM = (SigmaShiftSchedule(1.0), SigmaShiftSchedule(1.0))


class VelocityStub:
    """Stands in for the model: velocity is a fixed function of the latents, calls are counted."""

    def __init__(self, fn):
        self.config = ModelConfig.tiny()
        self.fn = fn
        self.calls = 0

    def forward(self, z_v, z_a, tau_v, tau_a, cond, t_v=None):
        self.calls += 1
        v_v, v_a = self.fn(z_v.numpy(), z_a.numpy())
        return Tensor(v_v), Tensor(v_a)


def _noise(seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((12, 4)), rng.standard_normal((48, 4))


def _tiny_batch(model, n=2, seed=0):
    mc = model.config
    return make_batch(np.random.default_rng(seed), mc.grid, n, mc.text_len, (mc.video.latent_dim, mc.audio.latent_dim))


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


def test_adamw_first_step_matches_hand_computation():
    groups = OptimizerGroups(backbone_lr=0.1, bridge_lr=0.2, weight_decay=0.01)
    params = {"w": Tensor([1.0], requires_grad=True)}
    out = AdamW(groups).step(params, {"w": np.array([0.5])})
    # m̂ = 0.5, v̂ = 0.25, so the moment direction is 1 up to eps
    expected = 1.0 - 0.1 * (0.5 / (0.5 + 1e-8) + 0.01 * 1.0)
    assert out["w"].numpy()[0] == pytest.approx(expected, abs=1e-15)


def test_adamw_skips_parameters_without_gradient():
    opt = AdamW()
    params = {"w": Tensor([1.0], requires_grad=True), "u": Tensor([2.0], requires_grad=True)}
    out = opt.step(params, {"w": np.array([1.0]), "u": None})
    assert out["u"] is params["u"]
    assert "u" not in opt.m and "u" not in opt.t
    assert opt.t["w"] == 1


def test_bridge_moves_twice_as_far_without_moments():
    groups = OptimizerGroups(use_moments=False)
    params = {"video.in.w": Tensor([1.0, -2.0]), "bridge.l0.a2v.q.w": Tensor([1.0, -2.0])}
    g = np.array([0.3, 0.7])
    out = AdamW(groups).step(params, {name: g for name in params})
    backbone = params["video.in.w"].numpy() - out["video.in.w"].numpy()
    bridge = params["bridge.l0.a2v.q.w"].numpy() - out["bridge.l0.a2v.q.w"].numpy()
    assert np.allclose(bridge, 2.0 * backbone, rtol=1e-12, atol=0)


def test_optimizer_validation():
    with pytest.raises(DomainError):
        OptimizerGroups(backbone_lr=-1.0)
    with pytest.raises(DomainError):
        OptimizerGroups(beta1=1.0)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def test_zero_learning_rate_leaves_parameters_bit_identical():
    model = DualTowerModel(ModelConfig.tiny())
    before = {n: p.numpy().copy() for n, p in model.params.items()}
    groups = OptimizerGroups(backbone_lr=0.0, bridge_lr=0.0, weight_decay=0.0)
    result = train(model, TrainConfig(steps=2, batch=1), groups)
    assert len(result.history) == 2
    for name, value in before.items():
        assert np.array_equal(result.model.params[name].numpy(), value), name


def test_text_dropout_counter():
    model = DualTowerModel(ModelConfig.tiny())
    result = train(model, TrainConfig(steps=3, batch=2, p_drop_text=1.0))
    assert result.null_text_total == 6
    assert all(row["null_text"] == 2 for row in result.history)


def test_bridge_dropout_leaves_bridge_untouched():
    model = DualTowerModel(ModelConfig.tiny(bridge_zero_init=False))
    before = {n: p.numpy().copy() for n, p in model.params.items() if n.startswith("bridge.")}
    result = train(model, TrainConfig(steps=2, batch=2, p_drop_bridge=1.0))
    assert result.no_bridge_total == 4
    for name, value in before.items():
        assert np.array_equal(result.model.params[name].numpy(), value)
    assert not np.array_equal(result.model.params["video.in.w"].numpy(), DualTowerModel(ModelConfig.tiny()).params["video.in.w"].numpy())


def test_metrics_rows():
    rows = []
    model = DualTowerModel(ModelConfig.tiny())
    train(model, TrainConfig(steps=2, batch=1), on_metrics=lambda step, row: rows.append((step, row)))
    assert [step for step, _ in rows] == [0, 1]
    row = rows[0][1]
    assert {"loss", "lr_backbone", "lr_bridge", "t_v_mean", "t_a_mean", "null_text", "no_bridge"} <= set(row)
    assert row["lr_bridge"] == 2.0 * row["lr_backbone"]


def test_alternating_experts_freeze_the_other_tower():
    model = DualTowerModel(ModelConfig.tiny(dual_experts=True))
    cfg = TrainConfig(batch=2, alternate_experts=True)
    opt = AdamW()
    rng = np.random.default_rng(0)

    def snapshot(prefix):
        return {n: p.numpy().copy() for n, p in model.params.items() if n.startswith(prefix)}

    for step in range(4):
        low, high = snapshot("video_low."), snapshot("video_high.")
        out = train_step(model, _tiny_batch(model, seed=step), cfg, opt, step, rng)
        frozen, moved = (low, high) if step % 2 else (high, low)
        assert out.expert == ("video_high" if step % 2 else "video_low")
        assert out.t_v_mean >= 0.5 if step % 2 else out.t_v_mean < 0.5
        for name, value in frozen.items():
            assert np.array_equal(model.params[name].numpy(), value)
        assert any(not np.array_equal(model.params[n].numpy(), v) for n, v in moved.items())


def test_workers_do_not_change_results():
    def run(workers):
        model = DualTowerModel(ModelConfig.tiny())
        return train(model, TrainConfig(steps=2, batch=3, workers=workers, seed=4))

    one, three = run(1), run(3)
    assert one.losses == three.losses
    for name, p in one.model.params.items():
        assert np.array_equal(p.numpy(), three.model.params[name].numpy())


def test_fast_training_runs_in_float32():
    def run(fast):
        model = DualTowerModel(ModelConfig.tiny())
        return train(model, TrainConfig(steps=3, batch=2, seed=1, fast=fast, workers=2))

    fast, full = run(True), run(False)
    assert all(p.dtype == np.float32 for p in fast.model.params.values())
    assert all(p.dtype == np.float64 for p in full.model.params.values())
    assert all(math.isfinite(loss) for loss in fast.losses)
    # identical draws, so the first loss differs only by rounding
    assert fast.losses[0] == pytest.approx(full.losses[0], rel=1e-3)


def test_non_finite_loss_aborts():
    model = DualTowerModel(ModelConfig.tiny())
    model.params["video.out.b"] = Tensor(np.full(4, np.nan), requires_grad=True)
    with pytest.raises(NumericError):
        train_step(model, _tiny_batch(model), TrainConfig(batch=2), AdamW(), 0, np.random.default_rng(0))


def test_empty_batch_is_rejected():
    model = DualTowerModel(ModelConfig.tiny())
    with pytest.raises(ContractError):
        train_step(model, [], TrainConfig(), AdamW(), 0, np.random.default_rng(0))


def test_training_decreases_loss():
    model = DualTowerModel(ModelConfig.tiny())
    groups = OptimizerGroups(backbone_lr=5e-3, bridge_lr=1e-2)
    result = train(model, TrainConfig(steps=60, batch=4, seed=0), groups)
    first, last = loss_trend(result.losses)
    assert last < first


def test_loss_trend():
    assert loss_trend([5.0] * 10 + [1.0] * 10) == (5.0, 1.0)
    with pytest.raises(ContractError):
        loss_trend([1.0] * 9)


def test_phase_presets():
    assert phase_config("phase1").shift_a == 1.0
    assert phase_config("phase1").p_drop_text == 0.5
    p2 = phase_config("phase2", TrainConfig(steps=7))
    assert (p2.shift_a, p2.p_drop_text, p2.steps) == (5.0, 0.2, 7)
    assert PHASE_PRESETS["phase3"].grid_scale == 2.0
    with pytest.raises(ContractError):
        phase_config("phase4")


def test_phase_curriculum_moves_to_the_finer_grid():
    model = DualTowerModel(ModelConfig.tiny())
    result = phase_curriculum(model, TrainConfig(steps=1, batch=1))
    assert [row["phase"] for row in result.history] == ["phase1", "phase2", "phase3"]
    assert [row["step"] for row in result.history] == [0, 1, 2]
    assert result.model.config.video.seq_len == 24
    assert result.model.config.audio.seq_len == 96


def test_train_config_validation():
    with pytest.raises(DomainError):
        TrainConfig(p_drop_text=1.5)
    with pytest.raises(ContractError):
        TrainConfig(timestep_mode="joint")
    with pytest.raises(ContractError):
        TrainConfig(first_frame="black")


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("n_steps", [1, 10])
def test_constant_velocity_recovers_the_data(n_steps):
    eps_v, eps_a = _noise()
    x_v, x_a = np.full((12, 4), 0.3), np.full((48, 4), -0.2)
    stub = VelocityStub(lambda zv, za: (eps_v - x_v, eps_a - x_a))
    out_v, out_a = sample(stub, ConditionSet(PROMPT), GuidanceScales(1.0, 1.0), n_steps, UNIFORM, 0, noise=(eps_v, eps_a))
    assert np.allclose(out_v.numpy(), x_v, atol=1e-12)
    assert np.allclose(out_a.numpy(), x_a, atol=1e-12)


@pytest.mark.parametrize(
    "scales,swapped,nfe",
    [((1.0, 1.0), False, 1), ((1.0, 5.0), False, 2), ((2.0, 5.0), False, 3), ((2.0, 1.0), True, 2)],
)
def test_sampler_evaluates_only_planned_branches(scales, swapped, nfe):
    stub = VelocityStub(lambda zv, za: (0.0 * zv, 0.0 * za))
    sample(stub, ConditionSet(PROMPT), GuidanceScales(*scales), 4, UNIFORM, 0, swapped=swapped)
    assert stub.calls == 4 * nfe


def test_euler_error_halves_with_twice_the_steps():
    # dz/dτ = z integrated from τ = 1 down to 0 gives z·e⁻¹
    def error(n):
        stub = VelocityStub(lambda zv, za: (zv, za))
        out, _ = sample(stub, ConditionSet(PROMPT), GuidanceScales(1.0, 1.0), n, UNIFORM, 0, noise=(np.ones((12, 4)), np.ones((48, 4))))
        return abs(out.numpy()[0, 0] - math.exp(-1.0))

    ratio = error(10) / error(20)
    assert 1.8 < ratio < 2.2


def test_non_finite_latents_abort_with_step():
    stub = VelocityStub(lambda zv, za: (np.full_like(zv, np.inf), za))
    with pytest.raises(NumericError, match="step 0"):
        sample(stub, ConditionSet(PROMPT), GuidanceScales(1.0, 1.0), 3, UNIFORM, 0)
    with pytest.raises(ContractError):
        sample(stub, ConditionSet(PROMPT), GuidanceScales(1.0, 1.0), 0, UNIFORM, 0)


def test_sampling_is_deterministic_and_worker_independent():
    model = DualTowerModel(ModelConfig.tiny())
    cfg = SampleConfig(n_steps=3)
    a = sample_with_config(model, ConditionSet(PROMPT), cfg)
    b = sample_with_config(model, ConditionSet(PROMPT), dataclasses.replace(cfg, workers=3))
    assert np.array_equal(a[0].numpy(), b[0].numpy())
    assert np.array_equal(a[1].numpy(), b[1].numpy())
    c = sample_with_config(model, ConditionSet(PROMPT), cfg, seed=1)
    assert not np.array_equal(a[0].numpy(), c[0].numpy())


def test_sample_config_validation():
    with pytest.raises(ContractError):
        SampleConfig(n_steps=0)
    with pytest.raises(ContractError):
        SampleConfig(guidance="triple")


def test_sweep_needs_two_values():
    model = DualTowerModel(ModelConfig.tiny())
    with pytest.raises(ContractError):
        sweep_s_b(model, [2.0], SampleConfig(n_steps=1))


def test_sweep_rows():
    model = DualTowerModel(ModelConfig.tiny())
    out = sweep_s_b(model, [1.0, 2.0], SampleConfig(n_steps=1), n_scenes=1)
    assert [row["s_B"] for row in out["rows"]] == [1.0, 2.0]
    assert -1.0 <= out["spearman_rho"] <= 1.0


# ---------------------------------------------------------------------------
# synchronization experiments
# ---------------------------------------------------------------------------


def test_evaluate_sync_scores_every_scene():
    model = DualTowerModel(ModelConfig.tiny())
    cfg = SampleConfig(n_steps=2)
    ev = evaluate_sync(model, cfg, n_scenes=3, seed=0)
    assert len(ev.offsets) == 3
    assert all(0.0 <= o <= DURATION_S for o in ev.offsets)
    assert ev.median_offset_s == float(np.median(ev.offsets))
    assert 0.0 <= ev.mean_f1 <= 1.0
    assert 0 <= ev.failures <= 3
    assert evaluate_sync(model, cfg, n_scenes=3, seed=0) == ev
    with pytest.raises(ContractError):
        evaluate_sync(model, cfg, n_scenes=0)


def test_bridge_ablation_rows():
    out = bridge_ablation(
        lambda seed: DualTowerModel(ModelConfig.tiny(seed=seed)),
        TrainConfig(steps=2, batch=2),
        SampleConfig(n_steps=2),
        seeds=(0, 1),
        n_scenes=2,
    )
    assert [(r["seed"], r["variant"]) for r in out["rows"]] == [
        (0, "bridge"),
        (0, "no_bridge"),
        (1, "bridge"),
        (1, "no_bridge"),
    ]
    assert 0.0 <= out["bridge_median_s"] <= DURATION_S
    assert 0.0 <= out["no_bridge_median_s"] <= DURATION_S
    assert math.isfinite(out["relative_reduction"]) and out["relative_reduction"] <= 1.0
