import numpy as np
import pytest

from avlab import diffcore as dc
from avlab.diffcore import Tensor
from avlab.errors import ContractError, DimensionError, DomainError
from avlab.schedule import (
    DECOUPLED,
    NORMALIZED,
    LITERAL,
    SHARED,
    LossWeights,
    SigmaShiftSchedule,
    corrupt,
    draw_timesteps,
    fm_loss,
    sigma,
    time_grid,
)


def test_normalized_endpoints_and_identity():
    sched = SigmaShiftSchedule(5.0)
    assert sigma(sched, 0.0) == 0.0
    assert sigma(sched, 1.0) == 1.0
    for variant in (NORMALIZED, LITERAL):
        assert sigma(SigmaShiftSchedule(1.0, variant), 0.7) == pytest.approx(0.7, abs=1e-15)


@pytest.mark.parametrize("shift", [0.5, 2.0, 3.7, 5.0, 1.0])
def test_variants_agree_only_at_zero_and_half(shift):
    norm, lit = SigmaShiftSchedule(shift, NORMALIZED), SigmaShiftSchedule(shift, LITERAL)
    for t in np.arange(1001) / 1000.0:
        a, b = sigma(norm, t), sigma(lit, t)
        if shift == 1.0 or t in (0.0, 0.5):
            assert a == pytest.approx(b, rel=1e-12, abs=1e-15)
        else:
            assert abs(a - b) > 1e-6
    if shift == 5.0:
        assert sigma(norm, 0.5) == pytest.approx(2.5 / 3.0)


def test_verbatim_value_at_one():
    assert sigma(SigmaShiftSchedule(5.0, LITERAL), 1.0) == 5.0


def test_sigma_monotone():
    for variant in (NORMALIZED, LITERAL):
        sched = SigmaShiftSchedule(5.0, variant)
        values = [sigma(sched, t) for t in np.linspace(0.0, 1.0, 101)]
        assert all(b > a for a, b in zip(values, values[1:]))


def test_sigma_domain_errors():
    with pytest.raises(DomainError):
        sigma(SigmaShiftSchedule(5.0), 1.5)
    with pytest.raises(DomainError):
        SigmaShiftSchedule(0.0)
    with pytest.raises(ContractError):
        SigmaShiftSchedule(2.0, "cosine")


def test_corrupt_examples():
    sched = SigmaShiftSchedule(5.0)
    x0, eps = Tensor([2.0]), Tensor([-1.0])
    assert np.array_equal(corrupt(x0, eps, 0.0, sched).x_t.numpy(), [2.0])
    assert np.array_equal(corrupt(x0, eps, 1.0, sched).x_t.numpy(), [-1.0])
    flow = corrupt(x0, eps, 0.5, sched)
    assert flow.x_t.numpy()[0] == pytest.approx(-0.5)
    assert flow.target_v.numpy()[0] == -3.0


def test_corrupt_contracts():
    with pytest.raises(ContractError):
        corrupt(Tensor([1.0]), Tensor([0.0]), 0.5, SigmaShiftSchedule(5.0, LITERAL))
    with pytest.raises(DimensionError):
        corrupt(Tensor([1.0]), Tensor([0.0, 1.0]), 0.5, SigmaShiftSchedule(5.0))


def test_fm_loss_examples():
    w = LossWeights()
    assert (w.lambda_v, w.lambda_a) == (1.0, 0.2)
    zero = fm_loss(Tensor([1.0]), Tensor([2.0]), Tensor([1.0]), Tensor([2.0]), w)
    assert zero.item() == 0.0
    loss = fm_loss(Tensor([1.0]), Tensor([1.0]), Tensor([0.0]), Tensor([0.0]), w)
    assert loss.item() == pytest.approx(1.2)
    with pytest.raises(DomainError):
        LossWeights(1.0, 0.0)


def test_fm_loss_is_differentiable_through_predictions():
    rng = np.random.default_rng(0)
    pred_a = Tensor(rng.standard_normal((4, 2)))
    tgt_v, tgt_a = Tensor(rng.standard_normal((3, 2))), Tensor(rng.standard_normal((4, 2)))
    point = Tensor(rng.standard_normal((3, 2)))
    err = dc.grad_check(lambda p: fm_loss(p, pred_a, tgt_v, tgt_a, LossWeights()), point)
    assert err <= 1e-6


def test_draw_timesteps_modes():
    rng = np.random.default_rng(0)
    for _ in range(100):
        draw = draw_timesteps(rng, SHARED)
        assert draw.t_v == draw.t_a
    rng = np.random.default_rng(1)
    draws = [draw_timesteps(rng, DECOUPLED) for _ in range(100_000)]
    t_v = np.array([d.t_v for d in draws])
    t_a = np.array([d.t_a for d in draws])
    assert abs(np.corrcoef(t_v, t_a)[0, 1]) < 0.02
    assert 0.0 <= t_v.min() and t_v.max() < 1.0


def test_draw_timesteps_is_seeded_and_ranged():
    assert draw_timesteps(7) == draw_timesteps(7)
    rng = np.random.default_rng(2)
    for _ in range(200):
        assert 0.5 <= draw_timesteps(rng, DECOUPLED, (0.5, 1.0)).t_v < 1.0
    with pytest.raises(ContractError):
        draw_timesteps(0, "joint")


def test_time_grid():
    t, tau = time_grid(4, SigmaShiftSchedule(5.0))
    assert t[0] == 1.0 and t[-1] == 0.0
    assert tau[0] == 1.0 and tau[-1] == 0.0
    assert np.all(np.diff(tau) < 0)
    # a larger shift keeps τ high for longer
    assert np.all(tau[1:-1] > t[1:-1])
    t1, tau1 = time_grid(4, SigmaShiftSchedule(1.0))
    assert np.allclose(tau1, t1, atol=1e-15)
    with pytest.raises(ContractError):
        time_grid(0, SigmaShiftSchedule(1.0))
