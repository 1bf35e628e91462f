import math

import pytest
import torch

from engine.diffusion import DiffusionProcess
from engine.numerics import DTYPE, RngStream, gaussian_draw
from engine.schedule import NoiseSchedule


def _vec(*values):
    return torch.tensor(values, dtype=DTYPE)


def test_forward_sample_example():
    process = DiffusionProcess(NoiseSchedule([0.75]))
    out = process.forward_sample(_vec(2.0, 0.0), 1, _vec(0.0, 2.0))
    assert out.tolist() == pytest.approx([1.0, 1.7320508075688772], abs=1e-12)


def test_forward_sample_endpoints(tiny_schedule):
    process = DiffusionProcess(tiny_schedule)
    x0 = _vec(0.5, -1.0, 2.0)
    assert torch.equal(process.forward_sample(x0, 0, _vec(1.0, 1.0, 1.0)), x0)
    shrunk = process.forward_sample(x0, 7, torch.zeros(3, dtype=DTYPE))
    assert torch.equal(shrunk, tiny_schedule.alpha_bars[7].sqrt() * x0)


def test_forward_sample_rejects_shape_mismatch(tiny_schedule):
    with pytest.raises(ValueError, match="shape"):
        DiffusionProcess(tiny_schedule).forward_sample(_vec(1.0, 2.0), 3, _vec(1.0))


def test_predict_x0_inverts_forward_sample_for_every_t(tiny_schedule):
    process = DiffusionProcess(tiny_schedule)
    rng = RngStream(5)
    x0 = gaussian_draw(rng, (4, 3))
    eps = gaussian_draw(rng, (4, 3))
    for t in range(0, tiny_schedule.T + 1):
        back = process.predict_x0(process.forward_sample(x0, t, eps), t, eps)
        assert torch.allclose(back, x0, rtol=0, atol=1e-9)


def test_predict_x0_examples():
    process = DiffusionProcess(NoiseSchedule([0.75]))
    assert process.predict_x0(_vec(1.0, 1.7320508075688772), 1, _vec(0.0, 2.0)).tolist() == pytest.approx([2.0, 0.0], abs=1e-12)
    xt = _vec(0.3, -0.6)
    assert torch.allclose(process.predict_x0(xt, 1, torch.zeros(2, dtype=DTYPE)), xt / 0.5)


def test_reverse_step_example():
    process = DiffusionProcess(NoiseSchedule([0.01]))
    out = process.reverse_step(_vec(1.0), 1, _vec(0.0), _vec(0.0))
    assert float(out[0]) == pytest.approx(1.0 / math.sqrt(0.99), rel=1e-12)
    assert float(out[0]) == pytest.approx(1.0050378, abs=1e-7)


def test_reverse_step_at_t1_ignores_z(tiny_schedule):
    process = DiffusionProcess(tiny_schedule)
    xt, eps = _vec(0.4, -0.2), _vec(0.1, 0.3)
    a = process.reverse_step(xt, 1, eps, _vec(5.0, -5.0))
    b = process.reverse_step(xt, 1, eps, _vec(0.0, 0.0))
    assert torch.equal(a, b)


def test_reverse_step_with_true_noise_is_the_posterior_mean(tiny_schedule):
    process = DiffusionProcess(tiny_schedule)
    rng = RngStream(13)
    for t in range(1, tiny_schedule.T + 1):
        x0 = gaussian_draw(rng, (6,))
        eps = gaussian_draw(rng, (6,))
        xt = process.forward_sample(x0, t, eps)
        step = process.reverse_step(xt, t, eps, torch.zeros(6, dtype=DTYPE))
        assert torch.allclose(step, process.posterior_mean(x0, xt, t), rtol=0, atol=1e-9)


def test_trajectory_replay_with_true_noise_lands_on_x0(tiny_schedule):
    process = DiffusionProcess(tiny_schedule)
    x0 = _vec(0.7)
    x = process.forward_sample(x0, tiny_schedule.T, _vec(1.3))
    for t in range(tiny_schedule.T, 0, -1):
        abar = tiny_schedule.alpha_bars[t]
        true_eps = (x - abar.sqrt() * x0) / (1.0 - abar).sqrt()
        x = process.reverse_step(x, t, true_eps, torch.zeros_like(x))
    assert abs(float(x[0]) - 0.7) < 1e-6


def test_ancestral_sample_from_t1_is_one_reverse_step(toy_process):
    x_init = gaussian_draw(RngStream(1), (2, 3))
    out = toy_process.ancestral_sample(RngStream(8), x_init.shape, 1, x_init)
    rng = RngStream(8)
    x1 = toy_process.forward_sample(x_init, 1, gaussian_draw(rng, x_init.shape))
    expected = toy_process.reverse_step(x1, 1, toy_process.predict(x1, 1, rng), gaussian_draw(rng, x1.shape))
    assert torch.equal(out, expected)


def test_ancestral_sample_is_deterministic_and_shape_preserving(toy_process):
    T = toy_process.schedule.T
    a = toy_process.ancestral_sample(RngStream(4), (3, 2), T)
    b = toy_process.ancestral_sample(RngStream(4), (3, 2), T)
    assert a.shape == (3, 2)
    assert torch.equal(a, b)
    assert not torch.equal(a, toy_process.ancestral_sample(RngStream(5), (3, 2), T))


def test_ancestral_sample_empty_chain_returns_x_init(toy_process):
    x_init = _vec(0.25, -0.5)
    assert torch.equal(toy_process.ancestral_sample(RngStream(0), (2,), 0, x_init), x_init)


def test_ancestral_sample_argument_checks(toy_process):
    T = toy_process.schedule.T
    with pytest.raises(ValueError, match="from_t"):
        toy_process.ancestral_sample(RngStream(0), (2,), T + 1, _vec(0.0, 0.0))
    with pytest.raises(ValueError, match="x_init"):
        toy_process.ancestral_sample(RngStream(0), (2,), T - 1)
    with pytest.raises(ValueError, match="shape"):
        toy_process.ancestral_sample(RngStream(0), (3,), 2, _vec(0.0, 0.0))


def test_predict_requires_a_denoiser(tiny_schedule):
    with pytest.raises(ValueError, match="denoiser"):
        DiffusionProcess(tiny_schedule).predict(_vec(0.0), 1, RngStream(0))
