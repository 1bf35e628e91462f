import math

import numpy as np
import pytest
from pydantic import ValidationError

from app.v1.models.config_models import PhasicConfig, ScheduleSpec
from engine.schedule import (
    MAX_BETA,
    build_schedule,
    make_cosine_schedule,
    make_linear_schedule,
    phasic_gate,
    phasic_weight,
)


def test_linear_first_step():
    schedule = make_linear_schedule(1000, 1e-4, 0.02)
    assert schedule.alpha_bar(1) == pytest.approx(0.9999, rel=1e-15)
    assert schedule.alpha_bar(0) == 1.0


def test_linear_matches_independent_cumulative_product():
    schedule = make_linear_schedule(1000, 1e-4, 0.02)
    expected = np.cumprod(1.0 - np.linspace(1e-4, 0.02, 1000))
    np.testing.assert_allclose(schedule.alpha_bars[1:].numpy(), expected, rtol=1e-12)
    assert float(schedule.betas[1]) == 1e-4
    assert float(schedule.betas[1000]) == 0.02


def test_alpha_bar_is_the_running_product():
    schedule = make_linear_schedule(50, 1e-3, 0.1)
    running = 1.0
    for t in range(1, 51):
        running *= 1.0 - float(schedule.betas[t])
        assert schedule.alpha_bar(t) == running


def test_linear_rejects_bad_parameters():
    with pytest.raises(ValueError):
        make_linear_schedule(10, 0.02, 1e-4)
    with pytest.raises(ValueError):
        make_linear_schedule(10, 1e-4, 1.0)
    with pytest.raises(ValueError):
        make_linear_schedule(0, 1e-4, 0.02)


def test_cosine_normalised_and_strictly_decreasing():
    schedule = make_cosine_schedule(1000)
    bars = schedule.alpha_bars.tolist()
    assert bars[0] == 1.0
    assert all(later < earlier for earlier, later in zip(bars, bars[1:]))


def test_cosine_betas_match_closed_form():
    T, s = 1000, 0.008

    def f(t):
        return math.cos(((t / T + s) / (1.0 + s)) * math.pi / 2.0) ** 2

    expected = [min(1.0 - f(t) / f(t - 1), MAX_BETA) for t in range(1, T + 1)]
    schedule = make_cosine_schedule(T)
    np.testing.assert_allclose(schedule.betas[1:].numpy(), expected, rtol=0, atol=1e-12)


def test_sigma_modes():
    posterior = make_linear_schedule(10, 1e-3, 0.2, "posterior")
    large = make_linear_schedule(10, 1e-3, 0.2, "large")
    assert float(posterior.sigmas[1]) == 0.0
    assert float(large.sigmas[1]) == pytest.approx(math.sqrt(1e-3))
    assert bool((posterior.sigmas >= 0).all())
    assert bool((posterior.sigmas[2:] < large.sigmas[2:]).all())


def test_build_schedule_dispatches_on_kind():
    assert build_schedule(ScheduleSpec(kind="linear", T=10)).alpha_bar(1) == pytest.approx(1.0 - 1e-4)
    assert build_schedule(ScheduleSpec(kind="cosine", T=10)).T == 10


def test_gate_examples(default_phasic):
    assert phasic_gate(300, default_phasic) == 0.5
    assert phasic_gate(301, default_phasic) == pytest.approx(1.0 / (1.0 + math.exp(-1.0)), rel=1e-12)
    assert phasic_gate(301, default_phasic) == pytest.approx(0.731059, abs=1e-6)
    assert phasic_gate(0, default_phasic) < 1e-100


def test_weight_examples(default_phasic):
    assert phasic_weight(0, default_phasic) == 1.0
    assert phasic_weight(1000, default_phasic) == 0.0
    assert phasic_weight(500, default_phasic) == 0.875


def test_gates_are_monotone_and_bounded(default_phasic):
    gates = [phasic_gate(t, default_phasic) for t in range(1001)]
    weights = [phasic_weight(t, default_phasic) for t in range(1001)]
    assert all(b >= a for a, b in zip(gates, gates[1:]))
    assert all(b <= a for a, b in zip(weights, weights[1:]))
    for m, w in zip(gates, weights):
        assert 0.0 <= m * (1.0 - w) <= 1.0
        assert 0.0 <= w <= 1.0


def test_phasic_config_invariants():
    with pytest.raises(ValidationError, match="T_s"):
        PhasicConfig(T=100, T_s=101)
    with pytest.raises(ValidationError):
        PhasicConfig(T=100, T_s=10, alpha_w=0)
