"""Noise schedules and the phasic gates m(t), w(t)."""

import logging
import math
from typing import List

import torch

from app.v1.models.config_models import PhasicConfig, ScheduleSpec
from engine.numerics import DTYPE

logger = logging.getLogger(__name__)

COSINE_OFFSET = 0.008
MAX_BETA = 0.999


class NoiseSchedule:
    """Per-step schedule tensors, indexed by t = 0..T.

    Index 0 is the clean-data convention: beta[0] = 0, alpha_bar[0] = 1,
    sigma[0] = 0.
    """

    def __init__(self, betas: List[float], sigma_mode: str = "posterior"):
        if not betas:
            raise ValueError("a schedule needs at least one step")
        if any(not 0.0 < b < 1.0 for b in betas):
            raise ValueError("every beta must lie strictly inside (0, 1)")
        if sigma_mode not in ("posterior", "large"):
            raise ValueError(f"sigma_mode must be 'posterior' or 'large', got {sigma_mode!r}")
        self.T = len(betas)
        self.sigma_mode = sigma_mode

        alpha_bar = [1.0]
        for b in betas:
            alpha_bar.append(alpha_bar[-1] * (1.0 - b))

        self.betas = torch.tensor([0.0] + list(betas), dtype=DTYPE)
        self.alphas = 1.0 - self.betas
        self.alpha_bars = torch.tensor(alpha_bar, dtype=DTYPE)

        prev = self.alpha_bars[:-1]
        cur = self.alpha_bars[1:]
        step_betas = self.betas[1:]
        posterior_variance = step_betas * (1.0 - prev) / (1.0 - cur)
        self.posterior_variance = torch.cat([torch.zeros(1, dtype=DTYPE), posterior_variance])
        self.posterior_mean_coef1 = torch.cat(
            [torch.zeros(1, dtype=DTYPE), step_betas * prev.sqrt() / (1.0 - cur)]
        )
        self.posterior_mean_coef2 = torch.cat(
            [torch.zeros(1, dtype=DTYPE), (1.0 - prev) * self.alphas[1:].sqrt() / (1.0 - cur)]
        )
        if sigma_mode == "posterior":
            self.sigmas = self.posterior_variance.sqrt()
        else:
            self.sigmas = self.betas.sqrt()

    def __repr__(self) -> str:
        return f"NoiseSchedule(T={self.T}, sigma_mode={self.sigma_mode!r})"

    def check_step(self, t: int, allow_zero: bool = False) -> int:
        low = 0 if allow_zero else 1
        if not low <= t <= self.T:
            raise ValueError(f"step t must lie in [{low}, {self.T}], got {t}")
        return int(t)

    def alpha_bar(self, t: int) -> float:
        return float(self.alpha_bars[t])


def make_linear_schedule(
    T: int,
    beta_start: float = 1e-4,
    beta_end: float = 0.02,
    sigma_mode: str = "posterior",
) -> NoiseSchedule:
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValueError(f"need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})")
    if T == 1:
        betas = [beta_start]
    else:
        step = (beta_end - beta_start) / (T - 1)
        betas = [beta_start + i * step for i in range(T - 1)] + [beta_end]
    return NoiseSchedule(betas, sigma_mode)


def cosine_alpha_bar(t: float, T: int, s: float = COSINE_OFFSET) -> float:
    """Unnormalised f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2)."""
    return math.cos(((t / T + s) / (1.0 + s)) * math.pi / 2.0) ** 2


def make_cosine_schedule(T: int, sigma_mode: str = "posterior") -> NoiseSchedule:
    if T < 1:
        raise ValueError(f"T must be >= 1, got {T}")
    f0 = cosine_alpha_bar(0, T)
    bars = [cosine_alpha_bar(t, T) / f0 for t in range(T + 1)]
    betas = [min(1.0 - bars[t] / bars[t - 1], MAX_BETA) for t in range(1, T + 1)]
    return NoiseSchedule(betas, sigma_mode)


def build_schedule(spec: ScheduleSpec) -> NoiseSchedule:
    if spec.kind == "cosine":
        return make_cosine_schedule(spec.T, spec.sigma_mode)
    return make_linear_schedule(spec.T, spec.beta_start, spec.beta_end, spec.sigma_mode)


def phasic_gate(t: float, cfg: PhasicConfig) -> float:
    """m(t) = 1 / (1 + exp(-(t - T_s))), evaluated without overflow."""
    z = t - cfg.T_s
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def phasic_weight(t: float, cfg: PhasicConfig) -> float:
    """w(t) = 1 - (t/T)^alpha."""
    return 1.0 - (t / cfg.T) ** cfg.alpha_w
