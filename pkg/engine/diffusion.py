"""Forward noising Phi_t, one reverse step Theta_t, the clean estimate Psi_t and
full ancestral chains."""

import logging
from typing import Callable, Optional

import torch

from engine.numerics import RngStream, Shape, check_same_shape, gaussian_draw
from engine.schedule import NoiseSchedule

logger = logging.getLogger(__name__)

# eps_theta(x_t, t, rng): the rng feeds any internal draw of the predictor
NoisePredictor = Callable[[torch.Tensor, int, RngStream], torch.Tensor]


class DiffusionProcess:
    """Stateless wrapper of a schedule and a noise predictor."""

    def __init__(self, schedule: NoiseSchedule, denoiser: Optional[NoisePredictor] = None):
        self.schedule = schedule
        self.denoiser = denoiser

    def predict(self, xt: torch.Tensor, t: int, rng: RngStream) -> torch.Tensor:
        if self.denoiser is None:
            raise ValueError("no denoiser attached to this diffusion process")
        eps = self.denoiser(xt, t, rng)
        check_same_shape(eps, xt, "denoiser output")
        return eps

    def forward_sample(self, x0: torch.Tensor, t: int, eps: torch.Tensor) -> torch.Tensor:
        check_same_shape(eps, x0, "forward_sample eps")
        t = self.schedule.check_step(t, allow_zero=True)
        if t == 0:
            return x0
        abar = self.schedule.alpha_bars[t]
        return abar.sqrt() * x0 + (1.0 - abar).sqrt() * eps

    def predict_x0(self, xt: torch.Tensor, t: int, eps_pred: torch.Tensor) -> torch.Tensor:
        check_same_shape(eps_pred, xt, "predict_x0 eps_pred")
        t = self.schedule.check_step(t, allow_zero=True)
        if t == 0:
            return xt
        abar = self.schedule.alpha_bars[t]
        return (xt - (1.0 - abar).sqrt() * eps_pred) / abar.sqrt()

    def reverse_step(self, xt: torch.Tensor, t: int, eps_pred: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        check_same_shape(eps_pred, xt, "reverse_step eps_pred")
        check_same_shape(z, xt, "reverse_step z")
        t = self.schedule.check_step(t)
        alpha = self.schedule.alphas[t]
        abar = self.schedule.alpha_bars[t]
        mean = (xt - ((1.0 - alpha) / (1.0 - abar).sqrt()) * eps_pred) / alpha.sqrt()
        sigma = self.schedule.sigmas[t]
        if float(sigma) == 0.0:
            return mean
        return mean + sigma * z

    def posterior_mean(self, x0: torch.Tensor, xt: torch.Tensor, t: int) -> torch.Tensor:
        """Mean of q(x_{t-1} | x_t, x_0)."""
        t = self.schedule.check_step(t)
        return self.schedule.posterior_mean_coef1[t] * x0 + self.schedule.posterior_mean_coef2[t] * xt

    def plain_step(self, xt: torch.Tensor, t: int, rng: RngStream) -> torch.Tensor:
        """One unguided ancestral step: predict, draw z, apply Theta_t."""
        eps = self.predict(xt, t, rng)
        z = gaussian_draw(rng, xt.shape)
        return self.reverse_step(xt, t, eps, z)

    def ancestral_sample(
        self,
        rng: RngStream,
        shape: Shape,
        from_t: int,
        x_init: Optional[torch.Tensor] = None,
    ) -> torch.Tensor:
        """Run Theta_t from ``from_t`` down to 1.

        Starts from pure noise when ``from_t == T`` and no ``x_init`` is given,
        otherwise from x_{from_t} ~ q(. | x_init). ``from_t == 0`` with an
        ``x_init`` is the empty chain.
        """
        if not 0 <= from_t <= self.schedule.T:
            raise ValueError(f"from_t must lie in [0, T={self.schedule.T}], got {from_t}")
        if x_init is None:
            if from_t != self.schedule.T:
                raise ValueError(f"x_init is required when from_t < T (from_t={from_t})")
            x = gaussian_draw(rng, shape)
        else:
            requested = (shape,) if isinstance(shape, int) else tuple(shape)
            if tuple(x_init.shape) != requested:
                raise ValueError(f"x_init shape {tuple(x_init.shape)} differs from requested shape {requested}")
            if from_t == 0:
                return x_init
            x = self.forward_sample(x_init, from_t, gaussian_draw(rng, x_init.shape))
        for t in range(from_t, 0, -1):
            x = self.plain_step(x, t, rng)
        return x
