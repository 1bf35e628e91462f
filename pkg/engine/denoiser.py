"""Fusion-augmented noise predictor eps_theta.

Image mode is a small UNet: two stride-2 stages down, a bottleneck, two
transposed-convolution stages up with skip connections, and a sinusoidal time
embedding applied as per-channel scale-and-shift at every stage. Point mode is a
fully connected encoder/decoder over (point, time embedding).

The source image enters through the phasic content fusion: its bottleneck
feature is blended with noise z by m(t) and merged with the noisy-input
bottleneck by three convolution (point mode: linear) layers.
"""

import copy
import logging
import math
from dataclasses import dataclass
from typing import List, NamedTuple, Optional, Tuple

import torch
import torch.nn.functional as F
from torch import nn

from app.v1.models.config_models import DenoiserConfig, PhasicConfig
from engine.numerics import DTYPE, DivergenceError, RngStream, check_same_shape, gaussian_draw
from engine.schedule import phasic_gate

logger = logging.getLogger(__name__)

INIT_STREAM = 11


class FeatureStack(NamedTuple):
    skips: Tuple[torch.Tensor, ...]
    bottleneck: torch.Tensor


def sinusoidal_embedding(t: float, dim: int) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=DTYPE) / half)
    args = float(t) * freqs
    return torch.cat([torch.sin(args), torch.cos(args)]).unsqueeze(0)


class TimeModulation(nn.Module):
    """Per-channel scale-and-shift from the time embedding."""

    def __init__(self, time_dim: int, channels: int):
        super().__init__()
        self.proj = nn.Linear(time_dim, 2 * channels)

    def forward(self, h: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        scale, shift = self.proj(temb).chunk(2, dim=-1)
        if h.dim() == 4:
            scale = scale[:, :, None, None]
            shift = shift[:, :, None, None]
        return h * (1.0 + scale) + shift


class FusionUNet(nn.Module):
    def __init__(self, config: DenoiserConfig):
        super().__init__()
        c = config.channels
        w0, w1, w2 = config.widths
        td = config.time_dim
        self.time_dim = td
        self.time_mlp = nn.Linear(td, td)
        self.conv_in = nn.Conv2d(c, w0, 3, padding=1)
        self.down1 = nn.Conv2d(w0, w1, 3, stride=2, padding=1)
        self.down2 = nn.Conv2d(w1, w2, 3, stride=2, padding=1)
        self.mid = nn.Conv2d(w2, w2, 3, padding=1)
        self.merge = nn.ModuleList([
            nn.Conv2d(2 * w2, w2, 3, padding=1),
            nn.Conv2d(w2, w2, 3, padding=1),
            nn.Conv2d(w2, w2, 3, padding=1),
        ])
        self.up1 = nn.ConvTranspose2d(2 * w2, w1, 4, stride=2, padding=1)
        self.up2 = nn.ConvTranspose2d(2 * w1, w0, 4, stride=2, padding=1)
        self.conv_out = nn.Conv2d(2 * w0, c, 3, padding=1)
        self.film = nn.ModuleDict({
            name: TimeModulation(td, ch)
            for name, ch in (("conv_in", w0), ("down1", w1), ("down2", w2), ("mid", w2), ("up1", w1), ("up2", w0))
        })
        side = config.image_size // 4
        self.bottleneck_shape = (w2, side, side)

    def time_embedding(self, t: float) -> torch.Tensor:
        return F.silu(self.time_mlp(sinusoidal_embedding(t, self.time_dim)))

    def encode(self, x: torch.Tensor, temb: torch.Tensor) -> FeatureStack:
        h0 = F.silu(self.film["conv_in"](self.conv_in(x), temb))
        h1 = F.silu(self.film["down1"](self.down1(h0), temb))
        h2 = F.silu(self.film["down2"](self.down2(h1), temb))
        b = F.silu(self.film["mid"](self.mid(h2), temb))
        return FeatureStack((h0, h1, h2), b)

    def merge_features(self, noisy: torch.Tensor, fused_content: torch.Tensor) -> torch.Tensor:
        h = torch.cat([noisy, fused_content], dim=1)
        last = len(self.merge) - 1
        for i, layer in enumerate(self.merge):
            h = layer(h)
            if i < last:
                h = F.silu(h)
        return h

    def decode(self, merged: torch.Tensor, stack: FeatureStack, temb: torch.Tensor) -> torch.Tensor:
        h0, h1, h2 = stack.skips
        u1 = F.silu(self.film["up1"](self.up1(torch.cat([merged, h2], dim=1)), temb))
        u2 = F.silu(self.film["up2"](self.up2(torch.cat([u1, h1], dim=1)), temb))
        return self.conv_out(torch.cat([u2, h0], dim=1))


class PointDenoiserNet(nn.Module):
    def __init__(self, config: DenoiserConfig):
        super().__init__()
        d, h, td = config.point_dim, config.hidden, config.time_dim
        self.time_dim = td
        self.time_mlp = nn.Linear(td, td)
        self.encoder = nn.Linear(d + td, h)
        self.merge = nn.ModuleList([nn.Linear(2 * h, h), nn.Linear(h, h), nn.Linear(h, h)])
        self.dec1 = nn.Linear(2 * h, h)
        self.dec2 = nn.Linear(h, d)
        self.bottleneck_shape = (h,)

    def time_embedding(self, t: float) -> torch.Tensor:
        return F.silu(self.time_mlp(sinusoidal_embedding(t, self.time_dim)))

    def encode(self, x: torch.Tensor, temb: torch.Tensor) -> FeatureStack:
        e = F.silu(self.encoder(torch.cat([x, temb.expand(x.shape[0], -1)], dim=1)))
        return FeatureStack((e,), e)

    def merge_features(self, noisy: torch.Tensor, fused_content: torch.Tensor) -> torch.Tensor:
        h = torch.cat([noisy, fused_content], dim=1)
        last = len(self.merge) - 1
        for i, layer in enumerate(self.merge):
            h = layer(h)
            if i < last:
                h = F.silu(h)
        return h

    def decode(self, merged: torch.Tensor, stack: FeatureStack, temb: torch.Tensor) -> torch.Tensor:
        (e,) = stack.skips
        return self.dec2(F.silu(self.dec1(torch.cat([merged, e], dim=1))))


def build_network(config: DenoiserConfig) -> nn.Module:
    net = FusionUNet(config) if config.mode == "image" else PointDenoiserNet(config)
    return net.to(dtype=DTYPE)


@torch.no_grad()
def initialize_parameters(net: nn.Module, rng: RngStream) -> None:
    """Fan-in scaled uniform weights, zero biases, zero time-modulation heads."""
    for name, module in net.named_modules():
        if not isinstance(module, (nn.Linear, nn.Conv2d, nn.ConvTranspose2d)):
            continue
        if module.bias is not None:
            module.bias.zero_()
        if name.startswith("film."):
            module.weight.zero_()
            continue
        weight = module.weight
        if isinstance(module, nn.ConvTranspose2d):
            fan_in = weight.shape[0] * weight.shape[2] * weight.shape[3]
        else:
            fan_in = weight[0].numel()
        bound = 1.0 / math.sqrt(fan_in)
        draws = torch.from_numpy(rng.uniform(weight.numel()) * 2.0 - 1.0).reshape(weight.shape)
        weight.copy_(draws * bound)


# ---------------------------------------------------------------------------
# Flat parameter vector
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamView:
    name: str
    offset: int
    shape: Tuple[int, ...]

    @property
    def numel(self) -> int:
        return math.prod(self.shape)


class DenoiserParams:
    """Flat parameter vector with named views into it."""

    def __init__(self, flat: torch.Tensor, views: List[ParamView]):
        if sum(v.numel for v in views) != flat.numel():
            raise ValueError("parameter views do not tile the flat vector")
        self.flat = flat
        self.views = views

    @classmethod
    def from_module(cls, net: nn.Module) -> "DenoiserParams":
        views, offset = [], 0
        for name, p in net.named_parameters():
            views.append(ParamView(name, offset, tuple(p.shape)))
            offset += p.numel()
        flat = torch.nn.utils.parameters_to_vector(net.parameters()).detach().clone()
        return cls(flat, views)

    def view(self, name: str) -> torch.Tensor:
        for v in self.views:
            if v.name == name:
                return self.flat[v.offset:v.offset + v.numel].view(v.shape)
        raise KeyError(name)


def fuse_content(
    content_feat: torch.Tensor,
    z: torch.Tensor,
    t: float,
    cfg: PhasicConfig,
    gate: Optional[float] = None,
) -> torch.Tensor:
    """E_hat = m(t) * E(x^A) + (1 - m(t)) * z; ``gate`` overrides m(t)."""
    check_same_shape(content_feat, z, "fuse_content")
    m = phasic_gate(t, cfg) if gate is None else gate
    return m * content_feat + (1.0 - m) * z


class Denoiser:
    """Trainable eps_theta with optional content input."""

    def __init__(self, config: DenoiserConfig, phasic: PhasicConfig, seed: int = 0):
        self.config = config
        self.phasic = phasic
        self.net = build_network(config)
        initialize_parameters(self.net, RngStream(seed, INIT_STREAM))

    @property
    def input_shape(self) -> Tuple[int, ...]:
        return self.config.input_shape

    @property
    def bottleneck_shape(self) -> Tuple[int, ...]:
        return self.net.bottleneck_shape

    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.net.parameters())

    def _check_input(self, x: torch.Tensor, what: str) -> None:
        if x.dim() != len(self.input_shape) + 1 or tuple(x.shape[1:]) != self.input_shape:
            raise ValueError(f"{what} must have shape (B, {', '.join(map(str, self.input_shape))}), got {tuple(x.shape)}")

    def encode(self, x: torch.Tensor, t: float = 0) -> FeatureStack:
        self._check_input(x, "encoder input")
        return self.net.encode(x, self.net.time_embedding(t))

    def predict_noise(
        self,
        xt: torch.Tensor,
        t: int,
        content: Optional[torch.Tensor] = None,
        rng: Optional[RngStream] = None,
        z: Optional[torch.Tensor] = None,
        gate: Optional[float] = None,
    ) -> torch.Tensor:
        """eps_theta(x_t, t[, content]). Without content the fused feature is z alone."""
        self._check_input(xt, "x_t")
        temb = self.net.time_embedding(t)
        noisy = self.net.encode(xt, temb)
        if z is None:
            if rng is None:
                raise ValueError("predict_noise needs an rng or an explicit z")
            z = gaussian_draw(rng, (xt.shape[0],) + self.bottleneck_shape)
        if content is None:
            fused = z
        else:
            check_same_shape(content, xt, "content")
            content_feat = self.net.encode(content, temb).bottleneck
            fused = fuse_content(content_feat, z, t, self.phasic, gate)
        merged = self.net.merge_features(noisy.bottleneck, fused)
        return self.net.decode(merged, noisy, temb)

    def __call__(self, xt: torch.Tensor, t: int, rng: RngStream) -> torch.Tensor:
        return self.predict_noise(xt, t, rng=rng)

    @property
    def params(self) -> DenoiserParams:
        return DenoiserParams.from_module(self.net)

    def flat_parameters(self) -> torch.Tensor:
        return torch.nn.utils.parameters_to_vector(self.net.parameters()).detach().clone()

    @torch.no_grad()
    def load_flat_parameters(self, flat: torch.Tensor) -> None:
        expected = self.num_parameters()
        if flat.dim() != 1 or flat.numel() != expected:
            raise ValueError(f"flat parameter vector must have {expected} entries, got {tuple(flat.shape)}")
        torch.nn.utils.vector_to_parameters(flat.to(DTYPE).clone(), self.net.parameters())

    def frozen_copy(self) -> "Denoiser":
        twin = copy.deepcopy(self)
        twin.net.requires_grad_(False)
        return twin


def backward(loss: torch.Tensor, net: nn.Module) -> torch.Tensor:
    """Reverse-mode gradient of a scalar loss w.r.t. the flat parameter vector of ``net``."""
    if not isinstance(loss, torch.Tensor) or loss.dim() != 0:
        raise ValueError("backward needs a scalar loss tensor")
    if not loss.requires_grad:
        raise ValueError("loss was not recorded on the network graph; nothing to differentiate")
    params = list(net.parameters())
    grads = torch.autograd.grad(loss, params, allow_unused=True)
    return torch.cat([
        (g if g is not None else torch.zeros_like(p)).reshape(-1)
        for g, p in zip(grads, params)
    ]).detach()


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: torch.Tensor
    v: torch.Tensor
    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, size: int, lr: float = 1e-4) -> "AdamState":
        return cls(torch.zeros(size, dtype=DTYPE), torch.zeros(size, dtype=DTYPE), 0, lr)


def adam_step(params: torch.Tensor, grads: torch.Tensor, state: AdamState) -> Tuple[torch.Tensor, AdamState]:
    """Bias-corrected Adam update of a flat parameter vector."""
    if not params.shape == grads.shape == state.m.shape:
        raise ValueError(
            f"adam_step length mismatch: params {tuple(params.shape)}, grads {tuple(grads.shape)}, "
            f"moments {tuple(state.m.shape)}"
        )
    bad = ~torch.isfinite(grads)
    if bool(bad.any()):
        first = int(torch.nonzero(bad)[0])
        raise DivergenceError(
            f"{int(bad.sum())} non-finite gradient entries (first at index {first}); Adam step aborted",
            state.step,
        )
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    m_hat = m / (1.0 - state.beta1 ** step)
    v_hat = v / (1.0 - state.beta2 ** step)
    updated = params - state.lr * m_hat / (v_hat.sqrt() + state.eps)
    return updated, AdamState(m, v, step, state.lr, state.beta1, state.beta2, state.eps)
