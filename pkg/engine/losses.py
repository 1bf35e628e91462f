"""Training objectives: diffusion MSE, the directional distribution consistency
(DDC) loss and its direction vector, the Gram style loss, the phasic total loss
and the pairwise-consistency baseline."""

import logging
from dataclasses import dataclass
from typing import List, Optional, Protocol, Sequence, Union

import torch
import torch.nn.functional as F
from torch import nn

from app.v1.models.config_models import FEW_SHOT_LIMIT, DenoiserConfig, EncoderSpec, LossWeights, PhasicConfig
from engine.denoiser import Denoiser, initialize_parameters
from engine.numerics import DTYPE, RngStream, check_finite, check_same_shape, to_tensor
from engine.schedule import phasic_gate, phasic_weight

logger = logging.getLogger(__name__)

ENCODER_STREAM = 13
EMBED_CHUNK = 64

Scalar = Union[torch.Tensor, float]


# ---------------------------------------------------------------------------
# Feature encoders
# ---------------------------------------------------------------------------

class FeatureEncoder(Protocol):
    """Fixed map to a flat embedding (DDC, metrics) and to feature maps (style)."""

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        ...

    def feature_maps(self, x: torch.Tensor) -> List[torch.Tensor]:
        ...


def _as_maps(h: torch.Tensor) -> torch.Tensor:
    # point features (B, C) become C channels at a single position
    return h.unsqueeze(-1) if h.dim() == 2 else h


class IdentityEncoder:
    def embed(self, x: torch.Tensor) -> torch.Tensor:
        return x.reshape(x.shape[0], -1)

    def feature_maps(self, x: torch.Tensor) -> List[torch.Tensor]:
        return [_as_maps(x)]


class RandomConvEncoder:
    """Seeded three-layer conv (point mode: linear) stack, never trained."""

    def __init__(self, config: DenoiserConfig, widths: Sequence[int], seed: int):
        if len(widths) < 1:
            raise ValueError("random-conv encoder needs at least one layer width")
        layers: List[nn.Module] = []
        if config.mode == "image":
            c_in = config.channels
            for i, width in enumerate(widths):
                layers.append(nn.Conv2d(c_in, width, 3, stride=1 if i == 0 else 2, padding=1))
                c_in = width
        else:
            d_in = config.point_dim
            for width in widths:
                layers.append(nn.Linear(d_in, width))
                d_in = width
        self.layers = nn.ModuleList(layers).to(dtype=DTYPE)
        initialize_parameters(self.layers, RngStream(seed, ENCODER_STREAM))
        self.layers.requires_grad_(False)

    def feature_maps(self, x: torch.Tensor) -> List[torch.Tensor]:
        maps, h = [], x
        for layer in self.layers:
            h = torch.tanh(layer(h))
            maps.append(_as_maps(h))
        return maps

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        return self.feature_maps(x)[-1].reshape(x.shape[0], -1)


class FrozenSourceEncoder:
    """Bottleneck features of a frozen copy of the source-pretrained denoiser at t=0."""

    def __init__(self, denoiser: Denoiser):
        self.denoiser = denoiser.frozen_copy()

    def embed(self, x: torch.Tensor) -> torch.Tensor:
        return self.denoiser.encode(x, 0).bottleneck.reshape(x.shape[0], -1)

    def feature_maps(self, x: torch.Tensor) -> List[torch.Tensor]:
        stack = self.denoiser.encode(x, 0)
        return [_as_maps(h) for h in (*stack.skips, stack.bottleneck)]


def build_encoder(kind: str, spec: EncoderSpec, source: Denoiser, seed: int) -> FeatureEncoder:
    if kind == "frozen-source":
        return FrozenSourceEncoder(source)
    if kind == "random-conv":
        return RandomConvEncoder(source.config, spec.random_conv_widths, seed)
    if kind == "identity":
        return IdentityEncoder()
    raise ValueError(f"unknown encoder kind {kind!r}")


@torch.no_grad()
def embed_all(encoder: FeatureEncoder, x: torch.Tensor, chunk: int = EMBED_CHUNK) -> torch.Tensor:
    """Embeddings of a whole pool, computed in fixed-order chunks."""
    return torch.cat([encoder.embed(x[i:i + chunk]) for i in range(0, x.shape[0], chunk)])


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------

def direction_vector(source: torch.Tensor, target: torch.Tensor, encoder: FeatureEncoder) -> torch.Tensor:
    """w = mean E(target) - mean E(source)."""
    source, target = to_tensor(source), to_tensor(target)
    if source.shape[0] < 1 or target.shape[0] < 1:
        raise ValueError(f"direction vector needs non-empty sets, got |A|={source.shape[0]}, |B|={target.shape[0]}")
    w = embed_all(encoder, target).mean(dim=0) - embed_all(encoder, source).mean(dim=0)
    check_finite(w, "direction vector")
    return w


def ddc_loss(
    x_source: torch.Tensor,
    x_generated: torch.Tensor,
    w: torch.Tensor,
    encoder: FeatureEncoder,
) -> torch.Tensor:
    """Per-sample ||E(x^A) + w - E(x^{A->B})||^2, averaged over the batch."""
    check_same_shape(x_source, x_generated, "ddc_loss inputs")
    with torch.no_grad():
        anchor = encoder.embed(x_source) + w
    generated = encoder.embed(x_generated)
    return ((anchor - generated) ** 2).sum(dim=1).mean()


def gram(feature_map: torch.Tensor) -> torch.Tensor:
    """G = F F^T / (H W) for a C x H x W map (any trailing spatial layout)."""
    flat = feature_map.reshape(feature_map.shape[0], -1)
    return flat @ flat.T / flat.shape[1]


def batched_gram(feature_maps: torch.Tensor) -> torch.Tensor:
    flat = feature_maps.reshape(feature_maps.shape[0], feature_maps.shape[1], -1)
    return flat @ flat.transpose(1, 2) / flat.shape[2]


def style_loss(
    x_generated: torch.Tensor,
    targets: torch.Tensor,
    encoder: FeatureEncoder,
    layer_weights: Optional[Sequence[float]] = None,
    allow_large_target_set: bool = False,
) -> torch.Tensor:
    """(1/m) sum_i sum_l w_l ||G^l(x^{A->B}) - G^l(x_i^B)||_F^2, averaged over the batch."""
    m = targets.shape[0]
    if m < 1:
        raise ValueError("style loss needs at least one target exemplar")
    if m > FEW_SHOT_LIMIT:
        if not allow_large_target_set:
            raise ValueError(f"style loss target set has {m} > {FEW_SHOT_LIMIT} exemplars; enable allow_large_target_set")
        logger.warning(f"⚠️ style loss over {m} target exemplars exceeds the few-shot limit {FEW_SHOT_LIMIT}")

    gen_maps = encoder.feature_maps(x_generated)
    with torch.no_grad():
        target_grams = [batched_gram(h) for h in encoder.feature_maps(targets)]
    n_layers = len(gen_maps)
    if layer_weights is None:
        layer_weights = [1.0 / n_layers] * n_layers
    if len(layer_weights) != n_layers:
        raise ValueError(f"style_layer_weights has {len(layer_weights)} entries for {n_layers} feature layers")

    total = torch.zeros((), dtype=DTYPE)
    for weight, h, g_targets in zip(layer_weights, gen_maps, target_grams):
        g_gen = batched_gram(h)
        diff = g_gen[:, None] - g_targets[None]
        total = total + weight * (diff ** 2).sum(dim=(2, 3)).mean(dim=1).mean()
    return total


def diffusion_loss(eps_pred: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    check_same_shape(eps_pred, eps, "diffusion_loss")
    return ((eps_pred - eps) ** 2).mean()


@dataclass
class LossTerms:
    ddc: Scalar = 0.0
    style: Scalar = 0.0
    dif: Scalar = 0.0


def total_loss(t: float, terms: LossTerms, cfg: PhasicConfig, weights: LossWeights) -> Scalar:
    """m(t)(1 - w(t))(lambda_ddc L_ddc + lambda_style L_style) + w(t) L_dif."""
    if not 0 <= t <= cfg.T:
        raise ValueError(f"t must lie in [0, T={cfg.T}], got {t}")
    m = phasic_gate(t, cfg)
    w = phasic_weight(t, cfg)
    adapt = weights.lambda_ddc * terms.ddc + weights.lambda_style * terms.style
    return m * (1.0 - w) * adapt + w * terms.dif


def _pair_similarities(points: torch.Tensor, similarity: str) -> torch.Tensor:
    i, j = torch.triu_indices(points.shape[0], points.shape[0], offset=1)
    if similarity == "cosine":
        unit = F.normalize(points, dim=1, eps=1e-12)
        return (unit[i] * unit[j]).sum(dim=1)
    if similarity == "distance":
        return torch.linalg.vector_norm(points[i] - points[j], dim=1)
    raise ValueError(f"similarity must be 'cosine' or 'distance', got {similarity!r}")


def pairwise_consistency_loss(
    source_emb: torch.Tensor,
    generated_emb: torch.Tensor,
    similarity: str = "cosine",
) -> torch.Tensor:
    """Mean over pairs i<j of (sim(src_i, src_j) - sim(gen_i, gen_j))^2."""
    if source_emb.dim() != 2 or source_emb.shape != generated_emb.shape:
        raise ValueError(
            f"pairwise consistency needs equal (n, D) sets, got {tuple(source_emb.shape)} vs {tuple(generated_emb.shape)}"
        )
    if source_emb.shape[0] < 2:
        raise ValueError(f"pairwise consistency needs at least 2 points, got {source_emb.shape[0]}")
    diff = _pair_similarities(source_emb, similarity) - _pair_similarities(generated_emb, similarity)
    return (diff ** 2).mean()


PAIRWISE_SIMILARITY = {"pairwise-cos": "cosine", "pairwise-dist": "distance"}


def consistency_loss(
    kind: str,
    x_source: torch.Tensor,
    x_generated: torch.Tensor,
    w: torch.Tensor,
    encoder: FeatureEncoder,
) -> torch.Tensor:
    """Source-path consistency term: the DDC loss, or a pairwise-similarity loss
    over the batch embeddings (no direction vector)."""
    if kind == "ddc":
        return ddc_loss(x_source, x_generated, w, encoder)
    if kind not in PAIRWISE_SIMILARITY:
        raise ValueError(f"consistency must be ddc, pairwise-cos or pairwise-dist, got {kind!r}")
    check_same_shape(x_source, x_generated, "consistency_loss inputs")
    with torch.no_grad():
        source_emb = encoder.embed(x_source)
    return pairwise_consistency_loss(source_emb, encoder.embed(x_generated), PAIRWISE_SIMILARITY[kind])
