import logging
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F

from engine.geolab import center_drift, structure_score
from engine.losses import FeatureEncoder, LossTerms, embed_all
from engine.numerics import DTYPE, orthogonal_procrustes, pairwise_distances

from ..models.metrics_models import MetricsRow

logger = logging.getLogger(__name__)

SOBEL_X = torch.tensor([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]], dtype=DTYPE)
SOBEL_Y = SOBEL_X.T.contiguous()


def sobel_magnitude(images: torch.Tensor) -> torch.Tensor:
    """Per-channel Sobel gradient magnitude of a (B, C, H, W) stack, edge-replicated."""
    channels = images.shape[1]
    kernels = torch.stack([SOBEL_X, SOBEL_Y])[:, None].repeat(channels, 1, 1, 1)
    padded = F.pad(images, (1, 1, 1, 1), mode="replicate")
    grads = F.conv2d(padded, kernels, groups=channels)
    gx, gy = grads[:, 0::2], grads[:, 1::2]
    return torch.sqrt(gx ** 2 + gy ** 2)


def scs_proxy(generated: torch.Tensor, source: torch.Tensor) -> float:
    """Mean cosine similarity of paired Sobel edge maps (images) or the
    pairwise-distance structure correlation (points)."""
    if generated.shape != source.shape:
        raise ValueError(f"scs_proxy pairs generated with source samples; shapes {tuple(generated.shape)} vs {tuple(source.shape)}")
    if generated.dim() == 2:
        if generated.shape[0] < 3:
            logger.warning("⚠️ fewer than 3 point samples, scs_proxy not computed")
            return 0.0
        return structure_score(generated, source).corr
    a = sobel_magnitude(generated).reshape(generated.shape[0], -1)
    b = sobel_magnitude(source).reshape(source.shape[0], -1)
    scores = []
    for ea, eb in zip(a, b):
        na, nb = float(ea.norm()), float(eb.norm())
        if na == 0.0 or nb == 0.0:
            # two flat images share their (empty) edge map
            scores.append(1.0 if na == nb else 0.0)
        else:
            scores.append(float(ea @ eb) / (na * nb))
    return sum(scores) / len(scores)


def mean_pairwise_distance(embeddings: torch.Tensor) -> float:
    n = embeddings.shape[0]
    if n < 2:
        return 0.0
    i, j = torch.triu_indices(n, n, offset=1)
    return float(pairwise_distances(embeddings)[i, j].mean())


def diversity(generated_emb: torch.Tensor, target_emb: torch.Tensor) -> float:
    """Mean pairwise generated distance over mean pairwise target distance."""
    generated = mean_pairwise_distance(generated_emb)
    reference = mean_pairwise_distance(target_emb)
    return generated / reference if reference > 0.0 else generated


def nearest_target_distance(generated_emb: torch.Tensor, target_emb: torch.Tensor) -> float:
    """Mean distance from each generated embedding to its closest target embedding."""
    distances = torch.cdist(generated_emb, target_emb, compute_mode="donot_use_mm_for_euclid_dist")
    return float(distances.min(dim=1).values.mean())


def embedding_rotation_deg(generated_emb: torch.Tensor, source_emb: torch.Tensor) -> float:
    """Procrustes angle, generated vs source, in the top-2 principal plane of the source embeddings."""
    if source_emb.shape[1] > 3:
        centered = source_emb - source_emb.mean(dim=0)
        _, _, vh = torch.linalg.svd(centered, full_matrices=False)
        basis = vh[:2].T
        source_emb, generated_emb = source_emb @ basis, generated_emb @ basis
    elif source_emb.shape[1] == 1:
        return 0.0
    return orthogonal_procrustes(source_emb, generated_emb).rotation_deg


@dataclass
class EvaluationContext:
    run_id: str
    seed: int
    iteration: int = 0
    losses: Optional[LossTerms] = None


class MetricsService:
    """Proxy metrics of generated samples against their paired sources and the target set."""

    def evaluate_metrics(
        self,
        generated: torch.Tensor,
        source: torch.Tensor,
        target: torch.Tensor,
        encoder: FeatureEncoder,
        context: EvaluationContext,
    ) -> MetricsRow:
        if generated.shape[0] < 2:
            raise ValueError(f"metrics need at least 2 generated samples, got {generated.shape[0]}")
        gen_emb = embed_all(encoder, generated)
        src_emb = embed_all(encoder, source)
        tgt_emb = embed_all(encoder, target)

        if generated.shape[0] >= 3:
            structure = structure_score(gen_emb, src_emb).corr
        else:
            logger.warning("⚠️ fewer than 3 samples, structure correlation not computed")
            structure = 0.0

        losses = context.losses or LossTerms()
        return MetricsRow(
            run_id=context.run_id,
            seed=context.seed,
            iteration=context.iteration,
            loss_dif=float(losses.dif),
            loss_ddc=float(losses.ddc),
            loss_style=float(losses.style),
            center_drift=center_drift(gen_emb, tgt_emb),
            rotation_deg=embedding_rotation_deg(gen_emb, src_emb),
            structure_corr=structure,
            scs_proxy=scs_proxy(generated, source),
            diversity=diversity(gen_emb, tgt_emb),
        )

    def overfit_signature(self, generated: torch.Tensor, target: torch.Tensor, encoder: FeatureEncoder) -> float:
        """Nearest-target distance in encoder space; 0 means every sample copies an exemplar."""
        return nearest_target_distance(embed_all(encoder, generated), embed_all(encoder, target))
