"""Geometry lab: DDC versus pairwise-consistency training on 2-D point sets.

Generated points are optimised directly by gradient descent (identity encoder).
The pairwise arms compare similarities of centered sets and carry a
centroid-matching term toward the target centroid; the DDC arm is the plain
per-point DDC loss.
"""

import asyncio
import logging
import math
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
import torch

from app.v1.models.geolab_models import GeometryReport, LabConfig
from engine.losses import IdentityEncoder, ddc_loss, direction_vector, pairwise_consistency_loss
from engine.numerics import (
    DTYPE,
    DivergenceError,
    PointSet,
    RngStream,
    centroid,
    check_point_set,
    gaussian_draw,
    orthogonal_procrustes,
    pairwise_distances,
    rms_radius,
    rotation_matrix_2d,
)

logger = logging.getLogger(__name__)

SOURCE_STREAM = 0
TARGET_STREAM = 1


# ---------------------------------------------------------------------------
# Point generators
# ---------------------------------------------------------------------------

def make_two_moons(n: int, rng: RngStream, noise: float = 0.05) -> PointSet:
    """Two interleaved half circles; the outer moon gets the extra point of an odd n."""
    n_inner = n // 2
    n_outer = n - n_inner
    theta = torch.from_numpy(rng.uniform(n) * math.pi)
    outer = torch.stack([torch.cos(theta[:n_outer]), torch.sin(theta[:n_outer])], dim=1)
    inner = torch.stack([1.0 - torch.cos(theta[n_outer:]), 0.5 - torch.sin(theta[n_outer:])], dim=1)
    points = torch.cat([outer, inner])
    return points + gaussian_draw(rng, points.shape, scale=noise)


def make_gaussian_ring(n: int, rng: RngStream, noise: float = 0.05) -> PointSet:
    theta = torch.from_numpy(rng.uniform(n) * 2.0 * math.pi)
    ring = torch.stack([torch.cos(theta), torch.sin(theta)], dim=1)
    return ring + gaussian_draw(rng, ring.shape, scale=noise)


def make_grid(n: int, rng: RngStream, noise: float = 0.05) -> PointSet:
    side = math.ceil(math.sqrt(n))
    axis = np.linspace(-1.0, 1.0, side)
    xs, ys = np.meshgrid(axis, axis, indexing="xy")
    grid = torch.from_numpy(np.stack([xs.ravel(), ys.ravel()], axis=1)[:n].copy())
    return grid + gaussian_draw(rng, grid.shape, scale=noise)


SOURCE_GENERATORS = {
    "two-moons": make_two_moons,
    "gaussian-ring": make_gaussian_ring,
    "grid": make_grid,
}


def transform_about(points: PointSet, pivot: torch.Tensor, rotation_deg: float = 0.0, scale: float = 1.0) -> PointSet:
    """Rotate and scale ``points`` about ``pivot``."""
    rotation = rotation_matrix_2d(rotation_deg)
    return (points - pivot) @ rotation.T * scale + pivot


@dataclass(frozen=True)
class LabDomains:
    source: PointSet
    target: PointSet


def build_domains(cfg: LabConfig) -> LabDomains:
    generator = SOURCE_GENERATORS[cfg.source]
    source = generator(cfg.n_source, RngStream(cfg.seed, SOURCE_STREAM), cfg.noise)
    picks = RngStream(cfg.seed, TARGET_STREAM).permutation(cfg.n_source)[:cfg.m_target]
    chosen = source[torch.from_numpy(np.sort(picks))]
    target = transform_about(chosen, source.mean(dim=0), cfg.target_rotation_deg, cfg.target_scale)
    target = target + torch.tensor(cfg.shift, dtype=DTYPE)
    return LabDomains(source, target)


# ---------------------------------------------------------------------------
# Scores
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StructureScore:
    corr: float
    degenerate: bool


def structure_score(generated: PointSet, source: PointSet) -> StructureScore:
    """Pearson correlation of the upper-triangle pairwise distances."""
    generated = check_point_set(generated, "generated", min_count=3)
    source = check_point_set(source, "source", min_count=3)
    if generated.shape != source.shape:
        raise ValueError(f"structure score needs equal-size sets, got {tuple(generated.shape)} vs {tuple(source.shape)}")
    i, j = torch.triu_indices(source.shape[0], source.shape[0], offset=1)
    d_gen = pairwise_distances(generated)[i, j]
    d_src = pairwise_distances(source)[i, j]
    d_gen = d_gen - d_gen.mean()
    d_src = d_src - d_src.mean()
    norm = float(d_gen.norm() * d_src.norm())
    if norm == 0.0:
        logger.warning("⚠️ zero-variance pairwise distances, structure correlation undefined")
        return StructureScore(0.0, True)
    corr = float((d_gen * d_src).sum()) / norm
    return StructureScore(min(1.0, max(-1.0, corr)), False)


def center_drift(generated: PointSet, target: PointSet) -> float:
    """|centroid(gen) - centroid(target)| in units of the target RMS radius (1 if zero)."""
    scale = rms_radius(target)
    distance = float(torch.linalg.vector_norm(centroid(generated) - centroid(target)))
    return distance / scale if scale > 0.0 else distance


# ---------------------------------------------------------------------------
# Lab runs
# ---------------------------------------------------------------------------

def _initial_points(cfg: LabConfig, source: PointSet, w: torch.Tensor) -> PointSet:
    if cfg.init == "source":
        return source.clone()
    optimum = source + w
    if cfg.init == "optimum":
        return optimum
    return transform_about(optimum, optimum.mean(dim=0), cfg.init_rotation_deg)


def lab_loss(cfg: LabConfig, generated: PointSet, domains: LabDomains, w: torch.Tensor) -> torch.Tensor:
    if cfg.loss == "ddc":
        return ddc_loss(domains.source, generated, w, IdentityEncoder())
    similarity = "cosine" if cfg.loss == "pairwise-cos" else "distance"
    src_centered = domains.source - domains.source.mean(dim=0)
    gen_centered = generated - generated.mean(dim=0)
    pairwise = pairwise_consistency_loss(src_centered, gen_centered, similarity)
    pull = ((generated.mean(dim=0) - domains.target.mean(dim=0)) ** 2).sum()
    return pairwise + cfg.center_weight * pull


def geometry_report(cfg: LabConfig, generated: PointSet, domains: LabDomains, trajectory: List[float]) -> GeometryReport:
    fit = orthogonal_procrustes(domains.source, generated)
    structure = structure_score(generated, domains.source)
    source_radius = rms_radius(domains.source)
    return GeometryReport(
        arm=cfg.loss,
        seed=cfg.seed,
        center_drift=center_drift(generated, domains.target),
        rotation_deg=fit.rotation_deg,
        structure_corr=structure.corr,
        scale_ratio=rms_radius(generated) / source_radius if source_radius > 0.0 else 0.0,
        final_loss=trajectory[-1],
        rotation_degenerate=fit.degenerate,
        structure_degenerate=structure.degenerate,
        loss_trajectory=trajectory,
    )


def run_adaptation_2d(cfg: LabConfig) -> GeometryReport:
    """Gradient descent on the generated positions under the configured loss arm.

    Each point moves by ``lr * n`` times the gradient of the mean loss, so the
    step size does not shrink with the set size.
    """
    domains = build_domains(cfg)
    w = direction_vector(domains.source, domains.target, IdentityEncoder())
    generated = _initial_points(cfg, domains.source, w)
    step = cfg.lr * cfg.n_source
    trajectory: List[float] = []

    for iteration in range(cfg.steps + 1):
        points = generated.detach().requires_grad_(True)
        loss = lab_loss(cfg, points, domains, w)
        value = float(loss)
        if not math.isfinite(value):
            logger.error(f"❌ {cfg.loss} arm diverged at iteration {iteration}")
            raise DivergenceError(f"non-finite {cfg.loss} loss {value} at iteration {iteration}", iteration)
        trajectory.append(value)
        if iteration == cfg.steps:
            break
        (grad,) = torch.autograd.grad(loss, points)
        generated = (points - step * grad).detach()

    report = geometry_report(cfg, generated.detach(), domains, trajectory)
    logger.info(
        f"📐 {cfg.loss} arm: drift={report.center_drift:.4f} rotation={report.rotation_deg:.2f}° "
        f"structure={report.structure_corr:.4f}"
    )
    return report


async def run_arms(cfg: LabConfig, arms: Sequence[str] = ("ddc", "pairwise-cos", "pairwise-dist")) -> List[GeometryReport]:
    """Run several loss arms of one config concurrently; reports come back in ``arms`` order."""
    loop = asyncio.get_running_loop()
    tasks = [
        loop.run_in_executor(None, run_adaptation_2d, cfg.model_copy(update={"loss": arm}))
        for arm in arms
    ]
    return list(await asyncio.gather(*tasks))
