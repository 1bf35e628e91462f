from .numerics import DTYPE, DivergenceError, RngStream, gaussian_draw, low_pass, orthogonal_procrustes
from .schedule import NoiseSchedule, build_schedule, make_cosine_schedule, make_linear_schedule, phasic_gate, phasic_weight
from .diffusion import DiffusionProcess
from .denoiser import AdamState, Denoiser, DenoiserParams, FeatureStack, adam_step, backward, fuse_content

# Losses and guidance
from .losses import (
    FeatureEncoder,
    FrozenSourceEncoder,
    IdentityEncoder,
    LossTerms,
    RandomConvEncoder,
    ddc_loss,
    diffusion_loss,
    direction_vector,
    gram,
    pairwise_consistency_loss,
    style_loss,
    total_loss,
)
from .sampler import StructureGuidedSampler, lowpass_distance
from .geolab import center_drift, run_adaptation_2d, run_arms, structure_score

__all__ = [
    'DTYPE',
    'DivergenceError',
    'RngStream',
    'gaussian_draw',
    'low_pass',
    'orthogonal_procrustes',
    'NoiseSchedule',
    'build_schedule',
    'make_cosine_schedule',
    'make_linear_schedule',
    'phasic_gate',
    'phasic_weight',
    'DiffusionProcess',
    'AdamState',
    'Denoiser',
    'DenoiserParams',
    'FeatureStack',
    'adam_step',
    'backward',
    'fuse_content',
    'FeatureEncoder',
    'FrozenSourceEncoder',
    'IdentityEncoder',
    'LossTerms',
    'RandomConvEncoder',
    'ddc_loss',
    'diffusion_loss',
    'direction_vector',
    'gram',
    'pairwise_consistency_loss',
    'style_loss',
    'total_loss',
    'StructureGuidedSampler',
    'lowpass_distance',
    'center_drift',
    'run_adaptation_2d',
    'run_arms',
    'structure_score',
]
