from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

FEW_SHOT_LIMIT = 10


class PhasicConfig(BaseModel):
    """Phasic gates: shifted sigmoid m(t) and weighting w(t)."""
    T: int = Field(1000, ge=1, description="Total diffusion steps")
    T_s: float = Field(300, description="Shift of the sigmoid gate m(t), in steps")
    alpha_w: float = Field(3.0, gt=0, description="Exponent of the weighting function w(t)")

    @model_validator(mode="after")
    def _shift_within_range(self):
        if not 0 <= self.T_s <= self.T:
            raise ValueError(f"T_s must lie in [0, T={self.T}], got {self.T_s}")
        return self


class ScheduleSpec(BaseModel):
    """Noise schedule selection."""
    kind: Literal["cosine", "linear"] = Field("cosine", description="Schedule family")
    T: int = Field(1000, ge=1, description="Number of diffusion steps")
    beta_start: float = Field(1e-4, description="First beta of the linear schedule")
    beta_end: float = Field(0.02, description="Last beta of the linear schedule")
    sigma_mode: Literal["posterior", "large"] = Field("posterior", description="Reverse-step noise scale")


class DenoiserConfig(BaseModel):
    """Shape of the fusion-augmented noise predictor."""
    mode: Literal["image", "point"] = Field("image", description="Image (C x H x W) or point (D-vector) network")
    channels: int = Field(1, ge=1, description="Image channels")
    image_size: int = Field(16, ge=4, description="Square image extent")
    point_dim: int = Field(2, ge=1, description="Point dimension in point mode")
    widths: List[int] = Field(default_factory=lambda: [16, 32, 32], description="Channel widths of the three encoder stages")
    hidden: int = Field(64, ge=1, description="Hidden width of the point-mode network")
    time_dim: int = Field(32, ge=2, description="Sinusoidal time-embedding dimension")
    merge_depth: Literal[3] = Field(3, description="Layers in the fusion merge block (fixed)")

    @field_validator("widths")
    @classmethod
    def _three_positive_widths(cls, widths: List[int]) -> List[int]:
        if len(widths) != 3 or any(w < 1 for w in widths):
            raise ValueError(f"widths must be three positive stage widths, got {widths}")
        return widths

    @model_validator(mode="after")
    def _divisible_extent(self):
        if self.mode == "image" and self.image_size % 4:
            raise ValueError(f"image_size must be divisible by the total downsampling factor 4, got {self.image_size}")
        if self.time_dim % 2:
            raise ValueError(f"time_dim must be even, got {self.time_dim}")
        return self

    @property
    def input_shape(self) -> Tuple[int, ...]:
        if self.mode == "image":
            return (self.channels, self.image_size, self.image_size)
        return (self.point_dim,)


class EncoderSpec(BaseModel):
    """Which fixed encoders feed the DDC and style heads."""
    ddc: Literal["frozen-source", "random-conv", "identity"] = Field("frozen-source", description="Encoder E of the DDC loss and the metrics")
    style: Literal["random-conv", "frozen-source", "identity"] = Field("random-conv", description="Feature maps for the Gram style loss")
    random_conv_widths: List[int] = Field(default_factory=lambda: [8, 16, 16], description="Widths of the random-conv encoder")


class LossWeights(BaseModel):
    """Weights of the phasic total loss."""
    lambda_ddc: float = Field(1.0, ge=0, description="Weight of the DDC loss")
    lambda_style: float = Field(1.0, ge=0, description="Weight of the style loss")
    style_layer_weights: Optional[List[float]] = Field(None, description="Per-layer weights w_l, uniform 1/L when absent")
    consistency: Literal["ddc", "pairwise-cos", "pairwise-dist"] = Field(
        "ddc", description="Source-path consistency term weighted by lambda_ddc: DDC or a pairwise-similarity loss"
    )
    fusion: bool = Field(True, description="Feed the source image through the content-fusion path on the source path")

    @field_validator("style_layer_weights")
    @classmethod
    def _non_negative(cls, weights: Optional[List[float]]) -> Optional[List[float]]:
        if weights is not None and (not weights or any(w < 0 for w in weights)):
            raise ValueError(f"style_layer_weights must be a non-empty list of non-negative weights, got {weights}")
        return weights


class DatasetSpec(BaseModel):
    """Procedural toy domains."""
    kind: Literal["shapes", "moons"] = Field("shapes", description="Glyph images or two-moons points")
    n_source: int = Field(1000, ge=1, description="Source pool size")
    m_target: int = Field(10, ge=1, description="Few-shot target count")
    allow_large_target_set: bool = Field(False, description="Permit more than 10 target exemplars")

    @model_validator(mode="after")
    def _few_shot(self):
        if self.m_target > FEW_SHOT_LIMIT and not self.allow_large_target_set:
            raise ValueError(
                f"m_target must be <= {FEW_SHOT_LIMIT} in few-shot mode (got {self.m_target}); "
                "set allow_large_target_set to override"
            )
        return self


class TrainingSpec(BaseModel):
    """Optimisation settings for pretrain, warm-up and adaptation."""
    batch_size: int = Field(8, ge=1, description="Batch size")
    lr: float = Field(1e-4, gt=0, description="Adam learning rate")
    pretrain_iters: int = Field(3000, ge=0, description="Stage-1 iterations on the source")
    warmup_iters: int = Field(1000, ge=0, description="Fusion-path warm-up iterations on the source")
    adapt_iters: int = Field(2000, ge=0, description="Adaptation iterations")
    metrics_every: int = Field(250, ge=1, description="Metrics cadence during adaptation")
    eval_batch: int = Field(16, ge=2, description="Fixed source batch used for metrics rows")
    eval_t: int = Field(500, ge=1, description="Diffusion step of the one-step estimates used for metrics rows")
    clip_x0: bool = Field(True, description="Clamp clean-image estimates to [-1, 1] during adaptation")


class SamplerConfig(BaseModel):
    """ICSG / ILVR / plain chain controls."""
    mode: Literal["plain", "ilvr", "icsg"] = Field("icsg", description="Sampling chain")
    M: int = Field(800, ge=0, description="Start step: noise level added to the source image")
    t_stop: int = Field(500, ge=1, description="Last guided step")
    K: int = Field(1, ge=0, description="Style-enhancement repeats")
    N: int = Field(8, ge=1, description="Low-pass factor")
    clip_denoised: bool = Field(True, description="Clamp style-enhancement estimates to [-1, 1] (image mode only)")

    @model_validator(mode="after")
    def _stop_within_chain(self):
        if self.M >= 1 and self.t_stop > self.M:
            raise ValueError(f"t_stop must satisfy 1 <= t_stop <= M (t_stop={self.t_stop}, M={self.M})")
        return self

    def check_against(self, T: int) -> None:
        if self.M > T:
            raise ValueError(f"M must satisfy M <= T (M={self.M}, T={T})")


class RunConfig(BaseModel):
    """Complete configuration of one pretrain/adapt/sample run."""
    run_id: str = Field("run", description="Identifier written into metrics rows")
    mode: Literal["image", "point"] = Field("image", description="Data mode")
    seed: int = Field(..., description="Master seed of every random stream")
    dataset: DatasetSpec = Field(default_factory=DatasetSpec)
    schedule: ScheduleSpec = Field(default_factory=ScheduleSpec)
    denoiser: DenoiserConfig = Field(default_factory=DenoiserConfig)
    encoders: EncoderSpec = Field(default_factory=EncoderSpec)
    phasic: PhasicConfig = Field(default_factory=PhasicConfig)
    losses: LossWeights = Field(default_factory=LossWeights)
    training: TrainingSpec = Field(default_factory=TrainingSpec)
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)

    @model_validator(mode="after")
    def _consistent_sections(self):
        if self.phasic.T != self.schedule.T:
            raise ValueError(f"phasic.T ({self.phasic.T}) must equal schedule.T ({self.schedule.T})")
        if self.denoiser.mode != self.mode:
            raise ValueError(f"denoiser.mode ({self.denoiser.mode}) must equal mode ({self.mode})")
        expected = "shapes" if self.mode == "image" else "moons"
        if self.dataset.kind != expected:
            raise ValueError(f"dataset.kind must be '{expected}' in {self.mode} mode, got '{self.dataset.kind}'")
        self.sampler.check_against(self.schedule.T)
        if self.training.eval_t > self.schedule.T:
            raise ValueError(f"training.eval_t must be <= T ({self.schedule.T}), got {self.training.eval_t}")
        if self.losses.consistency != "ddc" and self.training.batch_size < 2:
            raise ValueError(f"losses.consistency={self.losses.consistency!r} compares pairs and needs batch_size >= 2")
        return self
