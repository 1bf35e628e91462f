import math
from typing import List

from pydantic import BaseModel, Field, field_validator


class MetricsRow(BaseModel):
    """One evaluation checkpoint: losses plus geometry and proxy-quality scores."""
    run_id: str = Field(..., description="Run identifier")
    seed: int = Field(..., description="Master seed")
    iteration: int = Field(..., ge=0, description="Training iteration of the checkpoint")
    loss_dif: float = Field(0.0, description="Target-path diffusion loss")
    loss_ddc: float = Field(0.0, description="Source-path DDC loss")
    loss_style: float = Field(0.0, description="Source-path style loss")
    center_drift: float = Field(0.0, ge=0, description="Encoder-space centroid distance to the target set")
    rotation_deg: float = Field(0.0, ge=0, le=180, description="Encoder-space Procrustes angle, generated vs source")
    structure_corr: float = Field(0.0, ge=-1, le=1, description="Pairwise-distance correlation, generated vs source")
    scs_proxy: float = Field(0.0, description="Edge-map cosine similarity to the paired sources (structure consistency)")
    diversity: float = Field(0.0, ge=0, description="Mean pairwise distance of generated embeddings over that of the targets")

    @field_validator(
        "loss_dif", "loss_ddc", "loss_style", "center_drift", "rotation_deg",
        "structure_corr", "scs_proxy", "diversity",
    )
    @classmethod
    def _finite(cls, value: float) -> float:
        if not math.isfinite(value):
            raise ValueError("metrics must be finite")
        return value

    @classmethod
    def columns(cls) -> List[str]:
        return list(cls.model_fields)

    @classmethod
    def csv_header(cls) -> str:
        return ",".join(cls.columns())

    def csv_line(self) -> str:
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in (getattr(self, c) for c in self.columns()))


class SweepRow(BaseModel):
    """One (K, N, t_stop) setting of a sampler sweep."""
    mode: str = Field(..., description="Sampling chain")
    M: int = Field(..., description="Start step")
    t_stop: int = Field(..., description="Last guided step")
    K: int = Field(..., description="Style-enhancement repeats")
    N: int = Field(..., description="Low-pass factor of the guidance")
    lowpass_distance: float = Field(..., description="Mean |phi_N(x_0) - phi_N(x_source)| at the base N")
    scs_proxy: float = Field(..., description="Edge-map similarity to the sources")

    @classmethod
    def csv_header(cls) -> str:
        return ",".join(cls.model_fields)

    def csv_line(self) -> str:
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in (getattr(self, c) for c in type(self).model_fields))
