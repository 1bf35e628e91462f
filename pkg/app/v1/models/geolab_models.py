import math
from typing import List, Literal, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

from .config_models import FEW_SHOT_LIMIT

LabLoss = Literal["ddc", "pairwise-cos", "pairwise-dist"]


class LabConfig(BaseModel):
    """One geometry-lab run: toy source, few-shot target transform, loss arm."""
    source: Literal["two-moons", "gaussian-ring", "grid"] = Field("two-moons", description="Source point generator")
    n_source: int = Field(64, ge=2, description="Source points (also the generated set size)")
    m_target: int = Field(10, ge=1, le=FEW_SHOT_LIMIT, description="Few-shot target points")
    noise: float = Field(0.05, ge=0, description="Gaussian jitter of the source generator")
    shift: Tuple[float, float] = Field((2.0, 1.0), description="Translation of the target domain")
    target_rotation_deg: float = Field(0.0, description="Rotation of the target about the source centroid")
    target_scale: float = Field(1.0, gt=0, description="Scale of the target about the source centroid")
    loss: LabLoss = Field("ddc", description="Loss arm")
    center_weight: float = Field(1.0, ge=0, description="Weight of the centroid-matching term of the pairwise arms")
    init: Literal["source", "optimum", "rotated-optimum"] = Field("source", description="Initial generated positions")
    init_rotation_deg: float = Field(45.0, description="Rotation of the optimum about its centroid for init=rotated-optimum")
    steps: int = Field(300, ge=1, description="Gradient-descent steps")
    lr: float = Field(0.1, gt=0, description="Per-point step size")
    seed: int = Field(7, description="Master seed")

    @model_validator(mode="after")
    def _enough_source_points(self):
        if self.n_source < 2 * self.m_target:
            raise ValueError(f"n_source must be >= 2 * m_target (n_source={self.n_source}, m_target={self.m_target})")
        return self


class GeometryReport(BaseModel):
    """Rotation, center and structure diagnostics of one lab run."""
    arm: LabLoss = Field(..., description="Loss arm that produced the report")
    seed: int = Field(..., description="Seed of the run")
    center_drift: float = Field(..., ge=0, description="|centroid(gen) - centroid(target)| / RMS radius of target")
    rotation_deg: float = Field(..., ge=0, le=180, description="Procrustes angle between centered gen and centered source")
    structure_corr: float = Field(..., ge=-1, le=1, description="Pearson correlation of pairwise distances, gen vs source")
    scale_ratio: float = Field(..., ge=0, description="RMS radius of gen over RMS radius of source")
    final_loss: float = Field(..., description="Loss after the last step")
    rotation_degenerate: bool = Field(False, description="Procrustes cross-covariance was rank deficient")
    structure_degenerate: bool = Field(False, description="A pairwise-distance vector had zero variance")
    loss_trajectory: List[float] = Field(default_factory=list, description="Loss before every step, then the final loss")

    @field_validator("loss_trajectory")
    @classmethod
    def _finite(cls, values: List[float]) -> List[float]:
        if any(not math.isfinite(v) for v in values):
            raise ValueError("loss_trajectory must be finite")
        return values

    @classmethod
    def csv_header(cls) -> str:
        return ",".join(REPORT_COLUMNS)

    def csv_line(self) -> str:
        return ",".join(_fmt(getattr(self, name)) for name in REPORT_COLUMNS)


REPORT_COLUMNS = (
    "arm", "seed", "center_drift", "rotation_deg", "structure_corr", "scale_ratio",
    "final_loss", "rotation_degenerate", "structure_degenerate",
)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)
